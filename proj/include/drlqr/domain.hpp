#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drlqr/control_core.hpp"
#include "drlqr/lqr.hpp"
#include "drlqr/parallel.hpp"
#include "drlqr/rng.hpp"
#include "drlqr/types.hpp"

// Parametric system families, seeded sampling, the sample-average objective
// J_SA(K) = (1/M) sum_i J(K, theta_i), the Monte-Carlo estimate of the
// domain-randomization objective J_DR(K) = E J(K, Theta), and the
// heterogeneity / scenario-boundedness diagnostics.

namespace drlqr {

// Deterministic map theta -> (A(theta), B(theta)) with a box support
// descriptor. All systems in a family share (d_x, d_u).
struct SystemFamily {
  int parameter_dim = 0;
  std::function<LinearSystem(const Vector&)> map;
  Vector support_lower;  // box bounds per parameter
  Vector support_upper;
  Eigen::Index state_dim = 0;
  Eigen::Index input_dim = 0;
};

// Discretized, linearized inverted pendulum with parameters theta = (m, l):
//   A = [[1, dt], [g dt / l, 1]],  B = [[0], [dt / (m l^2)]].
inline SystemFamily pendulum_family(double dt, double g) {
  if (dt < 0.0 || g <= 0.0) {
    throw DomainError("pendulum_family: need dt >= 0 and g > 0");
  }
  SystemFamily family;
  family.parameter_dim = 2;
  family.state_dim = 2;
  family.input_dim = 1;
  family.support_lower = Vector::Constant(2, std::numeric_limits<double>::min());
  family.support_upper = Vector::Constant(2, std::numeric_limits<double>::infinity());
  family.map = [dt, g](const Vector& theta) {
    const double m = theta(0);
    const double l = theta(1);
    if (m <= 0.0 || l <= 0.0) {
      throw DomainError("pendulum_family: mass and length must be positive");
    }
    Matrix a(2, 2), b(2, 1);
    a << 1.0, dt, g * dt / l, 1.0;
    b << 0.0, dt / (m * l * l);
    return LinearSystem(a, b);
  };
  return family;
}

// Compose a family with the cost's ingestion transform so every sampled
// system is already in normalized coordinates (no-op for identity costs).
inline SystemFamily normalize_family(SystemFamily family, const CostSpec& cost);

// Degenerate family holding a single fixed plant (parameter_dim 0).
inline SystemFamily point_family(const LinearSystem& sys) {
  SystemFamily family;
  family.parameter_dim = 0;
  family.state_dim = sys.state_dim();
  family.input_dim = sys.input_dim();
  family.support_lower = Vector(0);
  family.support_upper = Vector(0);
  family.map = [sys](const Vector&) { return sys; };
  return family;
}

inline SystemFamily normalize_family(SystemFamily family, const CostSpec& cost) {
  if (cost.is_identity_transform()) return family;
  auto base = std::move(family.map);
  family.map = [base = std::move(base), cost](const Vector& theta) {
    return cost.normalize_system(base(theta));
  };
  return family;
}

// Uniform distribution over an axis-aligned box.
struct ParamDistribution {
  Vector lower;
  Vector upper;

  ParamDistribution() = default;
  ParamDistribution(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) {
      throw DimensionError("ParamDistribution: bound dimensions differ");
    }
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      if (!(lower(i) <= upper(i))) {
        throw DomainError("ParamDistribution: lower > upper in coordinate " + std::to_string(i));
      }
    }
  }

  Eigen::Index dim() const { return lower.size(); }

  // Draw `index`-th parameter vector of the stream rooted at `seed`.
  Vector sample(std::uint64_t seed, std::uint64_t index) const {
    const std::uint64_t stream = rng::substream(seed, index);
    Vector theta(dim());
    for (Eigen::Index j = 0; j < dim(); ++j) {
      theta(j) = rng::uniform(rng::nth_word(stream, static_cast<std::uint64_t>(j)), lower(j),
                              upper(j));
    }
    return theta;
  }
};

inline void check_distribution_support(const SystemFamily& family, const ParamDistribution& dist) {
  if (dist.dim() != family.parameter_dim) {
    throw DimensionError("distribution dimension does not match the family parameter count");
  }
  for (Eigen::Index i = 0; i < dist.dim(); ++i) {
    if (dist.lower(i) < family.support_lower(i) || dist.upper(i) > family.support_upper(i)) {
      throw DomainError("distribution support exceeds the family support box");
    }
  }
}

// M drawn systems with cached diagnostics:
//   tau_b = max(1, max_i ||B_i||),
//   het   = max pairwise ||[A_i B_i] - [A_j B_j]||  (spectral norm).
struct SampleSet {
  std::vector<LinearSystem> systems;
  std::vector<Vector> params;
  std::uint64_t seed = 0;
  double tau_b = 1.0;
  double het = 0.0;
  double max_b_norm = 0.0;

  int size() const { return static_cast<int>(systems.size()); }
};

namespace detail {

inline void fill_sample_caches(SampleSet& set) {
  const int m = set.size();
  set.max_b_norm = 0.0;
  for (const auto& sys : set.systems) {
    set.max_b_norm = std::max(set.max_b_norm, operator_norm(sys.b));
  }
  set.tau_b = std::max(1.0, set.max_b_norm);
  set.het = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const auto& si = set.systems[i];
      const auto& sj = set.systems[j];
      Matrix diff(si.a.rows(), si.a.cols() + si.b.cols());
      diff << si.a - sj.a, si.b - sj.b;
      set.het = std::max(set.het, operator_norm(diff));
    }
  }
}

}  // namespace detail

// Deterministic given the seed: sample i uses the substream (seed, i).
inline SampleSet draw_samples(const SystemFamily& family, const ParamDistribution& dist, int m,
                              std::uint64_t seed) {
  if (m < 1) throw DomainError("draw_samples: need m >= 1");
  check_distribution_support(family, dist);
  SampleSet set;
  set.seed = seed;
  set.systems.reserve(m);
  set.params.reserve(m);
  for (int i = 0; i < m; ++i) {
    Vector theta = dist.sample(seed, static_cast<std::uint64_t>(i));
    set.systems.push_back(family.map(theta));
    set.params.push_back(std::move(theta));
  }
  detail::fill_sample_caches(set);
  return set;
}

// Build a set directly from explicit systems (diagnostics recomputed).
inline SampleSet make_sample_set(std::vector<LinearSystem> systems, std::uint64_t seed = 0) {
  if (systems.empty()) throw DomainError("make_sample_set: need at least one system");
  SampleSet set;
  set.seed = seed;
  set.systems = std::move(systems);
  set.params.assign(set.systems.size(), Vector(0));
  detail::fill_sample_caches(set);
  return set;
}

// ---------------------------------------------------------------------------
// Sample-average cost and gradient. Per-system terms are evaluated in index
// order and reduced in that fixed order, guaranteeing bit-reproducibility.

struct AvgEval {
  double cost = 0.0;
  Matrix gradient;
  std::vector<double> per_system_cost;
};

// Returns nullopt if K fails to stabilize some system (index reported via
// *failed_index); used by searches that probe beyond the stabilizing set.
inline std::optional<AvgEval> try_sample_avg_eval(const Gain& k, const SampleSet& set,
                                                  const CostSpec& cost,
                                                  int* failed_index = nullptr) {
  AvgEval out;
  out.gradient = Matrix::Zero(k.k.rows(), k.k.cols());
  out.per_system_cost.reserve(set.systems.size());
  double sum = 0.0;
  for (int i = 0; i < set.size(); ++i) {
    const LinearSystem& sys = set.systems[i];
    if (!is_stabilizing(k, sys)) {
      if (failed_index) *failed_index = i;
      return std::nullopt;
    }
    const LqrEval eval = lqr_eval(k, sys, cost);
    sum += eval.cost;
    out.gradient += eval.gradient;
    out.per_system_cost.push_back(eval.cost);
  }
  const double m = static_cast<double>(set.size());
  out.cost = sum / m;
  out.gradient /= m;
  return out;
}

// Cost-only variant (skips covariance and gradient solves).
inline std::optional<double> try_sample_avg_cost(const Gain& k, const SampleSet& set,
                                                 const CostSpec& cost,
                                                 int* failed_index = nullptr) {
  double sum = 0.0;
  for (int i = 0; i < set.size(); ++i) {
    const LinearSystem& sys = set.systems[i];
    if (!is_stabilizing(k, sys)) {
      if (failed_index) *failed_index = i;
      return std::nullopt;
    }
    sum += lqr_cost(k, set.systems[i], cost);
  }
  return sum / static_cast<double>(set.size());
}

namespace detail {

[[noreturn]] inline void throw_set_instability(const Gain& k, const SampleSet& set, int index,
                                               const char* op) {
  const double rho = closed_loop_radius(k, set.systems[index]);
  throw InstabilityError(std::string(op) + ": gain does not stabilize sampled system " +
                             std::to_string(index) + " (rho = " + std::to_string(rho) + ")",
                         rho, index);
}

}  // namespace detail

inline double sample_avg_cost(const Gain& k, const SampleSet& set, const CostSpec& cost) {
  int failed = -1;
  const auto value = try_sample_avg_cost(k, set, cost, &failed);
  if (!value) detail::throw_set_instability(k, set, failed, "sample_avg_cost");
  return *value;
}

inline AvgEval sample_avg_eval(const Gain& k, const SampleSet& set, const CostSpec& cost) {
  int failed = -1;
  auto value = try_sample_avg_eval(k, set, cost, &failed);
  if (!value) detail::throw_set_instability(k, set, failed, "sample_avg_eval");
  return std::move(*value);
}

inline Matrix sample_avg_gradient(const Gain& k, const SampleSet& set, const CostSpec& cost) {
  return sample_avg_eval(k, set, cost).gradient;
}

// ---------------------------------------------------------------------------
// Monte-Carlo estimate of J_DR with a Hoeffding confidence halfwidth.

// sqrt((2 J^2 / n) log(2/delta)) -- the Hoeffding deviation bound for the
// mean of n costs bounded by J.
inline double hoeffding_halfwidth(double j_bound, std::int64_t n, double delta) {
  if (j_bound < 0.0 || n < 1 || delta <= 0.0 || delta >= 1.0) {
    throw DomainError("hoeffding_halfwidth: need j_bound >= 0, n >= 1, delta in (0,1)");
  }
  return std::sqrt(2.0 * j_bound * j_bound / static_cast<double>(n) * std::log(2.0 / delta));
}

struct McDrResult {
  double mean = 0.0;
  // Halfwidth with the plug-in bound J = max observed cost. This is an
  // empirical surrogate, not an a-priori bound.
  double halfwidth = 0.0;
  double max_cost = 0.0;
  std::int64_t n_mc = 0;
  double delta = 0.05;
  // Populated when a reference parameter is supplied: the a-priori bound
  // J <= 48 J(K(theta_ref), theta_ref) and the halfwidth it implies.
  std::optional<double> apriori_cost_bound;
  std::optional<double> apriori_halfwidth;
};

inline McDrResult mc_dr_cost(const Gain& k, const SystemFamily& family,
                             const ParamDistribution& dist, const CostSpec& cost,
                             std::int64_t n_mc, std::uint64_t seed, double delta = 0.05,
                             int n_threads = 1,
                             const Vector* theta_ref = nullptr) {
  if (n_mc < 1) throw DomainError("mc_dr_cost: need n_mc >= 1");
  check_distribution_support(family, dist);

  std::vector<double> costs(static_cast<std::size_t>(n_mc));
  parallel::for_each_index(static_cast<std::size_t>(n_mc), n_threads, [&](std::size_t i) {
    const Vector theta = dist.sample(seed, i);
    const LinearSystem sys = family.map(theta);
    if (!is_stabilizing(k, sys)) {
      std::string desc = "mc_dr_cost: gain does not stabilize draw " + std::to_string(i) +
                         " (theta = [";
      for (Eigen::Index j = 0; j < theta.size(); ++j) {
        desc += (j ? ", " : "") + std::to_string(theta(j));
      }
      desc += "])";
      throw InstabilityError(desc, closed_loop_radius(k, sys), static_cast<int>(i));
    }
    costs[i] = lqr_cost(k, sys, cost);
  });

  McDrResult result;
  result.n_mc = n_mc;
  result.delta = delta;
  double sum = 0.0;
  for (const double c : costs) {  // fixed index order
    sum += c;
    result.max_cost = std::max(result.max_cost, c);
  }
  result.mean = sum / static_cast<double>(n_mc);
  result.halfwidth = hoeffding_halfwidth(result.max_cost, n_mc, delta);
  if (theta_ref) {
    const LinearSystem ref_sys = family.map(*theta_ref);
    const double j_ref = dare(ref_sys, cost).p.trace();
    result.apriori_cost_bound = 48.0 * j_ref;
    result.apriori_halfwidth = hoeffding_halfwidth(*result.apriori_cost_bound, n_mc, delta);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Diagnostics.

struct HeterogeneityReport {
  double het = 0.0;    // max pairwise ||[A B]_i - [A B]_j||
  double bound = 0.0;  // min_i 1 / (5e5 tau_B trace(P_dare_i)^{11/2})
  bool satisfied = false;
};

// Empirical check of the heterogeneity bound. The bound is conservative by
// design; violations are reported, never enforced (see the diagnose command).
inline HeterogeneityReport heterogeneity_check(const SampleSet& set, const CostSpec& cost) {
  HeterogeneityReport report;
  report.het = set.het;
  report.bound = std::numeric_limits<double>::infinity();
  for (const auto& sys : set.systems) {
    const double trace_p = dare(sys, cost).p.trace();
    const double bound_i = 1.0 / (5e5 * set.tau_b * std::pow(trace_p, 5.5));
    report.bound = std::min(report.bound, bound_i);
  }
  report.satisfied = report.het <= report.bound;
  return report;
}

struct BoundednessReport {
  double b_bound = 0.0;  // B
  double slack = 0.0;    // nu
  bool satisfied = false;
  struct Witness {
    int gain_index = -1;
    int system_index = -1;
    double ratio = 0.0;  // J(K, theta_i) / J_SA(K)
  };
  std::optional<Witness> witness;  // first violation found
  int gains_checked = 0;           // gains inside the B sublevel set
  double j_sa_star = 0.0;          // optimum estimate used for the sublevel set
};

// (B, nu)-boundedness over recorded gains: every K with
// J_SA(K) <= B J_SA(K*) must satisfy J(K, theta_i) <= nu J_SA(K) for all i.
// j_sa_star is the caller's estimate of the optimal sample-average cost
// (see the overload in optimizer.hpp that computes it by long descent).
inline BoundednessReport boundedness_check(const std::vector<Gain>& gains, const SampleSet& set,
                                           const CostSpec& cost, double b_bound, double slack,
                                           double j_sa_star) {
  BoundednessReport report;
  report.b_bound = b_bound;
  report.slack = slack;
  report.j_sa_star = j_sa_star;
  report.satisfied = true;
  for (int g = 0; g < static_cast<int>(gains.size()); ++g) {
    const AvgEval eval = sample_avg_eval(gains[g], set, cost);
    if (eval.cost > b_bound * j_sa_star) continue;
    ++report.gains_checked;
    for (int i = 0; i < set.size(); ++i) {
      const double ratio = eval.per_system_cost[i] / eval.cost;
      if (ratio > slack * (1.0 + 1e-12)) {
        report.satisfied = false;
        if (!report.witness) report.witness = {g, i, ratio};
      }
    }
  }
  return report;
}

}  // namespace drlqr
