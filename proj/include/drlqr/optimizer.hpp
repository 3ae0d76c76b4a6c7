#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drlqr/domain.hpp"
#include "drlqr/trace.hpp"

// Optimization procedures over sampled LQR instances:
//   - batch policy gradient     K <- K - (alpha/M) sum_i grad J(K, theta_i)
//   - discount annealing        curriculum over gamma scaling (A, B) by
//                               sqrt(gamma) so K = 0 is admissible early
//   - stochastic gradient       one sampled system per step, per-step discount
//   - entropic-risk gradient    softmax-of-cost weighted gradient
// plus the iteration-budget and scenario-boundedness diagnostics.

namespace drlqr {

struct PgConfig {
  double alpha = 1e-3;          // stepsize
  int max_iters = 10000;
  double grad_tol = 1e-6;       // stop when ||grad J_SA||_F <= grad_tol
  double cost_gap_tol = 1e-4;   // epsilon: target excess cost, used in reports
  bool enforce_descent = true;  // backtrack until the cost does not increase
  bool adapt_stepsize = false;  // grow the working stepsize on clean steps
  int max_step_halvings = 60;
  int stall_window = 2000;      // flat steps without gradient progress = floor
  bool record_iterates = false;
};

struct PgResult {
  Gain k_final;               // iterate with the minimal recorded gradient norm
  Gain k_last;                // last accepted iterate (minimal cost under descent)
  double best_grad_norm = std::numeric_limits<double>::infinity();
  double cost_at_best = 0.0;  // J_SA at k_final
  double final_cost = 0.0;    // J_SA at k_last
  double final_grad_norm = 0.0;
  int iterations = 0;         // accepted steps
  bool converged = false;     // gradient tolerance reached
  double l_estimate = 0.0;    // curvature probe: max ||dgrad|| / ||dK||
  Trace trace;
  std::vector<Gain> iterates;  // populated when cfg.record_iterates
};

// Scale (A, B) by sqrt(gamma); gamma in (0, 1].
inline LinearSystem discount_system(const LinearSystem& sys, double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) {
    throw DomainError("discount_system: gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  const double s = std::sqrt(gamma);
  return LinearSystem(s * sys.a, s * sys.b);
}

// Discounted copy of a sample set. Diagnostics scale analytically:
// pairwise [A B] differences and ||B|| both pick up the factor sqrt(gamma).
inline SampleSet discount_set(const SampleSet& set, double gamma) {
  if (gamma == 1.0) return set;
  const double s = std::sqrt(gamma);
  SampleSet out;
  out.seed = set.seed;
  out.params = set.params;
  out.systems.reserve(set.systems.size());
  for (const auto& sys : set.systems) out.systems.emplace_back(s * sys.a, s * sys.b);
  out.max_b_norm = s * set.max_b_norm;
  out.tau_b = std::max(1.0, out.max_b_norm);
  out.het = s * set.het;
  return out;
}

namespace detail {

// Shared bookkeeping across descent phases: trace rows, the argmin-gradient
// iterate, and the online curvature probe for the smoothness estimate.
class PgTracker {
 public:
  PgTracker(const TraceOptions& opts, bool record_iterates)
      : start_(std::chrono::steady_clock::now()), record_(record_iterates) {
    trace.run_id = opts.run_id;
    trace.algo = opts.algo;
    if (opts.sink) trace.set_sink(opts.sink);
    if (opts.k_ref) k_ref_ = *opts.k_ref;
  }

  void observe(const Gain& k, double cost, const Matrix& gradient, double gamma) {
    TraceRow row;
    row.n = n_++;
    row.gamma = gamma;
    row.j_sa = cost;
    row.grad_norm = gradient.norm();
    if (k_ref_) row.k_dist = (k.k - *k_ref_).norm();
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            start_)
                      .count();
    trace.append(row);

    if (row.grad_norm < best_grad_norm) {  // strict: first minimum wins ties
      best_grad_norm = row.grad_norm;
      best_k = k;
      cost_at_best = cost;
    }
    if (prev_k_) {
      const double dk = (k.k - *prev_k_).norm();
      const double dg = (gradient - *prev_grad_).norm();
      if (dk > 0.0) l_estimate = std::max(l_estimate, dg / dk);
    }
    prev_k_ = k.k;
    prev_grad_ = gradient;
    if (record_) iterates.push_back(k);
  }

  Trace trace;
  Gain best_k;
  double best_grad_norm = std::numeric_limits<double>::infinity();
  double cost_at_best = 0.0;
  double l_estimate = 0.0;
  std::vector<Gain> iterates;

 private:
  std::chrono::steady_clock::time_point start_;
  std::optional<Matrix> k_ref_;
  std::optional<Matrix> prev_k_;
  std::optional<Matrix> prev_grad_;
  int n_ = 0;
  bool record_ = false;
};

struct PhaseOutcome {
  int steps = 0;
  bool converged = false;
  bool at_float_floor = false;  // no measurable progress possible in double
};

// Step acceptance under enforced descent. Cost comparisons are exact: near
// the optimum the true decrease drops below the resolution of J, so any
// slack would let the stepsize inflate on spurious "successes". Bit-for-bit
// flat steps are accepted (the gradient keeps contracting even when J has
// saturated) but must not feed the stepsize adaptation; a windowed stall
// guard ends the phase once the gradient stops making progress too.
enum class StepClass { Rejected, Descent, Flat };

inline StepClass classify_step(double cost_before, double cost_after) {
  if (cost_after < cost_before) return StepClass::Descent;
  if (cost_after == cost_before) return StepClass::Flat;
  return StepClass::Rejected;
}

// One gradient-descent phase against a fixed (already discounted) set.
// `k` and `eval` are updated in place; every visited iterate gets a trace
// row labeled with `gamma`. Steps that would leave the jointly stabilizing
// set (or fail the descent test, when descent is enforced) are rejected and
// the stepsize is halved for that step.
inline PhaseOutcome pg_phase(Gain& k, AvgEval& eval, const SampleSet& dset, const CostSpec& cost,
                             const PgConfig& cfg, int max_steps, double grad_tol, double gamma,
                             PgTracker& tracker, bool observe_start = true) {
  if (observe_start) tracker.observe(k, eval.cost, eval.gradient, gamma);
  PhaseOutcome out;
  double alpha = cfg.alpha;
  double grad_norm = eval.gradient.norm();
  double best_grad_in_phase = grad_norm;
  int flat_steps_since_progress = 0;
  while (out.steps < max_steps) {
    if (grad_norm <= grad_tol) {
      out.converged = true;
      return out;
    }
    double a = alpha;
    int halvings = 0;
    bool stepped = false;
    bool saw_stable_candidate = false;
    StepClass step_class = StepClass::Rejected;
    while (halvings <= cfg.max_step_halvings) {
      Gain candidate(k.k - a * eval.gradient);
      auto next = try_sample_avg_eval(candidate, dset, cost);
      if (next) {
        saw_stable_candidate = true;
        step_class = classify_step(eval.cost, next->cost);
        if (!cfg.enforce_descent || step_class != StepClass::Rejected) {
          k = std::move(candidate);
          eval = std::move(*next);
          grad_norm = eval.gradient.norm();
          if (cfg.adapt_stepsize) {
            if (halvings == 0 && step_class == StepClass::Descent) {
              alpha = std::min(a * 1.25, 1e12);
            } else if (halvings > 0) {
              alpha = a;
            }
          }
          stepped = true;
          break;
        }
      }
      ++halvings;
      a *= 0.5;
    }
    if (!stepped) {
      if (!saw_stable_candidate) {
        throw ConvergenceError(
            "policy_gradient: every trial step left the stabilizing set after " +
                std::to_string(cfg.max_step_halvings) + " halvings of alpha = " +
                std::to_string(cfg.alpha) + "; reduce the stepsize",
            grad_norm);
      }
      // Stable candidates exist but every one increases the (saturated)
      // cost: nothing left to gain at double precision.
      out.converged = grad_norm <= grad_tol;
      out.at_float_floor = true;
      return out;
    }
    ++out.steps;
    tracker.observe(k, eval.cost, eval.gradient, gamma);

    if (grad_norm < best_grad_in_phase) {
      best_grad_in_phase = grad_norm;
      flat_steps_since_progress = 0;
    } else if (step_class == StepClass::Flat && cfg.enforce_descent) {
      if (++flat_steps_since_progress >= cfg.stall_window) {
        out.converged = grad_norm <= grad_tol;
        out.at_float_floor = true;
        return out;
      }
    }
  }
  out.converged = grad_norm <= grad_tol;
  return out;
}

inline PgResult finish_pg_result(Gain k_last, const AvgEval& eval, PhaseOutcome outcome,
                                 PgTracker&& tracker) {
  PgResult result;
  result.k_final = tracker.best_k;
  result.k_last = std::move(k_last);
  result.best_grad_norm = tracker.best_grad_norm;
  result.cost_at_best = tracker.cost_at_best;
  result.final_cost = eval.cost;
  result.final_grad_norm = eval.gradient.norm();
  result.iterations = outcome.steps;
  result.converged = outcome.converged;
  result.l_estimate = tracker.l_estimate;
  result.trace = std::move(tracker.trace);
  result.iterates = std::move(tracker.iterates);
  return result;
}

}  // namespace detail

// Batch policy gradient on the sample-average objective. Requires a jointly
// stabilizing start (Assumption 2); every iterate remains jointly stabilizing.
// The returned k_final is the visited iterate with the smallest gradient norm
// (first one on ties); k_last is the final point of the monotone descent.
inline PgResult policy_gradient(const Gain& k0, const SampleSet& set, const CostSpec& cost,
                                const PgConfig& cfg, const TraceOptions& opts = {}) {
  detail::PgTracker tracker(opts, cfg.record_iterates);
  Gain k = k0;
  AvgEval eval = sample_avg_eval(k, set, cost);  // throws if k0 is not admissible
  const auto outcome =
      detail::pg_phase(k, eval, set, cost, cfg, cfg.max_iters, cfg.grad_tol, 1.0, tracker);
  return detail::finish_pg_result(std::move(k), eval, outcome, std::move(tracker));
}

// ---------------------------------------------------------------------------
// Discount annealing (joint stabilization from scratch).

// Largest gamma in (0, 1] with J_SA(0 | gamma) <= threshold, by bisection.
// The paper states the threshold as 8 d_x; this generalizes to
// 8 trace(Q) (identical for Q = I) so the subproblem stays feasible for any
// normalized Q, since J_SA(K | gamma) >= trace(Q) always.
inline double bisect_initial_gamma(const SampleSet& set, const CostSpec& cost,
                                   double threshold_factor = 8.0, double tol = 1e-6) {
  const Gain k0 = Gain::zero(set.systems[0].input_dim(), set.systems[0].state_dim());
  const double threshold = threshold_factor * cost.q().trace();
  const auto cost_at = [&](double gamma) {
    return try_sample_avg_cost(k0, discount_set(set, gamma), cost);
  };

  const auto at_one = cost_at(1.0);
  if (at_one && *at_one <= threshold) return 1.0;

  double lo = 0.5;
  for (int i = 0; i < 400; ++i) {
    const auto c = cost_at(lo);
    if (c && *c <= threshold) break;
    lo *= 0.5;
  }
  // As gamma -> 0 the cost approaches trace(Q) < threshold, so lo is feasible.
  double hi = std::min(1.0, 2.0 * lo);
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const auto c = cost_at(mid);
    if (c && *c <= threshold) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

// Discount step search: gamma' in [gamma, 1] with
//   2.5 J_SA(K | gamma) <= J_SA(K | gamma') <= 4 J_SA(K | gamma),
// or gamma' = 1 when even the undiscounted cost stays below the 2.5 factor.
// The discounted cost is nondecreasing in gamma (and +inf past the stability
// boundary), so bisection lands inside the band.
inline double bisect_gamma_step(const Gain& k, const SampleSet& set, const CostSpec& cost,
                                double gamma, double tol = 1e-6) {
  const auto cost_at = [&](double g) { return try_sample_avg_cost(k, discount_set(set, g), cost); };
  const auto at_gamma = cost_at(gamma);
  if (!at_gamma) {
    int failed = -1;
    try_sample_avg_cost(k, discount_set(set, gamma), cost, &failed);
    throw InstabilityError("bisect_gamma_step: K does not stabilize the discounted set at gamma = " +
                               std::to_string(gamma),
                           closed_loop_radius(k, discount_set(set, gamma).systems[failed]), failed);
  }
  const double c0 = *at_gamma;
  const double band_lo = 2.5 * c0;
  const double band_hi = 4.0 * c0;

  const auto at_one = cost_at(1.0);
  if (at_one && *at_one <= band_lo) return 1.0;  // terminal step

  double lo = gamma;
  double hi = 1.0;
  for (int i = 0; i < 300; ++i) {
    const double mid = 0.5 * (lo + hi);
    const auto c = cost_at(mid);
    if (c && *c >= band_lo && *c <= band_hi) return mid;
    if (c && *c < band_lo) {
      lo = mid;
    } else {  // unstable or above the band
      hi = mid;
    }
    if (hi - lo <= tol * tol) break;  // cost is continuous; the band cannot be skipped
  }
  throw ConvergenceError("bisect_gamma_step: bisection failed to land in the cost band", c0);
}

// Per-band inner-loop settings; `alpha <= 0` or `steps <= 0` fall back to the
// caller's PgConfig. The default keeps the two-band shape (coarse below
// gamma = 0.85, finer above) with both bands at the base protocol settings.
struct AnnealPhase {
  double gamma_upper = 1.0;  // band applies while gamma < gamma_upper
  double alpha = 0.0;
  int steps = 0;
};

struct AnnealConfig {
  std::vector<AnnealPhase> schedule{{0.85, 0.0, 0}, {2.0, 0.0, 0}};
  double inner_grad_tol_scale = 1e-4;  // inner phases stop early at scale * d_x
  double bisect_tol = 1e-6;
  double threshold_factor = 8.0;  // initial-gamma threshold, times trace(Q)
  int default_inner_steps = 20;
  int max_outer_iters = 10000;  // safety net; termination is guaranteed
  PgConfig final_stage{.alpha = 1e-3,
                       .max_iters = 200000,
                       .grad_tol = 1e-6,
                       .cost_gap_tol = 1e-4,
                       .enforce_descent = true,
                       .adapt_stepsize = true};
};

// One outer iteration of the annealing loop, for post-hoc verification of the
// Theorem-2 invariants (cost sandwich, monotone gamma, start-of-phase bound).
struct AnnealPhaseRecord {
  double gamma = 0.0;           // discount during this phase
  double cost_at_start = 0.0;   // J_SA(K | gamma) entering the phase
  double cost_after_descent = 0.0;
  double gamma_next = 1.0;      // accepted gamma'
  double cost_at_gamma_next = 0.0;
  bool terminal = false;        // gamma' = 1 via the 2.5-factor branch
};

struct AnnealResult {
  Gain k;
  Trace trace;
  double gamma0 = 1.0;
  std::vector<AnnealPhaseRecord> phases;
  double final_cost = 0.0;
  double final_grad_norm = 0.0;
  int total_iterations = 0;
  bool final_converged = false;
  double l_estimate = 0.0;
  std::vector<Gain> iterates;
};

// Discount annealing: starting from K = 0, find the largest admissible
// initial discount, then alternate short descent phases with discount
// increases until gamma = 1, and finish with a gradient-tolerance descent.
// Terminates with a gain that jointly stabilizes all sampled systems.
inline AnnealResult discount_annealing(const SampleSet& set, const CostSpec& cost,
                                       const PgConfig& pg_cfg, const AnnealConfig& anneal_cfg = {},
                                       const TraceOptions& opts = {}) {
  TraceOptions anneal_opts = opts;
  if (anneal_opts.algo == "pg") anneal_opts.algo = "anneal";
  detail::PgTracker tracker(anneal_opts, pg_cfg.record_iterates);

  AnnealResult result;
  Gain k = Gain::zero(set.systems[0].input_dim(), set.systems[0].state_dim());
  double gamma = bisect_initial_gamma(set, cost, anneal_cfg.threshold_factor,
                                      anneal_cfg.bisect_tol);
  result.gamma0 = gamma;

  int outer = 0;
  AvgEval eval;
  SampleSet dset = discount_set(set, gamma);
  eval = sample_avg_eval(k, dset, cost);
  int steps_total = 0;
  while (gamma < 1.0) {
    if (++outer > anneal_cfg.max_outer_iters) {
      throw ConvergenceError("discount_annealing: outer iteration cap exceeded",
                             static_cast<double>(outer));
    }
    AnnealPhaseRecord record;
    record.gamma = gamma;
    record.cost_at_start = eval.cost;

    // Inner descent at fixed gamma (Eq.-style controller update implemented
    // as a bounded number of gradient steps with an early gradient stop).
    PgConfig inner = pg_cfg;
    inner.enforce_descent = true;
    int steps = anneal_cfg.default_inner_steps;
    for (const auto& band : anneal_cfg.schedule) {
      if (gamma < band.gamma_upper) {
        if (band.alpha > 0.0) inner.alpha = band.alpha;
        if (band.steps > 0) steps = band.steps;
        break;
      }
    }
    const double inner_tol = anneal_cfg.inner_grad_tol_scale * static_cast<double>(cost.state_dim());
    const auto outcome =
        detail::pg_phase(k, eval, dset, cost, inner, steps, inner_tol, gamma, tracker);
    steps_total += outcome.steps;
    record.cost_after_descent = eval.cost;

    // Grow the discount into the [2.5x, 4x] cost band (or finish at 1).
    const double gamma_next = bisect_gamma_step(k, set, cost, gamma, anneal_cfg.bisect_tol);
    record.gamma_next = gamma_next;
    record.terminal = (gamma_next == 1.0);
    gamma = gamma_next;
    dset = discount_set(set, gamma);
    eval = sample_avg_eval(k, dset, cost);  // K stabilizes the new discount by construction
    record.cost_at_gamma_next = eval.cost;
    result.phases.push_back(record);
  }

  // Final stage at gamma = 1: descend to the gradient tolerance.
  const auto outcome = detail::pg_phase(k, eval, set, cost, anneal_cfg.final_stage,
                                        anneal_cfg.final_stage.max_iters,
                                        anneal_cfg.final_stage.grad_tol, 1.0, tracker);
  steps_total += outcome.steps;

  result.k = std::move(k);
  result.final_cost = eval.cost;
  result.final_grad_norm = eval.gradient.norm();
  result.total_iterations = steps_total;
  result.final_converged = outcome.converged;
  result.l_estimate = tracker.l_estimate;
  result.trace = std::move(tracker.trace);
  result.iterates = std::move(tracker.iterates);
  return result;
}

// ---------------------------------------------------------------------------
// Stochastic gradient descent (Algorithm-2 style): one sampled system per
// iteration, stepped with the gradient of its discounted cost. The per-step
// discount gamma = min(gamma0 rho(A + BK)^{-2}, 1) guarantees the current
// iterate stabilizes the discounted sample.

struct SgdResult {
  Gain k;
  Trace trace;
  std::vector<double> gamma_history;
  std::vector<std::pair<int, Gain>> checkpoints;  // (iteration, gain) snapshots
};

inline SgdResult sgd(const SystemFamily& family, const ParamDistribution& dist,
                     const CostSpec& cost, int n_iters, double alpha, double gamma0,
                     std::uint64_t seed, const TraceOptions& opts = {},
                     int checkpoint_every = 0) {
  if (!(alpha > 0.0)) throw DomainError("sgd: alpha must be positive");
  if (!(gamma0 > 0.0 && gamma0 < 1.0)) throw DomainError("sgd: gamma0 must lie in (0, 1)");
  if (n_iters < 0) throw DomainError("sgd: n_iters must be nonnegative");
  check_distribution_support(family, dist);

  TraceOptions sgd_opts = opts;
  if (sgd_opts.algo == "pg") sgd_opts.algo = "sgd";
  detail::PgTracker tracker(sgd_opts, /*record_iterates=*/false);

  SgdResult result;
  result.k = Gain::zero(family.input_dim, family.state_dim);
  result.gamma_history.reserve(n_iters);
  for (int n = 0; n < n_iters; ++n) {
    const Vector theta = dist.sample(seed, static_cast<std::uint64_t>(n));
    const LinearSystem sys = family.map(theta);
    const double rho = closed_loop_radius(result.k, sys);
    const double gamma = std::min(gamma0 / (rho * rho), 1.0);
    const LinearSystem dsys = discount_system(sys, gamma);
    // sqrt(gamma) rho <= sqrt(gamma0) < 1 by construction.
    if (!is_stabilizing(result.k, dsys)) {
      throw InstabilityError("sgd: discounted sample not stabilized (internal invariant)",
                             closed_loop_radius(result.k, dsys), n);
    }
    const LqrEval eval = lqr_eval(result.k, dsys, cost);
    tracker.observe(result.k, eval.cost, eval.gradient, gamma);
    result.gamma_history.push_back(gamma);
    if (checkpoint_every > 0 && n % checkpoint_every == 0) {
      result.checkpoints.emplace_back(n, result.k);
    }
    result.k = Gain(result.k.k - alpha * eval.gradient);
  }
  if (checkpoint_every > 0) result.checkpoints.emplace_back(n_iters, result.k);
  result.trace = std::move(tracker.trace);
  return result;
}

// ---------------------------------------------------------------------------
// Entropic-risk policy gradient.

struct RiskConfig {
  double temperature = 1.0;  // t > 0
};

// Softmax weights of exp(t J_i); computed with a max shift so the exponents
// never overflow. Nonnegative, sum to 1, permutation-equivariant.
inline Vector softmax_weights(const std::vector<double>& costs, double temperature) {
  if (costs.empty()) throw DomainError("softmax_weights: empty cost list");
  if (!(temperature > 0.0)) throw DomainError("softmax_weights: temperature must be positive");
  double shift = -std::numeric_limits<double>::infinity();
  for (const double c : costs) shift = std::max(shift, temperature * c);
  Vector w(static_cast<Eigen::Index>(costs.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    w(static_cast<Eigen::Index>(i)) = std::exp(temperature * costs[i] - shift);
    sum += w(static_cast<Eigen::Index>(i));
  }
  return w / sum;
}

// J_ER(K) = (1/t) log( (1/M) sum_i exp(t J_i) ), evaluated via log-sum-exp.
inline double entropic_risk_value(const std::vector<double>& costs, double temperature) {
  if (costs.empty()) throw DomainError("entropic_risk_value: empty cost list");
  if (!(temperature > 0.0)) throw DomainError("entropic_risk_value: temperature must be positive");
  double shift = -std::numeric_limits<double>::infinity();
  for (const double c : costs) shift = std::max(shift, temperature * c);
  double sum = 0.0;
  for (const double c : costs) sum += std::exp(temperature * c - shift);
  return (shift + std::log(sum / static_cast<double>(costs.size()))) / temperature;
}

struct EntropicResult {
  Gain k;
  Trace trace;
  std::vector<double> j_er;          // aligned with trace rows
  double max_weight_sum_error = 0.0; // max |sum(weights) - 1| observed
  Vector last_weights;
  int iterations = 0;
  bool converged = false;
  double final_grad_norm = 0.0;
  double final_j_er = 0.0;
};

// Gradient descent on the empirical entropic risk: the update direction is
// sum_i w_i grad J(K, theta_i) with softmax weights w, which is exactly the
// gradient of J_ER; descent backtracking is therefore checked on J_ER.
// The trace's j_sa column still records the sample mean for comparability
// with the batch algorithm; J_ER per iterate is returned alongside.
inline EntropicResult entropic_pg(const Gain& k0, const SampleSet& set, const CostSpec& cost,
                                  const RiskConfig& risk, const PgConfig& cfg,
                                  const TraceOptions& opts = {}) {
  if (!(risk.temperature > 0.0)) throw DomainError("entropic_pg: temperature must be positive");
  TraceOptions er_opts = opts;
  if (er_opts.algo == "pg") er_opts.algo = "entropic";
  detail::PgTracker tracker(er_opts, /*record_iterates=*/false);

  struct ErEval {
    AvgEval avg;
    std::vector<Matrix> per_system_grad;
    Vector weights;
    Matrix direction;
    double j_er = 0.0;
  };
  const auto try_eval = [&](const Gain& k) -> std::optional<ErEval> {
    ErEval out;
    out.per_system_grad.reserve(set.systems.size());
    double sum = 0.0;
    Matrix grad_sum = Matrix::Zero(k.k.rows(), k.k.cols());
    for (int i = 0; i < set.size(); ++i) {
      if (!is_stabilizing(k, set.systems[i])) return std::nullopt;
      LqrEval eval = lqr_eval(k, set.systems[i], cost);
      sum += eval.cost;
      grad_sum += eval.gradient;
      out.avg.per_system_cost.push_back(eval.cost);
      out.per_system_grad.push_back(std::move(eval.gradient));
    }
    out.avg.cost = sum / static_cast<double>(set.size());
    out.avg.gradient = grad_sum / static_cast<double>(set.size());
    out.weights = softmax_weights(out.avg.per_system_cost, risk.temperature);
    out.direction = Matrix::Zero(k.k.rows(), k.k.cols());
    for (int i = 0; i < set.size(); ++i) {
      out.direction += out.weights(i) * out.per_system_grad[i];
    }
    out.j_er = entropic_risk_value(out.avg.per_system_cost, risk.temperature);
    return out;
  };

  EntropicResult result;
  Gain k = k0;
  auto eval = try_eval(k);
  if (!eval) {
    int failed = -1;
    try_sample_avg_cost(k, set, cost, &failed);
    throw InstabilityError("entropic_pg: initial gain is not jointly stabilizing",
                           closed_loop_radius(k, set.systems[failed]), failed);
  }

  const auto note = [&](const ErEval& e) {
    result.j_er.push_back(e.j_er);
    result.max_weight_sum_error =
        std::max(result.max_weight_sum_error, std::abs(e.weights.sum() - 1.0));
  };
  tracker.observe(k, eval->avg.cost, eval->direction, 1.0);
  note(*eval);

  double alpha = cfg.alpha;
  int steps = 0;
  bool converged = false;
  double best_dir_norm = eval->direction.norm();
  int flat_steps_since_progress = 0;
  while (steps < cfg.max_iters) {
    if (eval->direction.norm() <= cfg.grad_tol) {
      converged = true;
      break;
    }
    double a = alpha;
    int halvings = 0;
    bool stepped = false;
    bool saw_stable_candidate = false;
    detail::StepClass step_class = detail::StepClass::Rejected;
    while (halvings <= cfg.max_step_halvings) {
      Gain candidate(k.k - a * eval->direction);
      auto next = try_eval(candidate);
      if (next) {
        saw_stable_candidate = true;
        step_class = detail::classify_step(eval->j_er, next->j_er);
        if (!cfg.enforce_descent || step_class != detail::StepClass::Rejected) {
          k = std::move(candidate);
          eval = std::move(next);
          if (cfg.adapt_stepsize) {
            if (halvings == 0 && step_class == detail::StepClass::Descent) {
              alpha = std::min(a * 1.25, 1e12);
            } else if (halvings > 0) {
              alpha = a;
            }
          }
          stepped = true;
          break;
        }
      }
      ++halvings;
      a *= 0.5;
    }
    if (!stepped) {
      if (!saw_stable_candidate) {
        throw ConvergenceError("entropic_pg: every trial step left the stabilizing set; reduce alpha",
                               eval->direction.norm());
      }
      break;  // floating-point floor reached
    }
    ++steps;
    tracker.observe(k, eval->avg.cost, eval->direction, 1.0);
    note(*eval);
    const double dir_norm = eval->direction.norm();
    if (dir_norm < best_dir_norm) {
      best_dir_norm = dir_norm;
      flat_steps_since_progress = 0;
    } else if (step_class == detail::StepClass::Flat && cfg.enforce_descent) {
      if (++flat_steps_since_progress >= cfg.stall_window) break;  // float floor
    }
  }
  if (!converged) converged = eval->direction.norm() <= cfg.grad_tol;

  result.k = std::move(k);
  result.iterations = steps;
  result.converged = converged;
  result.final_grad_norm = eval->direction.norm();
  result.final_j_er = eval->j_er;
  result.last_weights = eval->weights;
  result.trace = std::move(tracker.trace);
  return result;
}

// Terminal certification polish for the entropic objective: drives the
// softmax-weighted gradient (the exact gradient of J_ER) to a tight norm
// using the weighted curvature preconditioner, with the same ulp-guarded
// acceptance as the batch reference polish. The certificate is the weighted
// gradient norm at the returned gain.
struct EntropicCertificate {
  Gain k;
  double direction_norm = 0.0;
  double j_er = 0.0;
  bool certified = false;
};

inline EntropicCertificate entropic_polish(const Gain& k0, const SampleSet& set,
                                           const CostSpec& cost, const RiskConfig& risk,
                                           double grad_tol = 1e-7, int max_iters = 200) {
  const Eigen::Index du = k0.k.rows();
  const Eigen::Index dx = k0.k.cols();
  const Eigen::Index dim = du * dx;

  struct State {
    Matrix direction;
    Matrix hessian;
    double j_er = 0.0;
  };
  const auto eval_at = [&](const Gain& k) -> std::optional<State> {
    std::vector<double> costs;
    std::vector<Matrix> grads;
    std::vector<Matrix> sigmas;
    std::vector<Matrix> grams;
    costs.reserve(set.systems.size());
    for (const auto& sys : set.systems) {
      if (!is_stabilizing(k, sys)) return std::nullopt;
      const LqrEval e = lqr_eval(k, sys, cost);
      costs.push_back(e.cost);
      grads.push_back(e.gradient);
      sigmas.push_back(e.sigma_k);
      grams.push_back(cost.r() + sys.b.transpose() * e.p_k * sys.b);
    }
    const Vector w = softmax_weights(costs, risk.temperature);
    State st;
    st.direction = Matrix::Zero(du, dx);
    st.hessian = Matrix::Zero(dim, dim);
    for (int i = 0; i < set.size(); ++i) {
      st.direction += w(i) * grads[i];
      for (Eigen::Index bi = 0; bi < dx; ++bi) {
        for (Eigen::Index bj = 0; bj < dx; ++bj) {
          st.hessian.block(bi * du, bj * du, du, du) += 2.0 * w(i) * sigmas[i](bi, bj) * grams[i];
        }
      }
    }
    st.j_er = entropic_risk_value(costs, risk.temperature);
    return st;
  };

  EntropicCertificate out;
  out.k = k0;
  auto state = eval_at(out.k);
  if (!state) {
    throw InstabilityError("entropic_polish: initial gain is not jointly stabilizing", 1.0);
  }
  double dir_norm = state->direction.norm();
  for (int iter = 0; iter < max_iters && dir_norm > grad_tol; ++iter) {
    const Eigen::Map<const Vector> grad_vec(state->direction.data(), dim);
    Vector step_vec = state->hessian.ldlt().solve(grad_vec);
    Eigen::Map<const Matrix> step(step_vec.data(), du, dx);
    const double guard =
        state->j_er + 8.0 * std::abs(state->j_er) * std::numeric_limits<double>::epsilon();
    bool stepped = false;
    double a = 1.0;
    for (int halvings = 0; halvings < 60; ++halvings) {
      Gain candidate(out.k.k - a * step);
      auto next = eval_at(candidate);
      if (next) {
        const double next_norm = next->direction.norm();
        if (next_norm < dir_norm && next->j_er <= guard) {
          out.k = std::move(candidate);
          state = std::move(next);
          dir_norm = next_norm;
          stepped = true;
          break;
        }
      }
      a *= 0.5;
    }
    if (!stepped) break;
  }
  out.direction_norm = dir_norm;
  out.j_er = state->j_er;
  out.certified = dir_norm <= grad_tol;
  return out;
}

// ---------------------------------------------------------------------------
// Convergence-theory diagnostics.

// Theoretical iteration budget N >= 2 L zeta0 max(1/eps, 64 tau_B zeta0),
// reported next to empirical iteration counts (never used as a stopping rule:
// L is only estimated).
inline long long theorem1_budget(double l_est, double zeta0, double tau_b, double eps) {
  if (!(l_est > 0.0) || !(zeta0 > 0.0) || !(tau_b > 0.0) || !(eps > 0.0)) {
    throw DomainError("theorem1_budget: all inputs must be positive");
  }
  return static_cast<long long>(
      std::ceil(2.0 * l_est * zeta0 * std::max(1.0 / eps, 64.0 * tau_b * zeta0)));
}

namespace detail {

// Curvature-preconditioned descent for reference solutions. The local
// quadratic model of J_SA around a stabilizing K has the exact form
//   (1/M) sum_i vec(dK)^T [Sigma_K^i kron (R + B_i^T P_i B_i)] vec(dK)
// (column-major vec of the d_u x d_x gain), so preconditioning the averaged
// gradient with that matrix gives Hewer-style superlinear convergence near
// the optimum. Used only to certify optima; the paper's procedures above
// stay plain first-order.
inline bool preconditioned_polish(Gain& k, AvgEval& eval, const SampleSet& set,
                                  const CostSpec& cost, double grad_tol, int max_iters) {
  const Eigen::Index du = k.k.rows();
  const Eigen::Index dx = k.k.cols();
  const Eigen::Index dim = du * dx;
  double grad_norm = eval.gradient.norm();
  for (int iter = 0; iter < max_iters; ++iter) {
    if (grad_norm <= grad_tol) return true;

    Matrix hess = Matrix::Zero(dim, dim);
    for (const auto& sys : set.systems) {
      const Matrix a_cl = sys.a + sys.b * k.k;
      const Matrix q_k = cost.q() + k.k.transpose() * cost.r() * k.k;
      const Matrix p = dlyap(a_cl, q_k).value;
      const Matrix sigma = dlyap(a_cl, cost.sigma_w(), LyapunovForm::Adjoint).value;
      const Matrix gram = cost.r() + sys.b.transpose() * p * sys.b;  // du x du
      for (Eigen::Index bi = 0; bi < dx; ++bi) {
        for (Eigen::Index bj = 0; bj < dx; ++bj) {
          hess.block(bi * du, bj * du, du, du) += 2.0 * sigma(bi, bj) * gram;
        }
      }
    }
    hess /= static_cast<double>(set.size());

    const Eigen::Map<const Vector> grad_vec(eval.gradient.data(), dim);
    Vector dir_vec = hess.ldlt().solve(grad_vec);
    Eigen::Map<const Matrix> direction(dir_vec.data(), du, dx);

    // At the basin floor the cost wiggles by a few ulp between candidates,
    // so acceptance is driven by the gradient with the cost merely guarded
    // against genuine ascent.
    const double cost_guard =
        eval.cost + 8.0 * std::abs(eval.cost) * std::numeric_limits<double>::epsilon();
    bool stepped = false;
    double a = 1.0;
    for (int halvings = 0; halvings < 60; ++halvings) {
      Gain candidate(k.k - a * direction);
      auto next = try_sample_avg_eval(candidate, set, cost);
      if (next) {
        const double next_grad = next->gradient.norm();
        if (next_grad < grad_norm && next->cost <= cost_guard) {
          k = std::move(candidate);
          eval = std::move(*next);
          grad_norm = next_grad;
          stepped = true;
          break;
        }
      }
      a *= 0.5;
    }
    if (!stepped) return grad_norm <= grad_tol;  // stalled at the float floor
  }
  return grad_norm <= grad_tol;
}

}  // namespace detail

// Reference optimum for a sample set: anneal from scratch, then polish with
// the curvature-preconditioned descent to a tight gradient tolerance. The
// resulting certificate is the gradient norm at the returned gain.
struct Reference {
  Gain k_star;
  double j_star = 0.0;
  double grad_norm = 0.0;
  bool certified = false;  // grad_norm <= requested tolerance
};

inline Reference solve_reference(const SampleSet& set, const CostSpec& cost,
                                 double grad_tol = 1e-7) {
  PgConfig pg;
  AnnealConfig anneal;
  // Plain descent only needs to enter the preconditioned polish's basin.
  anneal.final_stage.grad_tol = std::max(grad_tol, 1e-4);
  anneal.final_stage.adapt_stepsize = true;
  anneal.final_stage.max_iters = 200000;
  const AnnealResult res = discount_annealing(set, cost, pg, anneal);

  Reference ref;
  ref.k_star = res.k;
  AvgEval eval = sample_avg_eval(ref.k_star, set, cost);
  ref.certified = detail::preconditioned_polish(ref.k_star, eval, set, cost, grad_tol, 200);
  ref.j_star = eval.cost;
  ref.grad_norm = eval.gradient.norm();
  return ref;
}

// Scenario-boundedness diagnostic with the optimum estimated by long descent
// from the cheapest recorded gain.
inline BoundednessReport boundedness_check(const std::vector<Gain>& gains, const SampleSet& set,
                                           const CostSpec& cost, double b_bound, double slack) {
  if (gains.empty()) throw DomainError("boundedness_check: need at least one gain");
  const Gain* best = &gains.front();
  double best_cost = sample_avg_cost(*best, set, cost);
  for (const auto& g : gains) {
    const double c = sample_avg_cost(g, set, cost);
    if (c < best_cost) {
      best_cost = c;
      best = &g;
    }
  }
  PgConfig cfg;
  cfg.alpha = 1e-3;
  cfg.max_iters = 200000;
  cfg.grad_tol = 1e-7;
  cfg.adapt_stepsize = true;
  const PgResult opt = policy_gradient(*best, set, cost, cfg);
  return boundedness_check(gains, set, cost, b_bound, slack, opt.final_cost);
}

}  // namespace drlqr
