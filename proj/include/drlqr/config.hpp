#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "drlqr/domain.hpp"
#include "drlqr/optimizer.hpp"
#include "drlqr/serialize.hpp"

// Experiment configuration: a single JSON file whose defaults reproduce the
// published pendulum protocol (dt = 0.01, g = 10, uniform [0.75, 1.25]^2,
// M in {10, 20, 500}, 100 seeds, alpha = 1e-3 with 20 inner steps, SGD with
// alpha = 2e-4 and gamma0 = 0.99, entropic temperature 1.0, 1e5 Monte-Carlo
// samples). Every numeric field is validated at load time.

namespace drlqr {

struct FamilyConfig {
  std::string kind = "pendulum";  // "pendulum" | "explicit"
  double dt = 0.01;
  double gravity = 10.0;
  std::optional<Matrix> a;  // explicit plant
  std::optional<Matrix> b;
};

struct CostConfig {
  std::optional<Matrix> q;  // default: identity of the family dimensions
  std::optional<Matrix> r;
  std::optional<Matrix> sigma_w;
};

struct DistributionConfig {
  std::vector<double> lower{0.75, 0.75};
  std::vector<double> upper{1.25, 1.25};
};

struct RunConfig {
  std::string algorithm = "anneal";  // anneal | batch | sgd | entropic
  std::vector<int> m_values{10, 20, 500};
  std::uint64_t master_seed = 0;
  int n_seeds = 100;
  std::string out_dir = "out";
  int threads = 2;
};

struct PgSection {
  double alpha = 1e-3;
  int max_iters = 10000;
  double grad_tol = 1e-5;
  double cost_gap_tol = 1e-4;
  bool enforce_descent = true;
  bool adapt_stepsize = false;
};

struct AnnealSection {
  int inner_steps = 20;
  double inner_alpha_coarse = 0.0;  // 0: use pg.alpha
  double inner_alpha_fine = 0.0;
  double band_split = 0.85;
  double final_grad_tol = 1e-5;
  int final_max_iters = 200000;
  double bisect_tol = 1e-6;
  double threshold_factor = 8.0;
};

struct SgdSection {
  int iters = 3000;
  double alpha = 2e-4;
  double gamma0 = 0.99;
  int seeds = 5;
  int eval_every = 50;
  int n_mc_trace = 4000;
};

struct RiskSection {
  double temperature = 1.0;
};

struct MonteCarloSection {
  std::int64_t n_mc = 100000;
  double delta = 0.05;
  std::uint64_t seed = 9001;
};

struct ReferenceSection {
  int m = 2000;               // sample count behind the J_DR* proxy
  std::uint64_t seed = 424242;
  double grad_tol = 1e-7;     // certification tolerance for reference optima
};

struct ExperimentConfig {
  FamilyConfig family;
  CostConfig cost;
  DistributionConfig distribution;
  RunConfig run;
  PgSection pg;
  AnnealSection anneal;
  SgdSection sgd;
  RiskSection risk;
  MonteCarloSection monte_carlo;
  ReferenceSection reference;

  SystemFamily make_family() const {
    if (family.kind == "pendulum") {
      return pendulum_family(family.dt, family.gravity);
    }
    if (family.kind == "explicit") {
      if (!family.a || !family.b) {
        throw ConfigError("explicit family requires matrices a and b");
      }
      return point_family(LinearSystem(*family.a, *family.b));
    }
    throw ConfigError("unknown family kind: " + family.kind);
  }

  ParamDistribution make_distribution() const {
    const SystemFamily fam = make_family();
    if (fam.parameter_dim == 0) return ParamDistribution(Vector(0), Vector(0));
    Vector lo(static_cast<Eigen::Index>(distribution.lower.size()));
    Vector hi(static_cast<Eigen::Index>(distribution.upper.size()));
    for (std::size_t i = 0; i < distribution.lower.size(); ++i) lo(i) = distribution.lower[i];
    for (std::size_t i = 0; i < distribution.upper.size(); ++i) hi(i) = distribution.upper[i];
    return ParamDistribution(lo, hi);
  }

  CostSpec make_cost() const {
    const SystemFamily fam = make_family();
    const Matrix q = cost.q ? *cost.q : Matrix::Identity(fam.state_dim, fam.state_dim);
    const Matrix r = cost.r ? *cost.r : Matrix::Identity(fam.input_dim, fam.input_dim);
    const Matrix sw = cost.sigma_w ? *cost.sigma_w : Matrix::Identity(fam.state_dim, fam.state_dim);
    return CostSpec(q, r, sw);
  }

  PgConfig make_pg_config() const {
    PgConfig out;
    out.alpha = pg.alpha;
    out.max_iters = pg.max_iters;
    out.grad_tol = pg.grad_tol;
    out.cost_gap_tol = pg.cost_gap_tol;
    out.enforce_descent = pg.enforce_descent;
    out.adapt_stepsize = pg.adapt_stepsize;
    return out;
  }

  AnnealConfig make_anneal_config() const {
    AnnealConfig out;
    out.schedule = {{anneal.band_split, anneal.inner_alpha_coarse, anneal.inner_steps},
                    {2.0, anneal.inner_alpha_fine, anneal.inner_steps}};
    out.default_inner_steps = anneal.inner_steps;
    out.bisect_tol = anneal.bisect_tol;
    out.threshold_factor = anneal.threshold_factor;
    out.final_stage = make_pg_config();
    out.final_stage.grad_tol = anneal.final_grad_tol;
    out.final_stage.max_iters = anneal.final_max_iters;
    out.final_stage.adapt_stepsize = true;
    return out;
  }

  void validate() const {
    if (family.kind != "pendulum" && family.kind != "explicit") {
      throw ConfigError("family.kind must be 'pendulum' or 'explicit'");
    }
    if (family.kind == "pendulum" && (family.dt < 0.0 || family.gravity <= 0.0)) {
      throw ConfigError("pendulum family requires dt >= 0 and gravity > 0");
    }
    if (distribution.lower.size() != distribution.upper.size()) {
      throw ConfigError("distribution bounds must have matching dimensions");
    }
    for (std::size_t i = 0; i < distribution.lower.size(); ++i) {
      if (distribution.lower[i] > distribution.upper[i]) {
        throw ConfigError("distribution lower bound exceeds upper bound");
      }
    }
    if (run.algorithm != "anneal" && run.algorithm != "batch" && run.algorithm != "sgd" &&
        run.algorithm != "entropic") {
      throw ConfigError("run.algorithm must be one of anneal|batch|sgd|entropic");
    }
    if (run.m_values.empty()) throw ConfigError("run.m_values must be non-empty");
    for (int m : run.m_values) {
      if (m < 1) throw ConfigError("run.m_values entries must be >= 1");
    }
    if (run.n_seeds < 1) throw ConfigError("run.n_seeds must be >= 1");
    if (run.threads < 1) throw ConfigError("run.threads must be >= 1");
    if (pg.alpha <= 0.0 || pg.grad_tol <= 0.0 || pg.cost_gap_tol <= 0.0 || pg.max_iters < 1) {
      throw ConfigError("pg section requires positive alpha, tolerances and max_iters");
    }
    if (anneal.inner_steps < 1 || anneal.final_grad_tol <= 0.0 || anneal.final_max_iters < 1 ||
        anneal.bisect_tol <= 0.0 || anneal.threshold_factor <= 0.0) {
      throw ConfigError("anneal section has out-of-range values");
    }
    if (sgd.iters < 0 || sgd.alpha <= 0.0 || sgd.gamma0 <= 0.0 || sgd.gamma0 >= 1.0 ||
        sgd.seeds < 1 || sgd.eval_every < 1 || sgd.n_mc_trace < 1) {
      throw ConfigError("sgd section has out-of-range values");
    }
    if (risk.temperature <= 0.0) throw ConfigError("risk.temperature must be positive");
    if (monte_carlo.n_mc < 1 || monte_carlo.delta <= 0.0 || monte_carlo.delta >= 1.0) {
      throw ConfigError("monte_carlo section has out-of-range values");
    }
    if (reference.m < 1 || reference.grad_tol <= 0.0) {
      throw ConfigError("reference section has out-of-range values");
    }
    (void)make_cost();  // dimension and definiteness checks
    check_distribution_support(make_family(), make_distribution());
  }
};

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["family"]["kind"] = c.family.kind;
  j["family"]["dt"] = c.family.dt;
  j["family"]["gravity"] = c.family.gravity;
  if (c.family.a) j["family"]["a"] = matrix_to_json(*c.family.a);
  if (c.family.b) j["family"]["b"] = matrix_to_json(*c.family.b);
  if (c.cost.q) j["cost"]["q"] = matrix_to_json(*c.cost.q);
  if (c.cost.r) j["cost"]["r"] = matrix_to_json(*c.cost.r);
  if (c.cost.sigma_w) j["cost"]["sigma_w"] = matrix_to_json(*c.cost.sigma_w);
  j["distribution"]["lower"] = c.distribution.lower;
  j["distribution"]["upper"] = c.distribution.upper;
  j["run"] = {{"algorithm", c.run.algorithm}, {"m_values", c.run.m_values},
              {"master_seed", c.run.master_seed}, {"n_seeds", c.run.n_seeds},
              {"out_dir", c.run.out_dir},       {"threads", c.run.threads}};
  j["pg"] = {{"alpha", c.pg.alpha},
             {"max_iters", c.pg.max_iters},
             {"grad_tol", c.pg.grad_tol},
             {"cost_gap_tol", c.pg.cost_gap_tol},
             {"enforce_descent", c.pg.enforce_descent},
             {"adapt_stepsize", c.pg.adapt_stepsize}};
  j["anneal"] = {{"inner_steps", c.anneal.inner_steps},
                 {"inner_alpha_coarse", c.anneal.inner_alpha_coarse},
                 {"inner_alpha_fine", c.anneal.inner_alpha_fine},
                 {"band_split", c.anneal.band_split},
                 {"final_grad_tol", c.anneal.final_grad_tol},
                 {"final_max_iters", c.anneal.final_max_iters},
                 {"bisect_tol", c.anneal.bisect_tol},
                 {"threshold_factor", c.anneal.threshold_factor}};
  j["sgd"] = {{"iters", c.sgd.iters},           {"alpha", c.sgd.alpha},
              {"gamma0", c.sgd.gamma0},         {"seeds", c.sgd.seeds},
              {"eval_every", c.sgd.eval_every}, {"n_mc_trace", c.sgd.n_mc_trace}};
  j["risk"] = {{"temperature", c.risk.temperature}};
  j["monte_carlo"] = {{"n_mc", c.monte_carlo.n_mc},
                      {"delta", c.monte_carlo.delta},
                      {"seed", c.monte_carlo.seed}};
  j["reference"] = {{"m", c.reference.m},
                    {"seed", c.reference.seed},
                    {"grad_tol", c.reference.grad_tol}};
  return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("family")) {
      const auto& f = j["family"];
      if (f.contains("kind")) c.family.kind = f["kind"].get<std::string>();
      if (f.contains("dt")) c.family.dt = f["dt"].get<double>();
      if (f.contains("gravity")) c.family.gravity = f["gravity"].get<double>();
      if (f.contains("a")) c.family.a = matrix_from_json(f["a"]);
      if (f.contains("b")) c.family.b = matrix_from_json(f["b"]);
    }
    if (j.contains("cost")) {
      const auto& f = j["cost"];
      if (f.contains("q")) c.cost.q = matrix_from_json(f["q"]);
      if (f.contains("r")) c.cost.r = matrix_from_json(f["r"]);
      if (f.contains("sigma_w")) c.cost.sigma_w = matrix_from_json(f["sigma_w"]);
    }
    if (j.contains("distribution")) {
      const auto& f = j["distribution"];
      if (f.contains("lower")) c.distribution.lower = f["lower"].get<std::vector<double>>();
      if (f.contains("upper")) c.distribution.upper = f["upper"].get<std::vector<double>>();
    }
    if (j.contains("run")) {
      const auto& f = j["run"];
      if (f.contains("algorithm")) c.run.algorithm = f["algorithm"].get<std::string>();
      if (f.contains("m_values")) c.run.m_values = f["m_values"].get<std::vector<int>>();
      if (f.contains("master_seed")) c.run.master_seed = f["master_seed"].get<std::uint64_t>();
      if (f.contains("n_seeds")) c.run.n_seeds = f["n_seeds"].get<int>();
      if (f.contains("out_dir")) c.run.out_dir = f["out_dir"].get<std::string>();
      if (f.contains("threads")) c.run.threads = f["threads"].get<int>();
    }
    if (j.contains("pg")) {
      const auto& f = j["pg"];
      if (f.contains("alpha")) c.pg.alpha = f["alpha"].get<double>();
      if (f.contains("max_iters")) c.pg.max_iters = f["max_iters"].get<int>();
      if (f.contains("grad_tol")) c.pg.grad_tol = f["grad_tol"].get<double>();
      if (f.contains("cost_gap_tol")) c.pg.cost_gap_tol = f["cost_gap_tol"].get<double>();
      if (f.contains("enforce_descent")) c.pg.enforce_descent = f["enforce_descent"].get<bool>();
      if (f.contains("adapt_stepsize")) c.pg.adapt_stepsize = f["adapt_stepsize"].get<bool>();
    }
    if (j.contains("anneal")) {
      const auto& f = j["anneal"];
      if (f.contains("inner_steps")) c.anneal.inner_steps = f["inner_steps"].get<int>();
      if (f.contains("inner_alpha_coarse"))
        c.anneal.inner_alpha_coarse = f["inner_alpha_coarse"].get<double>();
      if (f.contains("inner_alpha_fine"))
        c.anneal.inner_alpha_fine = f["inner_alpha_fine"].get<double>();
      if (f.contains("band_split")) c.anneal.band_split = f["band_split"].get<double>();
      if (f.contains("final_grad_tol")) c.anneal.final_grad_tol = f["final_grad_tol"].get<double>();
      if (f.contains("final_max_iters")) c.anneal.final_max_iters = f["final_max_iters"].get<int>();
      if (f.contains("bisect_tol")) c.anneal.bisect_tol = f["bisect_tol"].get<double>();
      if (f.contains("threshold_factor"))
        c.anneal.threshold_factor = f["threshold_factor"].get<double>();
    }
    if (j.contains("sgd")) {
      const auto& f = j["sgd"];
      if (f.contains("iters")) c.sgd.iters = f["iters"].get<int>();
      if (f.contains("alpha")) c.sgd.alpha = f["alpha"].get<double>();
      if (f.contains("gamma0")) c.sgd.gamma0 = f["gamma0"].get<double>();
      if (f.contains("seeds")) c.sgd.seeds = f["seeds"].get<int>();
      if (f.contains("eval_every")) c.sgd.eval_every = f["eval_every"].get<int>();
      if (f.contains("n_mc_trace")) c.sgd.n_mc_trace = f["n_mc_trace"].get<int>();
    }
    if (j.contains("risk") && j["risk"].contains("temperature")) {
      c.risk.temperature = j["risk"]["temperature"].get<double>();
    }
    if (j.contains("monte_carlo")) {
      const auto& f = j["monte_carlo"];
      if (f.contains("n_mc")) c.monte_carlo.n_mc = f["n_mc"].get<std::int64_t>();
      if (f.contains("delta")) c.monte_carlo.delta = f["delta"].get<double>();
      if (f.contains("seed")) c.monte_carlo.seed = f["seed"].get<std::uint64_t>();
    }
    if (j.contains("reference")) {
      const auto& f = j["reference"];
      if (f.contains("m")) c.reference.m = f["m"].get<int>();
      if (f.contains("seed")) c.reference.seed = f["seed"].get<std::uint64_t>();
      if (f.contains("grad_tol")) c.reference.grad_tol = f["grad_tol"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path));
}

inline void save_config(const ExperimentConfig& c, const std::filesystem::path& path) {
  write_json_file(path, config_to_json(c));
}

}  // namespace drlqr
