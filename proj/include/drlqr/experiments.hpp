#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "drlqr/config.hpp"
#include "drlqr/optimizer.hpp"
#include "drlqr/parallel.hpp"
#include "drlqr/serialize.hpp"
#include "drlqr/svg_plot.hpp"

// Experiment front-end behind the CLI subcommands. Each command produces a
// self-contained artifact directory: the config snapshot, per-run trace CSVs
// and replay files (sample sets + gains, full precision), aggregated summary
// CSVs, and SVG plots rendered from those CSVs.
//
// Seed ledger: the master seed expands as
//   run_seed(m_index, seed_index) = substream(substream(master, m_index), seed_index)
// for the batch/annealing/entropic sweeps, and
//   sgd_seed(i) = substream(substream(master, 1000), i)
// for the SGD seeds. Independent (m, seed) runs execute on a worker pool;
// per-run files are written by the workers, summaries are merged in index
// order afterwards, so artifacts are identical for any thread count.

namespace drlqr {

namespace fs = std::filesystem;

inline std::uint64_t run_seed_for(std::uint64_t master, int m_index, int seed_index) {
  return rng::substream(rng::substream(master, static_cast<std::uint64_t>(m_index)),
                        static_cast<std::uint64_t>(seed_index));
}

inline std::uint64_t sgd_seed_for(std::uint64_t master, int seed_index) {
  return rng::substream(rng::substream(master, 1000), static_cast<std::uint64_t>(seed_index));
}

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

inline std::string g17(double v) { return drlqr::detail::format_g17(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// verify: discount annealing per (M, seed), traces against certified
// references, and the Monte-Carlo J_DR gap per sample count.

struct RunSummary {
  int m = 0;
  int seed_index = 0;
  std::uint64_t run_seed = 0;
  double gamma0 = 1.0;
  int iterations = 0;
  double j_sa_final = 0.0;
  double grad_norm_final = 0.0;
  double j_star_ref = 0.0;
  double ref_grad_norm = 0.0;
  bool ref_certified = false;
  double excess = 0.0;
  double k_dist_final = 0.0;
  double j_dr = 0.0;
  double j_dr_halfwidth = 0.0;
  double j_dr_gap = 0.0;
  double l_estimate = 0.0;
  bool monotone_j_sa = true;  // within each fixed-gamma phase of the trace
  std::string trace_path;
};

struct QuantileRow {
  int m = 0;
  int n = 0;
  double median = 0.0, q25 = 0.0, q75 = 0.0;
  int count = 0;
};

struct VerifyArtifact {
  fs::path dir;
  std::vector<RunSummary> runs;
  Gain k_dr_proxy;
  double j_dr_star = 0.0;
  std::vector<QuantileRow> excess_by_iter;
  std::vector<QuantileRow> kdist_by_iter;
  std::map<int, std::array<double, 3>> jdr_gap_quantiles;  // m -> {median, q25, q75}
};

namespace detail {

// Within-phase monotonicity of the j_sa column: nonincreasing wherever two
// consecutive rows share a discount.
inline bool trace_monotone_within_phases(const Trace& trace) {
  for (std::size_t i = 1; i < trace.rows.size(); ++i) {
    if (trace.rows[i].gamma == trace.rows[i - 1].gamma &&
        trace.rows[i].j_sa > trace.rows[i - 1].j_sa + 1e-12) {
      return false;
    }
  }
  return true;
}

inline void write_run_summary_csv(const fs::path& path, const std::vector<RunSummary>& runs) {
  auto os = open_out(path);
  os << "m,seed_index,run_seed,gamma0,iterations,j_sa_final,grad_norm_final,j_star_ref,"
        "ref_grad_norm,ref_certified,excess,k_dist_final,j_dr,j_dr_halfwidth,j_dr_gap,"
        "l_estimate,monotone_j_sa,trace_path\n";
  for (const auto& r : runs) {
    os << r.m << ',' << r.seed_index << ',' << r.run_seed << ',' << g17(r.gamma0) << ','
       << r.iterations << ',' << g17(r.j_sa_final) << ',' << g17(r.grad_norm_final) << ','
       << g17(r.j_star_ref) << ',' << g17(r.ref_grad_norm) << ',' << (r.ref_certified ? 1 : 0)
       << ',' << g17(r.excess) << ',' << g17(r.k_dist_final) << ',' << g17(r.j_dr) << ','
       << g17(r.j_dr_halfwidth) << ',' << g17(r.j_dr_gap) << ',' << g17(r.l_estimate) << ','
       << (r.monotone_j_sa ? 1 : 0) << ',' << r.trace_path << '\n';
  }
}

inline std::vector<QuantileRow> aggregate_by_iteration(
    const std::vector<int>& m_values, const std::vector<RunSummary>& runs,
    const std::vector<Trace>& traces, bool use_kdist, const std::vector<double>& j_star) {
  std::vector<QuantileRow> out;
  for (const int m : m_values) {
    std::size_t max_len = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (runs[r].m == m) max_len = std::max(max_len, traces[r].rows.size());
    }
    for (std::size_t n = 0; n < max_len; ++n) {
      std::vector<double> vals;
      for (std::size_t r = 0; r < runs.size(); ++r) {
        if (runs[r].m != m || n >= traces[r].rows.size()) continue;
        const auto& row = traces[r].rows[n];
        vals.push_back(use_kdist ? row.k_dist : row.j_sa - j_star[r]);
      }
      if (vals.empty()) continue;
      QuantileRow q;
      q.m = m;
      q.n = static_cast<int>(n);
      q.median = quantile(vals, 0.5);
      q.q25 = quantile(vals, 0.25);
      q.q75 = quantile(vals, 0.75);
      q.count = static_cast<int>(vals.size());
      out.push_back(q);
    }
  }
  return out;
}

inline void write_quantile_csv(const fs::path& path, const char* value_name,
                               const std::vector<QuantileRow>& rows) {
  auto os = open_out(path);
  os << "m,n," << value_name << "_median," << value_name << "_q25," << value_name
     << "_q75,count\n";
  for (const auto& r : rows) {
    os << r.m << ',' << r.n << ',' << g17(r.median) << ',' << g17(r.q25) << ',' << g17(r.q75)
       << ',' << r.count << '\n';
  }
}

inline const std::array<const char*, 6> kSeriesColors = {"#1f77b4", "#d62728", "#2ca02c",
                                                         "#9467bd", "#ff7f0e", "#8c564b"};

inline void plot_quantiles(const fs::path& path, const std::string& title,
                           const std::string& ylabel, const std::vector<int>& m_values,
                           const std::vector<QuantileRow>& rows, bool log_y) {
  std::vector<plot::Series> series;
  int color = 0;
  for (const int m : m_values) {
    plot::Series s;
    s.label = "M = " + std::to_string(m);
    s.color = kSeriesColors[color++ % kSeriesColors.size()];
    for (const auto& r : rows) {
      if (r.m != m) continue;
      s.x.push_back(r.n);
      s.y.push_back(r.median);
      s.band_lo.push_back(r.q25);
      s.band_hi.push_back(r.q75);
    }
    series.push_back(std::move(s));
  }
  plot::ChartSpec spec;
  spec.title = title;
  spec.x_label = "iteration";
  spec.y_label = ylabel;
  spec.log_y = log_y;
  plot::write_line_chart(path, spec, series);
}

}  // namespace detail

inline VerifyArtifact cmd_verify(const ExperimentConfig& cfg) {
  cfg.validate();
  const CostSpec cost = cfg.make_cost();
  const SystemFamily family = normalize_family(cfg.make_family(), cost);
  const ParamDistribution dist = cfg.make_distribution();
  const PgConfig pg = cfg.make_pg_config();
  const AnnealConfig anneal = cfg.make_anneal_config();

  VerifyArtifact artifact;
  artifact.dir = cfg.run.out_dir;
  fs::create_directories(artifact.dir / "runs");
  fs::create_directories(artifact.dir / "plots");
  save_config(cfg, artifact.dir / "config.json");

  // Proxy for the DR-optimal gain: a large reference sample, solved once.
  const SampleSet proxy_set =
      draw_samples(family, dist, cfg.reference.m, rng::substream(cfg.reference.seed, 0));
  const Reference proxy_ref =
      solve_reference(proxy_set, cost, std::max(cfg.reference.grad_tol, 1e-6));
  artifact.k_dr_proxy = proxy_ref.k_star;
  artifact.j_dr_star = mc_dr_cost(proxy_ref.k_star, family, dist, cost, cfg.monte_carlo.n_mc,
                                  cfg.monte_carlo.seed, cfg.monte_carlo.delta)
                           .mean;

  const int n_m = static_cast<int>(cfg.run.m_values.size());
  const int n_runs = n_m * cfg.run.n_seeds;
  std::vector<RunSummary> runs(n_runs);
  std::vector<Trace> traces(n_runs);
  std::vector<double> j_stars(n_runs);

  parallel::for_each_index(static_cast<std::size_t>(n_runs), cfg.run.threads, [&](std::size_t idx) {
    const int m_index = static_cast<int>(idx) / cfg.run.n_seeds;
    const int seed_index = static_cast<int>(idx) % cfg.run.n_seeds;
    const int m = cfg.run.m_values[m_index];
    const std::uint64_t seed = run_seed_for(cfg.run.master_seed, m_index, seed_index);

    const SampleSet set = draw_samples(family, dist, m, seed);
    const Reference ref = solve_reference(set, cost, cfg.reference.grad_tol);

    const std::string run_id = "m" + std::to_string(m) + "_s" + std::to_string(seed_index);
    const fs::path trace_path = artifact.dir / "runs" / ("trace_" + run_id + ".csv");
    auto trace_os = detail::open_out(trace_path);
    TraceOptions opts;
    opts.run_id = run_id;
    opts.algo = cfg.run.algorithm;
    opts.sink = &trace_os;
    opts.k_ref = ref.k_star.k;

    AnnealResult res;
    if (cfg.run.algorithm == "batch") {
      // Requires K = 0 to already stabilize the set (open-loop-stable configs).
      const Gain k0 = Gain::zero(set.systems[0].input_dim(), set.systems[0].state_dim());
      PgConfig batch_cfg = pg;
      batch_cfg.grad_tol = anneal.final_stage.grad_tol;
      batch_cfg.max_iters = anneal.final_stage.max_iters;
      const PgResult pg_res = policy_gradient(k0, set, cost, batch_cfg, opts);
      res.k = pg_res.k_last;
      res.trace = pg_res.trace;
      res.gamma0 = 1.0;
      res.final_cost = pg_res.final_cost;
      res.final_grad_norm = pg_res.final_grad_norm;
      res.total_iterations = pg_res.iterations;
      res.l_estimate = pg_res.l_estimate;
    } else {
      res = discount_annealing(set, cost, pg, anneal, opts);
    }

    const McDrResult jdr = mc_dr_cost(res.k, family, dist, cost, cfg.monte_carlo.n_mc,
                                      cfg.monte_carlo.seed, cfg.monte_carlo.delta);

    Json gain_file;
    gain_file["run_id"] = run_id;
    gain_file["m"] = m;
    gain_file["seed_index"] = seed_index;
    gain_file["run_seed"] = seed;
    gain_file["k"] = matrix_to_json(res.k.k);
    gain_file["k_star_ref"] = matrix_to_json(ref.k_star.k);
    gain_file["j_sa_final"] = res.final_cost;
    gain_file["j_star_ref"] = ref.j_star;
    gain_file["j_dr"] = jdr.mean;
    gain_file["j_dr_halfwidth"] = jdr.halfwidth;
    write_json_file(artifact.dir / "runs" / ("gain_" + run_id + ".json"), gain_file);
    write_json_file(artifact.dir / "runs" / ("samples_" + run_id + ".json"),
                    sample_set_to_json(set));

    RunSummary summary;
    summary.m = m;
    summary.seed_index = seed_index;
    summary.run_seed = seed;
    summary.gamma0 = res.gamma0;
    summary.iterations = res.total_iterations;
    summary.j_sa_final = res.final_cost;
    summary.grad_norm_final = res.final_grad_norm;
    summary.j_star_ref = ref.j_star;
    summary.ref_grad_norm = ref.grad_norm;
    summary.ref_certified = ref.certified;
    summary.excess = res.final_cost - ref.j_star;
    summary.k_dist_final = (res.k.k - ref.k_star.k).norm();
    summary.j_dr = jdr.mean;
    summary.j_dr_halfwidth = jdr.halfwidth;
    summary.j_dr_gap = jdr.mean - artifact.j_dr_star;
    summary.l_estimate = res.l_estimate;
    summary.monotone_j_sa = detail::trace_monotone_within_phases(res.trace);
    summary.trace_path = "runs/trace_" + run_id + ".csv";

    runs[idx] = std::move(summary);
    traces[idx] = std::move(res.trace);
    j_stars[idx] = ref.j_star;
  });

  artifact.runs = std::move(runs);
  artifact.excess_by_iter = detail::aggregate_by_iteration(cfg.run.m_values, artifact.runs,
                                                           traces, /*use_kdist=*/false, j_stars);
  artifact.kdist_by_iter = detail::aggregate_by_iteration(cfg.run.m_values, artifact.runs, traces,
                                                          /*use_kdist=*/true, j_stars);

  detail::write_run_summary_csv(artifact.dir / "summary_runs.csv", artifact.runs);
  detail::write_quantile_csv(artifact.dir / "excess_by_iter.csv", "excess",
                             artifact.excess_by_iter);
  detail::write_quantile_csv(artifact.dir / "kdist_by_iter.csv", "kdist", artifact.kdist_by_iter);

  {
    auto os = detail::open_out(artifact.dir / "jdr_gap.csv");
    os << "m,jdr_gap_median,jdr_gap_q25,jdr_gap_q75,count\n";
    for (const int m : cfg.run.m_values) {
      std::vector<double> gaps;
      for (const auto& r : artifact.runs) {
        if (r.m == m) gaps.push_back(r.j_dr_gap);
      }
      const double med = detail::quantile(gaps, 0.5);
      const double q25 = detail::quantile(gaps, 0.25);
      const double q75 = detail::quantile(gaps, 0.75);
      artifact.jdr_gap_quantiles[m] = {med, q25, q75};
      os << m << ',' << detail::g17(med) << ',' << detail::g17(q25) << ',' << detail::g17(q75)
         << ',' << gaps.size() << '\n';
    }
  }

  detail::plot_quantiles(artifact.dir / "plots" / "excess_jsa.svg",
                         "Excess sample-average cost (median, 25-75%)", "J_SA(K) - J_SA(K*)",
                         cfg.run.m_values, artifact.excess_by_iter, /*log_y=*/true);
  detail::plot_quantiles(artifact.dir / "plots" / "kdist.svg",
                         "Distance to the optimal gain (median, 25-75%)", "||K - K*||_F",
                         cfg.run.m_values, artifact.kdist_by_iter, /*log_y=*/true);
  {
    plot::Series s;
    s.label = "median gap";
    for (const int m : cfg.run.m_values) {
      const auto& q = artifact.jdr_gap_quantiles[m];
      s.x.push_back(m);
      s.y.push_back(q[0]);
      s.band_lo.push_back(q[1]);
      s.band_hi.push_back(q[2]);
    }
    plot::ChartSpec spec;
    spec.title = "Monte-Carlo J_DR gap vs sample count";
    spec.x_label = "M";
    spec.y_label = "J_DR(K_M) - J_DR(K*)";
    plot::write_line_chart(artifact.dir / "plots" / "jdr_gap.svg", spec, {s});
  }
  return artifact;
}

// ---------------------------------------------------------------------------
// entropic: anneal to a jointly stabilizing gain, then optimize the
// entropic-risk objective; J_ER is recorded alongside every trace row.

struct EntropicRunSummary {
  int m = 0;
  int seed_index = 0;
  std::uint64_t run_seed = 0;
  double j_sa_final = 0.0;
  double j_er_final = 0.0;
  double direction_norm_final = 0.0;
  double certified_direction_norm = 0.0;
  bool certified = false;
  double max_weight_sum_error = 0.0;
  bool jensen_ok = true;  // J_ER >= mean cost along the trace
  double k_dist_final = 0.0;
  double j_dr = 0.0;
  std::string trace_path;
};

struct EntropicArtifact {
  fs::path dir;
  std::vector<EntropicRunSummary> runs;
};

inline EntropicArtifact cmd_entropic(const ExperimentConfig& cfg) {
  cfg.validate();
  const CostSpec cost = cfg.make_cost();
  const SystemFamily family = normalize_family(cfg.make_family(), cost);
  const ParamDistribution dist = cfg.make_distribution();
  const PgConfig pg = cfg.make_pg_config();
  const AnnealConfig anneal = cfg.make_anneal_config();
  const RiskConfig risk{cfg.risk.temperature};

  EntropicArtifact artifact;
  artifact.dir = cfg.run.out_dir;
  fs::create_directories(artifact.dir / "runs");
  fs::create_directories(artifact.dir / "plots");
  save_config(cfg, artifact.dir / "config.json");

  const int n_m = static_cast<int>(cfg.run.m_values.size());
  const int n_runs = n_m * cfg.run.n_seeds;
  std::vector<EntropicRunSummary> runs(n_runs);
  std::vector<Trace> traces(n_runs);
  std::vector<std::vector<double>> jer_traces(n_runs);

  parallel::for_each_index(static_cast<std::size_t>(n_runs), cfg.run.threads, [&](std::size_t idx) {
    const int m_index = static_cast<int>(idx) / cfg.run.n_seeds;
    const int seed_index = static_cast<int>(idx) % cfg.run.n_seeds;
    const int m = cfg.run.m_values[m_index];
    const std::uint64_t seed = run_seed_for(cfg.run.master_seed, m_index, seed_index);
    const SampleSet set = draw_samples(family, dist, m, seed);

    // Jointly stabilizing warm start, then an entropic reference for k_dist.
    const Reference sa_ref = solve_reference(set, cost, std::max(cfg.reference.grad_tol, 1e-6));
    const EntropicCertificate er_ref =
        entropic_polish(sa_ref.k_star, set, cost, risk, cfg.reference.grad_tol);

    AnnealConfig warm_cfg = anneal;
    warm_cfg.final_stage.grad_tol = std::max(1e-2, anneal.final_stage.grad_tol);
    const AnnealResult warm = discount_annealing(set, cost, pg, warm_cfg);

    const std::string run_id = "er_m" + std::to_string(m) + "_s" + std::to_string(seed_index);
    const fs::path trace_path = artifact.dir / "runs" / ("trace_" + run_id + ".csv");
    auto trace_os = detail::open_out(trace_path);
    TraceOptions opts;
    opts.run_id = run_id;
    opts.algo = "entropic";
    opts.sink = &trace_os;
    opts.k_ref = er_ref.k.k;

    PgConfig er_cfg = pg;
    er_cfg.adapt_stepsize = true;
    const EntropicResult res = entropic_pg(warm.k, set, cost, risk, er_cfg, opts);
    const EntropicCertificate cert =
        entropic_polish(res.k, set, cost, risk, cfg.reference.grad_tol);
    const McDrResult jdr = mc_dr_cost(res.k, family, dist, cost, cfg.monte_carlo.n_mc,
                                      cfg.monte_carlo.seed, cfg.monte_carlo.delta);

    // Companion CSV: J_ER per iterate (the main CSV schema is fixed).
    {
      auto os = detail::open_out(artifact.dir / "runs" / ("jer_" + run_id + ".csv"));
      os << "run_id,n,j_er\n";
      for (std::size_t i = 0; i < res.j_er.size(); ++i) {
        os << run_id << ',' << res.trace.rows[i].n << ',' << detail::g17(res.j_er[i]) << '\n';
      }
    }

    Json gain_file;
    gain_file["run_id"] = run_id;
    gain_file["m"] = m;
    gain_file["run_seed"] = seed;
    gain_file["temperature"] = risk.temperature;
    gain_file["k"] = matrix_to_json(res.k.k);
    gain_file["k_er_ref"] = matrix_to_json(er_ref.k.k);
    gain_file["j_er_final"] = res.final_j_er;
    gain_file["j_dr"] = jdr.mean;
    write_json_file(artifact.dir / "runs" / ("gain_" + run_id + ".json"), gain_file);
    write_json_file(artifact.dir / "runs" / ("samples_" + run_id + ".json"),
                    sample_set_to_json(set));

    EntropicRunSummary summary;
    summary.m = m;
    summary.seed_index = seed_index;
    summary.run_seed = seed;
    summary.j_sa_final = res.trace.rows.empty() ? 0.0 : res.trace.rows.back().j_sa;
    summary.j_er_final = res.final_j_er;
    summary.direction_norm_final = res.final_grad_norm;
    summary.certified_direction_norm = cert.direction_norm;
    summary.certified = cert.certified;
    summary.max_weight_sum_error = res.max_weight_sum_error;
    for (std::size_t i = 0; i < res.j_er.size(); ++i) {
      if (res.j_er[i] < res.trace.rows[i].j_sa - 1e-9) summary.jensen_ok = false;
    }
    summary.k_dist_final = (res.k.k - er_ref.k.k).norm();
    summary.j_dr = jdr.mean;
    summary.trace_path = "runs/trace_" + run_id + ".csv";

    runs[idx] = std::move(summary);
    traces[idx] = res.trace;
    jer_traces[idx] = res.j_er;
  });

  artifact.runs = std::move(runs);
  {
    auto os = detail::open_out(artifact.dir / "summary_runs.csv");
    os << "m,seed_index,run_seed,j_sa_final,j_er_final,direction_norm_final,"
          "certified_direction_norm,certified,max_weight_sum_error,jensen_ok,k_dist_final,j_dr,"
          "trace_path\n";
    for (const auto& r : artifact.runs) {
      os << r.m << ',' << r.seed_index << ',' << r.run_seed << ',' << detail::g17(r.j_sa_final)
         << ',' << detail::g17(r.j_er_final) << ',' << detail::g17(r.direction_norm_final) << ','
         << detail::g17(r.certified_direction_norm) << ',' << (r.certified ? 1 : 0) << ','
         << detail::g17(r.max_weight_sum_error) << ',' << (r.jensen_ok ? 1 : 0) << ','
         << detail::g17(r.k_dist_final) << ',' << detail::g17(r.j_dr) << ',' << r.trace_path
         << '\n';
    }
  }
  {
    std::vector<plot::Series> series;
    int color = 0;
    for (std::size_t r = 0; r < traces.size(); ++r) {
      plot::Series s;
      s.label = "run " + std::to_string(r);
      s.color = detail::kSeriesColors[color++ % detail::kSeriesColors.size()];
      for (const auto& row : traces[r].rows) {
        s.x.push_back(row.n);
        s.y.push_back(row.j_sa);
      }
      series.push_back(std::move(s));
    }
    plot::ChartSpec spec;
    spec.title = "Entropic-risk descent (sample mean cost)";
    spec.x_label = "iteration";
    spec.y_label = "mean cost";
    spec.log_y = true;
    plot::write_line_chart(artifact.dir / "plots" / "entropic.svg", spec, series);
  }
  return artifact;
}

// ---------------------------------------------------------------------------
// sgd: Algorithm-2 runs across seeds with Monte-Carlo J_DR checkpoints.

struct SgdCheckpointStat {
  int n = 0;
  double mean_j_dr = 0.0;
  double std_j_dr = 0.0;
  int count = 0;
};

struct SgdArtifact {
  fs::path dir;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_j_dr;  // per seed, full-n_mc evaluation
  double final_mean_j_dr = 0.0;
  double final_std_j_dr = 0.0;
  std::vector<SgdCheckpointStat> checkpoints;
};

inline SgdArtifact cmd_sgd(const ExperimentConfig& cfg) {
  cfg.validate();
  const CostSpec cost = cfg.make_cost();
  const SystemFamily family = normalize_family(cfg.make_family(), cost);
  const ParamDistribution dist = cfg.make_distribution();

  SgdArtifact artifact;
  artifact.dir = cfg.run.out_dir;
  fs::create_directories(artifact.dir / "runs");
  fs::create_directories(artifact.dir / "plots");
  save_config(cfg, artifact.dir / "config.json");

  const int n_seeds = cfg.sgd.seeds;
  artifact.seeds.resize(n_seeds);
  artifact.final_j_dr.resize(n_seeds);
  std::vector<std::vector<std::pair<int, double>>> jdr_curves(n_seeds);

  parallel::for_each_index(static_cast<std::size_t>(n_seeds), cfg.run.threads,
                           [&](std::size_t idx) {
    const std::uint64_t seed = sgd_seed_for(cfg.run.master_seed, static_cast<int>(idx));
    artifact.seeds[idx] = seed;

    const std::string run_id = "sgd_s" + std::to_string(idx);
    const fs::path trace_path = artifact.dir / "runs" / ("trace_" + run_id + ".csv");
    auto trace_os = detail::open_out(trace_path);
    TraceOptions opts;
    opts.run_id = run_id;
    opts.algo = "sgd";
    opts.sink = &trace_os;

    const SgdResult res = sgd(family, dist, cost, cfg.sgd.iters, cfg.sgd.alpha, cfg.sgd.gamma0,
                              seed, opts, cfg.sgd.eval_every);

    auto jdr_os = detail::open_out(artifact.dir / "runs" / ("jdr_" + run_id + ".csv"));
    jdr_os << "run_id,n,j_dr,halfwidth\n";
    for (const auto& [n, gain] : res.checkpoints) {
      // A non-stabilizing checkpoint simply has no finite J_DR yet.
      try {
        const McDrResult mc = mc_dr_cost(gain, family, dist, cost, cfg.sgd.n_mc_trace,
                                         cfg.monte_carlo.seed, cfg.monte_carlo.delta);
        jdr_curves[idx].emplace_back(n, mc.mean);
        jdr_os << run_id << ',' << n << ',' << detail::g17(mc.mean) << ','
               << detail::g17(mc.halfwidth) << '\n';
      } catch (const InstabilityError&) {
        jdr_os << run_id << ',' << n << ",nan,nan\n";
      }
    }

    Json gain_file;
    gain_file["run_id"] = run_id;
    gain_file["run_seed"] = seed;
    gain_file["k"] = matrix_to_json(res.k.k);
    try {
      const McDrResult final_mc = mc_dr_cost(res.k, family, dist, cost, cfg.monte_carlo.n_mc,
                                             cfg.monte_carlo.seed, cfg.monte_carlo.delta);
      artifact.final_j_dr[idx] = final_mc.mean;
      gain_file["j_dr"] = final_mc.mean;
      gain_file["j_dr_halfwidth"] = final_mc.halfwidth;
    } catch (const InstabilityError&) {
      // The iterate has not reached a jointly stabilizing gain yet.
      artifact.final_j_dr[idx] = std::numeric_limits<double>::quiet_NaN();
      gain_file["j_dr"] = nullptr;
    }
    write_json_file(artifact.dir / "runs" / ("gain_" + run_id + ".json"), gain_file);
  });

  // Mean and standard deviation across seeds per checkpoint.
  std::map<int, std::vector<double>> by_checkpoint;
  for (const auto& curve : jdr_curves) {
    for (const auto& [n, v] : curve) by_checkpoint[n].push_back(v);
  }
  for (const auto& [n, vals] : by_checkpoint) {
    SgdCheckpointStat stat;
    stat.n = n;
    stat.count = static_cast<int>(vals.size());
    double sum = 0.0;
    for (double v : vals) sum += v;
    stat.mean_j_dr = sum / vals.size();
    double ss = 0.0;
    for (double v : vals) ss += (v - stat.mean_j_dr) * (v - stat.mean_j_dr);
    stat.std_j_dr = vals.size() > 1 ? std::sqrt(ss / (vals.size() - 1)) : 0.0;
    artifact.checkpoints.push_back(stat);
  }
  {
    std::vector<double> finite;
    for (double v : artifact.final_j_dr) {
      if (std::isfinite(v)) finite.push_back(v);
    }
    if (finite.empty()) {
      artifact.final_mean_j_dr = std::numeric_limits<double>::quiet_NaN();
      artifact.final_std_j_dr = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0;
      for (double v : finite) sum += v;
      artifact.final_mean_j_dr = sum / finite.size();
      double ss = 0.0;
      for (double v : finite) {
        ss += (v - artifact.final_mean_j_dr) * (v - artifact.final_mean_j_dr);
      }
      artifact.final_std_j_dr = finite.size() > 1 ? std::sqrt(ss / (finite.size() - 1)) : 0.0;
    }
  }
  {
    auto os = detail::open_out(artifact.dir / "sgd_summary.csv");
    os << "n,mean_j_dr,std_j_dr,count\n";
    for (const auto& s : artifact.checkpoints) {
      os << s.n << ',' << detail::g17(s.mean_j_dr) << ',' << detail::g17(s.std_j_dr) << ','
         << s.count << '\n';
    }
  }
  {
    plot::Series s;
    s.label = "mean J_DR";
    for (const auto& st : artifact.checkpoints) {
      s.x.push_back(st.n);
      s.y.push_back(st.mean_j_dr);
      s.band_lo.push_back(st.mean_j_dr - st.std_j_dr);
      s.band_hi.push_back(st.mean_j_dr + st.std_j_dr);
    }
    plot::ChartSpec spec;
    spec.title = "Stochastic gradient descent (mean +- std over seeds)";
    spec.x_label = "iteration";
    spec.y_label = "J_DR (Monte Carlo)";
    spec.log_y = true;
    plot::write_line_chart(artifact.dir / "plots" / "sgd.svg", spec, {s});
  }
  return artifact;
}

// ---------------------------------------------------------------------------
// diagnose: heterogeneity vs the assumption bound, scenario boundedness over
// recorded iterates, and the theoretical vs empirical iteration budget.

struct DiagnoseReport {
  fs::path dir;
  HeterogeneityReport heterogeneity;
  BoundednessReport boundedness;
  BoundednessReport boundedness_slack_m;  // nu = M fallback, always satisfied
  double l_estimate = 0.0;
  double zeta0 = 0.0;
  double tau_b = 0.0;
  long long theorem1_iterations = 0;
  int empirical_iterations = 0;
  double final_j_sa = 0.0;
  double j_dr = 0.0;
  std::string text;
};

inline DiagnoseReport cmd_diagnose(const ExperimentConfig& cfg) {
  cfg.validate();
  const CostSpec cost = cfg.make_cost();
  const SystemFamily family = normalize_family(cfg.make_family(), cost);
  const ParamDistribution dist = cfg.make_distribution();

  DiagnoseReport report;
  report.dir = cfg.run.out_dir;
  fs::create_directories(report.dir);
  save_config(cfg, report.dir / "config.json");

  const int m = cfg.run.m_values.front();
  const std::uint64_t seed = run_seed_for(cfg.run.master_seed, 0, 0);
  const SampleSet set = draw_samples(family, dist, m, seed);

  report.heterogeneity = heterogeneity_check(set, cost);

  PgConfig pg = cfg.make_pg_config();
  pg.record_iterates = true;
  const AnnealResult res = discount_annealing(set, cost, pg, cfg.make_anneal_config());
  report.final_j_sa = res.final_cost;
  report.l_estimate = res.l_estimate;
  report.tau_b = set.tau_b;
  report.empirical_iterations = res.total_iterations;

  // zeta0 for the budget: cost at the start of the gamma = 1 descent.
  report.zeta0 = res.final_cost;
  for (std::size_t i = 0; i < res.trace.rows.size(); ++i) {
    if (res.trace.rows[i].gamma == 1.0) {
      report.zeta0 = res.trace.rows[i].j_sa;
      break;
    }
  }
  report.theorem1_iterations =
      theorem1_budget(std::max(report.l_estimate, 1e-12), report.zeta0, report.tau_b,
                      cfg.pg.cost_gap_tol);

  // Boundedness over the recorded iterates that stabilize the raw set.
  std::vector<Gain> gains;
  for (std::size_t i = 0; i < res.iterates.size(); ++i) {
    if (res.trace.rows[i].gamma != 1.0) continue;
    bool ok = true;
    for (const auto& sys : set.systems) ok = ok && is_stabilizing(res.iterates[i], sys);
    if (ok) gains.push_back(res.iterates[i]);
  }
  if (gains.empty()) gains.push_back(res.k);
  report.boundedness = boundedness_check(gains, set, cost, 8.0, 2.0);
  report.boundedness_slack_m =
      boundedness_check(gains, set, cost, 8.0, static_cast<double>(set.size()),
                        report.boundedness.j_sa_star);
  report.j_dr = mc_dr_cost(res.k, family, dist, cost, cfg.monte_carlo.n_mc, cfg.monte_carlo.seed,
                           cfg.monte_carlo.delta)
                    .mean;

  std::string txt;
  txt += "diagnostics for M = " + std::to_string(m) + ", seed = " + std::to_string(seed) + "\n\n";
  txt += "[heterogeneity] het = " + detail::g17(report.heterogeneity.het) +
         ", bound = " + detail::g17(report.heterogeneity.bound) +
         (report.heterogeneity.satisfied ? "  -> satisfied\n"
                                         : "  -> VIOLATED (warning only; the bound is known to be "
                                           "conservative, optimization proceeds)\n");
  txt += "[boundedness B=8, nu=2] " +
         std::string(report.boundedness.satisfied ? "satisfied" : "VIOLATED") +
         " over " + std::to_string(report.boundedness.gains_checked) + " recorded gains (J_SA* = " +
         detail::g17(report.boundedness.j_sa_star) + ")\n";
  if (report.boundedness.witness) {
    txt += "  witness: gain " + std::to_string(report.boundedness.witness->gain_index) +
           ", system " + std::to_string(report.boundedness.witness->system_index) +
           ", ratio = " + detail::g17(report.boundedness.witness->ratio) + "\n";
  }
  txt += "[boundedness B=8, nu=M] " +
         std::string(report.boundedness_slack_m.satisfied ? "satisfied (guaranteed fallback)"
                                                          : "VIOLATED (should be impossible)") +
         "\n";
  txt += "[iteration budget] L_est = " + detail::g17(report.l_estimate) +
         ", zeta0 = " + detail::g17(report.zeta0) + ", tau_B = " + detail::g17(report.tau_b) +
         ", eps = " + detail::g17(cfg.pg.cost_gap_tol) + "\n";
  txt += "  theoretical N >= " + std::to_string(report.theorem1_iterations) +
         ", empirical iterations = " + std::to_string(report.empirical_iterations) + "\n";
  txt += "[result] J_SA = " + detail::g17(report.final_j_sa) +
         ", J_DR (MC) = " + detail::g17(report.j_dr) + "\n";
  report.text = txt;

  {
    auto os = detail::open_out(report.dir / "diagnose.txt");
    os << txt;
  }
  Json j;
  j["heterogeneity"] = {{"het", report.heterogeneity.het},
                        {"bound", report.heterogeneity.bound},
                        {"satisfied", report.heterogeneity.satisfied}};
  j["boundedness"] = {{"b", report.boundedness.b_bound},
                      {"nu", report.boundedness.slack},
                      {"satisfied", report.boundedness.satisfied},
                      {"gains_checked", report.boundedness.gains_checked},
                      {"j_sa_star", report.boundedness.j_sa_star}};
  j["theorem1"] = {{"l_estimate", report.l_estimate},
                   {"zeta0", report.zeta0},
                   {"tau_b", report.tau_b},
                   {"budget", report.theorem1_iterations},
                   {"empirical", report.empirical_iterations}};
  j["j_sa"] = report.final_j_sa;
  j["j_dr"] = report.j_dr;
  write_json_file(report.dir / "diagnose.json", j);
  return report;
}

// ---------------------------------------------------------------------------
// eval: one-off cost/gradient of a given gain against a config.

struct EvalReport {
  bool jointly_stabilizing = false;
  double max_radius = 0.0;
  double j_sa = 0.0;
  double grad_norm = 0.0;
  std::vector<double> per_system_cost;
  double j_dr = 0.0;
  double j_dr_halfwidth = 0.0;
};

inline EvalReport cmd_eval(const ExperimentConfig& cfg, const Gain& gain) {
  cfg.validate();
  const CostSpec cost = cfg.make_cost();
  const SystemFamily family = normalize_family(cfg.make_family(), cost);
  const ParamDistribution dist = cfg.make_distribution();
  const int m = cfg.run.m_values.front();
  const SampleSet set = draw_samples(family, dist, m, run_seed_for(cfg.run.master_seed, 0, 0));

  EvalReport report;
  report.jointly_stabilizing = true;
  for (const auto& sys : set.systems) {
    report.max_radius = std::max(report.max_radius, closed_loop_radius(gain, sys));
    report.jointly_stabilizing =
        report.jointly_stabilizing && is_stabilizing(gain, sys);
  }
  if (!report.jointly_stabilizing) return report;  // costs are infinite

  const AvgEval eval = sample_avg_eval(gain, set, cost);
  report.j_sa = eval.cost;
  report.grad_norm = eval.gradient.norm();
  report.per_system_cost = eval.per_system_cost;
  const McDrResult mc = mc_dr_cost(gain, family, dist, cost, cfg.monte_carlo.n_mc,
                                   cfg.monte_carlo.seed, cfg.monte_carlo.delta, cfg.run.threads);
  report.j_dr = mc.mean;
  report.j_dr_halfwidth = mc.halfwidth;
  return report;
}

}  // namespace drlqr
