#pragma once

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "drlqr/types.hpp"

// Per-iteration optimization records and their CSV form. Schema:
//   run_id, algo, n, gamma, j_sa, grad_norm, k_dist, wall_ms
// Doubles are printed with 17 significant digits so CSVs round-trip exactly.
// wall_ms is measured wall-clock time and is the only column that is not
// reproducible across runs; every other column is bit-identical under a
// fixed seed regardless of thread count.

namespace drlqr {

struct TraceRow {
  int n = 0;
  double gamma = 1.0;
  double j_sa = 0.0;
  double grad_norm = 0.0;
  double k_dist = std::numeric_limits<double>::quiet_NaN();  // ||K - K_ref||_F
  double wall_ms = 0.0;
};

// How a procedure labels and streams its trace.
struct TraceOptions {
  std::string run_id = "run";
  std::string algo = "pg";
  std::ostream* sink = nullptr;           // when set, rows stream as produced
  std::optional<Matrix> k_ref;            // reference gain for the k_dist column
};

namespace detail {

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

class Trace {
 public:
  std::string run_id = "run";
  std::string algo = "pg";
  std::vector<TraceRow> rows;

  static void write_header(std::ostream& os) {
    os << "run_id,algo,n,gamma,j_sa,grad_norm,k_dist,wall_ms\n";
  }

  void set_sink(std::ostream* sink, bool write_header_row = true) {
    sink_ = sink;
    if (sink_ && write_header_row) write_header(*sink_);
  }

  void append(const TraceRow& row) {
    rows.push_back(row);
    if (sink_) write_row(*sink_, row);
  }

  void write_row(std::ostream& os, const TraceRow& row) const {
    os << run_id << ',' << algo << ',' << row.n << ',' << detail::format_g17(row.gamma) << ','
       << detail::format_g17(row.j_sa) << ',' << detail::format_g17(row.grad_norm) << ','
       << detail::format_g17(row.k_dist) << ',' << detail::format_g17(row.wall_ms) << '\n';
  }

  void write_csv(std::ostream& os, bool header = true) const {
    if (header) write_header(os);
    for (const auto& row : rows) write_row(os, row);
  }

 private:
  std::ostream* sink_ = nullptr;
};

}  // namespace drlqr
