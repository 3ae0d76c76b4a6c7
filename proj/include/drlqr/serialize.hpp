#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "drlqr/domain.hpp"
#include "drlqr/errors.hpp"
#include "drlqr/types.hpp"

// JSON replay files: sample sets and gains are serialized with full double
// precision (nlohmann emits shortest round-trip representations), so
// experiments can be replayed bit-exactly from their artifacts.

namespace drlqr {

using Json = nlohmann::json;

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw IoError("matrix_from_json: expected a non-empty array of rows");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw IoError("matrix_from_json: ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

inline Json sample_set_to_json(const SampleSet& set) {
  Json out;
  out["seed"] = set.seed;
  out["tau_b"] = set.tau_b;
  out["het"] = set.het;
  out["max_b_norm"] = set.max_b_norm;
  out["params"] = Json::array();
  out["systems"] = Json::array();
  for (const auto& theta : set.params) out["params"].push_back(vector_to_json(theta));
  for (const auto& sys : set.systems) {
    out["systems"].push_back({{"a", matrix_to_json(sys.a)}, {"b", matrix_to_json(sys.b)}});
  }
  return out;
}

inline SampleSet sample_set_from_json(const Json& j) {
  SampleSet set;
  set.seed = j.at("seed").get<std::uint64_t>();
  set.tau_b = j.at("tau_b").get<double>();
  set.het = j.at("het").get<double>();
  set.max_b_norm = j.at("max_b_norm").get<double>();
  for (const auto& theta : j.at("params")) set.params.push_back(vector_from_json(theta));
  for (const auto& sys : j.at("systems")) {
    set.systems.emplace_back(matrix_from_json(sys.at("a")), matrix_from_json(sys.at("b")));
  }
  if (set.systems.empty()) throw IoError("sample_set_from_json: empty system list");
  return set;
}

inline Json gain_to_json(const Gain& k) { return Json{{"k", matrix_to_json(k.k)}}; }

inline Gain gain_from_json(const Json& j) { return Gain(matrix_from_json(j.at("k"))); }

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace drlqr
