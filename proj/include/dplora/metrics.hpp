#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dplora/errors.hpp"

namespace dplora {

// One training round as logged. eps_spent/delta are absent (null in the JSON)
// when accounting is disabled (sigma = 0 or dense baseline).
struct RoundRecord {
  std::uint64_t t = 0;  // 1-based round index
  double loss = 0.0;
  double acc = 0.0;
  std::optional<double> eps_spent;
  std::optional<double> delta;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  // Per-node transmitted parameter counts; carried in memory for ledger
  // cross-checks, not part of the serialized line.
  std::vector<std::uint64_t> upload_params_per_node;

  bool same_logged_fields(const RoundRecord& o) const {
    return t == o.t && loss == o.loss && acc == o.acc && eps_spent == o.eps_spent &&
           delta == o.delta && bytes_up == o.bytes_up && bytes_down == o.bytes_down;
  }
};

inline nlohmann::json to_json_line(const RoundRecord& r) {
  nlohmann::json j;
  j["t"] = r.t;
  j["loss"] = r.loss;
  j["acc"] = r.acc;
  if (r.eps_spent) j["eps_spent"] = *r.eps_spent;
  else j["eps_spent"] = nullptr;
  if (r.delta) j["delta"] = *r.delta;
  else j["delta"] = nullptr;
  j["bytes_up"] = r.bytes_up;
  j["bytes_down"] = r.bytes_down;
  return j;
}

inline RoundRecord from_json_line(const nlohmann::json& j) {
  static const char* kKeys[] = {"t", "loss", "acc", "eps_spent", "delta",
                                "bytes_up", "bytes_down"};
  for (const char* k : kKeys) {
    if (!j.contains(k)) throw IoError(std::string("metrics line missing key '") + k + "'");
  }
  if (j.size() != 7) throw IoError("metrics line has unexpected extra keys");
  RoundRecord r;
  r.t = j.at("t").get<std::uint64_t>();
  r.loss = j.at("loss").get<double>();
  r.acc = j.at("acc").get<double>();
  if (!j.at("eps_spent").is_null()) r.eps_spent = j.at("eps_spent").get<double>();
  if (!j.at("delta").is_null()) r.delta = j.at("delta").get<double>();
  r.bytes_up = j.at("bytes_up").get<std::uint64_t>();
  r.bytes_down = j.at("bytes_down").get<std::uint64_t>();
  return r;
}

// One JSON object per line; doubles use shortest-round-trip formatting, so
// identical records always serialize to identical bytes.
inline void write_metrics(std::ostream& os, const std::vector<RoundRecord>& records) {
  for (const auto& r : records) os << to_json_line(r).dump() << "\n";
  if (!os) throw IoError("write_metrics: write failed");
}

inline void write_metrics(const std::string& path, const std::vector<RoundRecord>& records) {
  std::ofstream os(path, std::ios::binary);  // binary: no newline translation
  if (!os) throw IoError("write_metrics: cannot open " + path);
  write_metrics(os, records);
}

inline std::vector<RoundRecord> read_metrics(std::istream& is) {
  std::vector<RoundRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("read_metrics: bad JSON line: ") + e.what());
    }
    out.push_back(from_json_line(j));
  }
  return out;
}

inline std::vector<RoundRecord> read_metrics(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_metrics: cannot open " + path);
  return read_metrics(is);
}

// Flat CSV of the same per-round fields, for table generation.
inline void write_summary_csv(std::ostream& os, const std::vector<RoundRecord>& records) {
  os << "t,loss,acc,eps_spent,delta,bytes_up,bytes_down\n";
  for (const auto& r : records) {
    const nlohmann::json j = to_json_line(r);
    os << r.t << "," << j.at("loss").dump() << "," << j.at("acc").dump() << ","
       << j.at("eps_spent").dump() << "," << j.at("delta").dump() << "," << r.bytes_up
       << "," << r.bytes_down << "\n";
  }
  if (!os) throw IoError("write_summary_csv: write failed");
}

inline void write_summary_csv(const std::string& path, const std::vector<RoundRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_summary_csv: cannot open " + path);
  write_summary_csv(os, records);
}

}  // namespace dplora
