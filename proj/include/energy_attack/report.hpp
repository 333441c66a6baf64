#pragma once

// JSON encodings of attack results: one JSONL line per image per run, plus a
// summary object per run.

#include <cstdint>
#include <fstream>
#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "analysis.hpp"
#include "attack.hpp"
#include "error.hpp"

namespace ea {

struct RunInfo {
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  std::string strategy;
  std::string basis_tag;  // "square" for the baseline
};

inline nlohmann::json record_json(const AttackRecord& r, const RunInfo& run) {
  return {{"image_id", r.image_id}, {"seed", run.seed},           {"success", r.success},
          {"queries", r.queries},   {"final_margin", r.final_margin}, {"epsilon", run.epsilon},
          {"strategy", run.strategy}, {"basis_tag", run.basis_tag}};
}

inline nlohmann::json summary_json(const BenchmarkSummary& s) {
  nlohmann::json j = {{"n_images", s.n_images}, {"n_success", s.n_success}, {"asr", s.asr}};
  if (s.avg_queries) j["avg_queries"] = *s.avg_queries;
  if (s.median_queries) j["median_queries"] = *s.median_queries;
  return j;
}

/// Appends one JSON object per record to a JSONL file.
inline void append_records_jsonl(std::span<const AttackRecord> records, const RunInfo& run,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError(path.string() + ": cannot open for appending");
  for (const auto& r : records) out << record_json(r, run).dump() << '\n';
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace ea
