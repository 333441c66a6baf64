#pragma once

// Transferability analytics over energy bases and benchmark summaries of
// attack records.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "attack.hpp"
#include "basis.hpp"
#include "error.hpp"
#include "file_io.hpp"
#include "linalg.hpp"

namespace ea {

using PatchList = std::vector<std::vector<double>>;

/// Leading ceil(n/3) eigenpatches by descending energy. Vectors whose energy
/// is numerically zero (<= 1e-12 * sigma_1) are replaced by zero vectors.
inline PatchList top_third(const EnergyBasis& b) {
  const std::size_t n = b.size();
  const std::size_t target = (n + 2) / 3;
  const double lead = b.energies().empty() ? 0.0 : b.energies().front();
  PatchList out;
  out.reserve(target);
  for (std::size_t i = 0; i < target; ++i) {
    const bool effective = lead > 0.0 && b.energies()[i] > 1e-12 * lead;
    out.push_back(effective ? b.vector(i) : std::vector<double>(n, 0.0));
  }
  return out;
}

/// Entry (i, j) = |cos(a_i, b_j)| (signed cosine when `absolute` is false).
inline Matrix pairwise_similarity(const PatchList& a, const PatchList& b, bool absolute = true) {
  if (!a.empty() && !b.empty() && a.front().size() != b.front().size()) {
    throw DimensionError("pairwise_similarity: patch lengths " + std::to_string(a.front().size()) + " and " +
                         std::to_string(b.front().size()) + " differ (bases must share c*s_p^2)");
  }
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double c = cosine_similarity(a[i], b[j]);
      m(i, j) = absolute ? std::abs(c) : c;
    }
  return m;
}

/// Block matrix of pairwise similarities between every pair of bases.
struct SimilarityMatrix {
  std::vector<std::string> labels;  // one per row/column
  std::vector<std::string> sources;  // basis tags, in block order
  std::size_t block = 0;             // patches per basis
  Matrix values;
};

inline SimilarityMatrix similarity_matrix(std::span<const EnergyBasis> bases, bool absolute = true) {
  if (bases.empty()) throw InvalidInput("similarity_matrix: no bases");
  std::vector<PatchList> lists;
  for (const auto& b : bases) {
    if (b.size() != bases.front().size()) {
      throw DimensionError("similarity_matrix: basis '" + b.tag() + "' has dimension " + std::to_string(b.size()) +
                           ", expected " + std::to_string(bases.front().size()));
    }
    lists.push_back(top_third(b));
  }
  SimilarityMatrix sm;
  sm.block = lists.front().size();
  const std::size_t total = sm.block * bases.size();
  sm.values = Matrix(total, total);
  for (std::size_t a = 0; a < bases.size(); ++a) {
    sm.sources.push_back(bases[a].tag());
    for (std::size_t i = 0; i < sm.block; ++i) sm.labels.push_back(bases[a].tag() + "#" + std::to_string(i));
    for (std::size_t b = 0; b < bases.size(); ++b) {
      const Matrix blk = pairwise_similarity(lists[a], lists[b], absolute);
      for (std::size_t i = 0; i < sm.block; ++i)
        for (std::size_t j = 0; j < sm.block; ++j) sm.values(a * sm.block + i, b * sm.block + j) = blk(i, j);
    }
  }
  return sm;
}

/// Mean of the matched-rank entries (i, i) of a similarity block.
inline double diagonal_mean(const Matrix& block) {
  const std::size_t n = std::min(block.rows(), block.cols());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += block(i, i);
  return s / static_cast<double>(n);
}

/// Monte-Carlo estimate of E|cos| between independent Gaussian directions in
/// dimension d. Approaches sqrt(2 / (pi d)) for large d.
inline double random_direction_baseline(std::size_t d, std::size_t pairs, std::uint64_t seed) {
  Rng rng(stage_seed(seed, "random-baseline"));
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(d), b(d);
  double s = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng);
    s += std::abs(cosine_similarity(a, b));
  }
  return s / static_cast<double>(pairs);
}

/// A basis of Gaussian random unit vectors with equal energies; the
/// reference point for "no shared structure". Vectors are not orthogonalized.
inline EnergyBasis random_direction_basis(std::size_t channels, std::size_t patch, std::uint64_t seed) {
  const std::size_t n = channels * patch * patch;
  Rng rng(stage_seed(seed, "random-basis"));
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix u(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    const double nv = norm2(v);
    for (std::size_t r = 0; r < n; ++r) u(r, c) = v[r] / nv;
  }
  return EnergyBasis(channels, patch, std::vector<double>(n, 1.0), std::move(u), "RND");
}

struct BenchmarkSummary {
  std::size_t n_images = 0;
  std::size_t n_success = 0;
  double asr = 0.0;  // percent
  std::optional<double> avg_queries;
  std::optional<double> median_queries;
};

enum class QueryStatsOver { successful, all };

/// ASR plus mean and (lower) median query counts. By default the query
/// statistics cover successful attacks only; absent when nothing qualifies.
inline BenchmarkSummary summarize(std::span<const AttackRecord> records,
                                  QueryStatsOver over = QueryStatsOver::successful) {
  if (records.empty()) throw InvalidInput("summarize: no records");
  BenchmarkSummary s;
  s.n_images = records.size();
  std::vector<std::uint64_t> q;
  for (const auto& r : records) {
    if (r.success) ++s.n_success;
    if (r.success || over == QueryStatsOver::all) q.push_back(r.queries);
  }
  s.asr = 100.0 * static_cast<double>(s.n_success) / static_cast<double>(s.n_images);
  if (!q.empty()) {
    std::sort(q.begin(), q.end());
    double sum = 0.0;
    for (auto v : q) sum += static_cast<double>(v);
    s.avg_queries = sum / static_cast<double>(q.size());
    s.median_queries = static_cast<double>(q[(q.size() - 1) / 2]);
  }
  return s;
}

/// round(255 * v) with halves rounded up, v clamped to [0,1].
inline std::uint8_t quantize_unit(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(255.0 * c + 0.5));
}

/// 8-bit binary PGM (P5, maxval 255), one pixel per entry, row-major.
inline std::string encode_pgm(const Matrix& m) {
  std::string out = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  out.reserve(out.size() + m.data().size());
  for (double v : m.data()) out.push_back(static_cast<char>(quantize_unit(v)));
  return out;
}

inline void export_heatmap_pgm(const SimilarityMatrix& sm, const std::filesystem::path& path) {
  write_file(path, encode_pgm(sm.values));
}

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

inline GrayImage parse_pgm(std::string_view bytes, const std::string& source = "<pgm>") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError(source + ": malformed PGM header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError(source + ": not a binary PGM (P5)");
  pos = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  if (number() != 255) throw FormatError(source + ": only maxval 255 supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError(source + ": malformed PGM header");
  ++pos;
  if (bytes.size() - pos != img.width * img.height) throw FormatError(source + ": PGM raster size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Header row of labels (with an empty corner cell), then one labeled row per
/// matrix row. Values printed with 17 significant digits.
inline std::string encode_csv(const SimilarityMatrix& sm) {
  std::string out;
  for (const auto& l : sm.labels) out += "," + csv_field(l);
  out += "\r\n";
  char buf[32];
  for (std::size_t r = 0; r < sm.values.rows(); ++r) {
    out += csv_field(r < sm.labels.size() ? sm.labels[r] : std::to_string(r));
    for (std::size_t c = 0; c < sm.values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", sm.values(r, c));
      out += ",";
      out += buf;
    }
    out += "\r\n";
  }
  return out;
}

inline void export_csv(const SimilarityMatrix& sm, const std::filesystem::path& path) {
  write_file(path, encode_csv(sm));
}

}  // namespace ea
