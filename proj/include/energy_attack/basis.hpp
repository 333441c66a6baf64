#pragma once

// Energy basis of perturbation patches: every s_p x s_p window of a
// perturbation is flattened (channel-major) into a vector p and accumulated
// into the uncentered second-moment matrix K = sum p p^T. Its eigenvectors are
// the eigenpatches u_i and its eigenvalues the energies sigma_i; attacks draw
// u_i with probability sigma_i / sum_j sigma_j.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "file_io.hpp"
#include "image.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace ea {

/// Flattened patch at window (y0, x0): index (ch * s_p + dy) * s_p + dx.
inline std::vector<double> extract_patch(const Tensor& t, std::size_t y0, std::size_t x0, std::size_t patch) {
  std::vector<double> p(t.shape.c * patch * patch);
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < t.shape.c; ++ch)
    for (std::size_t dy = 0; dy < patch; ++dy)
      for (std::size_t dx = 0; dx < patch; ++dx) p[k++] = t.at(ch, y0 + dy, x0 + dx);
  return p;
}

class CovAccumulator {
 public:
  CovAccumulator(std::size_t channels, std::size_t patch) : channels_(channels), patch_(patch) {
    if (channels == 0 || patch == 0) throw InvalidInput("CovAccumulator: channels and patch size must be positive");
    dim_ = channels * patch * patch;
    k_ = Matrix(dim_, dim_);
  }

  std::size_t channels() const { return channels_; }
  std::size_t patch_size() const { return patch_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t count() const { return count_; }
  const Matrix& second_moment() const { return k_; }

  /// K += p p^T for one flattened patch.
  void add(std::span<const double> p) {
    if (p.size() != dim_) throw DimensionError("CovAccumulator: patch length " + std::to_string(p.size()) +
                                               " != " + std::to_string(dim_));
    for (std::size_t i = 0; i < dim_; ++i) {
      const double pi = p[i];
      if (pi == 0.0) continue;
      auto row = k_.row(i);
      for (std::size_t j = 0; j < dim_; ++j) row[j] += pi * p[j];
    }
    ++count_;
  }

  /// Adds every patch-sized window of delta, stepping by stride in both axes.
  void accumulate(const Tensor& delta, std::size_t stride = 1) {
    if (stride < 1) throw InvalidInput("accumulate_patches: stride must be >= 1");
    if (delta.shape.c != channels_) {
      throw DimensionError("accumulate_patches: delta has " + std::to_string(delta.shape.c) + " channels, expected " +
                           std::to_string(channels_));
    }
    if (delta.shape.h < patch_ || delta.shape.w < patch_) {
      throw InvalidInput("accumulate_patches: delta " + delta.shape.str() + " is smaller than patch side " +
                         std::to_string(patch_));
    }
    for (std::size_t y = 0; y + patch_ <= delta.shape.h; y += stride)
      for (std::size_t x = 0; x + patch_ <= delta.shape.w; x += stride) add(extract_patch(delta, y, x, patch_));
  }

  /// Sums another accumulator over a disjoint set of perturbations into this one.
  void merge(const CovAccumulator& other) {
    if (other.channels_ != channels_ || other.patch_ != patch_) {
      throw DimensionError("CovAccumulator::merge: geometry differs");
    }
    for (std::size_t i = 0; i < k_.data().size(); ++i) k_.data()[i] += other.k_.data()[i];
    count_ += other.count_;
  }

 private:
  std::size_t channels_;
  std::size_t patch_;
  std::size_t dim_ = 0;
  Matrix k_;
  std::uint64_t count_ = 0;
};

inline void accumulate_patches(CovAccumulator& acc, const Tensor& delta, std::size_t stride = 1) {
  acc.accumulate(delta, stride);
}

class EnergyBasis {
 public:
  EnergyBasis() = default;

  /// Validates the invariants: n = c * s_p^2 square vectors matrix, energies
  /// finite, non-negative and descending.
  EnergyBasis(std::size_t channels, std::size_t patch, std::vector<double> energies, Matrix vectors,
              std::string tag = {})
      : channels_(channels), patch_(patch), energies_(std::move(energies)), vectors_(std::move(vectors)),
        tag_(std::move(tag)) {
    const std::size_t n = channels_ * patch_ * patch_;
    if (n == 0) throw InvalidInput("EnergyBasis: empty geometry");
    if (energies_.size() != n || vectors_.rows() != n || vectors_.cols() != n) {
      throw DimensionError("EnergyBasis: expected " + std::to_string(n) + " vectors of length " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(energies_[i]) || energies_[i] < 0.0) throw InvalidInput("EnergyBasis: energy not finite/non-negative");
      if (i > 0 && energies_[i] > energies_[i - 1]) throw InvalidInput("EnergyBasis: energies not descending");
    }
    if (!vectors_.all_finite()) throw InvalidInput("EnergyBasis: non-finite eigenvector entry");
  }

  std::size_t channels() const { return channels_; }
  std::size_t patch_size() const { return patch_; }
  std::size_t size() const { return energies_.size(); }
  const std::vector<double>& energies() const { return energies_; }
  const Matrix& vectors() const { return vectors_; }
  const std::string& tag() const { return tag_; }
  void set_tag(std::string t) { tag_ = std::move(t); }

  std::vector<double> vector(std::size_t i) const { return vectors_.column(i); }

  /// u_i reshaped to c x s_p x s_p.
  Tensor patch(std::size_t i) const { return Tensor(Shape{channels_, patch_, patch_}, vector(i)); }

  double total_energy() const {
    double s = 0.0;
    for (double e : energies_) s += e;
    return s;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t patch_ = 0;
  std::vector<double> energies_;
  Matrix vectors_;
  std::string tag_;
};

/// PCA of the accumulated second moment. Negative round-off eigenvalues are
/// clamped to zero.
inline EnergyBasis extract_basis(const CovAccumulator& acc, std::string tag = {}) {
  if (acc.count() == 0) throw EmptyAccumulator("extract_basis: no patches accumulated");
  EigenResult eig = sym_eig(acc.second_moment());
  for (double& e : eig.eigenvalues) e = std::max(0.0, e);
  return EnergyBasis(acc.channels(), acc.patch_size(), std::move(eig.eigenvalues), std::move(eig.eigenvectors),
                     std::move(tag));
}

/// Draws basis indices with probability proportional to energy.
class EnergySampler {
 public:
  explicit EnergySampler(const EnergyBasis& basis) : basis_(&basis) {
    cumulative_.reserve(basis.size());
    double s = 0.0;
    for (double e : basis.energies()) {
      s += e;
      cumulative_.push_back(s);
    }
    if (!(s > 0.0)) throw DegenerateBasis("energy basis has zero total energy; nothing to sample");
  }

  std::size_t sample_index(Rng& rng) const {
    const double u = uniform01(rng) * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    std::size_t i = static_cast<std::size_t>(it - cumulative_.begin());
    if (i >= cumulative_.size()) i = cumulative_.size() - 1;
    // Zero-energy entries share their predecessor's cumulative value, so
    // upper_bound never lands on them unless u hits a boundary exactly.
    while (i > 0 && basis_->energies()[i] == 0.0) --i;
    return i;
  }

  std::vector<double> sample_patch(Rng& rng) const { return basis_->vector(sample_index(rng)); }

  const EnergyBasis& basis() const { return *basis_; }

 private:
  const EnergyBasis* basis_;
  std::vector<double> cumulative_;
};

inline std::vector<double> sample_patch(const EnergyBasis& b, Rng& rng) { return EnergySampler(b).sample_patch(rng); }

// ---------------------------------------------------------------------------
// Basis file: "EABASIS1", u32 c, u32 s_p, u32 n, n f64 energies (descending),
// n*n f64 eigenvector matrix column-major. Little-endian throughout. The tag
// is not stored; load_basis names the basis after the file stem.

inline constexpr std::string_view kBasisMagic = "EABASIS1";

inline std::string serialize_basis(const EnergyBasis& b) {
  std::string out(kBasisMagic);
  bin::put_u32_le(out, static_cast<std::uint32_t>(b.channels()));
  bin::put_u32_le(out, static_cast<std::uint32_t>(b.patch_size()));
  bin::put_u32_le(out, static_cast<std::uint32_t>(b.size()));
  for (double e : b.energies()) bin::put_f64_le(out, e);
  for (std::size_t c = 0; c < b.size(); ++c)
    for (std::size_t r = 0; r < b.size(); ++r) bin::put_f64_le(out, b.vectors()(r, c));
  return out;
}

inline EnergyBasis deserialize_basis(std::string_view bytes, const std::string& source = "<basis>",
                                     std::string tag = {}) {
  bin::Reader r(bytes, source);
  if (r.take(kBasisMagic.size()) != kBasisMagic) throw FormatError(source + ": bad magic, expected EABASIS1");
  const std::size_t c = r.u32_le();
  const std::size_t sp = r.u32_le();
  const std::size_t n = r.u32_le();
  if (c == 0 || sp == 0 || n != c * sp * sp) {
    throw FormatError(source + ": inconsistent header (c=" + std::to_string(c) + ", s_p=" + std::to_string(sp) +
                      ", n=" + std::to_string(n) + ")");
  }
  if (r.remaining() != 8 * (n + n * n)) {
    throw FormatError(source + ": expected " + std::to_string(8 * (n + n * n)) + " payload bytes, found " +
                      std::to_string(r.remaining()));
  }
  std::vector<double> energies(n);
  for (double& e : energies) e = r.f64_le();
  Matrix u(n, n);
  for (std::size_t col = 0; col < n; ++col)
    for (std::size_t row = 0; row < n; ++row) u(row, col) = r.f64_le();

  for (std::size_t col = 0; col < n; ++col) {
    const auto v = u.column(col);
    if (std::abs(norm2(v) - 1.0) > 1e-8) {
      throw FormatError(source + ": eigenvector " + std::to_string(col) + " is not unit length");
    }
  }
  try {
    return EnergyBasis(c, sp, std::move(energies), std::move(u), std::move(tag));
  } catch (const Error& e) {
    throw FormatError(source + ": " + e.what());
  }
}

inline void save_basis(const EnergyBasis& b, const std::filesystem::path& path) { write_file(path, serialize_basis(b)); }

inline EnergyBasis load_basis(const std::filesystem::path& path) {
  return deserialize_basis(read_file(path), path.string(), path.stem().string());
}

}  // namespace ea
