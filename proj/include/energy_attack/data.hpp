#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "file_io.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace ea {

struct Dataset {
  std::string name;
  std::size_t num_classes = 0;
  std::vector<Image> images;

  Shape shape() const { return images.empty() ? Shape{} : images.front().shape(); }
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline std::string hex32(std::uint32_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s = "0x";
  for (int i = 7; i >= 0; --i) s.push_back(digits[(v >> (4 * i)) & 0xFu]);
  return s;
}

/// Reads an IDX image/label pair (optionally gzip-compressed by suffix).
/// Pixels are scaled byte/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string img_bytes = read_file(images_path);
  const std::string lbl_bytes = read_file(labels_path);

  bin::Reader ri(img_bytes, images_path.string());
  if (const auto magic = ri.u32_be(); magic != kIdxImagesMagic) {
    throw FormatError(images_path.string() + ": bad IDX image magic " + hex32(magic) +
                      " (expected 0x00000803)");
  }
  const std::size_t n = ri.u32_be();
  const std::size_t rows = ri.u32_be();
  const std::size_t cols = ri.u32_be();
  if (rows == 0 || cols == 0) throw FormatError(images_path.string() + ": zero image dimension");

  bin::Reader rl(lbl_bytes, labels_path.string());
  if (const auto magic = rl.u32_be(); magic != kIdxLabelsMagic) {
    throw FormatError(labels_path.string() + ": bad IDX label magic " + hex32(magic) +
                      " (expected 0x00000801)");
  }
  const std::size_t nl = rl.u32_be();
  if (nl != n) {
    throw FormatError(labels_path.string() + ": label count " + std::to_string(nl) + " does not match image count " +
                      std::to_string(n) + " in " + images_path.string());
  }
  if (ri.remaining() != n * rows * cols) {
    throw FormatError(images_path.string() + ": expected " + std::to_string(n * rows * cols) + " pixel bytes, found " +
                      std::to_string(ri.remaining()));
  }
  if (rl.remaining() != n) {
    throw FormatError(labels_path.string() + ": expected " + std::to_string(n) + " label bytes, found " +
                      std::to_string(rl.remaining()));
  }

  Dataset ds;
  ds.name = images_path.filename().string();
  ds.images.reserve(n);
  std::size_t max_label = 0;
  const Shape shape{1, rows, cols};
  for (std::size_t i = 0; i < n; ++i) {
    auto px = ri.take(rows * cols);
    Image img{Tensor(shape), rl.u8()};
    for (std::size_t k = 0; k < px.size(); ++k)
      img.pixels.values[k] = static_cast<double>(static_cast<std::uint8_t>(px[k])) / 255.0;
    max_label = std::max(max_label, img.label);
    ds.images.push_back(std::move(img));
  }
  ds.num_classes = std::max<std::size_t>(10, max_label + 1);
  return ds;
}

/// Writes raw IDX bytes; pixels must be single-channel and already byte-exact
/// multiples of 1/255.
inline void write_idx(std::span<const Image> images, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (images.empty()) throw InvalidInput("write_idx: no images");
  const Shape s = images.front().shape();
  if (s.c != 1) throw InvalidInput("write_idx: IDX stores single-channel images");
  std::string img;
  bin::put_u32_be(img, kIdxImagesMagic);
  bin::put_u32_be(img, static_cast<std::uint32_t>(images.size()));
  bin::put_u32_be(img, static_cast<std::uint32_t>(s.h));
  bin::put_u32_be(img, static_cast<std::uint32_t>(s.w));
  std::string lbl;
  bin::put_u32_be(lbl, kIdxLabelsMagic);
  bin::put_u32_be(lbl, static_cast<std::uint32_t>(images.size()));
  for (const auto& x : images) {
    if (!(x.shape() == s)) throw DimensionError("write_idx: images differ in shape");
    if (x.label > 255) throw InvalidInput("write_idx: label exceeds one byte");
    for (double v : x.pixels.values) img.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    lbl.push_back(static_cast<char>(x.label));
  }
  write_file(images_path, img);
  write_file(labels_path, lbl);
}

/// Two-class texture set: vertical stripes (label 0) vs checkerboard
/// (label 1), 2-pixel cells, levels 0.2/0.8 with uniform noise of amplitude
/// 0.1. Label 0 gets floor(n/2) images.
inline Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t side) {
  if (n < 2) throw InvalidInput("synth_dataset: need n >= 2");
  if (side < 8) throw InvalidInput("synth_dataset: need side >= 8");
  Rng rng(stage_seed(seed, "synth"));
  std::uniform_real_distribution<double> noise(-0.1, 0.1);
  Dataset ds{"synth", 2, {}};
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2 == 0 ? 1 : 0;
    Image img{Tensor(Shape{1, side, side}), label};
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const bool on = label == 0 ? (x / 2) % 2 == 0 : ((x / 2) + (y / 2)) % 2 == 0;
        img.pixels.at(0, y, x) = std::clamp((on ? 0.8 : 0.2) + noise(rng), 0.0, 1.0);
      }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

}  // namespace ea
