#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "error.hpp"

namespace ea {

struct Shape {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return c * h * w; }
  std::string str() const { return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w); }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense c x h x w tensor, channel-major (index = (ch * h + y) * w + x).
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), values(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> v) : shape(s), values(std::move(v)) {
    if (values.size() != shape.size()) throw DimensionError("Tensor: " + std::to_string(values.size()) +
                                                            " values for shape " + shape.str());
  }

  double& at(std::size_t ch, std::size_t y, std::size_t x) { return values[(ch * shape.h + y) * shape.w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return values[(ch * shape.h + y) * shape.w + x]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// A labeled image with pixel values in [0,1].
struct Image {
  Tensor pixels;
  std::size_t label = 0;

  const Shape& shape() const { return pixels.shape; }
};

inline double linf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// L-infinity bounded perturbation of one image.
struct Perturbation {
  Tensor delta;
  double epsilon = 0.0;
};

/// x + delta clipped into the [0,1] box.
inline Image apply(const Image& x, const Tensor& delta) {
  if (!(x.shape() == delta.shape)) {
    throw DimensionError("apply: image " + x.shape().str() + " vs delta " + delta.shape.str());
  }
  Image out = x;
  for (std::size_t i = 0; i < out.pixels.values.size(); ++i)
    out.pixels.values[i] = std::clamp(x.pixels.values[i] + delta.values[i], 0.0, 1.0);
  return out;
}

/// Replaces delta by the change actually realized after box clipping.
inline Tensor clip_to_box(const Image& x, const Tensor& delta) {
  Image moved = apply(x, delta);
  Tensor out(delta.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = moved.pixels.values[i] - x.pixels.values[i];
  return out;
}

}  // namespace ea
