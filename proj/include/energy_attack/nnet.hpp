#pragma once

// Tiny differentiable classifiers: dense / valid 3x3 convolution / relu /
// flatten / 2x2 max-pool layers with exact backprop to inputs and parameters,
// plain SGD training and a versioned binary format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "file_io.hpp"
#include "image.hpp"
#include "loss.hpp"
#include "rng.hpp"

namespace ea {

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out
};

// Valid (unpadded) 3x3 convolution, stride 1.
struct Conv3x3 {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weight;  // out x in x 3 x 3
  std::vector<double> bias;    // out
};

struct Relu {};
struct Flatten {};
struct MaxPool2 {};

using Layer = std::variant<Dense, Conv3x3, Relu, Flatten, MaxPool2>;

enum class LayerTag : std::uint8_t { dense = 1, conv3x3 = 2, relu = 3, flatten = 4, maxpool2 = 5 };

inline Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          if (in.size() != l.in) {
            throw DimensionError("dense layer expects " + std::to_string(l.in) + " inputs, got " + in.str());
          }
          return {l.out, 1, 1};
        } else if constexpr (std::is_same_v<L, Conv3x3>) {
          if (in.c != l.in_channels || in.h < 3 || in.w < 3) {
            throw DimensionError("conv3x3 expects " + std::to_string(l.in_channels) + " channels and side >= 3, got " +
                                 in.str());
          }
          return {l.out_channels, in.h - 2, in.w - 2};
        } else if constexpr (std::is_same_v<L, MaxPool2>) {
          if (in.h < 2 || in.w < 2) throw DimensionError("maxpool2 needs side >= 2, got " + in.str());
          return {in.c, in.h / 2, in.w / 2};
        } else if constexpr (std::is_same_v<L, Flatten>) {
          return {in.size(), 1, 1};
        } else {
          return in;
        }
      },
      layer);
}

/// Parameter gradients laid out like the model's layers (empty for
/// parameter-free layers).
struct ParamGrads {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;
};

class Model {
 public:
  Model() = default;

  Model(Shape input, std::size_t num_classes, std::vector<Layer> layers)
      : input_(input), num_classes_(num_classes), layers_(std::move(layers)) {
    Shape s = input_;
    shapes_.reserve(layers_.size());
    for (const auto& l : layers_) {
      check_params(l);
      s = layer_output_shape(l, s);
      shapes_.push_back(s);
    }
    if (s.size() != num_classes_) {
      throw DimensionError("model output " + s.str() + " does not match " + std::to_string(num_classes_) +
                           " classes");
    }
    if (num_classes_ < 2) throw DimensionError("model needs at least two classes");
  }

  const Shape& input_shape() const { return input_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  /// Final training-set accuracy recorded by train(); NaN when never trained.
  double train_accuracy() const { return train_accuracy_; }
  void set_train_accuracy(double a) { train_accuracy_ = a; }

  std::vector<double> forward(const Tensor& x) const {
    check_input(x.shape);
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) cur = forward_layer(i, cur);
    return cur.values;
  }

  std::vector<double> forward(const Image& x) const { return forward(x.pixels); }

  /// Backpropagates d(loss)/d(logits) through the network. Returns the input
  /// gradient; accumulates parameter gradients into `grads` when non-null.
  Tensor backward(const Tensor& x, std::span<const double> grad_logits, ParamGrads* grads) const {
    check_input(x.shape);
    std::vector<Tensor> acts;
    acts.reserve(layers_.size() + 1);
    acts.push_back(x);
    for (std::size_t i = 0; i < layers_.size(); ++i) acts.push_back(forward_layer(i, acts.back()));
    if (grad_logits.size() != num_classes_) throw DimensionError("backward: gradient length mismatch");

    Tensor g(acts.back().shape, std::vector<double>(grad_logits.begin(), grad_logits.end()));
    for (std::size_t i = layers_.size(); i-- > 0;) g = backward_layer(i, acts[i], g, grads);
    return g;
  }

  Tensor input_gradient(const Image& x, std::size_t y, LossKind loss) const {
    auto logits = forward(x);
    auto gl = loss_gradient(loss, logits, y);
    return backward(x.pixels, gl, nullptr);
  }

  ParamGrads zero_grads() const {
    ParamGrads g;
    for (const auto& l : layers_) {
      std::visit(
          [&](const auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, Dense> || std::is_same_v<L, Conv3x3>) {
              g.weight.emplace_back(layer.weight.size(), 0.0);
              g.bias.emplace_back(layer.bias.size(), 0.0);
            } else {
              g.weight.emplace_back();
              g.bias.emplace_back();
            }
          },
          l);
    }
    return g;
  }

  void sgd_step(const ParamGrads& g, double scale) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::visit(
          [&](auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, Dense> || std::is_same_v<L, Conv3x3>) {
              for (std::size_t k = 0; k < layer.weight.size(); ++k) layer.weight[k] -= scale * g.weight[i][k];
              for (std::size_t k = 0; k < layer.bias.size(); ++k) layer.bias[k] -= scale * g.bias[i][k];
            }
          },
          layers_[i]);
    }
  }

  bool params_finite() const {
    bool ok = true;
    for (const auto& l : layers_) {
      std::visit(
          [&](const auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, Dense> || std::is_same_v<L, Conv3x3>) {
              for (double v : layer.weight) ok = ok && std::isfinite(v);
              for (double v : layer.bias) ok = ok && std::isfinite(v);
            }
          },
          l);
    }
    return ok;
  }

 private:
  static void check_params(const Layer& l) {
    std::visit(
        [](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Dense>) {
            if (layer.weight.size() != layer.in * layer.out || layer.bias.size() != layer.out)
              throw DimensionError("dense layer parameter sizes do not match " + std::to_string(layer.out) + "x" +
                                   std::to_string(layer.in));
          } else if constexpr (std::is_same_v<L, Conv3x3>) {
            if (layer.weight.size() != layer.out_channels * layer.in_channels * 9 ||
                layer.bias.size() != layer.out_channels)
              throw DimensionError("conv3x3 parameter sizes do not match channels");
          }
        },
        l);
  }

  void check_input(const Shape& s) const {
    if (!(s == input_)) throw DimensionError("model expects input " + input_.str() + ", got " + s.str());
  }

  Tensor forward_layer(std::size_t i, const Tensor& in) const {
    const Shape out_shape = shapes_[i];
    return std::visit(
        [&](const auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          Tensor out(out_shape);
          if constexpr (std::is_same_v<L, Dense>) {
            for (std::size_t o = 0; o < l.out; ++o) {
              const double* w = l.weight.data() + o * l.in;
              double s = l.bias[o];
              for (std::size_t k = 0; k < l.in; ++k) s += w[k] * in.values[k];
              out.values[o] = s;
            }
          } else if constexpr (std::is_same_v<L, Conv3x3>) {
            const std::size_t oh = out_shape.h, ow = out_shape.w;
            for (std::size_t o = 0; o < l.out_channels; ++o) {
              double* dst = out.values.data() + o * oh * ow;
              std::fill(dst, dst + oh * ow, l.bias[o]);
              for (std::size_t c = 0; c < l.in_channels; ++c) {
                const double* w = l.weight.data() + (o * l.in_channels + c) * 9;
                for (std::size_t ky = 0; ky < 3; ++ky)
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wk = w[ky * 3 + kx];
                    for (std::size_t y = 0; y < oh; ++y) {
                      const double* src = &in.values[(c * in.shape.h + y + ky) * in.shape.w + kx];
                      double* d = dst + y * ow;
                      for (std::size_t x = 0; x < ow; ++x) d[x] += wk * src[x];
                    }
                  }
              }
            }
          } else if constexpr (std::is_same_v<L, Relu>) {
            for (std::size_t k = 0; k < in.values.size(); ++k) out.values[k] = std::max(0.0, in.values[k]);
          } else if constexpr (std::is_same_v<L, Flatten>) {
            out.values = in.values;
          } else {
            for (std::size_t c = 0; c < out_shape.c; ++c)
              for (std::size_t y = 0; y < out_shape.h; ++y)
                for (std::size_t x = 0; x < out_shape.w; ++x) {
                  double m = in.at(c, 2 * y, 2 * x);
                  m = std::max(m, in.at(c, 2 * y, 2 * x + 1));
                  m = std::max(m, in.at(c, 2 * y + 1, 2 * x));
                  m = std::max(m, in.at(c, 2 * y + 1, 2 * x + 1));
                  out.at(c, y, x) = m;
                }
          }
          return out;
        },
        layers_[i]);
  }

  Tensor backward_layer(std::size_t i, const Tensor& in, const Tensor& gout, ParamGrads* grads) const {
    return std::visit(
        [&](const auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          Tensor gin(in.shape);
          if constexpr (std::is_same_v<L, Dense>) {
            for (std::size_t o = 0; o < l.out; ++o) {
              const double go = gout.values[o];
              if (go == 0.0) continue;
              const double* w = l.weight.data() + o * l.in;
              for (std::size_t k = 0; k < l.in; ++k) gin.values[k] += go * w[k];
              if (grads) {
                double* gw = grads->weight[i].data() + o * l.in;
                for (std::size_t k = 0; k < l.in; ++k) gw[k] += go * in.values[k];
                grads->bias[i][o] += go;
              }
            }
          } else if constexpr (std::is_same_v<L, Conv3x3>) {
            const std::size_t oh = gout.shape.h, ow = gout.shape.w;
            for (std::size_t o = 0; o < l.out_channels; ++o) {
              const double* go = gout.values.data() + o * oh * ow;
              if (grads) {
                double s = 0.0;
                for (std::size_t k = 0; k < oh * ow; ++k) s += go[k];
                grads->bias[i][o] += s;
              }
              for (std::size_t c = 0; c < l.in_channels; ++c) {
                const std::size_t wbase = (o * l.in_channels + c) * 9;
                for (std::size_t ky = 0; ky < 3; ++ky)
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wk = l.weight[wbase + ky * 3 + kx];
                    double gw = 0.0;
                    for (std::size_t y = 0; y < oh; ++y) {
                      const std::size_t row = (c * in.shape.h + y + ky) * in.shape.w + kx;
                      const double* src = &in.values[row];
                      double* dst = &gin.values[row];
                      const double* g = go + y * ow;
                      for (std::size_t x = 0; x < ow; ++x) {
                        dst[x] += wk * g[x];
                        gw += src[x] * g[x];
                      }
                    }
                    if (grads) grads->weight[i][wbase + ky * 3 + kx] += gw;
                  }
              }
            }
          } else if constexpr (std::is_same_v<L, Relu>) {
            for (std::size_t k = 0; k < in.values.size(); ++k) gin.values[k] = in.values[k] > 0.0 ? gout.values[k] : 0.0;
          } else if constexpr (std::is_same_v<L, Flatten>) {
            gin.values = gout.values;
          } else {
            // Gradient routes to the first maximal element of each window,
            // matching the comparison order of the forward pass.
            for (std::size_t c = 0; c < gout.shape.c; ++c)
              for (std::size_t y = 0; y < gout.shape.h; ++y)
                for (std::size_t x = 0; x < gout.shape.w; ++x) {
                  std::size_t by = 2 * y, bx = 2 * x;
                  double m = in.at(c, by, bx);
                  const std::size_t cand[3][2] = {{2 * y, 2 * x + 1}, {2 * y + 1, 2 * x}, {2 * y + 1, 2 * x + 1}};
                  for (const auto& p : cand) {
                    if (in.at(c, p[0], p[1]) > m) {
                      m = in.at(c, p[0], p[1]);
                      by = p[0];
                      bx = p[1];
                    }
                  }
                  gin.at(c, by, bx) += gout.at(c, y, x);
                }
          }
          return gin;
        },
        layers_[i]);
  }

  Shape input_;
  std::size_t num_classes_ = 0;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  double train_accuracy_ = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<double> glorot_uniform(std::size_t count, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(count);
  for (double& v : w) v = dist(rng);
  return w;
}

inline Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  return Dense{in, out, glorot_uniform(in * out, in, out, rng), std::vector<double>(out, 0.0)};
}

inline Conv3x3 make_conv3x3(std::size_t in_c, std::size_t out_c, Rng& rng) {
  return Conv3x3{in_c, out_c, glorot_uniform(out_c * in_c * 9, in_c * 9, out_c * 9, rng),
                 std::vector<double>(out_c, 0.0)};
}

/// input -> hidden -> relu -> classes.
inline Model make_mlp(Shape input, std::size_t num_classes, std::uint64_t seed, std::size_t hidden = 128) {
  Rng rng(stage_seed(seed, "init"));
  std::vector<Layer> layers;
  layers.emplace_back(Flatten{});
  layers.emplace_back(make_dense(input.size(), hidden, rng));
  layers.emplace_back(Relu{});
  layers.emplace_back(make_dense(hidden, num_classes, rng));
  return Model(input, num_classes, std::move(layers));
}

/// conv3x3x8, relu, maxpool2, conv3x3x16, relu, maxpool2, dense.
inline Model make_convnet(Shape input, std::size_t num_classes, std::uint64_t seed) {
  Rng rng(stage_seed(seed, "init"));
  std::vector<Layer> layers;
  layers.emplace_back(make_conv3x3(input.c, 8, rng));
  layers.emplace_back(Relu{});
  layers.emplace_back(MaxPool2{});
  layers.emplace_back(make_conv3x3(8, 16, rng));
  layers.emplace_back(Relu{});
  layers.emplace_back(MaxPool2{});
  layers.emplace_back(Flatten{});
  Shape s = input;
  for (const auto& l : layers) s = layer_output_shape(l, s);
  layers.emplace_back(make_dense(s.size(), num_classes, rng));
  return Model(input, num_classes, std::move(layers));
}

inline std::size_t predict(const Model& m, const Image& x) {
  auto z = m.forward(x);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

inline double accuracy(const Model& m, std::span<const Image> data) {
  if (data.empty()) throw InvalidInput("accuracy: empty dataset");
  std::size_t hits = 0;
  for (const auto& x : data) hits += predict(m, x) == x.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

struct TrainConfig {
  std::size_t epochs = 5;
  double lr = 0.1;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
};

/// Mini-batch SGD on cross-entropy. Bit-reproducible for a fixed seed.
inline Model train(Model m, std::span<const Image> data, const TrainConfig& cfg) {
  if (data.empty()) throw InvalidInput("train: empty dataset");
  if (!(cfg.lr > 0.0)) throw InvalidInput("train: learning rate must be positive");
  if (cfg.batch == 0) throw InvalidInput("train: batch size must be positive");
  for (const auto& x : data)
    if (x.label >= m.num_classes()) throw InvalidInput("train: label out of range");

  Rng rng(stage_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      ParamGrads g = m.zero_grads();
      for (std::size_t k = start; k < end; ++k) {
        const Image& x = data[order[k]];
        auto logits = m.forward(x);
        auto gl = loss_gradient(LossKind::cross_entropy, logits, x.label);
        m.backward(x.pixels, gl, &g);
      }
      m.sgd_step(g, cfg.lr / static_cast<double>(end - start));
    }
  }
  if (!m.params_finite()) throw InvalidInput("train: parameters diverged (non-finite); lower the learning rate");
  m.set_train_accuracy(accuracy(m, data));
  return m;
}

// ---------------------------------------------------------------------------
// EAMODEL1: magic, u32 c/h/w, u32 classes, u32 layer count, f64 recorded
// accuracy, then per layer a u8 tag, u32 shape header and raw f64 parameters.
// All integers and floats little-endian.

inline constexpr std::string_view kModelMagic = "EAMODEL1";

inline std::string serialize_model(const Model& m) {
  std::string out(kModelMagic);
  bin::put_u32_le(out, static_cast<std::uint32_t>(m.input_shape().c));
  bin::put_u32_le(out, static_cast<std::uint32_t>(m.input_shape().h));
  bin::put_u32_le(out, static_cast<std::uint32_t>(m.input_shape().w));
  bin::put_u32_le(out, static_cast<std::uint32_t>(m.num_classes()));
  bin::put_u32_le(out, static_cast<std::uint32_t>(m.layers().size()));
  bin::put_f64_le(out, m.train_accuracy());
  for (const auto& l : m.layers()) {
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Dense>) {
            out.push_back(static_cast<char>(LayerTag::dense));
            bin::put_u32_le(out, static_cast<std::uint32_t>(layer.in));
            bin::put_u32_le(out, static_cast<std::uint32_t>(layer.out));
          } else if constexpr (std::is_same_v<L, Conv3x3>) {
            out.push_back(static_cast<char>(LayerTag::conv3x3));
            bin::put_u32_le(out, static_cast<std::uint32_t>(layer.in_channels));
            bin::put_u32_le(out, static_cast<std::uint32_t>(layer.out_channels));
          } else if constexpr (std::is_same_v<L, Relu>) {
            out.push_back(static_cast<char>(LayerTag::relu));
          } else if constexpr (std::is_same_v<L, Flatten>) {
            out.push_back(static_cast<char>(LayerTag::flatten));
          } else {
            out.push_back(static_cast<char>(LayerTag::maxpool2));
          }
          if constexpr (std::is_same_v<L, Dense> || std::is_same_v<L, Conv3x3>) {
            for (double v : layer.weight) bin::put_f64_le(out, v);
            for (double v : layer.bias) bin::put_f64_le(out, v);
          }
        },
        l);
  }
  return out;
}

inline Model deserialize_model(std::string_view bytes, const std::string& source = "<model>") {
  bin::Reader r(bytes, source);
  if (r.take(kModelMagic.size()) != kModelMagic) throw FormatError(source + ": bad magic, expected EAMODEL1");
  Shape in{r.u32_le(), r.u32_le(), r.u32_le()};
  const std::size_t classes = r.u32_le();
  const std::size_t count = r.u32_le();
  const double acc = r.f64_le();
  if (in.size() == 0) throw FormatError(source + ": empty input shape");

  auto read_params = [&](std::size_t n) {
    if (n > r.remaining() / 8) throw FormatError(source + ": truncated parameter block");
    std::vector<double> v(n);
    for (double& x : v) {
      x = r.f64_le();
      if (!std::isfinite(x)) throw FormatError(source + ": non-finite parameter");
    }
    return v;
  };

  std::vector<Layer> layers;
  for (std::size_t i = 0; i < count; ++i) {
    const auto tag = static_cast<LayerTag>(r.u8());
    switch (tag) {
      case LayerTag::dense: {
        Dense d;
        d.in = r.u32_le();
        d.out = r.u32_le();
        d.weight = read_params(d.in * d.out);
        d.bias = read_params(d.out);
        layers.emplace_back(std::move(d));
        break;
      }
      case LayerTag::conv3x3: {
        Conv3x3 c;
        c.in_channels = r.u32_le();
        c.out_channels = r.u32_le();
        c.weight = read_params(c.in_channels * c.out_channels * 9);
        c.bias = read_params(c.out_channels);
        layers.emplace_back(std::move(c));
        break;
      }
      case LayerTag::relu: layers.emplace_back(Relu{}); break;
      case LayerTag::flatten: layers.emplace_back(Flatten{}); break;
      case LayerTag::maxpool2: layers.emplace_back(MaxPool2{}); break;
      default: throw FormatError(source + ": unknown layer tag " + std::to_string(static_cast<int>(tag)));
    }
  }
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after model");
  try {
    Model m(in, classes, std::move(layers));
    m.set_train_accuracy(acc);
    return m;
  } catch (const DimensionError& e) {
    throw FormatError(source + ": inconsistent layer shapes: " + e.what());
  }
}

inline void save_model(const Model& m, const std::filesystem::path& path) { write_file(path, serialize_model(m)); }

inline Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path), path.string()); }

}  // namespace ea
