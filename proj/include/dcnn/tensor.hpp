#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/hash.hpp"

namespace dcnn::tensornet {

/// (channels, depth, height, width); data is laid out in that order.
struct Shape {
  int c = 1;
  int d = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const { return static_cast<std::size_t>(c) * d * h * w; }
  std::string str() const {
    return std::to_string(c) + "x" + std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
struct Tensor4 {
  Shape shape;
  std::vector<T> data;

  Tensor4() = default;
  explicit Tensor4(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}
  Tensor4(Shape s, std::vector<T> d) : shape(s), data(std::move(d)) {
    if (data.size() != shape.size()) throw ShapeError("Tensor4: data length does not match " + shape.str());
  }

  T& operator()(int c, int z, int y, int x) {
    return data[((static_cast<std::size_t>(c) * shape.d + z) * shape.h + y) * shape.w + x];
  }
  T operator()(int c, int z, int y, int x) const {
    return data[((static_cast<std::size_t>(c) * shape.d + z) * shape.h + y) * shape.w + x];
  }
};

enum class LayerKind { conv2d, conv3d, maxpool, fc, relu };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::fc: return "fc";
    case LayerKind::relu: return "relu";
  }
  return "?";
}

/// One layer of a feed-forward stack. Kernel and stride are given as
/// (height, width, depth), matching how the architectures are usually written.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int kh = 1, kw = 1, kd = 1;
  int filters = 0;  // conv output channels
  int sh = 1, sw = 1, sd = 1;
  int units = 0;  // fc output width

  static LayerSpec conv2d(int kh, int kw, int filters) {
    return {LayerKind::conv2d, kh, kw, 1, filters, 1, 1, 1, 0};
  }
  static LayerSpec conv3d(int kh, int kw, int kd, int filters, int sd = 1) {
    return {LayerKind::conv3d, kh, kw, kd, filters, 1, 1, sd, 0};
  }
  static LayerSpec maxpool(int kh, int kw, int sh, int sw) { return {LayerKind::maxpool, kh, kw, 1, 0, sh, sw, 1, 0}; }
  static LayerSpec fc(int units) { return {LayerKind::fc, 1, 1, 1, 0, 1, 1, 1, units}; }
  static LayerSpec relu() { return {}; }

  bool is_conv() const { return kind == LayerKind::conv2d || kind == LayerKind::conv3d; }
  bool has_params() const { return is_conv() || kind == LayerKind::fc; }

  std::string str() const {
    std::string s = kind_name(kind);
    if (is_conv() || kind == LayerKind::maxpool)
      s += " k" + std::to_string(kh) + "x" + std::to_string(kw) + "x" + std::to_string(kd) + " s" +
           std::to_string(sh) + "x" + std::to_string(sw) + "x" + std::to_string(sd);
    if (is_conv()) s += " f" + std::to_string(filters);
    if (kind == LayerKind::fc) s += " u" + std::to_string(units);
    return s;
  }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

namespace detail {

inline int valid_extent(int in, int k, int stride, const char* axis, const Shape& in_shape, const LayerSpec& spec) {
  if (k > in || (in - k) % stride != 0)
    throw ShapeError("layer '" + spec.str() + "' does not tile input " + in_shape.str() + " along " + axis);
  return (in - k) / stride + 1;
}

}  // namespace detail

/// Output shape of one layer, or ShapeError when the layer cannot apply.
inline Shape output_shape(const LayerSpec& s, const Shape& in) {
  if (s.kh < 1 || s.kw < 1 || s.kd < 1 || s.sh < 1 || s.sw < 1 || s.sd < 1)
    throw ShapeError("layer '" + s.str() + "': kernel and stride must be positive");
  switch (s.kind) {
    case LayerKind::conv2d:
    case LayerKind::conv3d: {
      if (s.kind == LayerKind::conv2d && (s.kd != 1 || s.sd != 1))
        throw ShapeError("layer '" + s.str() + "': 2D convolution must have depth kernel and stride 1");
      if (s.filters < 1) throw ShapeError("layer '" + s.str() + "': needs at least one filter");
      return {s.filters, detail::valid_extent(in.d, s.kd, s.sd, "depth", in, s),
              detail::valid_extent(in.h, s.kh, s.sh, "height", in, s),
              detail::valid_extent(in.w, s.kw, s.sw, "width", in, s)};
    }
    case LayerKind::maxpool: {
      if (s.kd != 1 || s.sd != 1) throw ShapeError("layer '" + s.str() + "': pooling is spatial only");
      if (s.kh > in.h || s.kw > in.w)
        throw ShapeError("layer '" + s.str() + "': window larger than input " + in.str());
      // Partial windows at the bottom/right edge are dropped.
      return {in.c, in.d, (in.h - s.kh) / s.sh + 1, (in.w - s.kw) / s.sw + 1};
    }
    case LayerKind::fc:
      if (s.units < 1) throw ShapeError("layer '" + s.str() + "': needs at least one unit");
      return {s.units, 1, 1, 1};
    case LayerKind::relu:
      return in;
  }
  throw ShapeError("unknown layer kind");
}

/// A validated layer stack with its input shape and per-layer shape trace.
class Architecture {
 public:
  Architecture() = default;
  Architecture(std::string name, Shape input, std::vector<LayerSpec> layers)
      : name_(std::move(name)), input_(input), layers_(std::move(layers)) {
    shapes_.push_back(input_);
    for (const auto& l : layers_) shapes_.push_back(output_shape(l, shapes_.back()));
  }

  const std::string& name() const { return name_; }
  const Shape& input() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  /// Input shape of layer i; in_shape(size()) is the network output.
  const Shape& in_shape(std::size_t i) const { return shapes_[i]; }
  const Shape& out_shape(std::size_t i) const { return shapes_[i + 1]; }
  const Shape& output() const { return shapes_.back(); }

  /// Width of the vector entering the first fully connected layer.
  std::size_t flatten_width() const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].kind == LayerKind::fc) return shapes_[i].size();
    return output().size();
  }

  std::size_t weight_count(std::size_t i) const {
    const auto& l = layers_[i];
    const Shape& in = shapes_[i];
    if (l.is_conv()) return static_cast<std::size_t>(l.filters) * in.c * l.kd * l.kh * l.kw;
    if (l.kind == LayerKind::fc) return static_cast<std::size_t>(l.units) * in.size();
    return 0;
  }
  std::size_t bias_count(std::size_t i) const {
    const auto& l = layers_[i];
    if (l.is_conv()) return static_cast<std::size_t>(l.filters);
    if (l.kind == LayerKind::fc) return static_cast<std::size_t>(l.units);
    return 0;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) n += weight_count(i) + bias_count(i);
    return n;
  }

  /// Hash of the input shape and the layer list (the name is not included).
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add("dcnn-arch-v1|").add(input_.str());
    for (const auto& l : layers_) h.add("|").add(l.str());
    return h.value();
  }

 private:
  std::string name_;
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
};

}  // namespace dcnn::tensornet
