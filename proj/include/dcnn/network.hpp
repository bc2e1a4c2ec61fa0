#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/layers.hpp"
#include "dcnn/rng.hpp"
#include "dcnn/tensor.hpp"

namespace dcnn::tensornet {

template <typename T>
struct LayerParams {
  std::vector<T> weights;
  std::vector<T> bias;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Weights and biases of every layer (empty for relu/pool), tied to an
/// architecture by its fingerprint.
template <typename T>
struct NetworkParams {
  std::uint64_t fingerprint = 0;
  std::uint64_t rng_seed = 0;
  std::vector<LayerParams<T>> layers;

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out{fingerprint, rng_seed, {}};
    out.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.layers[i].weights.assign(layers[i].weights.begin(), layers[i].weights.end());
      out.layers[i].bias.assign(layers[i].bias.begin(), layers[i].bias.end());
    }
    return out;
  }

  std::size_t tensor_count() const { return 2 * layers.size(); }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// Zero-initialized storage shaped like an architecture's parameters.
template <typename T>
std::vector<LayerParams<T>> zero_like(const Architecture& arch) {
  std::vector<LayerParams<T>> g(arch.size());
  for (std::size_t i = 0; i < arch.size(); ++i) {
    g[i].weights.assign(arch.weight_count(i), T(0));
    g[i].bias.assign(arch.bias_count(i), T(0));
  }
  return g;
}

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases. Values are
/// drawn in double precision so float and double networks built from the same
/// seed hold the same (rounded) parameters.
template <typename T>
NetworkParams<T> init_params(const Architecture& arch, std::uint64_t seed) {
  NetworkParams<T> p{arch.fingerprint(), seed, zero_like<T>(arch)};
  Rng rng(seed);
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const auto& l = arch.layers()[i];
    if (!l.has_params()) continue;
    double fan_in = 0, fan_out = 0;
    if (l.is_conv()) {
      const double k = static_cast<double>(l.kd) * l.kh * l.kw;
      fan_in = arch.in_shape(i).c * k;
      fan_out = l.filters * k;
    } else {
      fan_in = static_cast<double>(arch.in_shape(i).size());
      fan_out = l.units;
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : p.layers[i].weights) w = static_cast<T>(rng.uniform(-bound, bound));
  }
  return p;
}

template <typename T>
void check_params(const Architecture& arch, const NetworkParams<T>& p) {
  if (p.fingerprint != arch.fingerprint())
    throw IncompatibleArchitecture("parameters were built for architecture " + hex64(p.fingerprint) + ", not '" +
                                   arch.name() + "' (" + hex64(arch.fingerprint()) + ")");
  if (p.layers.size() != arch.size()) throw IncompatibleArchitecture("parameter layer count mismatch");
  for (std::size_t i = 0; i < arch.size(); ++i)
    if (p.layers[i].weights.size() != arch.weight_count(i) || p.layers[i].bias.size() != arch.bias_count(i))
      throw IncompatibleArchitecture("parameter tensor shape mismatch at layer " + std::to_string(i));
}

/// Per-batch scratch: activations of every layer, pooling argmax indices and
/// gradient buffers. Reused across calls to avoid reallocation.
template <typename T>
struct Workspace {
  int batch = 0;
  std::vector<std::vector<T>> acts;
  std::vector<std::vector<std::int32_t>> argmax;
  std::vector<T> grad_a, grad_b;
  std::vector<T> col;
};

template <typename T>
class Network {
 public:
  Network(Architecture arch, NetworkParams<T> params) : arch_(std::move(arch)), params_(std::move(params)) {
    check_params(arch_, params_);
  }
  Network(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)), params_(init_params<T>(arch_, seed)) {}

  const Architecture& arch() const { return arch_; }
  const NetworkParams<T>& params() const { return params_; }
  NetworkParams<T>& params() { return params_; }

  /// Runs `n` samples stored contiguously (each arch().input().size() values).
  /// The logits end up in ws.acts.back() as an [n x outputs] block.
  void forward(const T* input, int n, Workspace<T>& ws) const {
    const std::size_t L = arch_.size();
    ws.batch = n;
    ws.acts.resize(L + 1);
    ws.argmax.resize(L);
    ws.acts[0].assign(input, input + static_cast<std::size_t>(n) * arch_.input().size());
    for (std::size_t i = 0; i < L; ++i) {
      const auto& spec = arch_.layers()[i];
      const Shape& is = arch_.in_shape(i);
      const Shape& os = arch_.out_shape(i);
      const std::size_t isz = is.size(), osz = os.size();
      ws.acts[i + 1].resize(static_cast<std::size_t>(n) * osz);
      const T* x = ws.acts[i].data();
      T* y = ws.acts[i + 1].data();
      switch (spec.kind) {
        case LayerKind::conv2d:
        case LayerKind::conv3d: {
          const auto g = conv_geometry(spec, is);
          for (int s = 0; s < n; ++s)
            conv_forward(x + s * isz, g, params_.layers[i].weights.data(), params_.layers[i].bias.data(),
                         y + s * osz, ws.col);
          break;
        }
        case LayerKind::maxpool:
          ws.argmax[i].resize(static_cast<std::size_t>(n) * osz);
          for (int s = 0; s < n; ++s)
            maxpool_forward(x + s * isz, is, spec, y + s * osz, ws.argmax[i].data() + s * osz);
          break;
        case LayerKind::relu:
          relu_forward(x, static_cast<std::size_t>(n) * isz, y);
          break;
        case LayerKind::fc:
          fc_forward(x, n, static_cast<int>(isz), params_.layers[i].weights.data(), params_.layers[i].bias.data(),
                     spec.units, y);
          break;
      }
    }
  }

  const T* logits(const Workspace<T>& ws) const { return ws.acts.back().data(); }

  /// Adds the parameter gradients for upstream logit gradient `dlogits`
  /// ([n x outputs]) into `grads`. With `input_grad` non-null the gradient
  /// with respect to the input batch is written there as well.
  void backward(Workspace<T>& ws, const T* dlogits, std::vector<LayerParams<T>>& grads, T* input_grad = nullptr) const {
    const int n = ws.batch;
    const std::size_t L = arch_.size();
    ws.grad_a.assign(dlogits, dlogits + static_cast<std::size_t>(n) * arch_.output().size());
    for (std::size_t ii = L; ii-- > 0;) {
      const auto& spec = arch_.layers()[ii];
      const Shape& is = arch_.in_shape(ii);
      const Shape& os = arch_.out_shape(ii);
      const std::size_t isz = is.size(), osz = os.size();
      const bool need_in = ii > 0 || input_grad != nullptr;
      const T* x = ws.acts[ii].data();
      const T* dy = ws.grad_a.data();
      ws.grad_b.resize(static_cast<std::size_t>(n) * isz);
      T* dx = need_in ? ws.grad_b.data() : nullptr;
      switch (spec.kind) {
        case LayerKind::conv2d:
        case LayerKind::conv3d: {
          const auto g = conv_geometry(spec, is);
          for (int s = 0; s < n; ++s)
            conv_backward(x + s * isz, g, params_.layers[ii].weights.data(), dy + s * osz,
                          grads[ii].weights.data(), grads[ii].bias.data(), dx ? dx + s * isz : nullptr, ws.col);
          break;
        }
        case LayerKind::maxpool:
          if (dx)
            for (int s = 0; s < n; ++s)
              maxpool_backward(is, os, ws.argmax[ii].data() + s * osz, dy + s * osz, dx + s * isz);
          break;
        case LayerKind::relu:
          if (dx) relu_backward(ws.acts[ii + 1].data(), dy, static_cast<std::size_t>(n) * isz, dx);
          break;
        case LayerKind::fc:
          fc_backward(x, n, static_cast<int>(isz), params_.layers[ii].weights.data(), spec.units, dy,
                      grads[ii].weights.data(), grads[ii].bias.data(), dx);
          break;
      }
      if (!need_in) break;
      std::swap(ws.grad_a, ws.grad_b);
    }
    if (input_grad) std::copy(ws.grad_a.begin(), ws.grad_a.end(), input_grad);
  }

  /// Class-1 softmax probability for each of `n` samples.
  std::vector<T> scores(const T* input, int n, Workspace<T>& ws) const {
    forward(input, n, ws);
    const T* z = logits(ws);
    std::vector<T> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s[i] = class1_probability(z[2 * i], z[2 * i + 1]);
    return s;
  }

  T score(const T* input) const {
    Workspace<T> ws;
    return scores(input, 1, ws)[0];
  }

 private:
  Architecture arch_;
  NetworkParams<T> params_;
};

// ---------------------------------------------------------------------------
// Weight files: "DCNNWGT\0", u32 version, u64 fingerprint, u64 init seed,
// u32 tensor count, then per tensor u32 element count and little-endian f32
// values; tensors run weights, bias for each layer in order.

inline constexpr char kWeightMagic[8] = {'D', 'C', 'N', 'N', 'W', 'G', 'T', '\0'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n)
      throw LengthError("weight file truncated at offset " + std::to_string(b_.size()) + " (need " +
                        std::to_string(n) + " more bytes at offset " + std::to_string(pos_) + ")");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  const std::uint8_t* raw(std::size_t n) {
    need(n);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> save_params(const NetworkParams<float>& p) {
  std::vector<std::uint8_t> out(kWeightMagic, kWeightMagic + 8);
  detail::put_u32(out, kWeightFormatVersion);
  detail::put_u64(out, p.fingerprint);
  detail::put_u64(out, p.rng_seed);
  detail::put_u32(out, static_cast<std::uint32_t>(p.tensor_count()));
  auto put_tensor = [&](const std::vector<float>& t) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.size()));
    for (float v : t) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  };
  for (const auto& l : p.layers) {
    put_tensor(l.weights);
    put_tensor(l.bias);
  }
  return out;
}

/// Header fields only, without architecture checks.
inline std::uint64_t peek_fingerprint(const std::vector<std::uint8_t>& bytes) {
  detail::Reader r(bytes);
  const std::uint8_t* magic = r.raw(8);
  if (!std::equal(magic, magic + 8, reinterpret_cast<const std::uint8_t*>(kWeightMagic)))
    throw FormatError("not a weight file (bad magic)");
  if (r.u32() != kWeightFormatVersion) throw FormatError("unsupported weight file version");
  return r.u64();
}

/// Parses a weight file and checks it against `arch`.
inline NetworkParams<float> load_params(const std::vector<std::uint8_t>& bytes, const Architecture& arch) {
  detail::Reader r(bytes);
  const std::uint8_t* magic = r.raw(8);
  if (!std::equal(magic, magic + 8, reinterpret_cast<const std::uint8_t*>(kWeightMagic)))
    throw FormatError("not a weight file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kWeightFormatVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
  NetworkParams<float> p;
  p.fingerprint = r.u64();
  p.rng_seed = r.u64();
  if (p.fingerprint != arch.fingerprint())
    throw IncompatibleArchitecture("weight file fingerprint " + hex64(p.fingerprint) + " does not match '" +
                                   arch.name() + "' (" + hex64(arch.fingerprint()) + ")");
  const std::uint32_t count = r.u32();
  if (count != 2 * arch.size()) throw IncompatibleArchitecture("weight file tensor count mismatch");
  p.layers.resize(arch.size());
  for (std::size_t i = 0; i < arch.size(); ++i) {
    for (int part = 0; part < 2; ++part) {
      const std::uint32_t n = r.u32();
      const std::size_t expected = part == 0 ? arch.weight_count(i) : arch.bias_count(i);
      if (n != expected) throw IncompatibleArchitecture("weight tensor size mismatch at layer " + std::to_string(i));
      auto& t = part == 0 ? p.layers[i].weights : p.layers[i].bias;
      t.resize(n);
      for (auto& v : t) v = r.f32();
    }
  }
  if (!r.done()) throw LengthError("trailing bytes after weight tensors");
  return p;
}

}  // namespace dcnn::tensornet
