#pragma once

// Dense evaluation of a patch network over every patch position of a larger
// input. Convolutions run once over the whole feature map; fully connected
// layers become convolutions whose kernel spans the per-patch extent; each
// stride-s pooling layer splits the map into s*s phase-shifted maps so every
// patch origin sees exactly the pooling grid it would see on its own.

#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/layers.hpp"
#include "dcnn/network.hpp"

namespace dcnn::tensornet {

/// Class-1 probabilities for all patch origins of `input`, row-major over
/// (input.h - patch.h + 1) x (input.w - patch.w + 1).
struct DenseScores {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;
};

namespace detail {

template <typename T>
class DenseRunner {
 public:
  DenseRunner(const Network<T>& net, DenseScores& out) : net_(net), out_(out) {}

  void run(std::size_t layer, Tensor4<T> f, int off_y, int off_x, int step_y, int step_x) {
    const auto& arch = net_.arch();
    for (; layer < arch.size(); ++layer) {
      const auto& spec = arch.layers()[layer];
      const auto& p = net_.params().layers[layer];
      switch (spec.kind) {
        case LayerKind::conv2d:
        case LayerKind::conv3d: {
          if (spec.sh != 1 || spec.sw != 1)
            throw ShapeError("dense evaluation needs unit spatial stride in convolutions");
          if (f.shape.h < spec.kh || f.shape.w < spec.kw) return;
          const auto g = conv_geometry(spec, f.shape);
          Tensor4<T> y(g.out);
          conv_forward(f.data.data(), g, p.weights.data(), p.bias.data(), y.data.data(), col_);
          f = std::move(y);
          break;
        }
        case LayerKind::fc: {
          const Shape& need = arch.in_shape(layer);
          if (f.shape.h < need.h || f.shape.w < need.w) return;
          const auto g = fc_as_conv_geometry(arch.in_shape(layer), f.shape, spec.units);
          Tensor4<T> y(g.out);
          conv_forward(f.data.data(), g, p.weights.data(), p.bias.data(), y.data.data(), col_);
          f = std::move(y);
          break;
        }
        case LayerKind::relu:
          relu_forward(f.data.data(), f.data.size(), f.data.data());
          break;
        case LayerKind::maxpool: {
          for (int py = 0; py < spec.sh; ++py)
            for (int px = 0; px < spec.sw; ++px) {
              if (f.shape.h - py < spec.kh || f.shape.w - px < spec.kw) continue;
              Tensor4<T> phase = pool_phase(f, spec, py, px);
              run(layer + 1, std::move(phase), off_y + step_y * py, off_x + step_x * px, step_y * spec.sh,
                  step_x * spec.sw);
            }
          return;
        }
      }
    }
    emit(f, off_y, off_x, step_y, step_x);
  }

 private:
  static Tensor4<T> pool_phase(const Tensor4<T>& f, const LayerSpec& s, int py, int px) {
    const Shape& is = f.shape;
    Shape os{is.c, is.d, (is.h - py - s.kh) / s.sh + 1, (is.w - px - s.kw) / s.sw + 1};
    Tensor4<T> out(os);
    for (int c = 0; c < is.c; ++c)
      for (int z = 0; z < is.d; ++z)
        for (int oy = 0; oy < os.h; ++oy)
          for (int ox = 0; ox < os.w; ++ox) {
            T m = f(c, z, py + oy * s.sh, px + ox * s.sw);
            for (int ky = 0; ky < s.kh; ++ky)
              for (int kx = 0; kx < s.kw; ++kx) m = std::max(m, f(c, z, py + oy * s.sh + ky, px + ox * s.sw + kx));
            out(c, z, oy, ox) = m;
          }
    return out;
  }

  void emit(const Tensor4<T>& logits, int off_y, int off_x, int step_y, int step_x) {
    if (logits.shape.c != 2 || logits.shape.d != 1) throw ShapeError("dense evaluation needs a two-unit output");
    for (int i = 0; i < logits.shape.h; ++i)
      for (int j = 0; j < logits.shape.w; ++j) {
        const int oy = off_y + step_y * i, ox = off_x + step_x * j;
        // Pooling drops trailing rows, so an origin can look computable here
        // even though its full patch runs past the edge.
        if (oy >= out_.rows || ox >= out_.cols) continue;
        out_.values[static_cast<std::size_t>(oy) * out_.cols + ox] =
            static_cast<float>(class1_probability(logits(0, 0, i, j), logits(1, 0, i, j)));
      }
  }

  const Network<T>& net_;
  DenseScores& out_;
  std::vector<T> col_;
};

}  // namespace detail

/// `input` must match the network input in channels and depth and be at least
/// as large spatially.
template <typename T>
DenseScores dense_scores(const Network<T>& net, Tensor4<T> input) {
  const Shape& patch = net.arch().input();
  if (input.shape.c != patch.c || input.shape.d != patch.d || input.shape.h < patch.h || input.shape.w < patch.w)
    throw ShapeError("dense evaluation: input " + input.shape.str() + " cannot host patches of " + patch.str());
  DenseScores out;
  out.rows = input.shape.h - patch.h + 1;
  out.cols = input.shape.w - patch.w + 1;
  out.values.assign(static_cast<std::size_t>(out.rows) * out.cols, -1.0f);
  detail::DenseRunner<T> runner(net, out);
  runner.run(0, std::move(input), 0, 0, 1, 1);
  return out;
}

}  // namespace dcnn::tensornet
