// Small trainable-layer toolkit: linear, 3x3 conv (im2col + GEMM), ReLU MLPs,
// a conv encoder, and Adam. Backward passes are explicit so gradient-stop
// rules are enforced by simply not calling them.
#pragma once

#include <string>
#include <vector>

#include "upesv/common.hpp"
#include "upesv/rng.hpp"
#include "upesv/tensor.hpp"

namespace upesv::nn {

template <class S>
struct ParamRef {
  std::string name;
  Tensor<S>* value = nullptr;
  Tensor<S>* grad = nullptr;
};

template <class S>
using ParamSet = std::vector<ParamRef<S>>;

template <class S>
double grad_norm(const ParamSet<S>& set) {
  double acc = 0;
  for (const auto& p : set) acc += p.grad->squared_norm();
  return std::sqrt(acc);
}

template <class S>
void zero_grads(const ParamSet<S>& set) {
  for (const auto& p : set) p.grad->zero();
}

// Seeded uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights
// and biases alike.
template <class S>
void init_fan_in(Tensor<S>& t, int64_t fan_in, rng::Stream& rs) {
  const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rs.uniform_sym(bound);
}

template <class S>
void relu_inplace(Tensor<S>& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (t[i] < S(0)) t[i] = S(0);
}

// g *= 1[act > 0]; act is the post-ReLU output.
template <class S>
void relu_backward_inplace(const Tensor<S>& act, Tensor<S>& g) {
  require<ShapeError>(act.same_shape(g), "relu backward shape mismatch");
  for (int64_t i = 0; i < g.numel(); ++i)
    if (act[i] <= S(0)) g[i] = S(0);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------
template <class S>
class Linear {
 public:
  void init(int64_t in_dim, int64_t out_dim, rng::Stream& rs, bool zero = false) {
    in_ = in_dim;
    out_ = out_dim;
    weight = Tensor<S>({out_dim, in_dim});
    bias = Tensor<S>({out_dim});  // biases start at zero
    if (!zero) init_fan_in(weight, in_dim, rs);
    gweight = Tensor<S>::zeros({out_dim, in_dim});
    gbias = Tensor<S>::zeros({out_dim});
  }

  int64_t in_dim() const { return in_; }
  int64_t out_dim() const { return out_; }

  Tensor<S> forward(const Tensor<S>& x) const {
    require<ShapeError>(x.rank() == 2 && x.dim(1) == in_,
                        cat("linear: input dim ", x.dim(1), " != ", in_));
    Tensor<S> y({x.dim(0), out_});
    y.mat2d().noalias() = x.mat2d() * weight.mat2d().transpose();
    y.mat2d().rowwise() += bias.mat(1, out_).row(0);
    return y;
  }

  // Accumulates parameter grads and returns the input grad.
  Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) {
    gweight.mat2d().noalias() += gy.mat2d().transpose() * x.mat2d();
    gbias.mat(1, out_).noalias() += gy.mat2d().colwise().sum();
    Tensor<S> gx(x.shape());
    gx.mat2d().noalias() = gy.mat2d() * weight.mat2d();
    return gx;
  }

  void collect(const std::string& prefix, ParamSet<S>& out) {
    out.push_back({prefix + ".weight", &weight, &gweight});
    out.push_back({prefix + ".bias", &bias, &gbias});
  }

  Tensor<S> weight, bias, gweight, gbias;

 private:
  int64_t in_ = 0, out_ = 0;
};

// ---------------------------------------------------------------------------
// Conv2d, 3x3 kernel, zero padding 1, configurable stride. im2col + GEMM.
// ---------------------------------------------------------------------------
template <class S>
class Conv2d {
 public:
  static constexpr int kK = 3;
  static constexpr int kPad = 1;

  // plane_identity: output channel c starts as a noisy copy of input plane
  // (c mod cin) -- unit center tap on that plane plus uniform mixing noise.
  // The noise is what representation training has to clean up.
  void init(int64_t cin, int64_t cout, int stride, rng::Stream& rs,
            bool plane_identity = false) {
    cin_ = cin;
    cout_ = cout;
    stride_ = stride;
    weight = Tensor<S>({cout, cin * kK * kK});
    bias = Tensor<S>({cout});  // biases start at zero
    const S center_bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cin)));
    const S ring_bound = static_cast<S>(0.25 * center_bound);
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t ci = 0; ci < cin; ++ci)
        for (int t = 0; t < kK * kK; ++t) {
          S bound = t == 4 ? center_bound : ring_bound;
          if (plane_identity) bound = static_cast<S>(bound * kTrunkNoise);
          S v = rs.uniform_sym(bound);
          if (plane_identity && t == 4 && ci == co % cin) v += S(1);
          weight.at(co, ci * kK * kK + t) = v;
        }
    gweight = Tensor<S>::zeros(weight.shape());
    gbias = Tensor<S>::zeros(bias.shape());
  }

  static constexpr double kTrunkNoise = 0.5;

  int64_t out_h(int64_t h) const { return (h + 2 * kPad - kK) / stride_ + 1; }
  int64_t out_w(int64_t w) const { return (w + 2 * kPad - kK) / stride_ + 1; }
  int64_t cin() const { return cin_; }
  int64_t cout() const { return cout_; }

  Tensor<S> im2col(const Tensor<S>& x) const {
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int64_t oh = out_h(h), ow = out_w(w), patch = cin_ * kK * kK;
    Tensor<S> col({n * oh * ow, patch});
    S* out = col.data();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          for (int64_t c = 0; c < cin_; ++c)
            for (int ki = 0; ki < kK; ++ki) {
              int64_t r = i * stride_ - kPad + ki;
              for (int kj = 0; kj < kK; ++kj) {
                int64_t cc = j * stride_ - kPad + kj;
                *out++ = (r >= 0 && r < h && cc >= 0 && cc < w)
                             ? x.at(ni, c, r, cc)
                             : S(0);
              }
            }
        }
    return col;
  }

  // y (N, Cout, oh, ow); col written for backward reuse when non-null.
  Tensor<S> forward(const Tensor<S>& x, Tensor<S>* col_out = nullptr) const {
    require<ShapeError>(x.rank() == 4 && x.dim(1) == cin_,
                        "conv: input channel mismatch");
    const int64_t n = x.dim(0), oh = out_h(x.dim(2)), ow = out_w(x.dim(3));
    Tensor<S> col = im2col(x);
    Tensor<S> rows({n * oh * ow, cout_});
    rows.mat2d().noalias() = col.mat2d() * weight.mat2d().transpose();
    rows.mat2d().rowwise() += bias.mat(1, cout_).row(0);

    Tensor<S> y({n, cout_, oh, ow});
    const S* src = rows.data();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          for (int64_t co = 0; co < cout_; ++co)
            y.at(ni, co, i, j) = src[co];
          src += cout_;
        }
    if (col_out) *col_out = std::move(col);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& col, const Shape& x_shape,
                     const Tensor<S>& gy) {
    const int64_t n = x_shape[0], h = x_shape[2], w = x_shape[3];
    const int64_t oh = out_h(h), ow = out_w(w);
    Tensor<S> grows({n * oh * ow, cout_});
    S* dst = grows.data();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          for (int64_t co = 0; co < cout_; ++co)
            dst[co] = gy.at(ni, co, i, j);
          dst += cout_;
        }

    gweight.mat2d().noalias() += grows.mat2d().transpose() * col.mat2d();
    gbias.mat(1, cout_).noalias() += grows.mat2d().colwise().sum();

    Tensor<S> gcol({n * oh * ow, cin_ * kK * kK});
    gcol.mat2d().noalias() = grows.mat2d() * weight.mat2d();

    Tensor<S> gx(x_shape);
    const S* src = gcol.data();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          for (int64_t c = 0; c < cin_; ++c)
            for (int ki = 0; ki < kK; ++ki) {
              int64_t r = i * stride_ - kPad + ki;
              for (int kj = 0; kj < kK; ++kj) {
                int64_t cc = j * stride_ - kPad + kj;
                if (r >= 0 && r < h && cc >= 0 && cc < w)
                  gx.at(ni, c, r, cc) += *src;
                ++src;
              }
            }
        }
    return gx;
  }

  void collect(const std::string& prefix, ParamSet<S>& out) {
    out.push_back({prefix + ".weight", &weight, &gweight});
    out.push_back({prefix + ".bias", &bias, &gbias});
  }

  Tensor<S> weight, bias, gweight, gbias;

 private:
  int64_t cin_ = 0, cout_ = 0;
  int stride_ = 1;
};

// ---------------------------------------------------------------------------
// MLP: linear (+ReLU) stack, no activation after the last layer.
// ---------------------------------------------------------------------------
template <class S>
struct MlpTrace {
  std::vector<Tensor<S>> xs;  // input to each linear layer
};

template <class S>
class Mlp {
 public:
  void init(const std::vector<int64_t>& dims, rng::Stream& rs,
            bool zero_last = false) {
    require<ConfigError>(dims.size() >= 2, "mlp needs at least in/out dims");
    layers_.resize(dims.size() - 1);
    for (size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].init(dims[l], dims[l + 1], rs,
                      zero_last && l + 1 == layers_.size());
      // Hidden ReLU layers get a small positive bias so no unit starts dead;
      // an all-dead row feeds the epsilon-guarded cosine a zero vector,
      // which is numerically hostile.
      if (l + 1 < layers_.size()) layers_[l].bias.fill(static_cast<S>(0.01));
    }
  }

  int64_t in_dim() const { return layers_.front().in_dim(); }
  int64_t out_dim() const { return layers_.back().out_dim(); }
  size_t depth() const { return layers_.size(); }
  Linear<S>& layer(size_t l) { return layers_[l]; }
  const Linear<S>& layer(size_t l) const { return layers_[l]; }

  Tensor<S> forward(const Tensor<S>& x, MlpTrace<S>* trace = nullptr) const {
    Tensor<S> cur = x;
    if (trace) trace->xs.clear();
    for (size_t l = 0; l < layers_.size(); ++l) {
      if (trace) trace->xs.push_back(cur);
      cur = layers_[l].forward(cur);
      if (l + 1 < layers_.size()) relu_inplace(cur);
    }
    return cur;
  }

  Tensor<S> backward(const MlpTrace<S>& trace, const Tensor<S>& gy) {
    Tensor<S> g = gy;
    for (size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size())
        relu_backward_inplace(trace.xs[l + 1], g);  // xs[l+1] is post-ReLU
      g = layers_[l].backward(trace.xs[l], g);
    }
    return g;
  }

  void collect(const std::string& prefix, ParamSet<S>& out) {
    for (size_t l = 0; l < layers_.size(); ++l)
      layers_[l].collect(cat(prefix, ".linear", l), out);
  }

 private:
  std::vector<Linear<S>> layers_;
};

// ---------------------------------------------------------------------------
// ConvEncoder: conv/ReLU stack; the output feature is the linear head over
// the flattened map concatenated with per-channel spatial summaries
// (softmax-expected row/column plus the channel mean) of both the raw input
// planes and the trunk output, passed through verbatim. Input-plane
// coordinates carry object geometry at single-cell precision from step one;
// trunk summaries and the head are the learnable context. Coordinates are
// centered across channels, so they encode relative layout and are
// insensitive to global shifts. A dense head alone buries the geometry
// (measured: action decodability saturates near chance).
// ---------------------------------------------------------------------------
#ifndef UPESV_SPATIAL_SHARPNESS
#define UPESV_SPATIAL_SHARPNESS 4.0
#endif
inline constexpr double kSpatialSharpness = UPESV_SPATIAL_SHARPNESS;

template <class S>
struct EncoderTrace {
  Tensor<S> input;
  std::vector<Tensor<S>> cols;  // im2col per conv
  std::vector<Tensor<S>> acts;  // post-ReLU activations per conv
  Tensor<S> probs;              // trunk spatial softmax (N, C, h*w)
  Tensor<S> coords;             // trunk expected row/col (N, 2C)
  Tensor<S> flat;               // head input (N, flat)
};

// Soft ego-centric readout: patches of every non-focus plane around the
// focus plane's softmax location. With a one-hot focus plane this is within
// a few percent of an exact gather of the neighborhood. The block is scaled
// down so squared-error objectives on the features barely register it while
// downstream layers can still amplify it through their weights.
template <class S>
void ego_readout(const S* map, int64_t channels, int64_t h, int64_t w,
                 int64_t focus, int window, S* out) {
  constexpr double kEgoScale = 0.05;
  const int64_t plane = h * w;
  const int64_t half = window / 2;
  const S* f = map + focus * plane;
  double mx = -1e300;
  for (int64_t i = 0; i < plane; ++i)
    mx = std::max(mx, 2.0 * kSpatialSharpness * static_cast<double>(f[i]));
  double z = 0;
  std::vector<double> p(static_cast<size_t>(plane));
  for (int64_t i = 0; i < plane; ++i) {
    p[static_cast<size_t>(i)] =
        std::exp(2.0 * kSpatialSharpness * static_cast<double>(f[i]) - mx);
    z += p[static_cast<size_t>(i)];
  }
  int64_t slot = 0;
  for (int64_t c = 0; c < channels; ++c) {
    if (c == focus) continue;
    const S* src = map + c * plane;
    for (int64_t dr = -half; dr <= half; ++dr)
      for (int64_t dc = -half; dc <= half; ++dc) {
        double acc = 0;
        for (int64_t r = 0; r < h; ++r) {
          int64_t rr = r + dr;
          if (rr < 0 || rr >= h) continue;
          for (int64_t cc = 0; cc < w; ++cc) {
            int64_t cc2 = cc + dc;
            if (cc2 < 0 || cc2 >= w) continue;
            acc += (p[static_cast<size_t>(r * w + cc)] / z) *
                   static_cast<double>(src[rr * w + cc2]);
          }
        }
        out[slot++] = static_cast<S>(kEgoScale * acc);
      }
  }
}

// Per-channel spatial summary of a (C, h, w) map: softmax-expected row and
// column and the mean, coordinates centered across channels. Writes 3C
// values: [rel_row x C, rel_col x C, mean x C]. Returns softmax probs and the
// uncentered expectations when out-params are given (backward needs them).
template <class S>
void spatial_summary(const S* map, int64_t channels, int64_t h, int64_t w,
                     S* out, S* probs = nullptr, S* raw_coords = nullptr) {
  const int64_t plane = h * w;
  auto nrow = [&](int64_t i) {
    return h > 1 ? 2.0 * static_cast<double>(i / w) / (h - 1) - 1.0 : 0.0;
  };
  auto ncol = [&](int64_t i) {
    return w > 1 ? 2.0 * static_cast<double>(i % w) / (w - 1) - 1.0 : 0.0;
  };
  double mr = 0, mc = 0;
  for (int64_t c = 0; c < channels; ++c) {
    const S* a = map + c * plane;
    double mx = -1e300;
    for (int64_t i = 0; i < plane; ++i)
      mx = std::max(mx, kSpatialSharpness * static_cast<double>(a[i]));
    double z = 0;
    std::vector<double> e(static_cast<size_t>(plane));
    for (int64_t i = 0; i < plane; ++i) {
      e[static_cast<size_t>(i)] =
          std::exp(kSpatialSharpness * static_cast<double>(a[i]) - mx);
      z += e[static_cast<size_t>(i)];
    }
    double er = 0, ec = 0, mean = 0;
    for (int64_t i = 0; i < plane; ++i) {
      double pi = e[static_cast<size_t>(i)] / z;
      if (probs) probs[c * plane + i] = static_cast<S>(pi);
      er += pi * nrow(i);
      ec += pi * ncol(i);
      mean += static_cast<double>(a[i]);
    }
    out[c] = static_cast<S>(er);
    out[channels + c] = static_cast<S>(ec);
    out[2 * channels + c] = static_cast<S>(mean / static_cast<double>(plane));
    if (raw_coords) {
      raw_coords[c] = static_cast<S>(er);
      raw_coords[channels + c] = static_cast<S>(ec);
    }
    mr += er;
    mc += ec;
  }
  mr /= static_cast<double>(channels);
  mc /= static_cast<double>(channels);
  for (int64_t c = 0; c < channels; ++c) {
    out[c] = static_cast<S>(static_cast<double>(out[c]) - mr);
    out[channels + c] = static_cast<S>(static_cast<double>(out[channels + c]) - mc);
  }
}


template <class S>
class ConvEncoder {
 public:
  void init(int64_t in_channels, int64_t in_h, int64_t in_w,
            const std::vector<int64_t>& channels, const std::vector<int>& strides,
            int64_t out_dim, rng::Stream& rs, bool zero_head = false,
            int ego_window = 7) {
    require<ConfigError>(channels.size() == strides.size(),
                         "encoder: channels/strides length mismatch");
    require<ConfigError>(ego_window >= 1 && ego_window % 2 == 1,
                         "encoder: ego_window must be odd and positive");
    in_channels_ = in_channels;
    in_h_ = in_h;
    in_w_ = in_w;
    ego_window_ = ego_window;
    convs_.resize(channels.size());
    int64_t c = in_channels, h = in_h, w = in_w;
    for (size_t l = 0; l < convs_.size(); ++l) {
      convs_[l].init(c, channels[l], strides[l], rs);
      h = convs_[l].out_h(h);
      w = convs_[l].out_w(w);
      c = channels[l];
      require<ConfigError>(h >= 1 && w >= 1, "encoder: spatial size collapsed");
    }
    out_c_ = c;
    out_h_ = h;
    out_w_ = w;
    flat_dim_ = c * h * w;
    ego_dim_ = (in_channels - 1) * ego_window_ * ego_window_;
    summary_dim_ = 3 * c + 3 * in_channels + ego_dim_;
    require<ConfigError>(out_dim > summary_dim_,
                         "encoder: feature dim must exceed the spatial summary");
    head_.init(flat_dim_, out_dim - summary_dim_, rs, zero_head);
  }

  int64_t out_dim() const { return head_.out_dim() + summary_dim_; }
  int64_t summary_dim() const { return summary_dim_; }
  int64_t in_channels() const { return in_channels_; }
  int64_t flat_dim() const { return flat_dim_; }
  size_t n_convs() const { return convs_.size(); }
  Conv2d<S>& conv(size_t l) { return convs_[l]; }
  Linear<S>& head() { return head_; }

  // x (N, C, H, W) -> features (N, out_dim)
  Tensor<S> forward(const Tensor<S>& x, EncoderTrace<S>* trace = nullptr) const {
    require<ShapeError>(x.rank() == 4 && x.dim(1) == in_channels_ &&
                            x.dim(2) == in_h_ && x.dim(3) == in_w_,
                        "encoder: observation shape mismatch");
    if (trace) {
      trace->input = x;
      trace->cols.clear();
      trace->acts.clear();
    }
    Tensor<S> cur = x;
    for (const auto& conv : convs_) {
      Tensor<S> col;
      cur = conv.forward(cur, trace ? &col : nullptr);
      relu_inplace(cur);
      if (trace) {
        trace->cols.push_back(std::move(col));
        trace->acts.push_back(cur);
      }
    }

    const int64_t n = x.dim(0), plane = out_h_ * out_w_;
    Tensor<S> flat = cur.reshaped({n, flat_dim_});
    Tensor<S> head_out = head_.forward(flat);
    const int64_t head_dim = head_.out_dim();
    const int64_t trunk_summary = 3 * out_c_;

    Tensor<S> out({n, head_dim + summary_dim_});
    Tensor<S> probs({n, out_c_, plane});
    Tensor<S> coords({n, 2 * out_c_});
    for (int64_t ni = 0; ni < n; ++ni) {
      S* dst = out.data() + ni * (head_dim + summary_dim_);
      std::copy_n(head_out.data() + ni * head_dim, head_dim, dst);
      // Trunk summary (differentiable; probs/coords kept for backward).
      spatial_summary(cur.data() + ni * flat_dim_, out_c_, out_h_, out_w_,
                      dst + head_dim, probs.data() + ni * out_c_ * plane,
                      coords.data() + ni * 2 * out_c_);
      // Input-plane summary and ego readout: parameter-free geometry of the
      // observation itself; nothing propagates back through them.
      spatial_summary(x.data() + ni * in_channels_ * in_h_ * in_w_,
                      in_channels_, in_h_, in_w_,
                      dst + head_dim + trunk_summary);
      ego_readout(x.data() + ni * in_channels_ * in_h_ * in_w_, in_channels_,
                  in_h_, in_w_, /*focus=*/0, ego_window_,
                  dst + head_dim + trunk_summary + 3 * in_channels_);
    }
    if (trace) {
      trace->probs = probs;
      trace->coords = coords;
      trace->flat = flat;
    }
    return out;
  }

  Tensor<S> backward(const EncoderTrace<S>& trace, const Tensor<S>& gy) {
    const Tensor<S>& act = trace.acts.back();
    const int64_t n = act.dim(0), plane = out_h_ * out_w_;
    const int64_t head_dim = head_.out_dim();

    // Split the output grad into the head part and the summary part.
    Tensor<S> ghead({n, head_dim});
    for (int64_t ni = 0; ni < n; ++ni)
      std::copy_n(gy.data() + ni * (head_dim + summary_dim_), head_dim,
                  ghead.data() + ni * head_dim);
    Tensor<S> gflat = head_.backward(trace.flat, ghead);

    Tensor<S> g = gflat.reshaped(act.shape());
    for (int64_t ni = 0; ni < n; ++ni) {
      // Only the trunk summary backpropagates; the input-plane summary has
      // no parameters upstream.
      const S* gsummary = gy.data() + ni * (head_dim + summary_dim_) + head_dim;
      double gmr = 0, gmc = 0;
      for (int64_t c = 0; c < out_c_; ++c) {
        gmr += static_cast<double>(gsummary[c]);
        gmc += static_cast<double>(gsummary[out_c_ + c]);
      }
      gmr /= static_cast<double>(out_c_);
      gmc /= static_cast<double>(out_c_);
      for (int64_t c = 0; c < out_c_; ++c) {
        const double der = static_cast<double>(gsummary[c]) - gmr;
        const double dec = static_cast<double>(gsummary[out_c_ + c]) - gmc;
        const double dmean = static_cast<double>(gsummary[2 * out_c_ + c]) /
                             static_cast<double>(plane);
        const S* p = trace.probs.data() + (ni * out_c_ + c) * plane;
        const double er = static_cast<double>(trace.coords.at(ni, c));
        const double ec = static_cast<double>(trace.coords.at(ni, out_c_ + c));
        S* gslot = g.data() + (ni * out_c_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          double dp = kSpatialSharpness * static_cast<double>(p[i]) *
                      ((norm_row(i) - er) * der + (norm_col(i) - ec) * dec);
          gslot[i] += static_cast<S>(dp + dmean);
        }
      }
    }

    for (size_t l = convs_.size(); l-- > 0;) {
      relu_backward_inplace(trace.acts[l], g);
      const Shape& in_shape =
          l == 0 ? trace.input.shape() : trace.acts[l - 1].shape();
      g = convs_[l].backward(trace.cols[l], in_shape, g);
    }
    return g;
  }

  void collect(const std::string& prefix, ParamSet<S>& out) {
    for (size_t l = 0; l < convs_.size(); ++l)
      convs_[l].collect(cat(prefix, ".conv", l), out);
    head_.collect(prefix + ".head", out);
  }

 private:
  double norm_row(int64_t i) const {
    int64_t r = i / out_w_;
    return out_h_ > 1 ? 2.0 * static_cast<double>(r) / (out_h_ - 1) - 1.0 : 0.0;
  }
  double norm_col(int64_t i) const {
    int64_t c = i % out_w_;
    return out_w_ > 1 ? 2.0 * static_cast<double>(c) / (out_w_ - 1) - 1.0 : 0.0;
  }

  std::vector<Conv2d<S>> convs_;
  Linear<S> head_;
  int64_t in_channels_ = 0, in_h_ = 0, in_w_ = 0, flat_dim_ = 0;
  int64_t out_c_ = 0, out_h_ = 0, out_w_ = 0, summary_dim_ = 0, ego_dim_ = 0;
  int ego_window_ = 7;
};

// ---------------------------------------------------------------------------
// Adam with bias correction. Owns first/second-moment state per parameter;
// parameter addresses must stay stable for its lifetime.
// ---------------------------------------------------------------------------
template <class S>
class Adam {
 public:
  Adam() = default;
  Adam(ParamSet<S> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Tensor<S>::zeros(p.value->shape()));
      v_.push_back(Tensor<S>::zeros(p.value->shape()));
    }
  }

  const ParamSet<S>& params() const { return params_; }
  int64_t step_count() const { return t_; }

  void zero_grad() { zero_grads(params_); }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = *params_[i].value;
      const Tensor<S>& g = *params_[i].grad;
      Tensor<S>& m = m_[i];
      Tensor<S>& v = v_[i];
      for (int64_t j = 0; j < p.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = b1_ * static_cast<double>(m[j]) + (1.0 - b1_) * gj;
        const double vj = b2_ * static_cast<double>(v[j]) + (1.0 - b2_) * gj * gj;
        m[j] = static_cast<S>(mj);
        v[j] = static_cast<S>(vj);
        p[j] -= static_cast<S>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

 private:
  ParamSet<S> params_;
  std::vector<Tensor<S>> m_, v_;
  double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
};

}  // namespace upesv::nn
