// All trainable components and their forward contracts: visual encoder plus
// its EMA mirror, latent predictor, VQ codebook, action projector, contrast
// head, latent world model, and the policy predictor. The encoder and action
// projector are shared between the video labeling path and the policy path;
// exactly one instance of each exists here.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "upesv/nn.hpp"
#include "upesv/rng.hpp"
#include "upesv/tensor.hpp"

namespace upesv::nets {

struct BundleDims {
  int64_t obs_channels = 5, obs_h = 8, obs_w = 8;
  int64_t history_k = 1;
  int64_t feature_dim = 264;  // encoder output
  int64_t latent_dim = 16;    // latent action
  int64_t codebook_size = 16;
  int n_actions = 5;
  std::vector<int64_t> conv_channels = {16, 16};
  std::vector<int> conv_strides = {1, 1};
  int ego_window = 7;
  int64_t latent_hidden = 192;
  int64_t contrast_hidden = 128;
  int64_t action_hidden = 64;
  int64_t world_hidden = 192;
  int64_t policy_hidden = 256;

  void validate() const {
    require<ConfigError>(obs_channels >= 4, "dims: obs_channels must be >= 4");
    require<ConfigError>(history_k >= 0, "dims: history_k must be >= 0");
    require<ConfigError>(feature_dim >= 1 && latent_dim >= 1,
                         "dims: feature/latent dims must be positive");
    require<ConfigError>(codebook_size >= n_actions,
                         "dims: codebook_size must be >= n_actions");
    require<ConfigError>(!conv_channels.empty() &&
                             conv_channels.size() == conv_strides.size(),
                         "dims: conv channels/strides mismatch");
  }
};

enum class Component {
  kEncoder,
  kEncoderEma,
  kContrastProj,
  kContrastScale,
  kLatentPredictor,
  kCodebook,
  kActionProjector,
  kWorldModel,
  kPolicyPredictor,
};

inline const char* component_name(Component c) {
  switch (c) {
    case Component::kEncoder: return "encoder";
    case Component::kEncoderEma: return "encoder_ema";
    case Component::kContrastProj: return "contrast_proj";
    case Component::kContrastScale: return "contrast_scale";
    case Component::kLatentPredictor: return "latent_predictor";
    case Component::kCodebook: return "codebook";
    case Component::kActionProjector: return "action_projector";
    case Component::kWorldModel: return "world_model";
    case Component::kPolicyPredictor: return "policy_predictor";
  }
  return "?";
}

inline constexpr Component kAllComponents[] = {
    Component::kEncoder,        Component::kEncoderEma,
    Component::kContrastProj,   Component::kContrastScale,
    Component::kLatentPredictor, Component::kCodebook,
    Component::kActionProjector, Component::kWorldModel,
    Component::kPolicyPredictor};

template <class S>
class ModelBundle {
 public:
  ModelBundle(const BundleDims& d, uint64_t seed) : dims(d) {
    dims.validate();
    auto stream = [seed](uint64_t tag) {
      return rng::Stream::derive(seed, {0x6d6f64656cull, tag});
    };
    rng::Stream rs;

    rs = stream(0);
    encoder.init(dims.obs_channels, dims.obs_h, dims.obs_w, dims.conv_channels,
                 dims.conv_strides, dims.feature_dim, rs, /*zero_head=*/false,
                 dims.ego_window);
    encoder_ema = encoder;  // starts as an exact copy

    rs = stream(1);
    contrast_proj.init({dims.feature_dim, dims.contrast_hidden, dims.feature_dim},
                       rs);
    contrast_log_scale = Tensor<S>::zeros({1});
    g_contrast_log_scale = Tensor<S>::zeros({1});

    // The latent predictor's head keeps a live init: an all-zero latent head
    // collapses the codebook immediately (every sample lands on the same
    // nearest code and the commitment terms cement it).
    rs = stream(2);
    latent_predictor.init({(dims.history_k + 2) * dims.feature_dim,
                           dims.latent_hidden, dims.latent_dim},
                          rs);

    // Codebook starts tightly around the origin, inside the initial spread of
    // the predictor outputs, so the alignment term can claim codes early.
    rs = stream(3);
    codebook = Tensor<S>({dims.codebook_size, dims.latent_dim});
    for (int64_t i = 0; i < codebook.numel(); ++i)
      codebook[i] = rs.uniform_sym(static_cast<S>(0.05));
    g_codebook = Tensor<S>::zeros(codebook.shape());

    rs = stream(4);
    action_projector.init({dims.latent_dim, dims.action_hidden, dims.n_actions},
                          rs);

    // Live head here as well: a zeroed world-model head passes no gradient to
    // the latent path at the start, losing the race against the commitment
    // pull that collapses the codebook.
    rs = stream(5);
    world_model.init({dims.feature_dim + dims.latent_dim, dims.world_hidden,
                      dims.world_hidden, dims.feature_dim},
                     rs);

    // The policy predictor is the one three-layer MLP: it has to fold wall
    // geometry into a path direction, which two layers measurably cannot.
    rs = stream(6);
    policy_predictor.init({(dims.history_k + 1) * dims.feature_dim,
                           dims.policy_hidden, dims.policy_hidden,
                           dims.latent_dim},
                          rs);
  }

  nn::ParamSet<S> params(Component c) {
    nn::ParamSet<S> out;
    switch (c) {
      case Component::kEncoder: encoder.collect("encoder", out); break;
      case Component::kEncoderEma: encoder_ema.collect("encoder_ema", out); break;
      case Component::kContrastProj: contrast_proj.collect("contrast_proj", out); break;
      case Component::kContrastScale:
        out.push_back({"contrast_scale.w", &contrast_log_scale, &g_contrast_log_scale});
        break;
      case Component::kLatentPredictor:
        latent_predictor.collect("latent_predictor", out);
        break;
      case Component::kCodebook:
        out.push_back({"codebook.rows", &codebook, &g_codebook});
        break;
      case Component::kActionProjector:
        action_projector.collect("action_projector", out);
        break;
      case Component::kWorldModel: world_model.collect("world_model", out); break;
      case Component::kPolicyPredictor:
        policy_predictor.collect("policy_predictor", out);
        break;
    }
    return out;
  }

  nn::ParamSet<S> params(std::initializer_list<Component> comps) {
    nn::ParamSet<S> out;
    for (Component c : comps)
      for (auto& p : params(c)) out.push_back(p);
    return out;
  }

  // Per-loss trainable sets; the EMA encoder appears in none of them.
  nn::ParamSet<S> params_vsc() {
    return params({Component::kEncoder, Component::kContrastProj,
                   Component::kContrastScale});
  }
  nn::ParamSet<S> params_lfr() {
    return params({Component::kLatentPredictor, Component::kCodebook,
                   Component::kWorldModel});
  }
  nn::ParamSet<S> params_gap() { return params({Component::kActionProjector}); }
  nn::ParamSet<S> params_upc() { return params({Component::kPolicyPredictor}); }

  nn::ParamSet<S> params_all() {
    nn::ParamSet<S> out;
    for (Component c : kAllComponents)
      for (auto& p : params(c)) out.push_back(p);
    return out;
  }

  void zero_all_grads() { nn::zero_grads(params_all()); }

  BundleDims dims;
  nn::ConvEncoder<S> encoder;      // shared by labeling model and policy
  nn::ConvEncoder<S> encoder_ema;  // contrast target; never touched by Adam
  nn::Mlp<S> contrast_proj;
  Tensor<S> contrast_log_scale;  // scalar w, score scale = exp(w)
  Tensor<S> g_contrast_log_scale;
  nn::Mlp<S> latent_predictor;
  Tensor<S> codebook;  // (K, latent_dim)
  Tensor<S> g_codebook;
  nn::Mlp<S> action_projector;
  nn::Mlp<S> world_model;
  nn::Mlp<S> policy_predictor;
};

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> encode(const ModelBundle<S>& b, const Tensor<S>& obs,
                 nn::EncoderTrace<S>* trace = nullptr) {
  return b.encoder.forward(obs, trace);
}

template <class S>
Tensor<S> encode_ema(const ModelBundle<S>& b, const Tensor<S>& obs) {
  return b.encoder_ema.forward(obs);
}

// Concatenate (hist..., t, t+1) feature rows into the latent predictor input.
template <class S>
Tensor<S> concat_latent_input(const Tensor<S>& feat_hist, const Tensor<S>& feat_t,
                              const Tensor<S>& feat_t1) {
  const int64_t n = feat_t.dim(0), d = feat_t.dim(1);
  const int64_t hist_cols = feat_hist.numel() / std::max<int64_t>(n, 1);
  Tensor<S> in({n, hist_cols + 2 * d});
  for (int64_t i = 0; i < n; ++i) {
    S* dst = in.data() + i * (hist_cols + 2 * d);
    std::copy_n(feat_hist.data() + i * hist_cols, hist_cols, dst);
    std::copy_n(feat_t.data() + i * d, d, dst + hist_cols);
    std::copy_n(feat_t1.data() + i * d, d, dst + hist_cols + d);
  }
  return in;
}

template <class S>
Tensor<S> concat_policy_input(const Tensor<S>& feat_hist, const Tensor<S>& feat_t) {
  const int64_t n = feat_t.dim(0), d = feat_t.dim(1);
  const int64_t hist_cols = feat_hist.numel() / std::max<int64_t>(n, 1);
  Tensor<S> in({n, hist_cols + d});
  for (int64_t i = 0; i < n; ++i) {
    S* dst = in.data() + i * (hist_cols + d);
    std::copy_n(feat_hist.data() + i * hist_cols, hist_cols, dst);
    std::copy_n(feat_t.data() + i * d, d, dst + hist_cols);
  }
  return in;
}

template <class S>
Tensor<S> predict_latent(const ModelBundle<S>& b, const Tensor<S>& feat_hist,
                         const Tensor<S>& feat_t, const Tensor<S>& feat_t1,
                         nn::MlpTrace<S>* trace = nullptr) {
  return b.latent_predictor.forward(
      concat_latent_input(feat_hist, feat_t, feat_t1), trace);
}

template <class S>
Tensor<S> policy_latent(const ModelBundle<S>& b, const Tensor<S>& feat_hist,
                        const Tensor<S>& feat_t,
                        nn::MlpTrace<S>* trace = nullptr) {
  return b.policy_predictor.forward(concat_policy_input(feat_hist, feat_t),
                                    trace);
}

// Nearest codebook row by squared distance; ties take the lowest index.
// Straight-through backward: a gradient on the quantized rows is handed to
// the pre-quantization vectors unchanged.
template <class S>
struct Quantized {
  std::vector<int> indices;
  Tensor<S> rows;  // (N, latent_dim), codebook rows at indices
};

template <class S>
Quantized<S> quantize(const Tensor<S>& codebook, const Tensor<S>& pre) {
  require<ShapeError>(codebook.rank() == 2 && pre.rank() == 2 &&
                          codebook.dim(1) == pre.dim(1),
                      "quantize: dim mismatch");
  require<TrainError>(pre.all_finite(), "quantize: non-finite latent input");
  const int64_t n = pre.dim(0), d = pre.dim(1), k = codebook.dim(0);
  Quantized<S> q;
  q.indices.resize(static_cast<size_t>(n));
  q.rows = Tensor<S>({n, d});
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    double best_d = -1;
    for (int64_t c = 0; c < k; ++c) {
      double acc = 0;
      for (int64_t j = 0; j < d; ++j) {
        double diff = static_cast<double>(pre.at(i, j)) -
                      static_cast<double>(codebook.at(c, j));
        acc += diff * diff;
      }
      if (best_d < 0 || acc < best_d) {
        best_d = acc;
        best = static_cast<int>(c);
      }
    }
    q.indices[static_cast<size_t>(i)] = best;
    for (int64_t j = 0; j < d; ++j) q.rows.at(i, j) = codebook.at(best, j);
  }
  return q;
}

template <class S>
Tensor<S> project_action(const ModelBundle<S>& b, const Tensor<S>& z_q,
                         nn::MlpTrace<S>* trace = nullptr) {
  return b.action_projector.forward(z_q, trace);
}

template <class S>
Tensor<S> world_forward(const ModelBundle<S>& b, const Tensor<S>& feat_t,
                        const Tensor<S>& z_q, nn::MlpTrace<S>* trace = nullptr) {
  const int64_t n = feat_t.dim(0), d = feat_t.dim(1), dz = z_q.dim(1);
  Tensor<S> in({n, d + dz});
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(feat_t.data() + i * d, d, in.data() + i * (d + dz));
    std::copy_n(z_q.data() + i * dz, dz, in.data() + i * (d + dz) + d);
  }
  return b.world_model.forward(in, trace);
}

// Row argmax with lowest-index tie-breaking.
template <class S>
int argmax_row(const Tensor<S>& logits, int64_t row) {
  const int64_t n = logits.dim(1);
  int best = 0;
  for (int64_t j = 1; j < n; ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = static_cast<int>(j);
  return best;
}

// History frames arrive as (N, k, C, H, W); encode them as one flat batch and
// return per-sample concatenated history features (N, k * feature_dim).
template <class S>
Tensor<S> encode_history(const ModelBundle<S>& b, const Tensor<S>& o_hist,
                         int64_t n) {
  const int64_t k = b.dims.history_k;
  if (k == 0) return Tensor<S>({n, 0});
  Tensor<S> flat = o_hist.reshaped({n * k, b.dims.obs_channels, b.dims.obs_h,
                                    b.dims.obs_w});
  Tensor<S> feats = encode(b, flat);  // (n*k, d_f)
  return feats.reshaped({n, k * b.dims.feature_dim});
}

// The full video labeling path: encode, predict, quantize, project.
template <class S>
struct VideoLabel {
  Quantized<S> latent;
  Tensor<S> logits;  // (N, n_actions)
};

template <class S>
VideoLabel<S> label_video(const ModelBundle<S>& b, const Tensor<S>& o_t,
                          const Tensor<S>& o_t1, const Tensor<S>& o_hist) {
  Tensor<S> f_t = encode(b, o_t);
  Tensor<S> f_t1 = encode(b, o_t1);
  Tensor<S> f_h = encode_history(b, o_hist, o_t.dim(0));
  Tensor<S> pre = predict_latent(b, f_h, f_t, f_t1);
  VideoLabel<S> out;
  out.latent = quantize(b.codebook, pre);
  out.logits = project_action(b, out.latent.rows);
  return out;
}

// Trainable scalar-scaled cosine between the projected anchor and the target:
// score = exp(w) * cos(u(anchor), target), epsilon-guarded denominators.
inline constexpr double kCosEps = 1e-8;

template <class S>
S contrast_score(const ModelBundle<S>& b, const Tensor<S>& anchor,
                 const Tensor<S>& target) {
  require<ShapeError>(anchor.numel() == b.dims.feature_dim &&
                          target.numel() == b.dims.feature_dim,
                      "contrast_score: feature dim mismatch");
  Tensor<S> u = b.contrast_proj.forward(anchor.reshaped({1, b.dims.feature_dim}));
  double dot = 0, nu = 0, nt = 0;
  for (int64_t j = 0; j < b.dims.feature_dim; ++j) {
    double a = static_cast<double>(u[j]);
    double t = static_cast<double>(target[j]);
    dot += a * t;
    nu += a * a;
    nt += t * t;
  }
  double cosv = dot / ((std::sqrt(nu) + kCosEps) * (std::sqrt(nt) + kCosEps));
  return static_cast<S>(std::exp(static_cast<double>(b.contrast_log_scale[0])) *
                        cosv);
}

// EMA update, p_ema <- (1 - m) * p_ema + m * p. The mirror never sees Adam.
template <class S>
void ema_update(ModelBundle<S>& b, double m) {
  require<ConfigError>(m >= 0.0 && m <= 1.0, "ema_update: momentum outside [0,1]");
  auto src = b.params(Component::kEncoder);
  auto dst = b.params(Component::kEncoderEma);
  require<ShapeError>(src.size() == dst.size(), "ema_update: parameter list mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    Tensor<S>& p = *src[i].value;
    Tensor<S>& e = *dst[i].value;
    require<ShapeError>(p.same_shape(e), "ema_update: shape mismatch");
    for (int64_t j = 0; j < p.numel(); ++j)
      e[j] = static_cast<S>((1.0 - m) * static_cast<double>(e[j]) +
                            m * static_cast<double>(p[j]));
  }
}

}  // namespace upesv::nets
