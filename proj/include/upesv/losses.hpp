// The four training objectives and the random-shift augmentation.
//
// Gradient routing is by construction: each loss only ever calls backward on
// the components it is allowed to train, so the stop-gradient contract is
//   VSC -> encoder, contrast head, contrast scale
//   LFR -> latent predictor, codebook, world model   (both encoder branches stopped)
//   GAP -> action projector                          (stopped at the predictor input)
//   UPC -> policy predictor                          (labeling path fully stopped)
// and the EMA encoder never receives a gradient anywhere.
#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "upesv/databank.hpp"
#include "upesv/nets.hpp"
#include "upesv/rng.hpp"

namespace upesv::losses {

struct LossReport {
  std::string name;  // VSC | LFR | GAP | UPC
  double value = 0;
  std::vector<std::pair<std::string, double>> aux;

  double aux_value(const std::string& key) const {
    for (const auto& [k, v] : aux)
      if (k == key) return v;
    throw DataError(cat("loss report ", name, " has no aux '", key, "'"));
  }

  void check_finite() const {
    if (std::isfinite(value)) return;
    std::string diag = cat(name, " diverged: value=", value);
    for (const auto& [k, v] : aux) diag += cat(" ", k, "=", v);
    throw TrainError(diag);
  }
};

// ---------------------------------------------------------------------------
// Random shift: integer offsets drawn uniformly from [-s, s]^2, content
// translated, vacated cells zero-filled. s = 0 is the identity.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> random_shift(const Tensor<S>& obs, int s, rng::Stream& rs) {
  require<ConfigError>(obs.rank() == 3, "random_shift: expected (C,H,W)");
  const int64_t c = obs.dim(0), h = obs.dim(1), w = obs.dim(2);
  require<ConfigError>(s >= 0, "random_shift: s must be >= 0");
  require<ConfigError>(s < std::min(h, w),
                       cat("random_shift: s=", s, " degenerate for ", h, "x", w));
  int dr = rs.uniform_int(-s, s);
  int dc = rs.uniform_int(-s, s);
  if (dr == 0 && dc == 0) return obs;
  Tensor<S> out(obs.shape());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r) {
      int64_t sr = r - dr;
      if (sr < 0 || sr >= h) continue;
      for (int64_t cc = 0; cc < w; ++cc) {
        int64_t sc = cc - dc;
        if (sc >= 0 && sc < w)
          out[(ch * h + r) * w + cc] = obs[(ch * h + sr) * w + sc];
      }
    }
  return out;
}

namespace detail {

// Row-wise L2 normalization with epsilon-guarded denominators. Returns the
// raw norms for the backward pass.
template <class S>
std::vector<double> normalize_rows(Tensor<S>& x) {
  const int64_t n = x.dim(0), d = x.dim(1);
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < d; ++j) {
      double v = static_cast<double>(x.at(i, j));
      acc += v * v;
    }
    double norm = std::sqrt(acc);
    norms[static_cast<size_t>(i)] = norm;
    double inv = 1.0 / (norm + nets::kCosEps);
    for (int64_t j = 0; j < d; ++j)
      x.at(i, j) = static_cast<S>(static_cast<double>(x.at(i, j)) * inv);
  }
  return norms;
}

inline double usage_fraction(const std::vector<int>& indices, int64_t k) {
  std::set<int> used(indices.begin(), indices.end());
  return static_cast<double>(used.size()) / static_cast<double>(k);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Visual shift contrast: InfoNCE over a batch, anchors through the live
// encoder + contrast head, targets through the EMA encoder (no gradient).
// ---------------------------------------------------------------------------
template <class S>
LossReport loss_vsc(nets::ModelBundle<S>& b, const Tensor<S>& obs, int s,
                    rng::Stream& rs, bool with_grad) {
  require<ConfigError>(obs.rank() == 4, "loss_vsc: expected (N,C,H,W)");
  const int64_t n = obs.dim(0);
  require<ConfigError>(n >= 2, "loss_vsc: need N >= 2 for in-batch negatives");
  const int64_t d = b.dims.feature_dim;

  Tensor<S> anchors(obs.shape()), targets(obs.shape());
  {
    // Two independent shifts per image, anchor draw first.
    const Shape img_shape{obs.dim(1), obs.dim(2), obs.dim(3)};
    const int64_t fb = Tensor<S>::count(img_shape);
    for (int64_t i = 0; i < n; ++i) {
      Tensor<S> img(img_shape);
      std::copy_n(obs.data() + i * fb, fb, img.data());
      Tensor<S> a = random_shift(img, s, rs);
      Tensor<S> t = random_shift(img, s, rs);
      std::copy_n(a.data(), fb, anchors.data() + i * fb);
      std::copy_n(t.data(), fb, targets.data() + i * fb);
    }
  }

  nn::EncoderTrace<S> enc_trace;
  Tensor<S> feat_a = b.encoder.forward(anchors, with_grad ? &enc_trace : nullptr);
  Tensor<S> feat_t = b.encoder_ema.forward(targets);

  nn::MlpTrace<S> proj_trace;
  Tensor<S> u = b.contrast_proj.forward(feat_a, with_grad ? &proj_trace : nullptr);

  Tensor<S> u_hat = u;
  Tensor<S> t_hat = feat_t;
  auto u_norms = detail::normalize_rows(u_hat);
  detail::normalize_rows(t_hat);

  Tensor<S> cos({n, n});
  cos.mat2d().noalias() = u_hat.mat2d() * t_hat.mat2d().transpose();

  const double tau = std::exp(static_cast<double>(b.contrast_log_scale[0]));
  // Each logit is evaluated exactly once; the logsumexp and the positive term
  // reuse the stored value so the loss is an exact zero at saturation.
  std::vector<double> logit(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      logit[static_cast<size_t>(i * n + j)] =
          tau * static_cast<double>(cos.at(i, j));

  double loss = 0, pos_sim = 0;
  std::vector<double> lse(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logit.data() + i * n;
    double mx = -1e300;
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    double acc = 0;
    for (int64_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
    lse[static_cast<size_t>(i)] = mx + std::log(acc);
    loss += lse[static_cast<size_t>(i)] - row[i];
    pos_sim += static_cast<double>(cos.at(i, i));
  }
  loss /= static_cast<double>(n);
  pos_sim /= static_cast<double>(n);

  LossReport rep{"VSC", loss,
                 {{"positive_similarity", pos_sim}, {"temperature", tau}}};
  rep.check_finite();
  if (!with_grad) return rep;

  // d(loss)/d(logit_ij) = (softmax_ij - delta_ij) / N, logits = tau * cos.
  Tensor<S> dlogit({n, n});
  double dw = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double lv = logit[static_cast<size_t>(i * n + j)];
      double p = std::exp(lv - lse[static_cast<size_t>(i)]);
      double g = (p - (i == j ? 1.0 : 0.0)) / static_cast<double>(n);
      dlogit.at(i, j) = static_cast<S>(g);
      dw += g * lv;  // d(logit)/dw = logit, since logit = e^w cos
    }
  b.g_contrast_log_scale[0] += static_cast<S>(dw);

  // dcos = tau * dlogit; d(u_hat) = dcos * t_hat.
  Tensor<S> du_hat({n, d});
  du_hat.mat2d().noalias() =
      (dlogit.mat2d() * static_cast<S>(tau)) * t_hat.mat2d();

  // Undo the row normalization: u_hat = u / (|u| + eps).
  Tensor<S> du({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const double norm = u_norms[static_cast<size_t>(i)];
    const double denom = norm + nets::kCosEps;
    double dot = 0;
    for (int64_t j = 0; j < d; ++j)
      dot += static_cast<double>(du_hat.at(i, j)) * static_cast<double>(u.at(i, j));
    const double scale2 = norm > 0 ? dot / (norm * denom * denom) : 0.0;
    for (int64_t j = 0; j < d; ++j)
      du.at(i, j) = static_cast<S>(static_cast<double>(du_hat.at(i, j)) / denom -
                                   scale2 * static_cast<double>(u.at(i, j)));
  }

  Tensor<S> dfeat = b.contrast_proj.backward(proj_trace, du);
  b.encoder.backward(enc_trace, dfeat);  // EMA branch stays untouched
  return rep;
}

// ---------------------------------------------------------------------------
// Features for the pair losses. Encoding is gradient-free in LFR/GAP/UPC, so
// trainers may precompute these once the encoder is frozen.
// ---------------------------------------------------------------------------
template <class S>
struct EncodedPairs {
  Tensor<S> hist;  // (N, k * d_f)
  Tensor<S> t;     // (N, d_f)
  Tensor<S> t1;    // (N, d_f)
};

template <class S>
EncodedPairs<S> encode_pairs(const nets::ModelBundle<S>& b,
                             const data::PairBatch<S>& batch) {
  EncodedPairs<S> e;
  e.t = nets::encode(b, batch.o_t);
  e.t1 = nets::encode(b, batch.o_t1);
  e.hist = nets::encode_history(b, batch.o_hist, batch.size());
  return e;
}

// ---------------------------------------------------------------------------
// Latent future reconstruction + VQ auxiliaries. Trains the latent
// predictor, codebook, and world model only.
// ---------------------------------------------------------------------------
inline constexpr const char* kAuxRecon = "recon";
inline constexpr const char* kAuxCommit = "vq_commit";
inline constexpr const char* kAuxCodebook = "vq_codebook";
inline constexpr const char* kAuxUsage = "codebook_usage";

template <class S>
LossReport loss_lfr_encoded(nets::ModelBundle<S>& b, const EncodedPairs<S>& e,
                            double beta, bool with_grad) {
  const int64_t n = e.t.dim(0), d = b.dims.feature_dim, dz = b.dims.latent_dim;

  nn::MlpTrace<S> g_trace;
  Tensor<S> pre = b.latent_predictor.forward(
      nets::concat_latent_input(e.hist, e.t, e.t1), with_grad ? &g_trace : nullptr);
  nets::Quantized<S> q = nets::quantize(b.codebook, pre);

  nn::MlpTrace<S> w_trace;
  Tensor<S> pred = nets::world_forward(b, e.t, q.rows, with_grad ? &w_trace : nullptr);

  double recon = 0, commit = 0, align = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      double diff = static_cast<double>(e.t1.at(i, j)) -
                    static_cast<double>(pred.at(i, j));
      recon += diff * diff;
    }
    for (int64_t j = 0; j < dz; ++j) {
      double diff = static_cast<double>(pre.at(i, j)) -
                    static_cast<double>(q.rows.at(i, j));
      align += diff * diff;    // pulls codebook toward stopped pre
      commit += diff * diff;   // pulls pre toward stopped code
    }
  }
  recon /= static_cast<double>(n);
  align /= static_cast<double>(n);
  commit = beta * commit / static_cast<double>(n);

  LossReport rep{"LFR", recon + align + commit,
                 {{kAuxRecon, recon},
                  {kAuxCommit, commit},
                  {kAuxCodebook, align},
                  {kAuxUsage, detail::usage_fraction(q.indices, b.dims.codebook_size)}}};
  rep.check_finite();
  if (!with_grad) return rep;

  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor<S> dpred({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      dpred.at(i, j) = static_cast<S>(2.0 * inv_n *
                                      (static_cast<double>(pred.at(i, j)) -
                                       static_cast<double>(e.t1.at(i, j))));

  Tensor<S> dworld_in = b.world_model.backward(w_trace, dpred);

  // Straight-through: the world model's gradient on the quantized rows flows
  // to pre unchanged; the codebook itself only learns from the alignment term.
  Tensor<S> dpre({n, dz});
  for (int64_t i = 0; i < n; ++i) {
    const int code = q.indices[static_cast<size_t>(i)];
    for (int64_t j = 0; j < dz; ++j) {
      const double diff = static_cast<double>(pre.at(i, j)) -
                          static_cast<double>(b.codebook.at(code, j));
      dpre.at(i, j) = static_cast<S>(
          static_cast<double>(dworld_in.at(i, d + j)) + 2.0 * beta * inv_n * diff);
      b.g_codebook.at(code, j) += static_cast<S>(-2.0 * inv_n * diff);
    }
  }
  b.latent_predictor.backward(g_trace, dpre);  // encoder branches stay stopped
  return rep;
}

template <class S>
LossReport loss_lfr(nets::ModelBundle<S>& b, const data::PairBatch<S>& batch,
                    double beta, bool with_grad) {
  return loss_lfr_encoded(b, encode_pairs(b, batch), beta, with_grad);
}

// ---------------------------------------------------------------------------
// Ground-truth action prediction: cross-entropy against logged actions,
// trains the action projector alone.
// ---------------------------------------------------------------------------
template <class S>
LossReport loss_gap_encoded(nets::ModelBundle<S>& b, const EncodedPairs<S>& e,
                            const std::vector<int>& actions, bool with_grad) {
  const int64_t m = e.t.dim(0);
  const int n_actions = b.dims.n_actions;
  for (int a : actions)
    require<DataError>(a >= 0 && a < n_actions,
                       cat("loss_gap: action ", a, " out of range"));
  require<DataError>(static_cast<int64_t>(actions.size()) == m,
                     "loss_gap: action/observation count mismatch");

  Tensor<S> pre = b.latent_predictor.forward(
      nets::concat_latent_input(e.hist, e.t, e.t1));  // predictor is frozen here
  nets::Quantized<S> q = nets::quantize(b.codebook, pre);

  nn::MlpTrace<S> h_trace;
  Tensor<S> logits = b.action_projector.forward(q.rows, with_grad ? &h_trace : nullptr);

  double loss = 0;
  int64_t correct = 0;
  std::vector<double> lse(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    double mx = -1e300;
    for (int j = 0; j < n_actions; ++j)
      mx = std::max(mx, static_cast<double>(logits.at(i, j)));
    double acc = 0;
    for (int j = 0; j < n_actions; ++j)
      acc += std::exp(static_cast<double>(logits.at(i, j)) - mx);
    lse[static_cast<size_t>(i)] = mx + std::log(acc);
    const int a = actions[static_cast<size_t>(i)];
    loss += lse[static_cast<size_t>(i)] - static_cast<double>(logits.at(i, a));
    if (nets::argmax_row(logits, i) == a) ++correct;
  }
  loss /= static_cast<double>(m);

  LossReport rep{"GAP", loss,
                 {{"accuracy", static_cast<double>(correct) / static_cast<double>(m)}}};
  rep.check_finite();
  if (!with_grad) return rep;

  Tensor<S> dlogits({m, static_cast<int64_t>(n_actions)});
  const double inv_m = 1.0 / static_cast<double>(m);
  for (int64_t i = 0; i < m; ++i)
    for (int j = 0; j < n_actions; ++j) {
      double p = std::exp(static_cast<double>(logits.at(i, j)) -
                          lse[static_cast<size_t>(i)]);
      dlogits.at(i, j) = static_cast<S>(
          (p - (j == actions[static_cast<size_t>(i)] ? 1.0 : 0.0)) * inv_m);
    }
  b.action_projector.backward(h_trace, dlogits);  // stop at the projector input
  return rep;
}

template <class S>
LossReport loss_gap(nets::ModelBundle<S>& b, const data::TransitionBatch<S>& batch,
                    bool with_grad) {
  return loss_gap_encoded(b, encode_pairs(b, batch.obs), batch.actions, with_grad);
}

// ---------------------------------------------------------------------------
// Unsupervised policy cloning: regression of the policy predictor's latent
// onto the labeling model's quantized latent; everything else is a stopped
// target.
// ---------------------------------------------------------------------------
template <class S>
LossReport loss_upc_encoded(nets::ModelBundle<S>& b, const EncodedPairs<S>& e,
                            bool with_grad) {
  const int64_t n = e.t.dim(0), dz = b.dims.latent_dim;

  Tensor<S> pre_v = b.latent_predictor.forward(
      nets::concat_latent_input(e.hist, e.t, e.t1));
  nets::Quantized<S> target = nets::quantize(b.codebook, pre_v);

  nn::MlpTrace<S> pi_trace;
  Tensor<S> z_pi = b.policy_predictor.forward(
      nets::concat_policy_input(e.hist, e.t), with_grad ? &pi_trace : nullptr);

  double loss = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < dz; ++j) {
      double diff = static_cast<double>(z_pi.at(i, j)) -
                    static_cast<double>(target.rows.at(i, j));
      loss += diff * diff;
    }
  loss /= static_cast<double>(n);

  LossReport rep{"UPC", loss,
                 {{"target_usage",
                   detail::usage_fraction(target.indices, b.dims.codebook_size)}}};
  rep.check_finite();
  if (!with_grad) return rep;

  Tensor<S> dz_pi({n, dz});
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < dz; ++j)
      dz_pi.at(i, j) = static_cast<S>(2.0 * inv_n *
                                      (static_cast<double>(z_pi.at(i, j)) -
                                       static_cast<double>(target.rows.at(i, j))));
  b.policy_predictor.backward(pi_trace, dz_pi);  // policy encoder branch stopped
  return rep;
}

template <class S>
LossReport loss_upc(nets::ModelBundle<S>& b, const data::PairBatch<S>& batch,
                    bool with_grad) {
  return loss_upc_encoded(b, encode_pairs(b, batch), with_grad);
}

}  // namespace upesv::losses
