// Bundle-level evaluation: labeling accuracy against held-out ground truth,
// latent cluster purity, greedy policy rollouts, and the world-model action
// decoder used by the no-GAP ablation.
#pragma once

#include <array>
#include <map>
#include <vector>

#include "upesv/databank.hpp"
#include "upesv/env.hpp"
#include "upesv/losses.hpp"
#include "upesv/nets.hpp"

namespace upesv::eval {

enum class Variant { kFull, kNoVsc, kNoLfr, kNoGap };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoVsc: return "no_vsc";
    case Variant::kNoLfr: return "no_lfr";
    case Variant::kNoGap: return "no_gap";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::kFull, Variant::kNoVsc, Variant::kNoLfr,
                    Variant::kNoGap})
    if (name == variant_name(v)) return v;
  throw ConfigError(cat("unknown ablation variant '", name, "'"));
}

// How latent codes become real actions: through the shared action projector,
// or (no-GAP ablation) through a code->action decoder table fitted from the
// world model and interactions.
template <class S>
struct ActionHead {
  bool via_decoder = false;
  std::vector<int> table;  // codebook_size entries when via_decoder

  int action_for(const nets::ModelBundle<S>& b, const nets::Quantized<S>& q,
                 int64_t row) const {
    if (via_decoder) return table.at(static_cast<size_t>(q.indices[row]));
    Tensor<S> zq({1, b.dims.latent_dim});
    std::copy_n(q.rows.data() + row * b.dims.latent_dim, b.dims.latent_dim,
                zq.data());
    return nets::argmax_row(nets::project_action(b, zq), 0);
  }

  std::vector<int> actions_for(const nets::ModelBundle<S>& b,
                               const nets::Quantized<S>& q) const {
    const int64_t n = q.rows.dim(0);
    std::vector<int> out(static_cast<size_t>(n));
    if (via_decoder) {
      for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = table.at(static_cast<size_t>(q.indices[i]));
    } else {
      Tensor<S> logits = nets::project_action(b, q.rows);
      for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = nets::argmax_row(logits, i);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Frame feature cache: once the encoder is frozen, every frame of a dataset
// can be encoded exactly once.
// ---------------------------------------------------------------------------
template <class S>
struct FrameFeatures {
  Tensor<S> feats;      // (n_frames, feature_dim)
  Tensor<S> zero_feat;  // (1, feature_dim), the all-zero observation
};

template <class S>
FrameFeatures<S> encode_all_frames(const nets::ModelBundle<S>& b,
                                   const data::VideoDataset& ds,
                                   int64_t batch = 512) {
  const int64_t n = ds.n_frames(), fb = ds.frame_bytes();
  FrameFeatures<S> out;
  out.feats = Tensor<S>({n, b.dims.feature_dim});
  for (int64_t start = 0; start < n; start += batch) {
    int64_t count = std::min(batch, n - start);
    Tensor<S> obs({count, ds.channels, ds.height, ds.width});
    for (int64_t i = 0; i < count; ++i)
      data::detail::copy_frame(ds.frame(start + i), obs.data() + i * fb, fb);
    Tensor<S> feats = nets::encode(b, obs);
    std::copy_n(feats.data(), feats.numel(),
                out.feats.data() + start * b.dims.feature_dim);
  }
  Tensor<S> zero_obs({1, ds.channels, ds.height, ds.width});
  out.zero_feat = nets::encode(b, zero_obs);
  return out;
}

// Gather (hist, t, t+1) features for given pair starts; history slots before
// the episode start take the zero-observation feature.
template <class S>
losses::EncodedPairs<S> gather_pairs(const nets::ModelBundle<S>& b,
                                     const data::VideoDataset& ds,
                                     const FrameFeatures<S>& cache,
                                     const std::vector<int64_t>& starts) {
  const int64_t n = static_cast<int64_t>(starts.size());
  const int64_t d = b.dims.feature_dim, k = b.dims.history_k;
  losses::EncodedPairs<S> e;
  e.t = Tensor<S>({n, d});
  e.t1 = Tensor<S>({n, d});
  e.hist = Tensor<S>({n, k * d});
  for (int64_t i = 0; i < n; ++i) {
    int64_t t = starts[static_cast<size_t>(i)];
    std::copy_n(cache.feats.data() + t * d, d, e.t.data() + i * d);
    std::copy_n(cache.feats.data() + (t + 1) * d, d, e.t1.data() + i * d);
    int64_t ep_start = ds.episode_starts[ds.episode_of_frame(t)];
    for (int64_t j = 0; j < k; ++j) {
      int64_t src = t - k + j;
      const S* from = src >= ep_start ? cache.feats.data() + src * d
                                      : cache.zero_feat.data();
      std::copy_n(from, d, e.hist.data() + (i * k + j) * d);
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Labeling accuracy against logged ground truth.
// ---------------------------------------------------------------------------
struct LabelingResult {
  double accuracy = 0;
  int64_t pairs = 0;
};

template <class S>
LabelingResult labeling_accuracy(const nets::ModelBundle<S>& b,
                                 const ActionHead<S>& head,
                                 const data::VideoDataset& ds) {
  require<DataError>(!ds.actions.empty(),
                     "labeling_accuracy: dataset has no ground-truth actions");
  auto starts = ds.valid_pair_starts();
  require<DataError>(!starts.empty(), "labeling_accuracy: empty evaluation set");
  auto cache = encode_all_frames(b, ds);

  int64_t correct = 0;
  const int64_t chunk = 1024;
  for (int64_t base = 0; base < static_cast<int64_t>(starts.size()); base += chunk) {
    int64_t count =
        std::min<int64_t>(chunk, static_cast<int64_t>(starts.size()) - base);
    std::vector<int64_t> sub(starts.begin() + base, starts.begin() + base + count);
    auto enc = gather_pairs(b, ds, cache, sub);
    Tensor<S> pre = b.latent_predictor.forward(
        nets::concat_latent_input(enc.hist, enc.t, enc.t1));
    auto q = nets::quantize(b.codebook, pre);
    auto predicted = head.actions_for(b, q);
    for (int64_t i = 0; i < count; ++i)
      if (predicted[static_cast<size_t>(i)] ==
          ds.action_for_pair(base + i))
        ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(starts.size()),
          static_cast<int64_t>(starts.size())};
}

// ---------------------------------------------------------------------------
// Latent purity: majority true action per active code, over unambiguous
// transitions only (the inverse-dynamics oracle must return a singleton).
// ---------------------------------------------------------------------------
template <class S>
double latent_purity(const nets::ModelBundle<S>& b, const data::VideoDataset& ds) {
  require<DataError>(!ds.actions.empty(), "latent_purity: dataset has no actions");
  auto starts = ds.valid_pair_starts();
  require<DataError>(!starts.empty(), "latent_purity: empty evaluation set");
  auto cache = encode_all_frames(b, ds);

  auto obs_at = [&](int64_t t) {
    env::Observation o;
    o.channels = static_cast<int>(ds.channels);
    o.height = static_cast<int>(ds.height);
    o.width = static_cast<int>(ds.width);
    o.bytes.assign(ds.frame(t), ds.frame(t) + ds.frame_bytes());
    return o;
  };

  // code -> action histogram
  std::vector<std::array<int64_t, env::kNumActions>> hist(
      static_cast<size_t>(b.dims.codebook_size),
      std::array<int64_t, env::kNumActions>{});
  int64_t total = 0;
  const int64_t chunk = 1024;
  for (int64_t base = 0; base < static_cast<int64_t>(starts.size()); base += chunk) {
    int64_t count =
        std::min<int64_t>(chunk, static_cast<int64_t>(starts.size()) - base);
    std::vector<int64_t> sub(starts.begin() + base, starts.begin() + base + count);
    auto enc = gather_pairs(b, ds, cache, sub);
    Tensor<S> pre = b.latent_predictor.forward(
        nets::concat_latent_input(enc.hist, enc.t, enc.t1));
    auto q = nets::quantize(b.codebook, pre);
    for (int64_t i = 0; i < count; ++i) {
      int64_t t = sub[static_cast<size_t>(i)];
      auto consistent = env::oracle_inverse_dynamics(obs_at(t), obs_at(t + 1));
      if (consistent.size() != 1) continue;  // ambiguous, excluded
      hist[static_cast<size_t>(q.indices[i])]
          [static_cast<size_t>(ds.action_for_pair(base + i))]++;
      ++total;
    }
  }
  require<DataError>(total > 0, "latent_purity: no unambiguous transitions");

  int64_t majority = 0;
  for (const auto& h : hist)
    majority += *std::max_element(h.begin(), h.end());
  return static_cast<double>(majority) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Greedy policy rollouts on fresh levels.
// ---------------------------------------------------------------------------
struct RolloutStats {
  double success_rate = 0;
  double mean_steps_success = 0;  // steps to goal, successful episodes only
  int64_t episodes = 0;
};

namespace detail {

template <class S>
class HistoryBuffer {
 public:
  HistoryBuffer(int64_t k, int64_t frame_elems)
      : k_(k), frame_elems_(frame_elems), flat_({1, k, frame_elems}) {
    reset();
  }
  void reset() { flat_.zero(); }
  void push(const env::Observation& obs) {
    if (k_ == 0) return;
    // shift left, append newest at the end
    for (int64_t j = 0; j + 1 < k_; ++j)
      std::copy_n(flat_.data() + (j + 1) * frame_elems_, frame_elems_,
                  flat_.data() + j * frame_elems_);
    obs.to_float(flat_.data() + (k_ - 1) * frame_elems_);
  }
  const Tensor<S>& flat() const { return flat_; }

 private:
  int64_t k_, frame_elems_;
  Tensor<S> flat_;
};

}  // namespace detail

// argmax action through (policy predictor -> quantize -> head).
template <class S>
int deployed_action(const nets::ModelBundle<S>& b, const ActionHead<S>& head,
                    const Tensor<S>& hist_feats, const Tensor<S>& feat) {
  Tensor<S> z = nets::policy_latent(b, hist_feats, feat);
  auto q = nets::quantize(b.codebook, z);
  return head.action_for(b, q, 0);
}

template <class S>
RolloutStats rollout_policy(const nets::ModelBundle<S>& b,
                            const ActionHead<S>& head, const env::EnvSpec& spec,
                            int64_t n_episodes, uint64_t level_base) {
  const int64_t fe = static_cast<int64_t>(spec.obs_channels()) *
                     spec.obs_height() * spec.obs_width();
  RolloutStats stats;
  stats.episodes = n_episodes;
  int64_t success = 0, success_steps = 0;
  for (int64_t e = 0; e < n_episodes; ++e) {
    auto st = env::make_env(spec, level_base + static_cast<uint64_t>(e));
    detail::HistoryBuffer<S> hist(b.dims.history_k, fe);
    env::Observation obs = env::render(st);
    while (!st.done) {
      Tensor<S> cur({1, spec.obs_channels(), spec.obs_height(), spec.obs_width()});
      obs.to_float(cur.data());
      Tensor<S> feat = nets::encode(b, cur);
      Tensor<S> hfeat = nets::encode_history(
          b, hist.flat().reshaped({1, b.dims.history_k, spec.obs_channels(),
                                   spec.obs_height(), spec.obs_width()}),
          1);
      int action = deployed_action(b, head, hfeat, feat);
      auto res = env::step(st, action);
      hist.push(obs);
      obs = std::move(res.obs);
      if (res.done && res.info.success) {
        ++success;
        success_steps += res.info.step_count;
      }
    }
  }
  stats.success_rate = static_cast<double>(success) / static_cast<double>(n_episodes);
  stats.mean_steps_success =
      success > 0 ? static_cast<double>(success_steps) / static_cast<double>(success)
                  : 0.0;
  return stats;
}

inline RolloutStats random_rollout(const env::EnvSpec& spec, int64_t n_episodes,
                                   uint64_t level_base, uint64_t seed) {
  auto rs = rng::Stream::derive(seed, {0x72616e64ull});
  RolloutStats stats;
  stats.episodes = n_episodes;
  int64_t success = 0, success_steps = 0;
  for (int64_t e = 0; e < n_episodes; ++e) {
    auto st = env::make_env(spec, level_base + static_cast<uint64_t>(e));
    while (!st.done) {
      auto res = env::step(st, static_cast<int>(rs.bounded(env::kNumActions)));
      if (res.done && res.info.success) {
        ++success;
        success_steps += res.info.step_count;
      }
    }
  }
  stats.success_rate = static_cast<double>(success) / static_cast<double>(n_episodes);
  stats.mean_steps_success =
      success > 0 ? static_cast<double>(success_steps) / static_cast<double>(success)
                  : 0.0;
  return stats;
}

// ---------------------------------------------------------------------------
// World-model action decoder (no-GAP ablation): map each latent code to the
// real action whose observed outcomes the world model reproduces best.
// ---------------------------------------------------------------------------
template <class S>
std::vector<int> fit_action_decoder(const nets::ModelBundle<S>& b,
                                    const Tensor<S>& feat_t,
                                    const Tensor<S>& feat_t1,
                                    const std::vector<int>& actions,
                                    int64_t max_per_action = 256) {
  const int64_t m = feat_t.dim(0), d = b.dims.feature_dim;
  const int64_t k = b.dims.codebook_size;
  const int n_actions = b.dims.n_actions;
  require<DataError>(m > 0, "fit_action_decoder: no transitions");

  // Deterministic stride subsample per action.
  std::vector<std::vector<int64_t>> rows(static_cast<size_t>(n_actions));
  for (int64_t i = 0; i < m; ++i)
    rows[static_cast<size_t>(actions[static_cast<size_t>(i)])].push_back(i);
  for (auto& r : rows)
    if (static_cast<int64_t>(r.size()) > max_per_action) {
      std::vector<int64_t> picked;
      double stride = static_cast<double>(r.size()) / static_cast<double>(max_per_action);
      for (int64_t i = 0; i < max_per_action; ++i)
        picked.push_back(r[static_cast<size_t>(i * stride)]);
      r = std::move(picked);
    }

  std::vector<int> table(static_cast<size_t>(k), 0);
  for (int64_t c = 0; c < k; ++c) {
    double best_err = 0;
    int best_action = -1;
    for (int a = 0; a < n_actions; ++a) {
      const auto& sel = rows[static_cast<size_t>(a)];
      if (sel.empty()) continue;
      const int64_t n = static_cast<int64_t>(sel.size());
      Tensor<S> ft({n, d}), ft1({n, d});
      for (int64_t i = 0; i < n; ++i) {
        std::copy_n(feat_t.data() + sel[static_cast<size_t>(i)] * d, d,
                    ft.data() + i * d);
        std::copy_n(feat_t1.data() + sel[static_cast<size_t>(i)] * d, d,
                    ft1.data() + i * d);
      }
      Tensor<S> zq({n, b.dims.latent_dim});
      for (int64_t i = 0; i < n; ++i)
        std::copy_n(b.codebook.data() + c * b.dims.latent_dim, b.dims.latent_dim,
                    zq.data() + i * b.dims.latent_dim);
      Tensor<S> pred = nets::world_forward(b, ft, zq);
      double err = 0;
      for (int64_t i = 0; i < pred.numel(); ++i) {
        double diff = static_cast<double>(pred[i]) - static_cast<double>(ft1[i]);
        err += diff * diff;
      }
      err /= static_cast<double>(n);
      if (best_action < 0 || err < best_err) {
        best_err = err;
        best_action = a;
      }
    }
    table[static_cast<size_t>(c)] = std::max(best_action, 0);
  }
  return table;
}

}  // namespace upesv::eval
