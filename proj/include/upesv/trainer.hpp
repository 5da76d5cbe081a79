// The iterative training schedule: video-only pretraining (VSC + LFR),
// latent policy cloning (UPC), reward-free interaction collection, action
// grounding (GAP), and repetition. Four optimizers, each owning exactly the
// parameter set its loss may touch; the interaction budget is a hard ceiling
// audited on every step.
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upesv/checkpoint.hpp"
#include "upesv/config.hpp"
#include "upesv/databank.hpp"
#include "upesv/env.hpp"
#include "upesv/eval.hpp"
#include "upesv/losses.hpp"
#include "upesv/metrics.hpp"
#include "upesv/nets.hpp"

namespace upesv::train {

enum class Phase { kPretrain, kClone, kCollect, kGround, kDone };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kPretrain: return "pretrain";
    case Phase::kClone: return "clone";
    case Phase::kCollect: return "collect";
    case Phase::kGround: return "ground";
    case Phase::kDone: return "done";
  }
  return "?";
}

struct RunState {
  Phase phase = Phase::kPretrain;
  int64_t optimizer_steps = 0;
  int64_t interactions_used = 0;
  int64_t round = 0;
};

struct RoundStat {
  int64_t round = 0;
  int64_t collected = 0;
  double gap_loss_last = -1;
  double labeling_accuracy = -1;  // -1 when no eval dataset configured
};

struct RunSummary {
  double labeling_accuracy = -1;
  double latent_purity = -1;
  double policy_success = -1;
  double random_success = -1;
  double mean_steps_success = -1;
  double vsc_first = -1, vsc_last = -1;
  double lfr_first = -1, lfr_last = -1;
  double upc_first = -1, upc_last = -1;
  double gap_last = -1;
  double codebook_usage_last = -1;
  std::vector<RoundStat> rounds;
  int64_t interactions_used = 0;
  double elapsed_seconds = 0;

  nlohmann::json to_json() const {
    nlohmann::json rounds_json = nlohmann::json::array();
    for (const auto& r : rounds)
      rounds_json.push_back({{"round", r.round},
                             {"collected", r.collected},
                             {"gap_loss_last", r.gap_loss_last},
                             {"labeling_accuracy", r.labeling_accuracy}});
    return {{"labeling_accuracy", labeling_accuracy},
            {"latent_purity", latent_purity},
            {"policy_success", policy_success},
            {"random_success", random_success},
            {"mean_steps_success", mean_steps_success},
            {"vsc_first", vsc_first},
            {"vsc_last", vsc_last},
            {"lfr_first", lfr_first},
            {"lfr_last", lfr_last},
            {"upc_first", upc_first},
            {"upc_last", upc_last},
            {"gap_last", gap_last},
            {"codebook_usage_last", codebook_usage_last},
            {"rounds", rounds_json},
            {"interactions_used", interactions_used},
            {"elapsed_seconds", elapsed_seconds}};
  }
};

namespace detail {

// First/last averages of a loss curve for summary and sanity checks.
class CurveTracker {
 public:
  explicit CurveTracker(int64_t window = 50) : window_(window) {}
  void add(double v) {
    ++count_;
    if (count_ <= window_) first_sum_ += v;
    last_.push_back(v);
    if (static_cast<int64_t>(last_.size()) > window_) last_.pop_front();
  }
  bool empty() const { return count_ == 0; }
  double first_mean() const {
    int64_t n = std::min(count_, window_);
    return n > 0 ? first_sum_ / static_cast<double>(n) : -1;
  }
  double last_mean() const {
    if (last_.empty()) return -1;
    double acc = 0;
    for (double v : last_) acc += v;
    return acc / static_cast<double>(last_.size());
  }

 private:
  int64_t window_, count_ = 0;
  double first_sum_ = 0;
  std::deque<double> last_;
};

}  // namespace detail

template <class S>
class Trainer {
 public:
  Trainer(const cfg::TrainConfig& config, const data::VideoDataset* videos,
          const data::VideoDataset* eval_videos, eval::Variant variant,
          const std::string& run_dir)
      : config_(config),
        spec_(config.env_spec()),
        videos_(videos),
        eval_videos_(eval_videos),
        variant_(variant),
        run_dir_(run_dir),
        bundle_(config.bundle_dims(), config.seed),
        buffer_(config.effective_capacity(), spec_.obs_channels(),
                spec_.obs_height(), spec_.obs_width(), config.history_k,
                spec_.n_actions()),
        vsc_batch_rng_(rng::Stream::derive(config.seed, {1})),
        shift_rng_(rng::Stream::derive(config.seed, {2})),
        lfr_batch_rng_(rng::Stream::derive(config.seed, {3})),
        upc_batch_rng_(rng::Stream::derive(config.seed, {4})),
        gap_batch_rng_(rng::Stream::derive(config.seed, {5})),
        collect_rng_(rng::Stream::derive(config.seed, {6})) {
    config_.validate();
    require<DataError>(videos_ != nullptr, "trainer: expert dataset required");
    videos_->validate();
    require<DataError>(videos_->channels == spec_.obs_channels() &&
                           videos_->height == spec_.obs_height() &&
                           videos_->width == spec_.obs_width(),
                       "trainer: dataset dimensions do not match the env spec");
    valid_pairs_ = videos_->valid_pair_starts();
    require<DataError>(!valid_pairs_.empty(), "trainer: dataset has no pairs");
    assert_level_disjointness();
    if (!run_dir_.empty())
      metrics_ = metrics::MetricsWriter(run_dir_ + "/metrics.csv",
                                        config_.metrics_flush_every);

    opt_vsc_ = nn::Adam<S>(bundle_.params_vsc(), config_.lr_vsc);
    opt_lfr_ = nn::Adam<S>(bundle_.params_lfr(), config_.lr_lfr);
    opt_gap_ = nn::Adam<S>(bundle_.params_gap(), config_.lr_gap);
    opt_upc_ = nn::Adam<S>(bundle_.params_upc(), config_.lr_upc);
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const nets::ModelBundle<S>& bundle() const { return bundle_; }
  nets::ModelBundle<S>& bundle() { return bundle_; }
  const RunState& state() const { return state_; }
  const data::InteractionBuffer& buffer() const { return buffer_; }
  const eval::ActionHead<S>& head() const { return head_; }
  const cfg::TrainConfig& config() const { return config_; }

  // -------------------------------------------------------------------------
  // Phase 1: video-only pretraining. One VSC step (EMA update after) and one
  // LFR step per iteration on independent batches; zero interactions.
  // -------------------------------------------------------------------------
  void pretrain_on_videos() {
    expect_phase(Phase::kPretrain);
    if (variant_ != eval::Variant::kNoLfr) seed_codebook();
    const int64_t updates = config_.effective_updates_vsc_lfr();
    for (int64_t u = 0; u < updates; ++u) {
      if (variant_ != eval::Variant::kNoVsc) {
        auto idx = data::sample_pair_indices(*videos_, valid_pairs_,
                                             config_.batch_video, vsc_batch_rng_);
        Tensor<S> obs = assemble_observations(idx);
        opt_vsc_.zero_grad();
        auto rep = losses::loss_vsc(bundle_, obs, config_.shift_s, shift_rng_,
                                    /*with_grad=*/true);
        opt_vsc_.step();
        nets::ema_update(bundle_, config_.ema_m);
        record("pretrain", rep);
      }
      if (variant_ != eval::Variant::kNoLfr) {
        auto idx = data::sample_pair_indices(*videos_, valid_pairs_,
                                             config_.batch_video, lfr_batch_rng_);
        auto batch = data::assemble_pairs<S>(*videos_, idx, config_.history_k);
        opt_lfr_.zero_grad();
        auto rep = losses::loss_lfr(bundle_, batch, config_.vq_beta, true);
        opt_lfr_.step();
        record("pretrain", rep);
      }
    }
    state_.phase = Phase::kClone;
  }

  // -------------------------------------------------------------------------
  // Phase 2: unsupervised policy cloning; the encoder is frozen from here on,
  // which makes a per-frame feature cache safe.
  // -------------------------------------------------------------------------
  void clone_latent_policy() {
    expect_phase(Phase::kClone);
    build_video_cache();
    const int64_t updates = config_.effective_updates_upc();
    for (int64_t u = 0; u < updates; ++u) {
      auto idx = data::sample_pair_indices(*videos_, valid_pairs_,
                                           config_.batch_video, upc_batch_rng_);
      auto enc = eval::gather_pairs(bundle_, *videos_, *video_cache_, idx);
      opt_upc_.zero_grad();
      auto rep = losses::loss_upc_encoded(bundle_, enc, true);
      opt_upc_.step();
      record("clone", rep);
    }
    state_.phase = Phase::kCollect;
  }

  // -------------------------------------------------------------------------
  // Phase 3 (per round): reward-free interaction collection. Round 0 acts
  // uniformly at random; later rounds run the deployed policy epsilon-greedy.
  // Refuses to start if the quota would pierce the budget ceiling.
  // -------------------------------------------------------------------------
  void collect_interactions(int64_t round) {
    expect_phase(Phase::kCollect);
    require<TrainError>(round == state_.round,
                        cat("collect: expected round ", state_.round));
    const int64_t quota = round_quota(config_.effective_budget(), round);
    require<TrainError>(
        state_.interactions_used + quota <= config_.effective_budget(),
        "collect: interaction budget would be exceeded, refusing");
    ensure_env_pool();

    for (int64_t s = 0; s < quota; ++s) {
      EnvSlot& slot = pool_[static_cast<size_t>(
          (state_.interactions_used) % config_.n_parallel_envs)];
      int action;
      if (round == 0 || collect_rng_.uniform() < config_.collect_epsilon) {
        action = static_cast<int>(collect_rng_.bounded(spec_.n_actions()));
      } else {
        action = policy_action(slot);
      }
      env::Observation prev = slot.obs;
      auto res = env::step(slot.state, action);
      push_record(slot, prev, action, res.obs);
      slot.hist.push_back(prev);
      if (static_cast<int64_t>(slot.hist.size()) > config_.history_k)
        slot.hist.pop_front();
      slot.obs = std::move(res.obs);
      ++state_.interactions_used;
      if (res.done) reset_slot(slot);
    }
    round_stats_.push_back({round, quota, -1, -1});
    state_.phase = Phase::kGround;
  }

  // -------------------------------------------------------------------------
  // Phase 4 (per round): ground latent codes in the real action space. Only
  // the action projector trains; the no-GAP variant fits the world-model
  // decoder instead and leaves the projector untouched.
  // -------------------------------------------------------------------------
  void ground_actions(int64_t round) {
    expect_phase(Phase::kGround);
    require<TrainError>(round == state_.round,
                        cat("ground: expected round ", state_.round));
    require<DataError>(buffer_.size() > 0, "ground: interaction buffer is empty");

    if (variant_ == eval::Variant::kNoGap) {
      head_ = fit_decoder_head();
    } else {
      const int64_t steps =
          round_quota(config_.effective_updates_gap(), round);
      for (int64_t u = 0; u < steps; ++u) {
        auto slots = buffer_.sample_slots(config_.batch_transition, gap_batch_rng_);
        auto [enc, actions] = gather_transitions(slots);
        opt_gap_.zero_grad();
        auto rep = losses::loss_gap_encoded(bundle_, enc, actions, true);
        opt_gap_.step();
        record("ground", rep);
        round_stats_.back().gap_loss_last = rep.value;
      }
    }
    if (eval_videos_ != nullptr)
      round_stats_.back().labeling_accuracy =
          eval::labeling_accuracy(bundle_, head_, *eval_videos_).accuracy;

    ++state_.round;
    state_.phase =
        state_.round < config_.grounding_rounds ? Phase::kCollect : Phase::kDone;
  }

  // -------------------------------------------------------------------------
  // Full schedule plus final evaluation and artifacts.
  // -------------------------------------------------------------------------
  RunSummary run_full() {
    Stopwatch watch;
    run_phase("pretrain", [&] { pretrain_on_videos(); });
    run_phase("clone", [&] { clone_latent_policy(); });
    for (int64_t r = 0; r < config_.grounding_rounds; ++r) {
      run_phase("collect", [&] { collect_interactions(r); });
      run_phase("ground", [&] { ground_actions(r); });
    }
    require<TrainError>(
        state_.interactions_used == config_.effective_budget(),
        cat("budget invariant violated: used ", state_.interactions_used,
            " of ", config_.effective_budget()));

    RunSummary summary;
    summary.rounds = round_stats_;
    summary.interactions_used = state_.interactions_used;
    summary.vsc_first = curve_("VSC").first_mean();
    summary.vsc_last = curve_("VSC").last_mean();
    summary.lfr_first = curve_("LFR").first_mean();
    summary.lfr_last = curve_("LFR").last_mean();
    summary.upc_first = curve_("UPC").first_mean();
    summary.upc_last = curve_("UPC").last_mean();
    summary.gap_last = curve_("GAP").last_mean();
    summary.codebook_usage_last = last_codebook_usage_;

    if (eval_videos_ != nullptr) {
      summary.labeling_accuracy =
          eval::labeling_accuracy(bundle_, head_, *eval_videos_).accuracy;
      summary.latent_purity = eval::latent_purity(bundle_, *eval_videos_);
    }
    auto rollout = eval::rollout_policy(bundle_, head_, spec_,
                                        config_.eval_episodes,
                                        config_.eval_level_base);
    summary.policy_success = rollout.success_rate;
    summary.mean_steps_success = rollout.mean_steps_success;
    summary.random_success =
        eval::random_rollout(spec_, config_.eval_episodes,
                             config_.eval_level_base, config_.seed)
            .success_rate;
    summary.elapsed_seconds = watch.seconds();

    if (!run_dir_.empty()) {
      save_checkpoint(run_dir_ + "/checkpoint.upck");
      write_file(run_dir_ + "/summary.json", summary.to_json().dump(2) + "\n");
      metrics_.flush();
    }
    return summary;
  }

  void save_checkpoint(const std::string& path) {
    std::vector<std::array<uint64_t, 4>> states = {
        vsc_batch_rng_.state(), shift_rng_.state(),  lfr_batch_rng_.state(),
        upc_batch_rng_.state(), gap_batch_rng_.state(), collect_rng_.state()};
    ckpt::save(path, bundle_, cfg::to_json(config_).dump(), states);
  }

 private:
  struct EnvSlot {
    env::LevelState state;
    env::Observation obs;
    std::deque<env::Observation> hist;  // most recent last, <= history_k
    uint64_t episode_id = 0;
  };

  // Per-record cached features, ring-aligned with the interaction buffer.
  struct EncodedRecord {
    Tensor<S> hist;  // (1, k * d_f)
    Tensor<S> t;     // (1, d_f)
    Tensor<S> t1;    // (1, d_f)
  };

  static int64_t round_quota_static(int64_t total, int64_t rounds, int64_t round) {
    int64_t base = total / rounds;
    return round == rounds - 1 ? total - base * (rounds - 1) : base;
  }
  int64_t round_quota(int64_t total, int64_t round) const {
    return round_quota_static(total, config_.grounding_rounds, round);
  }

  void expect_phase(Phase expected) {
    require<TrainError>(state_.phase == expected,
                        cat("phase error: expected ", phase_name(expected),
                            ", currently ", phase_name(state_.phase)));
  }

  template <class Fn>
  void run_phase(const char* name, Fn&& fn) {
    try {
      fn();
      if (!run_dir_.empty()) save_checkpoint(run_dir_ + "/last_good.upck");
    } catch (const std::exception& e) {
      throw TrainError(cat("[phase ", name, "] ", e.what()));
    }
  }

  // Data-dependent codebook init: farthest-point selection over the latents
  // of one probe batch. Every code starts inside the latent distribution, so
  // no code is dead on arrival and the alignment term can spread them.
  void seed_codebook() {
    auto probe_rng = rng::Stream::derive(config_.seed, {7});
    auto idx = data::sample_pair_indices(
        *videos_, valid_pairs_,
        std::max<int64_t>(config_.batch_video, bundle_.dims.codebook_size),
        probe_rng);
    auto batch = data::assemble_pairs<S>(*videos_, idx, config_.history_k);
    auto enc = losses::encode_pairs(bundle_, batch);
    Tensor<S> pre = bundle_.latent_predictor.forward(
        nets::concat_latent_input(enc.hist, enc.t, enc.t1));

    const int64_t n = pre.dim(0), d = bundle_.dims.latent_dim;
    const int64_t k = bundle_.dims.codebook_size;
    std::vector<int64_t> chosen = {0};
    std::vector<double> dist_to_set(static_cast<size_t>(n), 0);
    auto row_dist = [&](int64_t a, int64_t b) {
      double acc = 0;
      for (int64_t j = 0; j < d; ++j) {
        double diff = static_cast<double>(pre.at(a, j)) -
                      static_cast<double>(pre.at(b, j));
        acc += diff * diff;
      }
      return acc;
    };
    for (int64_t i = 0; i < n; ++i) dist_to_set[static_cast<size_t>(i)] = row_dist(i, 0);
    while (static_cast<int64_t>(chosen.size()) < k) {
      int64_t best = 0;
      for (int64_t i = 1; i < n; ++i)
        if (dist_to_set[static_cast<size_t>(i)] >
            dist_to_set[static_cast<size_t>(best)])
          best = i;
      chosen.push_back(best);
      for (int64_t i = 0; i < n; ++i)
        dist_to_set[static_cast<size_t>(i)] = std::min(
            dist_to_set[static_cast<size_t>(i)], row_dist(i, best));
    }
    for (int64_t c = 0; c < k; ++c)
      for (int64_t j = 0; j < d; ++j)
        bundle_.codebook.at(c, j) = pre.at(chosen[static_cast<size_t>(c)], j);
  }

  void assert_level_disjointness() const {
    if (videos_->meta.n_levels <= 0) return;  // unknown provenance, cannot check
    const uint64_t lo = videos_->meta.seed;
    const uint64_t hi = lo + static_cast<uint64_t>(videos_->meta.n_levels);
    auto overlaps = [&](uint64_t a, uint64_t b) { return lo < b && a < hi; };
    require<ConfigError>(
        !overlaps(cfg::kCollectLevelBase,
                  cfg::kCollectLevelBase + cfg::kCollectLevelSpan),
        "training level seeds overlap the collection band");
    require<ConfigError>(
        !overlaps(config_.eval_level_base,
                  config_.eval_level_base +
                      static_cast<uint64_t>(config_.eval_episodes)),
        "training level seeds overlap the eval band");
    if (eval_videos_ != nullptr && eval_videos_->meta.n_levels > 0) {
      uint64_t elo = eval_videos_->meta.seed;
      uint64_t ehi = elo + static_cast<uint64_t>(eval_videos_->meta.n_levels);
      require<ConfigError>(!(lo < ehi && elo < hi),
                           "training and eval datasets share level seeds");
    }
  }

  Tensor<S> assemble_observations(const std::vector<int64_t>& starts) {
    const int64_t n = static_cast<int64_t>(starts.size());
    const int64_t fb = videos_->frame_bytes();
    Tensor<S> obs({n, videos_->channels, videos_->height, videos_->width});
    for (int64_t i = 0; i < n; ++i)
      data::detail::copy_frame(videos_->frame(starts[static_cast<size_t>(i)]),
                               obs.data() + i * fb, fb);
    return obs;
  }

  void build_video_cache() {
    if (!video_cache_)
      video_cache_ = eval::encode_all_frames(bundle_, *videos_);
  }

  void ensure_env_pool() {
    if (!pool_.empty()) return;
    pool_.resize(static_cast<size_t>(config_.n_parallel_envs));
    for (auto& slot : pool_) reset_slot(slot);
  }

  void reset_slot(EnvSlot& slot) {
    uint64_t level_seed = cfg::kCollectLevelBase + next_collect_level_++;
    require<TrainError>(next_collect_level_ < cfg::kCollectLevelSpan,
                        "collection level band exhausted");
    slot.state = env::make_env(spec_, level_seed);
    slot.obs = env::render(slot.state);
    slot.hist.clear();
    slot.episode_id = next_episode_id_++;
  }

  Tensor<S> obs_to_tensor(const env::Observation& obs) const {
    Tensor<S> t({1, spec_.obs_channels(), spec_.obs_height(), spec_.obs_width()});
    obs.to_float(t.data());
    return t;
  }

  Tensor<S> hist_features(const std::deque<env::Observation>& hist) const {
    const int64_t k = config_.history_k;
    const int64_t d = bundle_.dims.feature_dim;
    Tensor<S> out({1, k * d});
    if (k == 0) return out;
    // Newest history frame sits immediately before o_t; zero-pad the rest.
    const int64_t have = static_cast<int64_t>(hist.size());
    Tensor<S> zero_obs({1, spec_.obs_channels(), spec_.obs_height(),
                        spec_.obs_width()});
    for (int64_t j = 0; j < k; ++j) {
      int64_t src = have - (k - j);
      Tensor<S> f = src >= 0
                        ? nets::encode(bundle_, obs_to_tensor(hist[static_cast<size_t>(src)]))
                        : nets::encode(bundle_, zero_obs);
      std::copy_n(f.data(), d, out.data() + j * d);
    }
    return out;
  }

  int policy_action(const EnvSlot& slot) {
    Tensor<S> feat = nets::encode(bundle_, obs_to_tensor(slot.obs));
    Tensor<S> hfeat = hist_features(slot.hist);
    return eval::deployed_action(bundle_, head_, hfeat, feat);
  }

  void push_record(const EnvSlot& slot, const env::Observation& o_t, int action,
                   const env::Observation& o_t1) {
    const int64_t fb = buffer_.frame_bytes();
    data::InteractionBuffer::Record rec;
    rec.o_t = o_t.bytes;
    rec.o_t1 = o_t1.bytes;
    rec.action = static_cast<uint8_t>(action);
    rec.episode_id = slot.episode_id;
    rec.hist.assign(static_cast<size_t>(config_.history_k * fb), 0);
    const int64_t have = static_cast<int64_t>(slot.hist.size());
    for (int64_t j = 0; j < config_.history_k; ++j) {
      int64_t src = have - (config_.history_k - j);
      if (src >= 0)
        std::copy(slot.hist[static_cast<size_t>(src)].bytes.begin(),
                  slot.hist[static_cast<size_t>(src)].bytes.end(),
                  rec.hist.begin() + j * fb);
    }

    EncodedRecord enc;
    enc.t = nets::encode(bundle_, obs_to_tensor(o_t));
    enc.t1 = nets::encode(bundle_, obs_to_tensor(o_t1));
    enc.hist = hist_features(slot.hist);

    // Mirror the buffer's ring placement.
    int64_t ring_slot = buffer_.next_slot();
    buffer_.push(std::move(rec));
    if (ring_slot == static_cast<int64_t>(encoded_ring_.size()))
      encoded_ring_.push_back(std::move(enc));
    else
      encoded_ring_[static_cast<size_t>(ring_slot)] = std::move(enc);
  }

  std::pair<losses::EncodedPairs<S>, std::vector<int>> gather_transitions(
      const std::vector<int64_t>& slots) {
    const int64_t m = static_cast<int64_t>(slots.size());
    const int64_t d = bundle_.dims.feature_dim;
    const int64_t hk = config_.history_k * d;
    losses::EncodedPairs<S> enc;
    enc.t = Tensor<S>({m, d});
    enc.t1 = Tensor<S>({m, d});
    enc.hist = Tensor<S>({m, hk});
    std::vector<int> actions(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      int64_t s = slots[static_cast<size_t>(i)];
      const EncodedRecord& r = encoded_ring_[static_cast<size_t>(s)];
      std::copy_n(r.t.data(), d, enc.t.data() + i * d);
      std::copy_n(r.t1.data(), d, enc.t1.data() + i * d);
      std::copy_n(r.hist.data(), hk, enc.hist.data() + i * hk);
      actions[static_cast<size_t>(i)] = buffer_.record(s).action;
    }
    return {std::move(enc), std::move(actions)};
  }

  eval::ActionHead<S> fit_decoder_head() {
    const int64_t m = buffer_.size();
    const int64_t d = bundle_.dims.feature_dim;
    Tensor<S> ft({m, d}), ft1({m, d});
    std::vector<int> actions(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      std::copy_n(encoded_ring_[static_cast<size_t>(i)].t.data(), d,
                  ft.data() + i * d);
      std::copy_n(encoded_ring_[static_cast<size_t>(i)].t1.data(), d,
                  ft1.data() + i * d);
      actions[static_cast<size_t>(i)] = buffer_.record(i).action;
    }
    eval::ActionHead<S> head;
    head.via_decoder = true;
    head.table = eval::fit_action_decoder(bundle_, ft, ft1, actions);
    return head;
  }

  void record(const char* phase, const losses::LossReport& rep) {
    metrics_.row(state_.optimizer_steps++, phase, rep);
    curve_(rep.name).add(rep.value);
    if (rep.name == "LFR") last_codebook_usage_ = rep.aux_value(losses::kAuxUsage);
  }

  detail::CurveTracker& curve_(const std::string& name) {
    return curves_.try_emplace(name, detail::CurveTracker()).first->second;
  }

  cfg::TrainConfig config_;
  env::EnvSpec spec_;
  const data::VideoDataset* videos_;
  const data::VideoDataset* eval_videos_;
  eval::Variant variant_;
  std::string run_dir_;

  nets::ModelBundle<S> bundle_;
  data::InteractionBuffer buffer_;
  std::vector<EncodedRecord> encoded_ring_;
  std::vector<int64_t> valid_pairs_;
  std::optional<eval::FrameFeatures<S>> video_cache_;
  eval::ActionHead<S> head_;  // defaults to the shared action projector

  nn::Adam<S> opt_vsc_, opt_lfr_, opt_gap_, opt_upc_;
  rng::Stream vsc_batch_rng_, shift_rng_, lfr_batch_rng_, upc_batch_rng_,
      gap_batch_rng_, collect_rng_;

  std::vector<EnvSlot> pool_;
  uint64_t next_collect_level_ = 0;
  uint64_t next_episode_id_ = 0;

  RunState state_;
  std::vector<RoundStat> round_stats_;
  std::map<std::string, detail::CurveTracker> curves_;
  double last_codebook_usage_ = -1;
  metrics::MetricsWriter metrics_;
};

}  // namespace upesv::train
