// TrainConfig: every schedule constant and architectural width, serializable
// as a flat JSON object. Parsing is strict: unknown keys are errors, and each
// constraint violation names the offending field.
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upesv/common.hpp"
#include "upesv/env.hpp"
#include "upesv/nets.hpp"

namespace upesv::cfg {

// Level-seed bands. Expert/training levels live wherever the dataset was
// generated; collection and evaluation get fixed disjoint bands that the
// trainer asserts against at run start.
inline constexpr uint64_t kCollectLevelBase = 1'000'000;
inline constexpr uint64_t kCollectLevelSpan = 1'000'000;
inline constexpr uint64_t kEvalLevelBase = 2'000'000;

struct TrainConfig {
  // data
  std::string expert_dataset;  // .upsv, action-free
  std::string eval_dataset;    // .actions companion for eval; may be empty

  // environment
  int grid_size = 8;
  double wall_density = 0.2;
  int texture_channels = 1;
  int max_steps = 0;  // 0 -> 4 * grid_size
  double hazard_prob = 0.25;

  // architecture
  int64_t history_k = 1;
  int64_t feature_dim = 264;
  int64_t latent_dim = 16;
  int64_t codebook_size = 16;
  double vq_beta = 0.25;
  std::vector<int64_t> conv_channels = {16, 16};
  std::vector<int> conv_strides = {1, 1};
  int ego_window = 7;
  int64_t latent_hidden = 192;
  int64_t contrast_hidden = 128;
  int64_t action_hidden = 64;
  int64_t world_hidden = 192;
  int64_t policy_hidden = 256;

  // schedule
  int64_t batch_video = 128;
  int64_t batch_transition = 512;
  double lr_vsc = 3e-5;
  double lr_lfr = 3e-4;
  double lr_gap = 1e-3;
  double lr_upc = 2e-4;
  int64_t updates_vsc_lfr = 6000;
  int64_t updates_upc = 5000;
  int64_t updates_gap = 1000;
  double update_scale = 1.0;  // multiplies the three update counts + budget
  int shift_s = 1;
  double ema_m = 0.05;
  int64_t n_parallel_envs = 8;
  int64_t update_frequency = 64;  // env steps per collection slice
  int64_t interaction_budget = 20000;
  int64_t grounding_rounds = 4;
  double collect_epsilon = 0.05;
  int64_t buffer_capacity = 0;  // 0 -> interaction budget

  // evaluation
  int64_t eval_episodes = 100;
  uint64_t eval_level_base = kEvalLevelBase;

  // run
  uint64_t seed = 1;
  bool deterministic = false;
  std::string precision = "float32";  // float32 | float64
  int64_t metrics_flush_every = 100;

  env::EnvSpec env_spec() const {
    env::EnvSpec s;
    s.grid_size = grid_size;
    s.wall_density = wall_density;
    s.texture_channels = texture_channels;
    s.max_steps = max_steps;
    s.hazard_prob = hazard_prob;
    return s;
  }

  nets::BundleDims bundle_dims() const {
    nets::BundleDims d;
    auto spec = env_spec();
    d.obs_channels = spec.obs_channels();
    d.obs_h = spec.obs_height();
    d.obs_w = spec.obs_width();
    d.history_k = history_k;
    d.feature_dim = feature_dim;
    d.latent_dim = latent_dim;
    d.codebook_size = codebook_size;
    d.n_actions = spec.n_actions();
    d.conv_channels = conv_channels;
    d.conv_strides = conv_strides;
    d.ego_window = ego_window;
    d.latent_hidden = latent_hidden;
    d.contrast_hidden = contrast_hidden;
    d.action_hidden = action_hidden;
    d.world_hidden = world_hidden;
    d.policy_hidden = policy_hidden;
    return d;
  }

  int64_t scaled(int64_t count) const {
    return std::max<int64_t>(1, static_cast<int64_t>(count * update_scale));
  }
  int64_t effective_updates_vsc_lfr() const { return scaled(updates_vsc_lfr); }
  int64_t effective_updates_upc() const { return scaled(updates_upc); }
  int64_t effective_updates_gap() const { return scaled(updates_gap); }
  int64_t effective_budget() const { return scaled(interaction_budget); }
  int64_t effective_capacity() const {
    return buffer_capacity > 0 ? buffer_capacity : effective_budget();
  }

  void validate() const {
    auto positive = [](int64_t v, const char* field) {
      require<ConfigError>(v > 0, cat("config: ", field, " must be positive"));
    };
    env_spec().validate();
    bundle_dims().validate();
    positive(history_k + 1, "history_k");  // k >= 0
    require<ConfigError>(history_k >= 0, "config: history_k must be >= 0");
    positive(batch_video, "batch_video");
    require<ConfigError>(batch_video >= 2,
                         "config: batch_video must be >= 2 (in-batch negatives)");
    positive(batch_transition, "batch_transition");
    for (auto [v, f] : {std::pair<double, const char*>{lr_vsc, "lr_vsc"},
                        {lr_lfr, "lr_lfr"},
                        {lr_gap, "lr_gap"},
                        {lr_upc, "lr_upc"}})
      require<ConfigError>(v > 0, cat("config: ", f, " must be positive"));
    positive(updates_vsc_lfr, "updates_vsc_lfr");
    positive(updates_upc, "updates_upc");
    positive(updates_gap, "updates_gap");
    require<ConfigError>(update_scale > 0, "config: update_scale must be positive");
    require<ConfigError>(shift_s >= 0 && shift_s < grid_size,
                         "config: shift_s must be in [0, grid_size)");
    require<ConfigError>(ema_m >= 0 && ema_m <= 1,
                         "config: ema_m must be in [0, 1]");
    positive(n_parallel_envs, "n_parallel_envs");
    positive(update_frequency, "update_frequency");
    positive(interaction_budget, "interaction_budget");
    positive(grounding_rounds, "grounding_rounds");
    require<ConfigError>(effective_budget() >= grounding_rounds,
                         "config: interaction_budget must cover every round");
    require<ConfigError>(collect_epsilon >= 0 && collect_epsilon <= 1,
                         "config: collect_epsilon must be in [0, 1]");
    require<ConfigError>(buffer_capacity >= 0,
                         "config: buffer_capacity must be >= 0");
    positive(eval_episodes, "eval_episodes");
    require<ConfigError>(vq_beta >= 0, "config: vq_beta must be >= 0");
    require<ConfigError>(precision == "float32" || precision == "float64",
                         "config: precision must be float32 or float64");
    positive(metrics_flush_every, "metrics_flush_every");
    require<ConfigError>(
        static_cast<int64_t>(effective_budget() / grounding_rounds) >= 1,
        "config: budget per grounding round must be >= 1");
  }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(cat("config: field '", key, "' has the wrong type"));
  }
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"expert_dataset", c.expert_dataset},
      {"eval_dataset", c.eval_dataset},
      {"grid_size", c.grid_size},
      {"wall_density", c.wall_density},
      {"texture_channels", c.texture_channels},
      {"max_steps", c.max_steps},
      {"hazard_prob", c.hazard_prob},
      {"history_k", c.history_k},
      {"feature_dim", c.feature_dim},
      {"latent_dim", c.latent_dim},
      {"codebook_size", c.codebook_size},
      {"vq_beta", c.vq_beta},
      {"conv_channels", c.conv_channels},
      {"conv_strides", c.conv_strides},
      {"ego_window", c.ego_window},
      {"latent_hidden", c.latent_hidden},
      {"contrast_hidden", c.contrast_hidden},
      {"action_hidden", c.action_hidden},
      {"world_hidden", c.world_hidden},
      {"policy_hidden", c.policy_hidden},
      {"batch_video", c.batch_video},
      {"batch_transition", c.batch_transition},
      {"lr_vsc", c.lr_vsc},
      {"lr_lfr", c.lr_lfr},
      {"lr_gap", c.lr_gap},
      {"lr_upc", c.lr_upc},
      {"updates_vsc_lfr", c.updates_vsc_lfr},
      {"updates_upc", c.updates_upc},
      {"updates_gap", c.updates_gap},
      {"update_scale", c.update_scale},
      {"shift_s", c.shift_s},
      {"ema_m", c.ema_m},
      {"n_parallel_envs", c.n_parallel_envs},
      {"update_frequency", c.update_frequency},
      {"interaction_budget", c.interaction_budget},
      {"grounding_rounds", c.grounding_rounds},
      {"collect_epsilon", c.collect_epsilon},
      {"buffer_capacity", c.buffer_capacity},
      {"eval_episodes", c.eval_episodes},
      {"eval_level_base", c.eval_level_base},
      {"seed", c.seed},
      {"deterministic", c.deterministic},
      {"precision", c.precision},
      {"metrics_flush_every", c.metrics_flush_every},
  };
}

inline TrainConfig from_json(const nlohmann::json& j) {
  require<ConfigError>(j.is_object(), "config: top level must be a JSON object");
  TrainConfig c;
  const nlohmann::json known = to_json(c);
  for (const auto& [key, _] : j.items())
    require<ConfigError>(known.contains(key),
                         cat("config: unknown key '", key, "'"));

  detail::read_field(j, "expert_dataset", c.expert_dataset);
  detail::read_field(j, "eval_dataset", c.eval_dataset);
  detail::read_field(j, "grid_size", c.grid_size);
  detail::read_field(j, "wall_density", c.wall_density);
  detail::read_field(j, "texture_channels", c.texture_channels);
  detail::read_field(j, "max_steps", c.max_steps);
  detail::read_field(j, "hazard_prob", c.hazard_prob);
  detail::read_field(j, "history_k", c.history_k);
  detail::read_field(j, "feature_dim", c.feature_dim);
  detail::read_field(j, "latent_dim", c.latent_dim);
  detail::read_field(j, "codebook_size", c.codebook_size);
  detail::read_field(j, "vq_beta", c.vq_beta);
  detail::read_field(j, "conv_channels", c.conv_channels);
  detail::read_field(j, "conv_strides", c.conv_strides);
  detail::read_field(j, "ego_window", c.ego_window);
  detail::read_field(j, "latent_hidden", c.latent_hidden);
  detail::read_field(j, "contrast_hidden", c.contrast_hidden);
  detail::read_field(j, "action_hidden", c.action_hidden);
  detail::read_field(j, "world_hidden", c.world_hidden);
  detail::read_field(j, "policy_hidden", c.policy_hidden);
  detail::read_field(j, "batch_video", c.batch_video);
  detail::read_field(j, "batch_transition", c.batch_transition);
  detail::read_field(j, "lr_vsc", c.lr_vsc);
  detail::read_field(j, "lr_lfr", c.lr_lfr);
  detail::read_field(j, "lr_gap", c.lr_gap);
  detail::read_field(j, "lr_upc", c.lr_upc);
  detail::read_field(j, "updates_vsc_lfr", c.updates_vsc_lfr);
  detail::read_field(j, "updates_upc", c.updates_upc);
  detail::read_field(j, "updates_gap", c.updates_gap);
  detail::read_field(j, "update_scale", c.update_scale);
  detail::read_field(j, "shift_s", c.shift_s);
  detail::read_field(j, "ema_m", c.ema_m);
  detail::read_field(j, "n_parallel_envs", c.n_parallel_envs);
  detail::read_field(j, "update_frequency", c.update_frequency);
  detail::read_field(j, "interaction_budget", c.interaction_budget);
  detail::read_field(j, "grounding_rounds", c.grounding_rounds);
  detail::read_field(j, "collect_epsilon", c.collect_epsilon);
  detail::read_field(j, "buffer_capacity", c.buffer_capacity);
  detail::read_field(j, "eval_episodes", c.eval_episodes);
  detail::read_field(j, "eval_level_base", c.eval_level_base);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "deterministic", c.deterministic);
  detail::read_field(j, "precision", c.precision);
  detail::read_field(j, "metrics_flush_every", c.metrics_flush_every);
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(cat("config: cannot parse ", path, ": ", e.what()));
  }
  return from_json(j);
}

inline void save_config(const std::string& path, const TrainConfig& c) {
  write_file(path, to_json(c).dump(2) + "\n");
}

}  // namespace upesv::cfg
