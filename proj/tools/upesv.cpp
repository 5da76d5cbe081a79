// Command-line entry points: dataset generation, training, evaluation,
// ablations, the shift sweep, and dataset inspection.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "upesv/checkpoint.hpp"
#include "upesv/config.hpp"
#include "upesv/env.hpp"
#include "upesv/eval.hpp"
#include "upesv/harness.hpp"
#include "upesv/manifest.hpp"
#include "upesv/plot.hpp"
#include "upesv/trainer.hpp"

namespace {

using namespace upesv;

env::EnvSpec parse_env_preset(const std::string& name) {
  env::EnvSpec spec;
  if (name.rfind("procgrid", 0) == 0) {
    spec.grid_size = std::stoi(name.substr(8));
    return spec;
  }
  throw ConfigError(cat("unknown env preset '", name, "'; use procgrid<N>"));
}

std::string default_run_id(const std::string& command, uint64_t seed,
                           const nlohmann::json& config) {
  std::string hash = Sha256::of(config.dump()).substr(0, 8);
  return cat(command, "-s", seed, "-", hash);
}

std::string hash_if_exists(const std::string& path) {
  return std::filesystem::exists(path) ? Sha256::of_file(path) : "missing";
}

// ---------------------------------------------------------------------------
// gen-experts
// ---------------------------------------------------------------------------
struct GenArgs {
  std::string env_name = "procgrid8";
  int64_t levels = 200;
  int64_t frames = 100000;
  uint64_t seed = 0;
  std::string out;
  bool force = false;
  double wall_density = 0.2;
  double hazard_prob = 0.25;
  int texture_channels = 1;
};

int cmd_gen_experts(const GenArgs& args) {
  env::EnvSpec spec = parse_env_preset(args.env_name);
  spec.wall_density = args.wall_density;
  spec.hazard_prob = args.hazard_prob;
  spec.texture_channels = args.texture_channels;
  spec.validate();

  std::string video_path = args.out + ".upsv";
  std::string action_path = args.out + ".actions";
  for (const auto& p : {video_path, action_path})
    require<ConfigError>(args.force || !std::filesystem::exists(p),
                         cat("output ", p, " exists; pass --force to overwrite"));

  cli::RunManifest manifest;
  manifest.command = "gen-experts";
  manifest.config_snapshot = {{"env", args.env_name},
                              {"levels", args.levels},
                              {"frames", args.frames},
                              {"seed", args.seed},
                              {"wall_density", args.wall_density},
                              {"hazard_prob", args.hazard_prob},
                              {"texture_channels", args.texture_channels},
                              {"out", args.out}};
  std::string run_id =
      default_run_id("gen-experts", args.seed, manifest.config_snapshot);
  manifest.seeds = {args.seed};
  std::string dir = cli::prepare_run_dir(run_id, manifest, /*force=*/true);
  cli::RunLock lock(dir);

  auto ds = env::generate_expert_videos(spec, args.levels, args.frames, args.seed);
  data::write_dataset(video_path, ds, /*with_actions=*/false);
  data::write_dataset(action_path, ds, /*with_actions=*/true);

  // Record output hashes next to the manifest.
  nlohmann::json outputs = {{video_path, Sha256::of_file(video_path)},
                            {action_path, Sha256::of_file(action_path)}};
  write_file(dir + "/outputs.json", outputs.dump(2) + "\n");

  std::printf("wrote %s (%lld frames, %lld episodes) and %s\n",
              video_path.c_str(), static_cast<long long>(ds.n_frames()),
              static_cast<long long>(ds.n_episodes()), action_path.c_str());
  std::printf("manifest: %s/manifest.json\n", dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
struct TrainArgs {
  std::string config_path;
  int64_t seed = -1;
  bool deterministic = false;
  std::string run_id;
  bool force = false;
};

template <class S>
int run_train(cfg::TrainConfig config, const TrainArgs& args) {
  auto videos = data::read_training_dataset(config.expert_dataset);
  std::optional<data::VideoDataset> eval_ds;
  if (!config.eval_dataset.empty())
    eval_ds = data::read_dataset(config.eval_dataset);

  cli::RunManifest manifest;
  manifest.command = "train";
  manifest.config_snapshot = cfg::to_json(config);
  manifest.seeds = {config.seed};
  manifest.dataset_hashes = {
      {config.expert_dataset, hash_if_exists(config.expert_dataset)}};
  if (!config.eval_dataset.empty())
    manifest.dataset_hashes.push_back(
        {config.eval_dataset, hash_if_exists(config.eval_dataset)});

  std::string run_id = args.run_id.empty()
                           ? default_run_id("train", config.seed,
                                            manifest.config_snapshot)
                           : args.run_id;
  std::string dir = cli::prepare_run_dir(run_id, manifest, args.force);
  cli::RunLock lock(dir);
  cfg::save_config(dir + "/config.json", config);

  train::Trainer<S> trainer(config, &videos,
                            eval_ds ? &*eval_ds : nullptr,
                            eval::Variant::kFull, dir);
  auto summary = trainer.run_full();
  plot::plot_loss_curves(dir + "/metrics.csv", dir + "/loss_curves.svg");

  std::printf("run %s finished in %.1fs\n", run_id.c_str(),
              summary.elapsed_seconds);
  std::printf("final losses: VSC %.4f  LFR %.4f  GAP %.4f  UPC %.4f\n",
              summary.vsc_last, summary.lfr_last, summary.gap_last,
              summary.upc_last);
  std::printf("labeling accuracy %.4f | latent purity %.4f\n",
              summary.labeling_accuracy, summary.latent_purity);
  std::printf("policy success %.4f (random %.4f) | interactions %lld\n",
              summary.policy_success, summary.random_success,
              static_cast<long long>(summary.interactions_used));
  std::printf("artifacts in %s\n", dir.c_str());
  return 0;
}

int cmd_train(const TrainArgs& args) {
  cfg::TrainConfig config = cfg::load_config(args.config_path);
  if (args.seed >= 0) config.seed = static_cast<uint64_t>(args.seed);
  if (args.deterministic) config.deterministic = true;
  if (config.precision == "float64")
    return run_train<double>(config, args);
  return run_train<float>(config, args);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string data_path;
  int64_t episodes = -1;
  std::string run_id;
  bool force = false;
};

template <class S>
eval::RunMetrics eval_checkpoint(const std::string& path,
                                 const cfg::TrainConfig& config,
                                 const data::VideoDataset& labeled) {
  nets::ModelBundle<S> bundle(config.bundle_dims(), config.seed);
  ckpt::load(path, bundle);
  eval::ActionHead<S> head;  // checkpoints deploy through the action projector

  eval::RunMetrics m;
  m.variant = "checkpoint";
  m.seed = config.seed;
  m.labeling_accuracy = eval::labeling_accuracy(bundle, head, labeled).accuracy;
  m.latent_purity = eval::latent_purity(bundle, labeled);
  auto rollout = eval::rollout_policy(bundle, head, config.env_spec(),
                                      config.eval_episodes,
                                      config.eval_level_base);
  m.policy_success = rollout.success_rate;
  m.mean_steps_success = rollout.mean_steps_success;
  m.random_success = eval::random_rollout(config.env_spec(), config.eval_episodes,
                                          config.eval_level_base, config.seed)
                         .success_rate;
  return m;
}

int cmd_eval(const EvalArgs& args) {
  require<ConfigError>(!args.checkpoints.empty(), "eval: no --checkpoint given");
  for (const auto& c : args.checkpoints)
    require<DataError>(std::filesystem::exists(c),
                       cat("eval: missing checkpoint ", c));
  auto labeled = data::read_dataset(args.data_path);
  require<DataError>(!labeled.actions.empty(),
                     "eval: --data must be an action-labeled (.actions) container");

  cli::RunManifest manifest;
  manifest.command = "eval";
  manifest.config_snapshot = {{"checkpoints", args.checkpoints},
                              {"data", args.data_path},
                              {"episodes", args.episodes}};
  manifest.dataset_hashes = {{args.data_path, hash_if_exists(args.data_path)}};
  std::string run_id =
      args.run_id.empty()
          ? default_run_id("eval", 0, manifest.config_snapshot)
          : args.run_id;
  std::string dir = cli::prepare_run_dir(run_id, manifest, args.force);
  cli::RunLock lock(dir);

  std::vector<eval::RunMetrics> runs;
  for (const auto& path : args.checkpoints) {
    auto config = cfg::from_json(nlohmann::json::parse(ckpt::peek_config(path)));
    if (args.episodes > 0) config.eval_episodes = args.episodes;
    runs.push_back(config.precision == "float64"
                       ? eval_checkpoint<double>(path, config, labeled)
                       : eval_checkpoint<float>(path, config, labeled));
    runs.back().seed = runs.size() - 1;
    std::printf("%s: labeling %.4f purity %.4f success %.4f\n", path.c_str(),
                runs.back().labeling_accuracy, runs.back().latent_purity,
                runs.back().policy_success);
  }
  write_file(dir + "/eval_runs.csv", eval::runs_csv(runs));
  if (runs.size() >= 3) {
    auto rows = eval::summarize(runs);
    write_file(dir + "/eval_summary.csv", eval::summary_csv(rows));
    plot::plot_ablation_bars(dir + "/eval_summary.csv", dir + "/eval_bars.svg");
  } else {
    std::printf("(%zu checkpoint(s): aggregate means need >= 3 seeds, "
                "raw rows only)\n",
                runs.size());
  }
  std::printf("reports in %s\n", dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// ablate / sweep
// ---------------------------------------------------------------------------
struct MatrixArgs {
  std::string config_path;
  int seeds = 3;
  int jobs = 0;
  std::string variants = "full,no_vsc,no_lfr,no_gap";
  std::string s_values = "0,1,2,4";
  std::string run_id;
  bool force = false;
};

template <class S>
int run_matrix_cmd(const cfg::TrainConfig& config, const MatrixArgs& args,
                   bool sweep) {
  auto videos = data::read_training_dataset(config.expert_dataset);
  require<ConfigError>(!config.eval_dataset.empty(),
                       "ablate/sweep: config must name an eval_dataset");
  auto eval_ds = data::read_dataset(config.eval_dataset);

  std::vector<eval::MatrixJob> jobs;
  if (sweep) {
    std::vector<int> values;
    for (size_t p = 0; p < args.s_values.size();) {
      size_t q = args.s_values.find(',', p);
      if (q == std::string::npos) q = args.s_values.size();
      values.push_back(std::stoi(args.s_values.substr(p, q - p)));
      p = q + 1;
    }
    jobs = eval::sweep_matrix(values, config.seed, args.seeds);
  } else {
    std::vector<eval::Variant> variants;
    for (size_t p = 0; p < args.variants.size();) {
      size_t q = args.variants.find(',', p);
      if (q == std::string::npos) q = args.variants.size();
      variants.push_back(eval::variant_from_name(args.variants.substr(p, q - p)));
      p = q + 1;
    }
    jobs = eval::ablation_matrix(variants, config.seed, args.seeds);
  }

  cli::RunManifest manifest;
  manifest.command = sweep ? "sweep" : "ablate";
  manifest.config_snapshot = cfg::to_json(config);
  for (int s = 0; s < args.seeds; ++s)
    manifest.seeds.push_back(config.seed + static_cast<uint64_t>(s));
  manifest.dataset_hashes = {
      {config.expert_dataset, hash_if_exists(config.expert_dataset)},
      {config.eval_dataset, hash_if_exists(config.eval_dataset)}};
  std::string run_id = args.run_id.empty()
                           ? default_run_id(manifest.command, config.seed,
                                            manifest.config_snapshot)
                           : args.run_id;
  std::string dir = cli::prepare_run_dir(run_id, manifest, args.force);
  cli::RunLock lock(dir);

  auto runs = eval::run_matrix<S>(config, jobs, videos, &eval_ds,
                                  dir + "/runs", args.jobs);
  auto rows = eval::summarize(runs);

  if (sweep) {
    write_file(dir + "/sweep_runs.csv", eval::runs_csv(runs));
    write_file(dir + "/sweep_summary.csv", eval::summary_csv(rows));
    plot::plot_sweep_curve(dir + "/sweep_summary.csv", dir + "/sweep_curve.svg");
  } else {
    write_file(dir + "/ablation_runs.csv", eval::runs_csv(runs));
    write_file(dir + "/ablation_summary.csv", eval::summary_csv(rows));
    plot::plot_ablation_bars(dir + "/ablation_summary.csv",
                             dir + "/ablation_bars.svg");
  }
  for (const auto& row : rows)
    std::printf("%-8s labeling %.4f +/- %.4f | success %.4f +/- %.4f (n=%lld)\n",
                row.variant.c_str(), row.labeling_mean, row.labeling_std,
                row.success_mean, row.success_std,
                static_cast<long long>(row.seed_count));
  std::printf("reports in %s\n", dir.c_str());
  return 0;
}

int cmd_matrix(const MatrixArgs& args, bool sweep) {
  cfg::TrainConfig config = cfg::load_config(args.config_path);
  if (config.precision == "float64")
    return run_matrix_cmd<double>(config, args, sweep);
  return run_matrix_cmd<float>(config, args, sweep);
}

// ---------------------------------------------------------------------------
// inspect-dataset
// ---------------------------------------------------------------------------
int cmd_inspect(const std::string& path) {
  auto ds = data::read_dataset(path);
  int64_t min_ep = ds.n_frames(), max_ep = 0;
  for (int64_t e = 0; e < ds.n_episodes(); ++e) {
    int64_t len = ds.episode_end(e) - ds.episode_starts[e];
    min_ep = std::min(min_ep, len);
    max_ep = std::max(max_ep, len);
  }
  std::printf("%s\n", path.c_str());
  std::printf("  frames      : %lld (%lld x %lld x %lld)\n",
              static_cast<long long>(ds.n_frames()),
              static_cast<long long>(ds.channels),
              static_cast<long long>(ds.height),
              static_cast<long long>(ds.width));
  std::printf("  episodes    : %lld (length %lld..%lld)\n",
              static_cast<long long>(ds.n_episodes()),
              static_cast<long long>(min_ep), static_cast<long long>(max_ep));
  std::printf("  actions     : %s\n",
              ds.actions.empty()
                  ? "absent (training container)"
                  : cat(ds.actions.size(), " records (eval companion)").c_str());
  std::printf("  level seeds : base %llu, %lld levels\n",
              static_cast<unsigned long long>(ds.meta.seed),
              static_cast<long long>(ds.meta.n_levels));
  std::printf("  sha256      : %s\n", Sha256::of_file(path).c_str());
  std::printf("  valid: all container invariants hold\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UPESV: policies from action-free videos plus reward-free interactions"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-experts",
                                     "Generate expert videos and the held-out "
                                     "action companion");
  gen_cmd->add_option("--env", gen.env_name, "Env preset, e.g. procgrid8");
  gen_cmd->add_option("--levels", gen.levels, "Distinct level seeds");
  gen_cmd->add_option("--frames", gen.frames, "Total observation count");
  gen_cmd->add_option("--seed", gen.seed, "Level seed base");
  gen_cmd->add_option("--out", gen.out, "Output stem (writes .upsv/.actions)")
      ->required();
  gen_cmd->add_option("--wall-density", gen.wall_density, "Wall probability");
  gen_cmd->add_option("--hazard-prob", gen.hazard_prob, "Hazard probability");
  gen_cmd->add_option("--texture-channels", gen.texture_channels,
                      "Texture channel count");
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing outputs");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Run the full training schedule");
  train_cmd->add_option("--config", train_args.config_path, "TrainConfig JSON")
      ->required();
  train_cmd->add_option("--seed", train_args.seed, "Override config seed");
  train_cmd->add_flag("--deterministic", train_args.deterministic,
                      "Pin deterministic mode");
  train_cmd->add_option("--run-id", train_args.run_id, "Run directory name");
  train_cmd->add_flag("--force", train_args.force, "Reuse an existing run dir");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained checkpoints");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoints,
                       "Checkpoint file (repeat for multi-seed reports)")
      ->required();
  eval_cmd->add_option("--data", eval_args.data_path,
                       "Held-out .actions container")
      ->required();
  eval_cmd->add_option("--episodes", eval_args.episodes, "Rollout episodes");
  eval_cmd->add_option("--run-id", eval_args.run_id, "Run directory name");
  eval_cmd->add_flag("--force", eval_args.force, "Reuse an existing run dir");

  MatrixArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation matrix");
  ablate_cmd->add_option("--config", ablate_args.config_path, "TrainConfig JSON")
      ->required();
  ablate_cmd->add_option("--seeds", ablate_args.seeds, "Seeds per variant (>=3)");
  ablate_cmd->add_option("--variants", ablate_args.variants,
                         "Comma list: full,no_vsc,no_lfr,no_gap");
  ablate_cmd->add_option("--jobs", ablate_args.jobs, "Parallel runs (0=auto)");
  ablate_cmd->add_option("--run-id", ablate_args.run_id, "Run directory name");
  ablate_cmd->add_flag("--force", ablate_args.force, "Reuse an existing run dir");

  MatrixArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the shift-distance sweep");
  sweep_cmd->add_option("--config", sweep_args.config_path, "TrainConfig JSON")
      ->required();
  sweep_cmd->add_option("--s", sweep_args.s_values, "Comma list of shift values");
  sweep_cmd->add_option("--seeds", sweep_args.seeds, "Seeds per value (>=3)");
  sweep_cmd->add_option("--jobs", sweep_args.jobs, "Parallel runs (0=auto)");
  sweep_cmd->add_option("--run-id", sweep_args.run_id, "Run directory name");
  sweep_cmd->add_flag("--force", sweep_args.force, "Reuse an existing run dir");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect-dataset",
                                         "Print and validate a UPSV container");
  inspect_cmd->add_option("path", inspect_path, "Dataset file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return cmd_gen_experts(gen);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (ablate_cmd->parsed()) return cmd_matrix(ablate_args, /*sweep=*/false);
    if (sweep_cmd->parsed()) return cmd_matrix(sweep_args, /*sweep=*/true);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_path);
  } catch (const upesv::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const upesv::TrainError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return 4;
  } catch (const upesv::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const upesv::EnvError& e) {
    std::fprintf(stderr, "environment error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
