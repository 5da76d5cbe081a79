#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>

#include "upesv/harness.hpp"
#include "upesv/manifest.hpp"
#include "upesv/plot.hpp"

using namespace upesv;

namespace {

std::string tmp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "upesv_evalcli" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

cfg::TrainConfig tiny_run_config() {
  cfg::TrainConfig c;
  c.feature_dim = 96;
  c.latent_dim = 8;
  c.codebook_size = 8;
  c.conv_channels = {6, 8};
  c.conv_strides = {1, 2};
  c.ego_window = 3;
  c.latent_hidden = 32;
  c.contrast_hidden = 32;
  c.action_hidden = 32;
  c.world_hidden = 32;
  c.policy_hidden = 48;
  c.batch_video = 16;
  c.batch_transition = 32;
  c.updates_vsc_lfr = 25;
  c.updates_upc = 15;
  c.updates_gap = 8;
  c.interaction_budget = 300;
  c.grounding_rounds = 2;
  c.n_parallel_envs = 4;
  c.eval_episodes = 5;
  c.seed = 3;
  return c;
}

const data::VideoDataset& train_videos() {
  static data::VideoDataset ds =
      env::generate_expert_videos(env::EnvSpec{}, 8, 400, 0);
  return ds;
}

const data::VideoDataset& eval_videos() {
  static data::VideoDataset ds =
      env::generate_expert_videos(env::EnvSpec{}, 5, 250, cfg::kEvalLevelBase);
  return ds;
}

}  // namespace

TEST_CASE("untrained labeling accuracy averages to chance over inits") {
  // A fresh bundle predicts one constant code/action per init, so the
  // accuracy of a single init is bimodal; the mean over inits is chance.
  auto ds = eval_videos();
  double acc_sum = 0;
  const int n_inits = 30;
  nets::BundleDims dims = tiny_run_config().bundle_dims();
  for (int i = 0; i < n_inits; ++i) {
    nets::ModelBundle<float> b(dims, 1000 + i);
    b.latent_predictor.layer(1).weight.zero();
    b.latent_predictor.layer(1).bias.zero();
    eval::ActionHead<float> head;
    acc_sum += eval::labeling_accuracy(b, head, ds).accuracy;
  }
  REQUIRE(acc_sum / n_inits == Approx(0.2).margin(0.05));
}

TEST_CASE("latent purity: collapse floor equals the majority action share") {
  auto ds = eval_videos();
  auto dims = tiny_run_config().bundle_dims();
  nets::ModelBundle<float> b(dims, 7);
  // Zeroed latent head: every pair lands on one code.
  b.latent_predictor.layer(1).weight.zero();
  b.latent_predictor.layer(1).bias.zero();
  double purity = eval::latent_purity(b, ds);

  std::array<int64_t, 5> counts{};
  for (uint8_t a : ds.actions) counts[a]++;
  int64_t majority = *std::max_element(counts.begin(), counts.end());
  double expected = static_cast<double>(majority) /
                    static_cast<double>(ds.actions.size());
  REQUIRE(purity == Approx(expected).margin(1e-9));
}

TEST_CASE("random rollout on the default spec stays under the chance bound") {
  auto stats = eval::random_rollout(env::EnvSpec{}, 100, cfg::kEvalLevelBase, 17);
  REQUIRE(stats.success_rate <= 0.15);
}

TEST_CASE("report aggregation refuses fewer than three seeds") {
  std::vector<eval::RunMetrics> runs(2);
  runs[0].variant = runs[1].variant = "full";
  REQUIRE_THROWS_AS(eval::aggregate("full", runs), ConfigError);

  runs.push_back(runs[0]);
  runs[0].labeling_accuracy = 0.9;
  runs[1].labeling_accuracy = 1.0;
  runs[2].labeling_accuracy = 0.8;
  auto row = eval::aggregate("full", runs);
  REQUIRE(row.seed_count == 3);
  REQUIRE(row.labeling_mean == Approx(0.9));
  REQUIRE(row.labeling_std == Approx(std::sqrt(2.0 / 300.0)).epsilon(1e-6));
}

TEST_CASE("ablation variants run and honor their structural contracts") {
  auto cfg = tiny_run_config();

  SECTION("no_vsc: encoder frozen bitwise at init") {
    train::Trainer<float> tr(cfg, &train_videos(), nullptr,
                             eval::Variant::kNoVsc, "");
    auto before = tr.bundle().encoder.head().weight;
    tr.pretrain_on_videos();
    for (int64_t i = 0; i < before.numel(); ++i)
      REQUIRE(tr.bundle().encoder.head().weight[i] == before[i]);
  }

  SECTION("no_lfr: predictor, codebook, world model frozen at init") {
    train::Trainer<float> tr(cfg, &train_videos(), nullptr,
                             eval::Variant::kNoLfr, "");
    auto cb_before = tr.bundle().codebook;
    tr.pretrain_on_videos();
    for (int64_t i = 0; i < cb_before.numel(); ++i)
      REQUIRE(tr.bundle().codebook[i] == cb_before[i]);
  }

  SECTION("no_gap labels only through the decoder table and spends the same budget") {
    auto m_full = eval::run_pipeline<float>(cfg, eval::Variant::kFull, 5,
                                            train_videos(), &eval_videos(), "");
    auto m_nogap = eval::run_pipeline<float>(cfg, eval::Variant::kNoGap, 5,
                                             train_videos(), &eval_videos(), "");
    REQUIRE(m_full.interactions_used == m_nogap.interactions_used);

    train::Trainer<float> tr(cfg, &train_videos(), nullptr,
                             eval::Variant::kNoGap, "");
    tr.pretrain_on_videos();
    tr.clone_latent_policy();
    tr.collect_interactions(0);
    auto h_before = tr.bundle().action_projector.layer(0).weight;
    tr.ground_actions(0);
    REQUIRE(tr.head().via_decoder);
    REQUIRE(tr.head().table.size() ==
            static_cast<size_t>(cfg.codebook_size));
    for (int a : tr.head().table) {
      REQUIRE(a >= 0);
      REQUIRE(a < 5);
    }
    // The projector itself is untouched.
    for (int64_t i = 0; i < h_before.numel(); ++i)
      REQUIRE(tr.bundle().action_projector.layer(0).weight[i] == h_before[i]);
  }
}

TEST_CASE("config parsing is strict and names offending fields") {
  auto dir = tmp_dir("config");
  SECTION("unknown keys are rejected") {
    write_file(dir + "/bad.json", "{\"batch_video\": 16, \"bogus_knob\": 1}\n");
    try {
      cfg::load_config(dir + "/bad.json");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      REQUIRE(std::string(e.what()).find("bogus_knob") != std::string::npos);
    }
  }
  SECTION("constraint violations name the field") {
    write_file(dir + "/bad2.json", "{\"ema_m\": 1.5}\n");
    try {
      cfg::load_config(dir + "/bad2.json");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      REQUIRE(std::string(e.what()).find("ema_m") != std::string::npos);
    }
  }
  SECTION("wrong types name the field") {
    write_file(dir + "/bad3.json", "{\"batch_video\": \"many\"}\n");
    REQUIRE_THROWS_AS(cfg::load_config(dir + "/bad3.json"), ConfigError);
  }
  SECTION("round trip preserves every field") {
    cfg::TrainConfig c = tiny_run_config();
    c.expert_dataset = "x.upsv";
    cfg::save_config(dir + "/cfg.json", c);
    auto back = cfg::load_config(dir + "/cfg.json");
    REQUIRE(cfg::to_json(back) == cfg::to_json(c));
  }
}

TEST_CASE("plots are pure functions of their CSV") {
  auto dir = tmp_dir("plots");
  std::string csv =
      "variant,seed_count,labeling_mean,labeling_std,purity_mean,purity_std,"
      "success_mean,success_std,steps_mean,steps_std\n"
      "full,3,0.97,0.01,0.98,0.005,0.85,0.03,6.1,0.4\n"
      "no_vsc,3,0.91,0.02,0.93,0.01,0.7,0.05,6.6,0.6\n";
  write_file(dir + "/summary.csv", csv);
  plot::plot_ablation_bars(dir + "/summary.csv", dir + "/a.svg");
  plot::plot_ablation_bars(dir + "/summary.csv", dir + "/b.svg");
  REQUIRE(read_file(dir + "/a.svg") == read_file(dir + "/b.svg"));
  REQUIRE(read_file(dir + "/a.svg").find("<svg") == 0);
}

TEST_CASE("run directories: manifest before work, lock is exclusive") {
  auto root = tmp_dir("runs_root");
  setenv("UPESV_RUNS_DIR", root.c_str(), 1);

  cli::RunManifest manifest;
  manifest.command = "test";
  manifest.config_snapshot = {{"k", 1}};
  auto dir = cli::prepare_run_dir("case1", manifest, false);
  REQUIRE(std::filesystem::exists(dir + "/manifest.json"));
  auto j = nlohmann::json::parse(read_file(dir + "/manifest.json"));
  REQUIRE(j.at("run_id") == "case1");
  REQUIRE(j.at("code_version").get<std::string>().size() == 64);

  // Existing run without force is refused.
  REQUIRE_THROWS_AS(cli::prepare_run_dir("case1", manifest, false), ConfigError);
  REQUIRE_NOTHROW(cli::prepare_run_dir("case1", manifest, true));

  {
    cli::RunLock lock(dir);
    REQUIRE_THROWS_AS(cli::RunLock(dir), DataError);
  }
  REQUIRE_NOTHROW(cli::RunLock(dir));  // released on destruction
  unsetenv("UPESV_RUNS_DIR");
}

TEST_CASE("checkpoint rejects corrupt files") {
  auto dir = tmp_dir("ckpt");
  auto dims = tiny_run_config().bundle_dims();
  nets::ModelBundle<float> b(dims, 3);
  ckpt::save(dir + "/a.upck", b, "{}", {});
  auto bytes = read_file(dir + "/a.upck");
  write_file(dir + "/trunc.upck", bytes.substr(0, bytes.size() / 2));
  nets::ModelBundle<float> b2(dims, 4);
  REQUIRE_THROWS_AS(ckpt::load(dir + "/trunc.upck", b2), DataError);
  write_file(dir + "/junk.upck", "not a checkpoint");
  REQUIRE_THROWS_AS(ckpt::load(dir + "/junk.upck", b2), DataError);
}

TEST_CASE("CLI: exit codes and reproducible datasets") {
  std::string cli = UPESV_CLI_PATH;
  auto dir = tmp_dir("cli");
  setenv("UPESV_RUNS_DIR", (dir + "/runs").c_str(), 1);
  auto sh = [&](const std::string& cmd) {
    return WEXITSTATUS(std::system((cmd + " >/dev/null 2>&1").c_str()));
  };

  SECTION("gen-experts is deterministic and refuses to overwrite") {
    REQUIRE(sh(cli + " gen-experts --levels 4 --frames 120 --seed 9 --out " +
               dir + "/d1") == 0);
    REQUIRE(sh(cli + " gen-experts --levels 4 --frames 120 --seed 9 --out " +
               dir + "/d2") == 0);
    REQUIRE(read_file(dir + "/d1.upsv") == read_file(dir + "/d2.upsv"));
    // rerun without --force refuses, with --force rewrites identically
    REQUIRE(sh(cli + " gen-experts --levels 4 --frames 120 --seed 9 --out " +
               dir + "/d1") == 2);
    REQUIRE(sh(cli + " gen-experts --levels 4 --frames 120 --seed 9 --out " +
               dir + "/d1 --force") == 0);
    REQUIRE(read_file(dir + "/d1.upsv") == read_file(dir + "/d2.upsv"));
  }

  SECTION("invalid config exits 2, missing data exits 3") {
    write_file(dir + "/bad.json", "{\"nope\": 1}\n");
    REQUIRE(sh(cli + " train --config " + dir + "/bad.json") == 2);
    write_file(dir + "/ok.json",
               "{\"expert_dataset\": \"" + dir + "/missing.upsv\"}\n");
    REQUIRE(sh(cli + " train --config " + dir + "/ok.json") == 3);
    REQUIRE(sh(cli + " inspect-dataset " + dir + "/missing.upsv") == 3);
  }
  unsetenv("UPESV_RUNS_DIR");
}
