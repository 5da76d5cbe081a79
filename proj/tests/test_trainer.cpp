#include <catch2/catch.hpp>

#include <array>
#include <map>

#include "upesv/trainer.hpp"

using namespace upesv;
using namespace upesv::train;

namespace {

// Small-but-real config: full pipeline in a couple of seconds.
cfg::TrainConfig small_config() {
  cfg::TrainConfig c;
  c.feature_dim = 96;  // head 36 + trunk summary 24 + ego readout 36
  c.latent_dim = 8;
  c.codebook_size = 8;
  c.conv_channels = {6, 8};
  c.conv_strides = {1, 2};
  c.ego_window = 3;
  c.latent_hidden = 32;
  c.contrast_hidden = 32;
  c.action_hidden = 32;
  c.world_hidden = 32;
  c.policy_hidden = 32;
  c.batch_video = 16;
  c.batch_transition = 32;
  c.updates_vsc_lfr = 30;
  c.updates_upc = 20;
  c.updates_gap = 8;
  c.interaction_budget = 400;
  c.grounding_rounds = 2;
  c.n_parallel_envs = 4;
  c.eval_episodes = 5;
  c.seed = 11;
  return c;
}

const data::VideoDataset& small_videos() {
  static data::VideoDataset ds =
      env::generate_expert_videos(env::EnvSpec{}, 10, 400, 0);
  return ds;
}

template <class S>
std::map<std::string, std::vector<S>> snapshot(nets::ModelBundle<S>& b) {
  std::map<std::string, std::vector<S>> out;
  for (const auto& p : b.params_all()) {
    std::vector<S> v(static_cast<size_t>(p.value->numel()));
    std::copy_n(p.value->data(), p.value->numel(), v.data());
    out[p.name] = std::move(v);
  }
  return out;
}

}  // namespace

TEST_CASE("pretrain consumes zero interactions and trains only its sets") {
  auto cfg = small_config();
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  auto before = snapshot(tr.bundle());
  tr.pretrain_on_videos();
  REQUIRE(tr.state().interactions_used == 0);
  REQUIRE(tr.state().phase == Phase::kClone);

  auto after = snapshot(tr.bundle());
  // Encoder, contrast pieces, predictor, codebook, world model move; the
  // action projector and policy predictor must be bitwise untouched.
  REQUIRE(before.at("encoder.conv0.weight") != after.at("encoder.conv0.weight"));
  REQUIRE(before.at("latent_predictor.linear1.weight") !=
          after.at("latent_predictor.linear1.weight"));
  REQUIRE(before.at("codebook.rows") != after.at("codebook.rows"));
  REQUIRE(before.at("action_projector.linear0.weight") ==
          after.at("action_projector.linear0.weight"));
  REQUIRE(before.at("policy_predictor.linear0.weight") ==
          after.at("policy_predictor.linear0.weight"));
  // EMA mirror moved via ema_update only; it must differ from init but track f.
  REQUIRE(before.at("encoder_ema.conv0.weight") !=
          after.at("encoder_ema.conv0.weight"));
}

TEST_CASE("clone trains the policy predictor alone, bitwise") {
  auto cfg = small_config();
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  tr.pretrain_on_videos();
  auto before = snapshot(tr.bundle());
  tr.clone_latent_policy();
  auto after = snapshot(tr.bundle());
  for (const auto& [name, vals] : before) {
    if (name.rfind("policy_predictor", 0) == 0) {
      REQUIRE(vals != after.at(name));
    } else {
      INFO(name << " must be bitwise unchanged by UPC");
      REQUIRE(vals == after.at(name));
    }
  }
  REQUIRE(tr.state().interactions_used == 0);
}

TEST_CASE("round-0 collection is uniform within 2% over 10k steps") {
  auto cfg = small_config();
  cfg.interaction_budget = 10000;
  cfg.grounding_rounds = 1;
  cfg.updates_vsc_lfr = 2;
  cfg.updates_upc = 2;
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  tr.pretrain_on_videos();
  tr.clone_latent_policy();
  tr.collect_interactions(0);
  REQUIRE(tr.state().interactions_used == 10000);

  std::array<int64_t, env::kNumActions> counts{};
  for (int64_t i = 0; i < tr.buffer().size(); ++i)
    counts[static_cast<size_t>(tr.buffer().record(i).action)]++;
  for (int a = 0; a < env::kNumActions; ++a) {
    double frac = static_cast<double>(counts[static_cast<size_t>(a)]) / 10000.0;
    REQUIRE(frac == Approx(0.2).margin(0.02));
  }
}

TEST_CASE("grounding changes only the action projector") {
  auto cfg = small_config();
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  tr.pretrain_on_videos();
  tr.clone_latent_policy();
  tr.collect_interactions(0);
  auto before = snapshot(tr.bundle());
  tr.ground_actions(0);
  auto after = snapshot(tr.bundle());
  for (const auto& [name, vals] : before) {
    if (name.rfind("action_projector", 0) == 0) {
      REQUIRE(vals != after.at(name));
    } else {
      INFO(name << " must be bitwise unchanged by GAP");
      REQUIRE(vals == after.at(name));
    }
  }
}

TEST_CASE("budget accounting is exact and over-collection refuses") {
  auto cfg = small_config();
  cfg.interaction_budget = 401;  // not divisible by rounds
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  tr.pretrain_on_videos();
  tr.clone_latent_policy();
  tr.collect_interactions(0);
  tr.ground_actions(0);
  tr.collect_interactions(1);
  tr.ground_actions(1);
  REQUIRE(tr.state().interactions_used == 401);
  REQUIRE(tr.state().phase == Phase::kDone);
  REQUIRE_THROWS_AS(tr.collect_interactions(2), TrainError);
}

TEST_CASE("phase order is enforced") {
  auto cfg = small_config();
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  REQUIRE_THROWS_AS(tr.clone_latent_policy(), TrainError);
  REQUIRE_THROWS_AS(tr.collect_interactions(0), TrainError);
  tr.pretrain_on_videos();
  REQUIRE_THROWS_AS(tr.pretrain_on_videos(), TrainError);
}

TEST_CASE("policy collection replays deterministically") {
  auto cfg = small_config();
  auto run = [&](uint64_t seed) {
    cfg.seed = seed;
    Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
    tr.pretrain_on_videos();
    tr.clone_latent_policy();
    tr.collect_interactions(0);
    tr.ground_actions(0);
    tr.collect_interactions(1);  // round >= 1 uses the deployed policy
    std::vector<int> actions;
    for (int64_t i = 0; i < tr.buffer().size(); ++i)
      actions.push_back(tr.buffer().record(i).action);
    return actions;
  };
  auto a = run(7);
  auto b = run(7);
  REQUIRE(a == b);
  auto c = run(8);
  REQUIRE(a != c);  // different seed, different trajectory
}

TEST_CASE("run_full completes, honors the budget, writes artifacts") {
  auto cfg = small_config();
  auto dir = (std::filesystem::temp_directory_path() / "upesv_run_full").string();
  std::filesystem::remove_all(dir);
  auto eval_ds = env::generate_expert_videos(env::EnvSpec{}, 5,
                                             200, cfg::kEvalLevelBase);
  Trainer<float> tr(cfg, &small_videos(), &eval_ds, eval::Variant::kFull, dir);
  auto summary = tr.run_full();
  REQUIRE(summary.interactions_used == cfg.effective_budget());
  REQUIRE(summary.labeling_accuracy >= 0.0);
  REQUIRE(summary.latent_purity >= 0.0);
  REQUIRE(std::filesystem::exists(dir + "/checkpoint.upck"));
  REQUIRE(std::filesystem::exists(dir + "/summary.json"));
  REQUIRE(std::filesystem::exists(dir + "/metrics.csv"));

  // Checkpoint round-trip restores bitwise-identical forward outputs.
  auto echo = ckpt::peek_config(dir + "/checkpoint.upck");
  auto cfg2 = cfg::from_json(nlohmann::json::parse(echo));
  nets::ModelBundle<float> restored(cfg2.bundle_dims(), 999);
  ckpt::load(dir + "/checkpoint.upck", restored);
  rng::Stream rs(5);
  Tensor<float> probe({2, 5, 8, 8});
  for (int64_t i = 0; i < probe.numel(); ++i)
    probe[i] = static_cast<float>(rs.uniform());
  auto f1 = nets::encode(tr.bundle(), probe);
  auto f2 = nets::encode(restored, probe);
  for (int64_t i = 0; i < f1.numel(); ++i) REQUIRE(f1[i] == f2[i]);
}

TEST_CASE("interaction buffer history matches batch-sampler padding rules") {
  auto cfg = small_config();
  cfg.interaction_budget = 50;
  cfg.grounding_rounds = 1;
  cfg.updates_vsc_lfr = 2;
  cfg.updates_upc = 2;
  Trainer<float> tr(cfg, &small_videos(), nullptr, eval::Variant::kFull, "");
  tr.pretrain_on_videos();
  tr.clone_latent_policy();
  tr.collect_interactions(0);

  // Episode-first records must carry zero history; later records must carry
  // the previous observation.
  std::map<uint64_t, std::vector<int64_t>> by_episode;
  for (int64_t i = 0; i < tr.buffer().size(); ++i)
    by_episode[tr.buffer().record(i).episode_id].push_back(i);
  for (auto& [ep, slots] : by_episode) {
    std::sort(slots.begin(), slots.end(), [&](int64_t a, int64_t b) {
      return tr.buffer().record(a).serial < tr.buffer().record(b).serial;
    });
    const auto& first = tr.buffer().record(slots.front());
    bool all_zero = true;
    for (uint8_t v : first.hist) all_zero &= (v == 0);
    REQUIRE(all_zero);
    if (slots.size() > 1) {
      const auto& second = tr.buffer().record(slots[1]);
      REQUIRE(second.hist == first.o_t);
    }
  }
}
