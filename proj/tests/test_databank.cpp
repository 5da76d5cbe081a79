#include <catch2/catch.hpp>

#include <filesystem>
#include <map>
#include <set>

#include "upesv/databank.hpp"
#include "upesv/env.hpp"

using namespace upesv;
using namespace upesv::data;

namespace {

std::string tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "upesv_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// A synthetic dataset with the given episode lengths; frame t is filled with
// byte (t & 0xff) so identity survives round-trips.
VideoDataset synthetic(const std::vector<int64_t>& lengths, int64_t c = 2,
                       int64_t h = 3, int64_t w = 3) {
  VideoDataset ds;
  ds.channels = c;
  ds.height = h;
  ds.width = w;
  int64_t t = 0;
  for (int64_t len : lengths) {
    ds.episode_starts.push_back(t);
    for (int64_t i = 0; i < len; ++i, ++t)
      ds.frames.insert(ds.frames.end(), static_cast<size_t>(c * h * w),
                       static_cast<uint8_t>(t & 0xff));
  }
  return ds;
}

}  // namespace

TEST_CASE("UPSV round-trip is lossless") {
  env::EnvSpec spec;
  auto ds = env::generate_expert_videos(spec, 5, 120, 9);
  auto path = tmp_path("roundtrip.upsv");
  write_dataset(path, ds, /*with_actions=*/false);
  auto back = read_dataset(path);
  REQUIRE(back.frames == ds.frames);
  REQUIRE(back.episode_starts == ds.episode_starts);
  REQUIRE(back.actions.empty());
  REQUIRE(back.meta.seed == ds.meta.seed);
  REQUIRE(back.meta.spec_hash == ds.meta.spec_hash);

  auto apath = tmp_path("roundtrip.actions");
  write_dataset(apath, ds, /*with_actions=*/true);
  auto labeled = read_dataset(apath);
  REQUIRE(labeled.actions == ds.actions);
  REQUIRE(labeled.frames == ds.frames);

  // Two writes are byte-identical.
  write_dataset(tmp_path("roundtrip2.upsv"), ds, false);
  REQUIRE(read_file(path) == read_file(tmp_path("roundtrip2.upsv")));
}

TEST_CASE("UPSV format errors are explicit") {
  auto ds = synthetic({3, 4});
  auto bytes = serialize_dataset(ds, false);

  SECTION("truncated payload names byte counts") {
    write_file(tmp_path("trunc.upsv"), bytes.substr(0, bytes.size() - 7));
    try {
      read_dataset(tmp_path("trunc.upsv"));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      REQUIRE(std::string(e.what()).find("expected") != std::string::npos);
      REQUIRE(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  SECTION("bad magic") {
    auto corrupted = bytes;
    corrupted[0] = 'X';
    write_file(tmp_path("magic.upsv"), corrupted);
    REQUIRE_THROWS_AS(read_dataset(tmp_path("magic.upsv")), DataError);
  }
  SECTION("zero frame count is rejected") {
    auto corrupted = bytes;
    for (int i = 8; i < 12; ++i) corrupted[i] = 0;
    write_file(tmp_path("zero.upsv"), corrupted);
    REQUIRE_THROWS_AS(read_dataset(tmp_path("zero.upsv")), DataError);
  }
  SECTION("training loader refuses labeled containers") {
    auto ds2 = synthetic({3});
    ds2.actions = {1, 2};
    write_dataset(tmp_path("labeled.actions"), ds2, true);
    REQUIRE_THROWS_AS(read_training_dataset(tmp_path("labeled.actions")), DataError);
  }
}

TEST_CASE("dataset validation rejects bad episode structure") {
  auto one_frame_ep = synthetic({2});
  one_frame_ep.episode_starts = {0, 1};  // makes both episodes length 1
  REQUIRE_THROWS_AS(one_frame_ep.validate(), DataError);

  auto nonzero_start = synthetic({3});
  nonzero_start.episode_starts = {1};
  REQUIRE_THROWS_AS(nonzero_start.validate(), DataError);
}

TEST_CASE("sample_pairs: uniformity, boundaries, history padding") {
  rng::Stream rs(42);

  SECTION("episode of length 2 forces the unique pair with zero history") {
    auto ds = synthetic({2});
    auto b = sample_pairs<float>(ds, 1, 1, rs);
    REQUIRE(b.size() == 1);
    REQUIRE(b.o_hist.numel() == b.o_t.numel());
    for (int64_t i = 0; i < b.o_hist.numel(); ++i)
      REQUIRE(b.o_hist[i] == 0.0f);
    // o_t is frame 0, o_t1 frame 1.
    REQUIRE(b.o_t[0] == Approx(0.0f));
    REQUIRE(b.o_t1[0] == Approx(1.0f / 255.0f));
  }

  SECTION("two equal episodes are sampled 50/50 within 1%") {
    auto ds = synthetic({11, 11});
    auto valid = ds.valid_pair_starts();
    int64_t first = 0;
    const int64_t n = 100000;
    auto idx = sample_pair_indices(ds, valid, n, rs);
    for (auto t : idx)
      if (t < 11) ++first;
    double frac = static_cast<double>(first) / static_cast<double>(n);
    REQUIRE(frac == Approx(0.5).margin(0.01));
  }

  SECTION("an episode's last frame never starts a pair") {
    auto ds = synthetic({4, 5, 2});
    auto valid = ds.valid_pair_starts();
    for (int64_t e = 0; e < ds.n_episodes(); ++e) {
      int64_t last = ds.episode_end(e) - 1;
      REQUIRE(std::find(valid.begin(), valid.end(), last) == valid.end());
    }
    auto idx = sample_pair_indices(ds, valid, 2000, rs);
    for (auto t : idx)
      REQUIRE(ds.episode_of_frame(t) == ds.episode_of_frame(t + 1));
  }

  SECTION("history is zero-padded only before the episode start") {
    auto ds = synthetic({5});
    // Pair start at t=2 with k=3: hist frames are (-1 -> zeros, 0, 1).
    auto b = assemble_pairs<float>(ds, {2}, 3);
    const int64_t fb = ds.frame_bytes();
    REQUIRE(b.o_hist[0] == 0.0f);                       // padded frame
    REQUIRE(b.o_hist[fb] == Approx(0.0f));              // frame 0 bytes = 0
    REQUIRE(b.o_hist[2 * fb] == Approx(1.0f / 255.0f)); // frame 1 bytes = 1
  }

  SECTION("property: sampled pairs never span episodes") {
    rng::Stream layout_rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int64_t> lens;
      int64_t n_eps = 1 + layout_rng.bounded(6);
      for (int64_t e = 0; e < n_eps; ++e)
        lens.push_back(2 + static_cast<int64_t>(layout_rng.bounded(7)));
      auto ds = synthetic(lens);
      auto valid = ds.valid_pair_starts();
      auto idx = sample_pair_indices(ds, valid, 64, layout_rng);
      for (auto t : idx)
        REQUIRE(ds.episode_of_frame(t) == ds.episode_of_frame(t + 1));
    }
  }

  SECTION("empty-ish dataset errors") {
    auto ds = synthetic({2});
    std::vector<int64_t> no_valid;
    REQUIRE_THROWS_AS(sample_pair_indices(ds, no_valid, 1, rs), DataError);
  }
}

TEST_CASE("interaction buffer: ring semantics and replay fidelity") {
  const int64_t fb = 2 * 3 * 3;
  auto make_rec = [&](uint8_t tag, uint8_t action, uint64_t ep) {
    InteractionBuffer::Record r;
    r.hist.assign(static_cast<size_t>(fb), tag);
    r.o_t.assign(static_cast<size_t>(fb), tag);
    r.o_t1.assign(static_cast<size_t>(fb), static_cast<uint8_t>(tag + 1));
    r.action = action;
    r.episode_id = ep;
    return r;
  };

  SECTION("single record, M=1 returns that record") {
    InteractionBuffer buf(4, 2, 3, 3, 1, 5);
    buf.push(make_rec(9, 3, 0));
    rng::Stream rs(1);
    auto batch = sample_transitions<float>(buf, 1, rs);
    REQUIRE(batch.actions == std::vector<int>{3});
    REQUIRE(batch.obs.o_t[0] == Approx(9.0f / 255.0f));
  }

  SECTION("overflow evicts the oldest records first") {
    InteractionBuffer buf(3, 2, 3, 3, 1, 5);
    for (uint8_t i = 0; i < 5; ++i) buf.push(make_rec(i, 0, i));
    REQUIRE(buf.size() == 3);
    std::set<uint64_t> eps;
    for (int64_t s = 0; s < buf.size(); ++s) eps.insert(buf.record(s).episode_id);
    REQUIRE(eps == std::set<uint64_t>{2, 3, 4});
  }

  SECTION("sampled actions replay the logged ground truth") {
    InteractionBuffer buf(64, 2, 3, 3, 1, 5);
    std::map<uint8_t, int> tag_to_action;
    rng::Stream rs(5);
    for (int i = 0; i < 40; ++i) {
      uint8_t tag = static_cast<uint8_t>(i);
      int action = static_cast<int>(rs.bounded(5));
      tag_to_action[tag] = action;
      buf.push(make_rec(tag, static_cast<uint8_t>(action), 0));
    }
    auto batch = sample_transitions<float>(buf, 200, rs);
    for (int64_t i = 0; i < 200; ++i) {
      uint8_t tag = static_cast<uint8_t>(
          std::lround(batch.obs.o_t[i * fb] * 255.0f));
      REQUIRE(batch.actions[static_cast<size_t>(i)] == tag_to_action.at(tag));
    }
  }

  SECTION("action out of range is rejected") {
    InteractionBuffer buf(4, 2, 3, 3, 1, 5);
    REQUIRE_THROWS_AS(buf.push(make_rec(0, 7, 0)), DataError);
  }
}
