// ProcGrid: seeded procedurally generated gridworld levels, a BFS expert,
// expert video generation, and an exact inverse-dynamics oracle.
//
// The environment is reward-free by construction: step() reports only a
// success flag for evaluation, and nothing in this header computes a return.
#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "upesv/common.hpp"
#include "upesv/databank.hpp"
#include "upesv/rng.hpp"

namespace upesv::env {

// Action set is fixed so brute-force checks stay exhaustive.
enum Action : int { kNoop = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4 };
inline constexpr int kNumActions = 5;

// Row/col deltas indexed by action.
inline constexpr int kDr[kNumActions] = {0, -1, 1, 0, 0};
inline constexpr int kDc[kNumActions] = {0, 0, 0, -1, 1};

// Observation channel layout.
inline constexpr int kChAgent = 0;
inline constexpr int kChWall = 1;
inline constexpr int kChGoal = 2;
inline constexpr int kChHazard = 3;
inline constexpr int kChTexture = 4;  // first texture channel

struct EnvSpec {
  int grid_size = 8;
  double wall_density = 0.2;
  int texture_channels = 1;
  int max_steps = 0;  // 0 resolves to 4 * grid_size
  double hazard_prob = 0.25;

  int n_actions() const { return kNumActions; }
  int obs_channels() const { return 4 + texture_channels; }
  int obs_height() const { return grid_size; }
  int obs_width() const { return grid_size; }
  int resolved_max_steps() const { return max_steps > 0 ? max_steps : 4 * grid_size; }

  void validate() const {
    require<ConfigError>(grid_size >= 2, "env: grid_size must be >= 2");
    require<ConfigError>(wall_density >= 0.0 && wall_density < 1.0,
                         "env: wall_density must be in [0, 1)");
    require<ConfigError>(texture_channels >= 1, "env: texture_channels must be >= 1");
    require<ConfigError>(max_steps >= 0, "env: max_steps must be >= 0");
    require<ConfigError>(resolved_max_steps() > 0, "env: max_steps must be positive");
    require<ConfigError>(hazard_prob >= 0.0 && hazard_prob <= 1.0,
                         "env: hazard_prob must be in [0, 1]");
  }

  uint64_t hash() const {
    uint64_t h = 0x9e3779b97f4a7c15ull;
    auto mix = [&h](uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      uint64_t s = h;
      h = rng::splitmix64(s);
    };
    mix(static_cast<uint64_t>(grid_size));
    mix(static_cast<uint64_t>(wall_density * 1e9));
    mix(static_cast<uint64_t>(texture_channels));
    mix(static_cast<uint64_t>(resolved_max_steps()));
    mix(static_cast<uint64_t>(hazard_prob * 1e9));
    return h;
  }
};

struct Cell {
  int r = 0, c = 0;
  bool operator==(const Cell&) const = default;
};

struct Observation {
  int channels = 0, height = 0, width = 0;
  std::vector<uint8_t> bytes;  // (channel, row, col), value = byte / 255

  uint8_t at(int ch, int r, int c) const {
    return bytes[static_cast<size_t>((ch * height + r) * width + c)];
  }
  uint8_t& at(int ch, int r, int c) {
    return bytes[static_cast<size_t>((ch * height + r) * width + c)];
  }
  int64_t size() const { return static_cast<int64_t>(bytes.size()); }

  template <class S>
  void to_float(S* dst) const {
    data::detail::copy_frame(bytes.data(), dst, size());
  }
};

struct StepInfo {
  bool success = false;      // reached the goal; evaluation only
  bool hit_hazard = false;
  bool timed_out = false;
  int step_count = 0;
};

struct LevelState {
  EnvSpec spec;
  uint64_t level_seed = 0;
  Cell agent, goal;
  std::optional<Cell> hazard;
  std::vector<uint8_t> walls;    // grid_size^2, 1 = wall
  std::vector<uint8_t> texture;  // texture_channels * grid_size^2
  int step_count = 0;
  bool done = false;

  bool wall_at(int r, int c) const {
    return walls[static_cast<size_t>(r * spec.grid_size + c)] != 0;
  }
  bool in_grid(int r, int c) const {
    return r >= 0 && r < spec.grid_size && c >= 0 && c < spec.grid_size;
  }
  bool blocked(int r, int c) const { return !in_grid(r, c) || wall_at(r, c); }
  bool hazard_at(int r, int c) const {
    return hazard && hazard->r == r && hazard->c == c;
  }
};

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------
inline Observation render(const LevelState& st) {
  const int g = st.spec.grid_size;
  Observation o;
  o.channels = st.spec.obs_channels();
  o.height = g;
  o.width = g;
  o.bytes.assign(static_cast<size_t>(o.channels) * g * g, 0);
  o.at(kChAgent, st.agent.r, st.agent.c) = 255;
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c)
      if (st.wall_at(r, c)) o.at(kChWall, r, c) = 255;
  o.at(kChGoal, st.goal.r, st.goal.c) = 255;
  if (st.hazard) o.at(kChHazard, st.hazard->r, st.hazard->c) = 255;
  std::copy(st.texture.begin(), st.texture.end(),
            o.bytes.begin() + static_cast<size_t>(kChTexture) * g * g);
  return o;
}

// ---------------------------------------------------------------------------
// BFS distance field from the goal; walls and the hazard are impassable.
// -1 marks unreachable cells.
// ---------------------------------------------------------------------------
inline std::vector<int> goal_distance_field(const LevelState& st) {
  const int g = st.spec.grid_size;
  std::vector<int> dist(static_cast<size_t>(g) * g, -1);
  std::deque<Cell> frontier;
  dist[static_cast<size_t>(st.goal.r * g + st.goal.c)] = 0;
  frontier.push_back(st.goal);
  while (!frontier.empty()) {
    Cell cur = frontier.front();
    frontier.pop_front();
    int d = dist[static_cast<size_t>(cur.r * g + cur.c)];
    for (int a = 1; a < kNumActions; ++a) {
      int nr = cur.r + kDr[a], nc = cur.c + kDc[a];
      if (!st.in_grid(nr, nc) || st.wall_at(nr, nc) || st.hazard_at(nr, nc))
        continue;
      int& slot = dist[static_cast<size_t>(nr * g + nc)];
      if (slot < 0) {
        slot = d + 1;
        frontier.push_back({nr, nc});
      }
    }
  }
  return dist;
}

// ---------------------------------------------------------------------------
// Level generation. Identical (spec, level_seed) yields bitwise-identical
// levels; the texture depends on level_seed alone.
// ---------------------------------------------------------------------------
inline constexpr int kMaxGenAttempts = 50;

inline std::vector<uint8_t> make_texture(const EnvSpec& spec, uint64_t level_seed) {
  const int g = spec.grid_size;
  auto rs = rng::Stream::derive(level_seed, {0x7e787572ull});  // "textur"-ish tag
  std::vector<uint8_t> tex(static_cast<size_t>(spec.texture_channels) * g * g);
  for (auto& b : tex) b = static_cast<uint8_t>(rs.bounded(256));
  return tex;
}

inline LevelState make_env(const EnvSpec& spec, uint64_t level_seed) {
  spec.validate();
  const int g = spec.grid_size;
  const int n_cells = g * g;

  for (int attempt = 0; attempt < kMaxGenAttempts; ++attempt) {
    auto rs = rng::Stream::derive(spec.hash(),
                                  {level_seed, static_cast<uint64_t>(attempt)});
    LevelState st;
    st.spec = spec;
    st.level_seed = level_seed;
    st.walls.assign(static_cast<size_t>(n_cells), 0);
    for (auto& w : st.walls) w = rs.bernoulli(spec.wall_density) ? 1 : 0;

    std::vector<int> free_cells;
    for (int i = 0; i < n_cells; ++i)
      if (!st.walls[static_cast<size_t>(i)]) free_cells.push_back(i);
    bool want_hazard = rs.bernoulli(spec.hazard_prob);
    if (static_cast<int>(free_cells.size()) < (want_hazard ? 3 : 2)) continue;

    auto draw_free = [&](auto&&... taken) {
      while (true) {
        int cell = free_cells[rs.bounded(free_cells.size())];
        if (((cell != taken) && ...)) return cell;
      }
    };
    int agent_cell = draw_free();
    int goal_cell = draw_free(agent_cell);
    st.agent = {agent_cell / g, agent_cell % g};
    st.goal = {goal_cell / g, goal_cell % g};
    if (want_hazard) {
      int hz = draw_free(agent_cell, goal_cell);
      st.hazard = Cell{hz / g, hz % g};
    }

    auto dist = goal_distance_field(st);
    int d = dist[static_cast<size_t>(agent_cell)];
    // Expert must finish within the step limit, and a start adjacent to the
    // goal makes a degenerate 2-frame episode; require at least two steps.
    if (d < 2 || d > spec.resolved_max_steps()) continue;

    st.texture = make_texture(spec, level_seed);
    return st;
  }
  throw EnvError(cat("make_env: no connected level after ", kMaxGenAttempts,
                     " attempts (seed ", level_seed, ", wall_density ",
                     spec.wall_density, ")"));
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------
struct StepResult {
  Observation obs;
  bool done = false;
  StepInfo info;
};

inline StepResult step(LevelState& st, int action) {
  require<EnvError>(!st.done, "step: episode already finished");
  require<EnvError>(action >= 0 && action < kNumActions,
                    cat("step: action ", action, " out of range"));

  int nr = st.agent.r + kDr[action];
  int nc = st.agent.c + kDc[action];
  if (action != kNoop && !st.blocked(nr, nc)) st.agent = {nr, nc};
  ++st.step_count;

  StepResult res;
  res.info.step_count = st.step_count;
  if (st.agent == st.goal) {
    st.done = true;
    res.info.success = true;
  } else if (st.hazard && st.agent == *st.hazard) {
    st.done = true;
    res.info.hit_hazard = true;
  } else if (st.step_count >= st.spec.resolved_max_steps()) {
    st.done = true;
    res.info.timed_out = true;
  }
  res.done = st.done;
  res.obs = render(st);
  return res;
}

// First move of a BFS shortest path; ties broken by action index order
// (up < down < left < right). Never a no-op, never a bump.
inline int expert_action(const LevelState& st) {
  auto dist = goal_distance_field(st);
  const int g = st.spec.grid_size;
  int d = dist[static_cast<size_t>(st.agent.r * g + st.agent.c)];
  require<EnvError>(d > 0, d == 0 ? "expert_action: already at goal"
                                  : "expert_action: no path to goal");
  for (int a = 1; a < kNumActions; ++a) {
    int nr = st.agent.r + kDr[a], nc = st.agent.c + kDc[a];
    if (st.blocked(nr, nc) || st.hazard_at(nr, nc)) continue;
    if (dist[static_cast<size_t>(nr * g + nc)] == d - 1) return a;
  }
  throw EnvError("expert_action: inconsistent distance field");
}

// ---------------------------------------------------------------------------
// Exact inverse dynamics from a pair of observations of the same level.
// Returns the sorted set of actions consistent with the transition.
// ---------------------------------------------------------------------------
inline Cell decode_agent(const Observation& o) {
  int found = 0;
  Cell pos;
  for (int r = 0; r < o.height; ++r)
    for (int c = 0; c < o.width; ++c) {
      uint8_t v = o.at(kChAgent, r, c);
      if (v == 255) {
        pos = {r, c};
        ++found;
      } else {
        require<EnvError>(v == 0, "oracle: agent channel is not one-hot");
      }
    }
  require<EnvError>(found == 1, "oracle: agent channel must contain exactly one cell");
  return pos;
}

inline std::vector<int> oracle_inverse_dynamics(const Observation& o_t,
                                                const Observation& o_t1) {
  require<EnvError>(o_t.channels == o_t1.channels && o_t.height == o_t1.height &&
                        o_t.width == o_t1.width,
                    "oracle: observation shapes differ");
  const int plane = o_t.height * o_t.width;
  // Channels 1.. are static within an episode.
  require<EnvError>(std::equal(o_t.bytes.begin() + plane, o_t.bytes.end(),
                               o_t1.bytes.begin() + plane),
                    "oracle: static channels differ, not a same-level transition");

  Cell p0 = decode_agent(o_t);
  Cell p1 = decode_agent(o_t1);
  int dr = p1.r - p0.r, dc = p1.c - p0.c;

  if (dr == 0 && dc == 0) {
    // Agent stayed: no-op plus every direction blocked by wall or border.
    std::vector<int> out = {kNoop};
    for (int a = 1; a < kNumActions; ++a) {
      int nr = p0.r + kDr[a], nc = p0.c + kDc[a];
      bool off = nr < 0 || nr >= o_t.height || nc < 0 || nc >= o_t.width;
      if (off || o_t.at(kChWall, nr, nc) == 255) out.push_back(a);
    }
    return out;
  }
  for (int a = 1; a < kNumActions; ++a)
    if (dr == kDr[a] && dc == kDc[a]) return {a};
  throw EnvError(cat("oracle: displacement (", dr, ",", dc,
                     ") is not a single step"));
}

// ---------------------------------------------------------------------------
// Expert video generation. Level seeds cycle through
// [seed, seed + n_levels); the true actions are returned for the held-out
// companion file and are never consumed by training code.
// ---------------------------------------------------------------------------
struct ExpertEpisode {
  std::vector<Observation> frames;
  std::vector<uint8_t> actions;  // frames.size() - 1
  bool success = false;
};

// Re-place the agent on a free cell drawn from start_seed, keeping the level
// itself (walls, goal, hazard, texture) exactly as make_env produced it. The
// draw must leave a reachable goal within the step limit; falls back to the
// canonical start when no valid cell comes up.
inline void randomize_start(LevelState& st, uint64_t start_seed) {
  auto rs = rng::Stream::derive(start_seed, {0x73746172ull});
  auto dist = goal_distance_field(st);
  const int g = st.spec.grid_size;
  for (int attempt = 0; attempt < 20; ++attempt) {
    int cell = static_cast<int>(rs.bounded(static_cast<uint64_t>(g) * g));
    int d = dist[static_cast<size_t>(cell)];
    Cell c{cell / g, cell % g};
    if (st.wall_at(c.r, c.c) || st.hazard_at(c.r, c.c) || c == st.goal) continue;
    if (d < 2 || d > st.spec.resolved_max_steps()) continue;
    st.agent = c;
    return;
  }
}

inline ExpertEpisode run_expert_episode(const EnvSpec& spec, uint64_t level_seed,
                                        std::optional<uint64_t> start_seed = {}) {
  LevelState st = make_env(spec, level_seed);
  if (start_seed) randomize_start(st, *start_seed);
  ExpertEpisode ep;
  ep.frames.push_back(render(st));
  while (!st.done) {
    int a = expert_action(st);
    StepResult res = step(st, a);
    ep.actions.push_back(static_cast<uint8_t>(a));
    ep.frames.push_back(std::move(res.obs));
    ep.success = res.info.success;
  }
  return ep;
}

inline data::VideoDataset generate_expert_videos(const EnvSpec& spec,
                                                 int64_t n_levels,
                                                 int64_t total_frames,
                                                 uint64_t seed) {
  spec.validate();
  require<DataError>(n_levels >= 1, "generate_expert_videos: n_levels must be >= 1");
  require<DataError>(total_frames >= 2,
                     "generate_expert_videos: total_frames must be >= 2");

  data::VideoDataset ds;
  ds.channels = spec.obs_channels();
  ds.height = spec.obs_height();
  ds.width = spec.obs_width();
  ds.meta.spec_hash = spec.hash();
  ds.meta.seed = seed;
  ds.meta.n_levels = n_levels;
  ds.meta.creation_args =
      nlohmann::json{{"n_levels", n_levels}, {"total_frames", total_frames},
                     {"seed", seed}, {"grid_size", spec.grid_size},
                     {"wall_density", spec.wall_density}}
          .dump();

  std::vector<ExpertEpisode> episodes;
  std::vector<int64_t> lengths;  // truncated length per stored episode
  int64_t stored = 0;
  for (int64_t e = 0; stored < total_frames; ++e) {
    uint64_t level_seed = seed + static_cast<uint64_t>(e % n_levels);
    // The first pass over each level keeps its canonical start; repeat visits
    // draw a fresh start cell so repeated levels contribute new trajectories.
    std::optional<uint64_t> start_seed;
    if (e >= n_levels)
      start_seed = seed ^ (0x9e3779b97f4a7c15ull + static_cast<uint64_t>(e));
    ExpertEpisode ep = run_expert_episode(spec, level_seed, start_seed);
    require<EnvError>(ep.success, "generate_expert_videos: expert episode failed");

    int64_t want = std::min<int64_t>(static_cast<int64_t>(ep.frames.size()),
                                     total_frames - stored);
    if (want == 1) {
      // A 1-frame episode is invalid; donate one frame from an earlier
      // episode that can spare it, then store this one with 2 frames.
      bool donated = false;
      for (auto it = lengths.rbegin(); it != lengths.rend(); ++it)
        if (*it > 2) {
          *it -= 1;
          --stored;
          donated = true;
          break;
        }
      require<DataError>(donated,
                         "generate_expert_videos: cannot hit exact frame count");
      want = 2;
    }
    lengths.push_back(want);
    stored += want;
    episodes.push_back(std::move(ep));
  }

  ds.episode_starts.reserve(lengths.size());
  int64_t cursor = 0;
  const int64_t fb = ds.frame_bytes();
  for (size_t e = 0; e < episodes.size(); ++e) {
    const ExpertEpisode& ep = episodes[e];
    int64_t len = lengths[e];
    ds.episode_starts.push_back(cursor);
    for (int64_t t = 0; t < len; ++t) {
      const auto& fr = ep.frames[static_cast<size_t>(t)];
      require<DataError>(fr.size() == fb, "generate_expert_videos: frame size drift");
      ds.frames.insert(ds.frames.end(), fr.bytes.begin(), fr.bytes.end());
      if (t + 1 < len)
        ds.actions.push_back(ep.actions[static_cast<size_t>(t)]);
    }
    cursor += len;
  }
  require<DataError>(cursor == total_frames,
                     "generate_expert_videos: frame accounting error");
  ds.validate();
  return ds;
}

}  // namespace upesv::env
