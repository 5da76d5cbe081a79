// Expert-video and interaction-transition containers plus batch sampling.
//
// UPSV container layout (all integers little-endian):
//   bytes 0-3   magic "UPSV"
//   byte  4     version (1)
//   byte  5     dtype code (0 = u8)
//   bytes 6-7   reserved, zero
//   u32 x 4     n_frames, C, H, W
//   u32         n_episodes, then n_episodes u32 episode starts
//   raw frame bytes, (frame, channel, row, col) order
//   optional action block: u32 record count, then u8 actions. The block is
//   present only in the held-out eval companion (".actions" extension); the
//   ".upsv" training file never carries it.
//
// Dataset meta (spec hash, seed, creation args) has no slot in the container
// layout; it travels in a JSON sidecar "<file>.meta.json".
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upesv/common.hpp"
#include "upesv/rng.hpp"
#include "upesv/tensor.hpp"

namespace upesv::data {

struct DatasetMeta {
  uint64_t spec_hash = 0;
  uint64_t seed = 0;
  int64_t n_levels = 0;
  std::string creation_args;  // free-form JSON string
};

// Ordered action-free expert observation sequences with episode boundaries.
// Frames are stored 8-bit fixed point (value * 255); sampling converts to
// [0,1] floats. Actions are only populated for held-out eval companions.
struct VideoDataset {
  int64_t channels = 0, height = 0, width = 0;
  std::vector<uint8_t> frames;           // n_frames * C * H * W
  std::vector<int64_t> episode_starts;   // first = 0, strictly increasing
  std::vector<uint8_t> actions;          // empty or n_frames - n_episodes
  DatasetMeta meta;

  int64_t frame_bytes() const { return channels * height * width; }
  int64_t n_frames() const {
    return frame_bytes() == 0
               ? 0
               : static_cast<int64_t>(frames.size()) / frame_bytes();
  }
  int64_t n_episodes() const {
    return static_cast<int64_t>(episode_starts.size());
  }
  const uint8_t* frame(int64_t t) const { return frames.data() + t * frame_bytes(); }

  int64_t episode_end(int64_t e) const {
    return e + 1 < n_episodes() ? episode_starts[e + 1] : n_frames();
  }
  int64_t episode_of_frame(int64_t t) const {
    auto it = std::upper_bound(episode_starts.begin(), episode_starts.end(), t);
    return static_cast<int64_t>(it - episode_starts.begin()) - 1;
  }

  void validate() const {
    require<DataError>(channels > 0 && height > 0 && width > 0,
                       "dataset: nonpositive frame dimensions");
    require<DataError>(n_frames() > 0, "dataset: frame count is zero");
    require<DataError>(static_cast<int64_t>(frames.size()) ==
                           n_frames() * frame_bytes(),
                       "dataset: frame buffer size mismatch");
    require<DataError>(!episode_starts.empty() && episode_starts[0] == 0,
                       "dataset: episode_starts must begin at 0");
    for (int64_t e = 0; e < n_episodes(); ++e) {
      int64_t len = episode_end(e) - episode_starts[e];
      require<DataError>(len >= 2, cat("dataset: episode ", e,
                                       " shorter than 2 frames"));
      if (e > 0)
        require<DataError>(episode_starts[e] > episode_starts[e - 1],
                           "dataset: episode_starts not strictly increasing");
    }
    if (!actions.empty())
      require<DataError>(static_cast<int64_t>(actions.size()) ==
                             n_frames() - n_episodes(),
                         "dataset: action record count mismatch");
  }

  // Frame indices t for which (t, t+1) stays inside one episode. The last
  // frame of an episode is never a valid pair start.
  std::vector<int64_t> valid_pair_starts() const {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(n_frames() - n_episodes()));
    for (int64_t e = 0; e < n_episodes(); ++e)
      for (int64_t t = episode_starts[e]; t + 1 < episode_end(e); ++t)
        out.push_back(t);
    return out;
  }

  // Action aligned with the i-th valid pair (same ordering as
  // valid_pair_starts). Only meaningful on labeled eval companions.
  int action_for_pair(int64_t pair_index) const {
    return actions.at(static_cast<size_t>(pair_index));
  }
};

// ---------------------------------------------------------------------------
// Container IO
// ---------------------------------------------------------------------------
namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(bytes_[pos_++]);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  const char* raw(size_t n, const char* what) {
    need(n, what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(size_t n, const char* what) {
    require<DataError>(pos_ + n <= bytes_.size(),
                       cat(path_, ": truncated while reading ", what,
                           " at offset ", pos_, ": expected ", n,
                           " more bytes, have ", bytes_.size() - pos_));
  }
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kMagic[4] = {'U', 'P', 'S', 'V'};
inline constexpr uint8_t kFormatVersion = 1;
inline constexpr uint8_t kDtypeU8 = 0;

inline std::string serialize_dataset(const VideoDataset& ds, bool with_actions) {
  ds.validate();
  if (with_actions)
    require<DataError>(!ds.actions.empty(),
                       "serialize: action block requested but dataset has no actions");
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kFormatVersion));
  out.push_back(static_cast<char>(kDtypeU8));
  out.push_back(0);
  out.push_back(0);
  detail::put_u32(out, static_cast<uint32_t>(ds.n_frames()));
  detail::put_u32(out, static_cast<uint32_t>(ds.channels));
  detail::put_u32(out, static_cast<uint32_t>(ds.height));
  detail::put_u32(out, static_cast<uint32_t>(ds.width));
  detail::put_u32(out, static_cast<uint32_t>(ds.n_episodes()));
  for (int64_t s : ds.episode_starts)
    detail::put_u32(out, static_cast<uint32_t>(s));
  out.append(reinterpret_cast<const char*>(ds.frames.data()), ds.frames.size());
  if (with_actions) {
    detail::put_u32(out, static_cast<uint32_t>(ds.actions.size()));
    out.append(reinterpret_cast<const char*>(ds.actions.data()), ds.actions.size());
  }
  return out;
}

inline nlohmann::json meta_to_json(const DatasetMeta& m) {
  return {{"spec_hash", m.spec_hash},
          {"seed", m.seed},
          {"n_levels", m.n_levels},
          {"creation_args", m.creation_args}};
}

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta m;
  m.spec_hash = j.at("spec_hash").get<uint64_t>();
  m.seed = j.at("seed").get<uint64_t>();
  m.n_levels = j.at("n_levels").get<int64_t>();
  m.creation_args = j.at("creation_args").get<std::string>();
  return m;
}

inline void write_dataset(const std::string& path, const VideoDataset& ds,
                          bool with_actions) {
  write_file(path, serialize_dataset(ds, with_actions));
  write_file(path + ".meta.json", meta_to_json(ds.meta).dump(2) + "\n");
}

inline VideoDataset read_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  detail::ByteReader r(bytes, path);

  const char* magic = r.raw(4, "magic");
  require<DataError>(std::memcmp(magic, kMagic, 4) == 0,
                     cat(path, ": bad magic, not a UPSV container"));
  uint8_t version = r.u8("version");
  require<DataError>(version == kFormatVersion,
                     cat(path, ": unsupported version ", int(version)));
  uint8_t dtype = r.u8("dtype");
  require<DataError>(dtype == kDtypeU8,
                     cat(path, ": unsupported dtype code ", int(dtype)));
  uint8_t res0 = r.u8("reserved");
  uint8_t res1 = r.u8("reserved");
  require<DataError>(res0 == 0 && res1 == 0,
                     cat(path, ": reserved header bytes must be zero"));

  VideoDataset ds;
  uint32_t n_frames = r.u32("frame count");
  require<DataError>(n_frames > 0, cat(path, ": header declares 0 frames"));
  ds.channels = r.u32("channel count");
  ds.height = r.u32("height");
  ds.width = r.u32("width");
  uint32_t n_eps = r.u32("episode count");
  ds.episode_starts.resize(n_eps);
  for (uint32_t e = 0; e < n_eps; ++e)
    ds.episode_starts[e] = r.u32("episode start");

  size_t frame_bytes = static_cast<size_t>(n_frames) * ds.channels * ds.height * ds.width;
  const char* fr = r.raw(frame_bytes, "frame payload");
  ds.frames.assign(reinterpret_cast<const uint8_t*>(fr),
                   reinterpret_cast<const uint8_t*>(fr) + frame_bytes);

  if (r.remaining() > 0) {
    uint32_t n_actions = r.u32("action record count");
    const char* ap = r.raw(n_actions, "action payload");
    ds.actions.assign(reinterpret_cast<const uint8_t*>(ap),
                      reinterpret_cast<const uint8_t*>(ap) + n_actions);
    require<DataError>(r.remaining() == 0,
                       cat(path, ": ", r.remaining(), " trailing bytes after action block"));
  }

  ds.validate();

  std::string meta_path = path + ".meta.json";
  if (std::filesystem::exists(meta_path)) {
    auto j = nlohmann::json::parse(read_file(meta_path));
    ds.meta = meta_from_json(j);
  }
  return ds;
}

// Loader for the training path: refuses containers that carry actions, so
// ground-truth labels can never leak into training code.
inline VideoDataset read_training_dataset(const std::string& path) {
  VideoDataset ds = read_dataset(path);
  require<DataError>(ds.actions.empty(),
                     cat(path, ": refusing to train on an action-labeled container"));
  return ds;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------
template <class S>
struct PairBatch {
  Tensor<S> o_t;     // (N, C, H, W)
  Tensor<S> o_t1;    // (N, C, H, W)
  Tensor<S> o_hist;  // (N, k, C, H, W), zero-padded before episode start
  int64_t size() const { return o_t.dim(0); }
  int64_t history() const { return o_hist.rank() == 5 ? o_hist.dim(1) : 0; }
};

template <class S>
struct TransitionBatch {
  PairBatch<S> obs;
  std::vector<int> actions;
};

namespace detail {

template <class S>
inline void copy_frame(const uint8_t* src, S* dst, int64_t n) {
  constexpr double kInv = 1.0 / 255.0;
  for (int64_t i = 0; i < n; ++i)
    dst[i] = static_cast<S>(src[i] * kInv);
}

}  // namespace detail

// Uniform over valid within-episode pair starts. Exposed separately so
// callers that cache per-frame features can reuse the exact same draw.
inline std::vector<int64_t> sample_pair_indices(const VideoDataset& ds,
                                                const std::vector<int64_t>& valid,
                                                int64_t n, rng::Stream& rs) {
  require<DataError>(!valid.empty(), "sample_pairs: dataset has no valid pairs");
  require<DataError>(n >= 1, "sample_pairs: batch size must be >= 1");
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (auto& t : out) t = valid[rs.bounded(valid.size())];
  return out;
}

template <class S>
PairBatch<S> assemble_pairs(const VideoDataset& ds,
                            const std::vector<int64_t>& starts, int64_t k) {
  const int64_t n = static_cast<int64_t>(starts.size());
  const int64_t fb = ds.frame_bytes();
  PairBatch<S> b;
  b.o_t = Tensor<S>({n, ds.channels, ds.height, ds.width});
  b.o_t1 = Tensor<S>({n, ds.channels, ds.height, ds.width});
  b.o_hist = Tensor<S>({n, k, ds.channels, ds.height, ds.width});
  for (int64_t i = 0; i < n; ++i) {
    int64_t t = starts[static_cast<size_t>(i)];
    detail::copy_frame(ds.frame(t), b.o_t.data() + i * fb, fb);
    detail::copy_frame(ds.frame(t + 1), b.o_t1.data() + i * fb, fb);
    int64_t ep_start = ds.episode_starts[ds.episode_of_frame(t)];
    for (int64_t j = 0; j < k; ++j) {
      // o_hist[j] is frame t-k+j; zero before the episode start.
      int64_t src = t - k + j;
      if (src >= ep_start)
        detail::copy_frame(ds.frame(src), b.o_hist.data() + (i * k + j) * fb, fb);
    }
  }
  return b;
}

template <class S>
PairBatch<S> sample_pairs(const VideoDataset& ds, int64_t n, int64_t k,
                          rng::Stream& rs) {
  auto valid = ds.valid_pair_starts();
  return assemble_pairs<S>(ds, sample_pair_indices(ds, valid, n, rs), k);
}

// ---------------------------------------------------------------------------
// Interaction buffer: FIFO ring of (history, o_t, a, o_t1) transitions with
// ground-truth discrete actions. History frames are copied in at insert time
// so eviction can never orphan a record.
// ---------------------------------------------------------------------------
class InteractionBuffer {
 public:
  struct Record {
    std::vector<uint8_t> hist;  // k * frame_bytes, zero-padded
    std::vector<uint8_t> o_t;
    std::vector<uint8_t> o_t1;
    uint8_t action = 0;
    uint64_t episode_id = 0;
    uint64_t serial = 0;  // monotone insert counter
  };

  InteractionBuffer(int64_t capacity, int64_t channels, int64_t height,
                    int64_t width, int64_t history_k, int n_actions)
      : capacity_(capacity),
        channels_(channels),
        height_(height),
        width_(width),
        history_k_(history_k),
        n_actions_(n_actions) {
    require<DataError>(capacity_ > 0, "interaction buffer capacity must be positive");
    ring_.reserve(static_cast<size_t>(capacity_));
  }

  int64_t capacity() const { return capacity_; }
  int64_t size() const { return static_cast<int64_t>(ring_.size()); }
  int64_t frame_bytes() const { return channels_ * height_ * width_; }
  int64_t history_k() const { return history_k_; }
  uint64_t total_inserted() const { return next_serial_; }

  // Slot the next push will occupy (appended, or the oldest when full).
  int64_t next_slot() const {
    return size() < capacity_ ? size() : static_cast<int64_t>(head_);
  }

  void push(Record rec) {
    require<DataError>(rec.action < n_actions_, "interaction action out of range");
    require<DataError>(static_cast<int64_t>(rec.o_t.size()) == frame_bytes() &&
                           static_cast<int64_t>(rec.o_t1.size()) == frame_bytes() &&
                           static_cast<int64_t>(rec.hist.size()) ==
                               history_k_ * frame_bytes(),
                       "interaction record has wrong frame size");
    rec.serial = next_serial_++;
    if (size() < capacity_) {
      ring_.push_back(std::move(rec));
    } else {
      ring_[head_] = std::move(rec);  // overwrite oldest
      head_ = (head_ + 1) % static_cast<size_t>(capacity_);
    }
  }

  // Records in no particular order; use serial for age.
  const Record& record(int64_t slot) const { return ring_[static_cast<size_t>(slot)]; }

  bool contains_serial(uint64_t serial) const {
    for (const auto& r : ring_)
      if (r.serial == serial) return true;
    return false;
  }

  std::vector<int64_t> sample_slots(int64_t m, rng::Stream& rs) const {
    require<DataError>(size() > 0, "sample_transitions: buffer is empty");
    require<DataError>(m >= 1, "sample_transitions: batch size must be >= 1");
    std::vector<int64_t> out(static_cast<size_t>(m));
    for (auto& s : out) s = static_cast<int64_t>(rs.bounded(ring_.size()));
    return out;
  }

  template <class S>
  TransitionBatch<S> assemble(const std::vector<int64_t>& slots) const {
    const int64_t m = static_cast<int64_t>(slots.size());
    const int64_t fb = frame_bytes();
    TransitionBatch<S> b;
    b.obs.o_t = Tensor<S>({m, channels_, height_, width_});
    b.obs.o_t1 = Tensor<S>({m, channels_, height_, width_});
    b.obs.o_hist = Tensor<S>({m, history_k_, channels_, height_, width_});
    b.actions.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      const Record& r = ring_[static_cast<size_t>(slots[static_cast<size_t>(i)])];
      detail::copy_frame(r.o_t.data(), b.obs.o_t.data() + i * fb, fb);
      detail::copy_frame(r.o_t1.data(), b.obs.o_t1.data() + i * fb, fb);
      detail::copy_frame(r.hist.data(), b.obs.o_hist.data() + i * history_k_ * fb,
                         history_k_ * fb);
      b.actions[static_cast<size_t>(i)] = r.action;
    }
    return b;
  }

 private:
  int64_t capacity_, channels_, height_, width_, history_k_;
  int n_actions_;
  std::vector<Record> ring_;
  size_t head_ = 0;  // oldest slot once full
  uint64_t next_serial_ = 0;
};

template <class S>
TransitionBatch<S> sample_transitions(const InteractionBuffer& buf, int64_t m,
                                      rng::Stream& rs) {
  return buf.assemble<S>(buf.sample_slots(m, rs));
}

}  // namespace upesv::data
