// Checkpoint container: every parameter tensor keyed by component name, the
// TrainConfig echo, and RNG states. Round-trips restore bitwise-identical
// forward outputs. All integers and float bits little-endian.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "upesv/common.hpp"
#include "upesv/nets.hpp"
#include "upesv/rng.hpp"

namespace upesv::ckpt {

inline constexpr char kMagic[4] = {'U', 'P', 'C', 'K'};
inline constexpr uint8_t kVersion = 1;

namespace detail {

inline void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : b_(bytes), path_(path) {}
  uint8_t u8() { return take<uint8_t>(1); }
  uint16_t u16() { return take<uint16_t>(2); }
  uint32_t u32() { return take<uint32_t>(4); }
  uint64_t u64() { return take<uint64_t>(8); }
  std::string str(size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  template <class T>
  T take(size_t n) {
    need(n);
    uint64_t v = 0;
    for (size_t i = 0; i < n; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(b_[pos_ + i])) << (8 * i);
    pos_ += n;
    return static_cast<T>(v);
  }
  void need(size_t n) {
    require<DataError>(pos_ + n <= b_.size(),
                       cat(path_, ": truncated checkpoint at offset ", pos_));
  }
  const std::string& b_;
  std::string path_;
  size_t pos_ = 0;
};

template <class S>
void put_scalar(std::string& out, S v) {
  if constexpr (sizeof(S) == 4)
    put_u32(out, std::bit_cast<uint32_t>(v));
  else
    put_u64(out, std::bit_cast<uint64_t>(v));
}

template <class S>
S read_scalar(Reader& r) {
  if constexpr (sizeof(S) == 4)
    return std::bit_cast<S>(r.u32());
  else
    return std::bit_cast<S>(r.u64());
}

}  // namespace detail

template <class S>
std::string serialize(nets::ModelBundle<S>& bundle, const std::string& config_json,
                      const std::vector<std::array<uint64_t, 4>>& rng_states) {
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(sizeof(S)));
  detail::put_u32(out, static_cast<uint32_t>(config_json.size()));
  out.append(config_json);

  auto params = bundle.params_all();
  detail::put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u16(out, static_cast<uint16_t>(p.name.size()));
    out.append(p.name);
    detail::put_u16(out, static_cast<uint16_t>(p.value->rank()));
    for (int64_t d : p.value->shape())
      detail::put_u32(out, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < p.value->numel(); ++i)
      detail::put_scalar(out, (*p.value)[i]);
  }

  detail::put_u32(out, static_cast<uint32_t>(rng_states.size()));
  for (const auto& st : rng_states)
    for (uint64_t w : st) detail::put_u64(out, w);
  return out;
}

template <class S>
void save(const std::string& path, nets::ModelBundle<S>& bundle,
          const std::string& config_json,
          const std::vector<std::array<uint64_t, 4>>& rng_states) {
  write_file(path, serialize(bundle, config_json, rng_states));
}

// Reads only the config echo, so a caller can reconstruct dims and scalar
// type before loading the tensors.
inline std::string peek_config(const std::string& path) {
  std::string bytes = read_file(path);
  detail::Reader r(bytes, path);
  std::string magic = r.str(4);
  require<DataError>(std::memcmp(magic.data(), kMagic, 4) == 0,
                     cat(path, ": not a checkpoint file"));
  uint8_t version = r.u8();
  require<DataError>(version == kVersion, cat(path, ": unsupported version"));
  r.u8();  // scalar width
  uint32_t len = r.u32();
  return r.str(len);
}

template <class S>
std::vector<std::array<uint64_t, 4>> load(const std::string& path,
                                          nets::ModelBundle<S>& bundle) {
  std::string bytes = read_file(path);
  detail::Reader r(bytes, path);
  std::string magic = r.str(4);
  require<DataError>(std::memcmp(magic.data(), kMagic, 4) == 0,
                     cat(path, ": not a checkpoint file"));
  require<DataError>(r.u8() == kVersion, cat(path, ": unsupported version"));
  uint8_t width = r.u8();
  require<DataError>(width == sizeof(S),
                     cat(path, ": scalar width ", int(width),
                         " does not match requested precision"));
  r.str(r.u32());  // config echo, already consumed by the caller

  auto params = bundle.params_all();
  std::map<std::string, nn::ParamRef<S>*> by_name;
  for (auto& p : params) by_name[p.name] = &p;

  uint32_t n_tensors = r.u32();
  require<DataError>(n_tensors == params.size(),
                     cat(path, ": tensor count mismatch: file has ", n_tensors,
                         ", model has ", params.size()));
  for (uint32_t t = 0; t < n_tensors; ++t) {
    std::string name = r.str(r.u16());
    auto it = by_name.find(name);
    require<DataError>(it != by_name.end(),
                       cat(path, ": unknown tensor '", name, "'"));
    Tensor<S>& dst = *it->second->value;
    uint16_t rank = r.u16();
    require<DataError>(rank == dst.rank(), cat(path, ": rank mismatch for ", name));
    for (size_t d = 0; d < rank; ++d)
      require<DataError>(static_cast<int64_t>(r.u32()) == dst.dim(d),
                         cat(path, ": shape mismatch for ", name));
    for (int64_t i = 0; i < dst.numel(); ++i)
      dst[i] = detail::read_scalar<S>(r);
  }

  uint32_t n_rng = r.u32();
  std::vector<std::array<uint64_t, 4>> states(n_rng);
  for (auto& st : states)
    for (auto& w : st) w = r.u64();
  require<DataError>(r.done(), cat(path, ": trailing bytes in checkpoint"));
  return states;
}

}  // namespace upesv::ckpt
