#pragma once

// Checkpoint file layout (little-endian throughout):
//   magic "RDWN" | u16 version | u8 role | config block | u32 n_tensors
//   tensor*      : u32 name_len | name | u32 rank | u64 dims[rank] | f64 data
//   u8 has_opt   ; when 1: u64 adam_t | u32 epoch | n_tensors m | n_tensors v
// Config block, generator: u32 scale | u8 upsample_mode | f64 slope |
//   u32 n_channels + u32[] | u32 n_kernels + u32[].
// Config block, critic: u32 n_widths + u32[] | f64 slope | u32 input_size.
// Round trips are bit-exact.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "rdwn/networks.hpp"

namespace rdwn {

struct AdamState;  // training.hpp

namespace ckpt_detail {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("checkpoint: truncated file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, (uint32_t)s.size());
  os.write(s.data(), (std::streamsize)s.size());
}

inline std::string get_string(std::istream& is) {
  const uint32_t n = get<uint32_t>(is);
  if (n > (1u << 20)) throw Error("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error("checkpoint: truncated file");
  return s;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_string(os, name);
  put<uint32_t>(os, (uint32_t)t.rank());
  for (int64_t d : t.shape()) put<uint64_t>(os, (uint64_t)d);
  os.write(reinterpret_cast<const char*>(t.data()),
           (std::streamsize)(t.size() * sizeof(double)));
}

inline std::pair<std::string, Tensor> get_tensor(std::istream& is) {
  std::string name = get_string(is);
  const uint32_t rank = get<uint32_t>(is);
  if (rank > 8) throw Error("checkpoint: implausible tensor rank");
  std::vector<int64_t> shape(rank);
  int64_t n = 1;
  for (auto& d : shape) {
    d = (int64_t)get<uint64_t>(is);
    if (d < 0 || d > (1 << 24)) throw Error("checkpoint: dimension overflow");
    n *= d;
  }
  if (n > (int64_t(1) << 32)) throw Error("checkpoint: dimension overflow");
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()), (std::streamsize)(n * sizeof(double)));
  if (!is) throw Error("checkpoint: truncated file");
  return {std::move(name), std::move(t)};
}

inline void put_ints(std::ostream& os, const std::vector<int>& v) {
  put<uint32_t>(os, (uint32_t)v.size());
  for (int x : v) put<uint32_t>(os, (uint32_t)x);
}

inline std::vector<int> get_ints(std::istream& is) {
  const uint32_t n = get<uint32_t>(is);
  if (n > 64) throw Error("checkpoint: implausible list length");
  std::vector<int> v(n);
  for (auto& x : v) x = (int)get<uint32_t>(is);
  return v;
}

}  // namespace ckpt_detail

struct OptSnapshot {
  uint64_t adam_t = 0;
  uint32_t epoch = 0;
  std::vector<Tensor> m, v;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const NetworkParams& p,
                            const OptSnapshot* opt = nullptr) {
  namespace d = ckpt_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open " + path.string() + " for write");
  os.write("RDWN", 4);
  d::put<uint16_t>(os, 1);
  d::put<uint8_t>(os, (uint8_t)p.role);
  if (p.role == Role::kGenerator) {
    d::put<uint32_t>(os, (uint32_t)p.gen_cfg.scale_factor);
    d::put<uint8_t>(os, (uint8_t)p.gen_cfg.upsample_mode);
    d::put<double>(os, p.gen_cfg.leaky_slope);
    d::put_ints(os, p.gen_cfg.channels);
    d::put_ints(os, p.gen_cfg.kernel_sizes);
  } else {
    d::put_ints(os, p.critic_cfg.widths);
    d::put<double>(os, p.critic_cfg.leaky_slope);
    d::put<uint32_t>(os, (uint32_t)p.critic_cfg.input_size);
  }
  d::put<uint32_t>(os, (uint32_t)p.tensors.size());
  for (const auto& [name, t] : p.tensors) d::put_tensor(os, name, t);
  d::put<uint8_t>(os, opt ? 1 : 0);
  if (opt) {
    d::put<uint64_t>(os, opt->adam_t);
    d::put<uint32_t>(os, opt->epoch);
    for (size_t i = 0; i < p.tensors.size(); ++i)
      d::put_tensor(os, p.tensors[i].first, opt->m[i]);
    for (size_t i = 0; i < p.tensors.size(); ++i)
      d::put_tensor(os, p.tensors[i].first, opt->v[i]);
  }
  if (!os) throw Error("checkpoint: write failed for " + path.string());
}

inline NetworkParams load_checkpoint(const std::filesystem::path& path,
                                     OptSnapshot* opt_out = nullptr) {
  namespace d = ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RDWN", 4) != 0)
    throw Error("checkpoint: bad magic in " + path.string());
  const uint16_t version = d::get<uint16_t>(is);
  if (version != 1) throw Error("checkpoint: unsupported version");
  NetworkParams p;
  p.role = (Role)d::get<uint8_t>(is);
  if (p.role == Role::kGenerator) {
    p.gen_cfg.scale_factor = (int)d::get<uint32_t>(is);
    p.gen_cfg.upsample_mode = (UpsampleMode)d::get<uint8_t>(is);
    p.gen_cfg.leaky_slope = d::get<double>(is);
    p.gen_cfg.channels = d::get_ints(is);
    p.gen_cfg.kernel_sizes = d::get_ints(is);
    p.gen_cfg.validate();
  } else if (p.role == Role::kCritic) {
    p.critic_cfg.widths = d::get_ints(is);
    p.critic_cfg.leaky_slope = d::get<double>(is);
    p.critic_cfg.input_size = (int)d::get<uint32_t>(is);
    p.critic_cfg.validate();
  } else {
    throw Error("checkpoint: unknown role tag");
  }
  const uint32_t n = d::get<uint32_t>(is);
  for (uint32_t i = 0; i < n; ++i) p.tensors.push_back(d::get_tensor(is));
  const uint8_t has_opt = d::get<uint8_t>(is);
  if (has_opt && opt_out) {
    opt_out->adam_t = d::get<uint64_t>(is);
    opt_out->epoch = d::get<uint32_t>(is);
    for (uint32_t i = 0; i < n; ++i)
      opt_out->m.push_back(d::get_tensor(is).second);
    for (uint32_t i = 0; i < n; ++i)
      opt_out->v.push_back(d::get_tensor(is).second);
  }
  return p;
}

}  // namespace rdwn
