#pragma once

// Generator (SRCNN-style, shared between the MSE baseline and the WGAN) and
// the critic. The critic has no normalization layers: the gradient penalty is
// evaluated per sample and batch statistics would couple samples.

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rdwn/ops.hpp"

namespace rdwn {

struct GeneratorConfig {
  int scale_factor = 4;
  std::vector<int> channels = {64, 32};
  std::vector<int> kernel_sizes = {9, 5, 5};
  UpsampleMode upsample_mode = UpsampleMode::kBilinear;
  double leaky_slope = 0.2;

  void validate() const {
    if (scale_factor != 2 && scale_factor != 4 && scale_factor != 8)
      throw Error("generator config: scale_factor must be 2, 4 or 8");
    if (kernel_sizes.size() != channels.size() + 1)
      throw Error("generator config: need len(kernel_sizes) == len(channels)+1");
    for (int k : kernel_sizes)
      if (k < 1 || k % 2 == 0)
        throw Error("generator config: kernel sizes must be odd and positive");
    for (int c : channels)
      if (c < 1) throw Error("generator config: channel counts must be positive");
  }
};

struct CriticConfig {
  std::vector<int> widths = {64, 128, 256};
  double leaky_slope = 0.2;
  int input_size = 128;

  // widths may be empty: the critic degenerates to a single linear map,
  // which the gradient-penalty tests rely on.
  void validate() const {
    for (int w : widths)
      if (w < 1) throw Error("critic config: widths must be positive");
    int s = input_size;
    for (size_t i = 0; i < widths.size(); ++i) {
      if (s < 2) throw Error("critic config: input too small for depth");
      s /= 2;
    }
  }

  int feature_size() const {
    int s = input_size;
    for (size_t i = 0; i < widths.size(); ++i) s /= 2;
    return s;
  }
};

enum class Role : uint8_t { kGenerator = 1, kCritic = 2 };

/// Ordered named parameter tensors plus the config that determines them.
struct NetworkParams {
  Role role = Role::kGenerator;
  GeneratorConfig gen_cfg;
  CriticConfig critic_cfg;
  std::vector<std::pair<std::string, Tensor>> tensors;

  Tensor& at(const std::string& name) {
    for (auto& [n, t] : tensors)
      if (n == name) return t;
    throw Error("params: no tensor named " + name);
  }
};

namespace detail {

inline Tensor he_kernel(std::mt19937_64& rng, int64_t out_ch, int64_t in_ch,
                        int64_t kh, int64_t kw) {
  const double stddev = std::sqrt(2.0 / double(in_ch * kh * kw));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t({out_ch, in_ch, kh, kw});
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

}  // namespace detail

inline NetworkParams build_generator(const GeneratorConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  NetworkParams p;
  p.role = Role::kGenerator;
  p.gen_cfg = cfg;
  std::vector<int> io;
  io.push_back(1);
  for (int c : cfg.channels) io.push_back(c);
  io.push_back(1);
  for (size_t l = 0; l < cfg.kernel_sizes.size(); ++l) {
    const int k = cfg.kernel_sizes[l];
    const std::string base = "conv" + std::to_string(l + 1);
    p.tensors.emplace_back(base + ".weight",
                           detail::he_kernel(rng, io[l + 1], io[l], k, k));
    p.tensors.emplace_back(base + ".bias", Tensor({io[l + 1]}));
  }
  return p;
}

inline NetworkParams build_critic(const CriticConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  NetworkParams p;
  p.role = Role::kCritic;
  p.critic_cfg = cfg;
  int in_ch = 1;
  for (size_t l = 0; l < cfg.widths.size(); ++l) {
    const std::string base = "conv" + std::to_string(l + 1);
    p.tensors.emplace_back(base + ".weight",
                           detail::he_kernel(rng, cfg.widths[l], in_ch, 4, 4));
    p.tensors.emplace_back(base + ".bias", Tensor({cfg.widths[l]}));
    in_ch = cfg.widths[l];
  }
  const int fs = cfg.feature_size();
  p.tensors.emplace_back("head.weight",
                         detail::he_kernel(rng, 1, in_ch, fs, fs));
  p.tensors.emplace_back("head.bias", Tensor({1}));
  return p;
}

/// Record every parameter as a tape leaf, in declaration order.
inline std::vector<Tensor> attach_params(Tape& tape, const NetworkParams& p) {
  std::vector<Tensor> live;
  live.reserve(p.tensors.size());
  for (const auto& [name, t] : p.tensors) live.push_back(tape.leaf(t));
  return live;
}

/// Upsample then conv/leaky_relu/conv/leaky_relu/conv; final layer linear.
/// Outputs are in normalized units and not clamped (clamping is inference-only).
inline Tensor generator_forward(Tape& tape, const GeneratorConfig& cfg,
                                std::span<const Tensor> live,
                                const Tensor& lr_batch) {
  if (lr_batch.rank() != 4 || lr_batch.dim(1) != 1)
    throw Error("generator_forward: expected [B,1,h,w] input");
  const Tensor in = lr_batch.attached() && lr_batch.tape() == &tape
                        ? lr_batch
                        : tape.leaf(lr_batch);
  Tensor x = tape.upsample(in, cfg.scale_factor, cfg.upsample_mode);
  const size_t n_layers = cfg.kernel_sizes.size();
  for (size_t l = 0; l < n_layers; ++l) {
    const int pad = cfg.kernel_sizes[l] / 2;
    x = op_conv2d(tape, x, live[2 * l], live[2 * l + 1], 1, pad);
    if (l + 1 < n_layers) x = tape.leaky_relu(x, cfg.leaky_slope);
  }
  return x;
}

inline Tensor generator_forward(Tape& tape, const NetworkParams& p,
                                const Tensor& lr_batch) {
  if (p.role != Role::kGenerator)
    throw Error("generator_forward: params role is not generator");
  std::vector<Tensor> live = attach_params(tape, p);
  return generator_forward(tape, p.gen_cfg, live, lr_batch);
}

/// Strided convs with leaky_relu, then a learned linear map to one scalar
/// per sample. Returns shape [B].
inline Tensor critic_forward(Tape& tape, const CriticConfig& cfg,
                             std::span<const Tensor> live,
                             const Tensor& field_batch) {
  if (field_batch.rank() != 4 || field_batch.dim(1) != 1)
    throw Error("critic_forward: expected [B,1,H,W] input");
  if (field_batch.dim(2) != cfg.input_size || field_batch.dim(3) != cfg.input_size)
    throw Error("critic_forward: input is " +
                shape_str(field_batch.shape()) + ", configured size " +
                std::to_string(cfg.input_size));
  Tensor x = field_batch.attached() && field_batch.tape() == &tape
                 ? field_batch
                 : tape.leaf(field_batch);
  for (size_t l = 0; l < cfg.widths.size(); ++l) {
    x = op_conv2d(tape, x, live[2 * l], live[2 * l + 1], 2, 1);
    x = tape.leaky_relu(x, cfg.leaky_slope);
  }
  const size_t h = 2 * cfg.widths.size();
  x = op_conv2d(tape, x, live[h], live[h + 1], 1, 0);  // [B,1,1,1]
  return tape.reshape(x, {field_batch.dim(0)});
}

inline Tensor critic_forward(Tape& tape, const NetworkParams& p,
                             const Tensor& field_batch) {
  if (p.role != Role::kCritic)
    throw Error("critic_forward: params role is not critic");
  std::vector<Tensor> live = attach_params(tape, p);
  return critic_forward(tape, p.critic_cfg, live, field_batch);
}

/// Detached forward passes for inference / scoring.
inline Tensor generator_infer(const NetworkParams& p, const Tensor& lr_batch) {
  Tape tape;
  return generator_forward(tape, p, tape.leaf(lr_batch)).detached();
}

inline Tensor critic_score(const NetworkParams& p, const Tensor& field_batch) {
  Tape tape;
  return critic_forward(tape, p, tape.leaf(field_batch)).detached();
}

}  // namespace rdwn
