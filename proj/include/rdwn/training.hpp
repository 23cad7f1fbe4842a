#pragma once

// SRCNN (MSE) and WGAN-GP training. Sign convention: the critic optimizer
// minimizes  -(mean F(real) - mean F(fake)) + lambda * GP, i.e. it maximizes
// the Wasserstein estimate while minimizing the penalty; the generator
// minimizes  -mean F(G(z)) + alpha * MSE.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>

#include "rdwn/checkpoint.hpp"
#include "rdwn/field.hpp"
#include "rdwn/networks.hpp"

namespace rdwn {

enum class TrainMode { kSrcnn, kWgan };

inline std::string mode_name(TrainMode m) {
  return m == TrainMode::kSrcnn ? "srcnn" : "wgan";
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;   // WGAN-GP reference settings
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct TrainConfig {
  double alpha = 10.0;      // MSE weight in the generator loss
  double lambda_gp = 10.0;  // gradient-penalty weight
  int batch_size = 32;      // desk-scale default
  int n_critic = 5;         // critic updates per generator update
  AdamConfig adam;
  int epochs = 10;
  uint64_t seed = 0;
  TrainMode mode = TrainMode::kSrcnn;

  void validate() const {
    if (alpha < 0) throw Error("train config: alpha must be >= 0");
    if (lambda_gp < 0) throw Error("train config: lambda_gp must be >= 0");
    if (n_critic < 1) throw Error("train config: n_critic must be >= 1");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (epochs < 0) throw Error("train config: epochs must be >= 0");
  }
};

struct LossRecord {
  int64_t step = 0;
  std::string mode;  // srcnn | critic | generator
  double wasserstein_estimate = 0;
  double mse_term = 0;
  double gp_term = 0;
  double generator_loss = 0;
  double critic_loss = 0;
  double total = 0;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& msg, LossRecord last)
      : Error(msg), last_record(std::move(last)) {}
  LossRecord last_record;
};

/// Plain MSE: (1/(B*N)) sum_b sum_k (gen - target)^2.
inline Tensor srcnn_loss(Tape& tape, const Tensor& generated,
                         const Tensor& target) {
  if (!same_shape(generated, target))
    throw Error("srcnn_loss: shape mismatch " + shape_str(generated.shape()) +
                " vs " + shape_str(target.shape()));
  return tape.mean(tape.square(tape.sub(generated, target)));
}

/// x_hat^(b) = eps_b * real^(b) + (1 - eps_b) * fake^(b).
inline Tensor interpolate_samples(Tape& tape, const Tensor& real,
                                  const Tensor& fake, const Tensor& eps) {
  if (!same_shape(real, fake)) throw Error("interpolate: shape mismatch");
  if (eps.rank() != 1 || eps.dim(0) != real.dim(0))
    throw Error("interpolate: eps must be [B]");
  for (int64_t b = 0; b < eps.size(); ++b)
    if (eps.data()[b] < 0.0 || eps.data()[b] > 1.0)
      throw Error("interpolate: eps outside [0,1]");
  const Tensor eps_leaf =
      eps.attached() && eps.tape() == &tape ? eps : tape.leaf(eps);
  const Tensor e = tape.broadcast_batch(eps_leaf, real.shape());
  const Tensor one_minus_e = tape.add_scalar(tape.neg(e), 1.0);
  return tape.add(tape.mul(e, real), tape.mul(one_minus_e, fake));
}

struct CriticLossParts {
  Tensor total;        // minimized by the critic optimizer
  double wasserstein;  // mean F(real) - mean F(fake)
  double gp;           // (1/B) sum_b (||grad F(x_hat)||_2 - 1)^2
};

/// Critic objective with gradient penalty. `live` are the critic parameters
/// already attached to `tape`; real/fake must be detached values (the critic
/// step must not touch generator parameters).
inline CriticLossParts critic_loss(Tape& tape, const CriticConfig& cfg,
                                   std::span<const Tensor> live,
                                   const Tensor& real_values,
                                   const Tensor& fake_values, double lambda_gp,
                                   const Tensor& eps) {
  const Tensor real = tape.leaf(real_values);
  const Tensor fake = tape.leaf(fake_values);
  const Tensor mean_real = tape.mean(critic_forward(tape, cfg, live, real));
  const Tensor mean_fake = tape.mean(critic_forward(tape, cfg, live, fake));

  const Tensor x_hat = interpolate_samples(tape, real, fake, eps);
  const Tensor score_sum = tape.sum(critic_forward(tape, cfg, live, x_hat));
  // Per-sample input gradients, kept on the tape so the penalty is
  // differentiable w.r.t. the critic parameters.
  const std::array<Tensor, 1> wrt = {x_hat};
  const Tensor grad = tape.backward(score_sum, wrt, /*create_graph=*/true)[0];
  const Tensor norm = tape.sqrt(tape.sum_per_batch(tape.square(grad)));
  for (int64_t b = 0; b < norm.size(); ++b)
    if (!std::isfinite(norm.data()[b]))
      throw Error("critic_loss: non-finite gradient norm");
  const Tensor gp = tape.mean(tape.square(tape.add_scalar(norm, -1.0)));

  CriticLossParts parts;
  parts.wasserstein = mean_real.item() - mean_fake.item();
  parts.gp = gp.item();
  parts.total = tape.add(tape.sub(mean_fake, mean_real), tape.scale(gp, lambda_gp));
  return parts;
}

inline CriticLossParts critic_loss(Tape& tape, const NetworkParams& critic,
                                   const Tensor& real, const Tensor& fake,
                                   double lambda_gp, const Tensor& eps) {
  if (critic.role != Role::kCritic) throw Error("critic_loss: wrong role");
  std::vector<Tensor> live = attach_params(tape, critic);
  return critic_loss(tape, critic.critic_cfg, live, real, fake, lambda_gp, eps);
}

struct GeneratorLossParts {
  Tensor total;       // -mean F(G(z)) + alpha * MSE
  double mean_score;  // mean F(G(z))
  double mse;
};

/// Generator objective; `generated` must stay attached to the generator
/// parameters, the critic is held fixed.
inline GeneratorLossParts generator_loss(Tape& tape, const CriticConfig& cfg,
                                         std::span<const Tensor> critic_live,
                                         const Tensor& generated,
                                         const Tensor& target, double alpha) {
  const Tensor target_leaf = tape.leaf(target);
  const Tensor mean_score =
      tape.mean(critic_forward(tape, cfg, critic_live, generated));
  const Tensor mse = srcnn_loss(tape, generated, target_leaf);
  GeneratorLossParts parts;
  parts.mean_score = mean_score.item();
  parts.mse = mse.item();
  parts.total = tape.add(tape.neg(mean_score), tape.scale(mse, alpha));
  return parts;
}

inline GeneratorLossParts generator_loss(Tape& tape, const NetworkParams& critic,
                                         const Tensor& generated,
                                         const Tensor& target, double alpha) {
  if (critic.role != Role::kCritic) throw Error("generator_loss: wrong role");
  std::vector<Tensor> live = attach_params(tape, critic);
  return generator_loss(tape, critic.critic_cfg, live, generated, target, alpha);
}

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const NetworkParams& params) : cfg_(cfg) {
    for (const auto& [name, t] : params.tensors) {
      m_.emplace_back(t.shape());
      v_.emplace_back(t.shape());
    }
  }

  void step(NetworkParams& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.tensors.size())
      throw Error("adam: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);
    for (size_t i = 0; i < grads.size(); ++i) {
      Tensor& p = params.tensors[i].second;
      const Tensor& g = grads[i];
      if (!same_shape(p, g)) throw Error("adam: gradient shape mismatch");
      double* pm = m_[i].data();
      double* pv = v_[i].data();
      double* pp = p.data();
      const double* pg = g.data();
      for (int64_t k = 0; k < p.size(); ++k) {
        pm[k] = cfg_.beta1 * pm[k] + (1.0 - cfg_.beta1) * pg[k];
        pv[k] = cfg_.beta2 * pv[k] + (1.0 - cfg_.beta2) * pg[k] * pg[k];
        const double mhat = pm[k] / bc1;
        const double vhat = pv[k] / bc2;
        pp[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  OptSnapshot snapshot(uint32_t epoch) const {
    OptSnapshot s;
    s.adam_t = t_;
    s.epoch = epoch;
    s.m = m_;
    s.v = v_;
    return s;
  }

  void restore(const OptSnapshot& s) {
    t_ = s.adam_t;
    m_ = s.m;
    v_ = s.v;
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainerState {
  NetworkParams generator;
  NetworkParams critic;  // unused in srcnn mode
  Adam gen_opt;
  Adam critic_opt;
  int64_t step = 0;
  int epoch_done = 0;  // epochs fully completed
};

namespace train_detail {

inline uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline void check_finite(double v, const LossRecord& rec) {
  if (!std::isfinite(v))
    throw TrainingDiverged("training diverged: non-finite loss at step " +
                               std::to_string(rec.step),
                           rec);
}

}  // namespace train_detail

/// One optimization step on a normalized (lr, hr) batch. In wgan mode this is
/// n_critic critic updates followed by one generator update; per-update rows
/// are appended to `history` when given.
inline LossRecord train_step(TrainerState& state, const Tensor& lr_batch,
                             const Tensor& hr_batch, const TrainConfig& cfg,
                             std::vector<LossRecord>* history = nullptr) {
  cfg.validate();
  LossRecord rec;
  rec.step = state.step;

  if (cfg.mode == TrainMode::kSrcnn) {
    Tape tape;
    std::vector<Tensor> live = attach_params(tape, state.generator);
    const Tensor out =
        generator_forward(tape, state.generator.gen_cfg, live, lr_batch);
    const Tensor loss = srcnn_loss(tape, out, tape.leaf(hr_batch));
    rec.mode = "srcnn";
    rec.mse_term = loss.item();
    rec.generator_loss = rec.mse_term;
    rec.total = rec.mse_term;
    train_detail::check_finite(rec.total, rec);
    state.gen_opt.step(state.generator, tape.backward(loss, live));
    if (history) history->push_back(rec);
    ++state.step;
    return rec;
  }

  // WGAN mode. The fake batch is generated once: the generator is frozen
  // during critic updates, so its output does not change between them.
  const Tensor fake = generator_infer(state.generator, lr_batch);
  const int64_t B = lr_batch.dim(0);

  std::mt19937_64 rng(train_detail::mix(cfg.seed, (uint64_t)state.step));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (int k = 0; k < cfg.n_critic; ++k) {
    Tensor eps({B});
    for (int64_t b = 0; b < B; ++b) eps.data()[b] = u01(rng);
    Tape tape;
    std::vector<Tensor> live = attach_params(tape, state.critic);
    CriticLossParts parts = critic_loss(tape, state.critic.critic_cfg, live,
                                        hr_batch, fake, cfg.lambda_gp, eps);
    LossRecord crec;
    crec.step = state.step;
    crec.mode = "critic";
    crec.wasserstein_estimate = parts.wasserstein;
    crec.gp_term = parts.gp;
    crec.critic_loss = parts.total.item();
    crec.total = crec.critic_loss;
    train_detail::check_finite(crec.total, crec);
    state.critic_opt.step(state.critic, tape.backward(parts.total, live));
    if (history) history->push_back(crec);
    rec.wasserstein_estimate = parts.wasserstein;
    rec.gp_term = parts.gp;
    rec.critic_loss = crec.critic_loss;
  }

  {
    Tape tape;
    std::vector<Tensor> gen_live = attach_params(tape, state.generator);
    std::vector<Tensor> critic_live = attach_params(tape, state.critic);
    const Tensor generated =
        generator_forward(tape, state.generator.gen_cfg, gen_live, lr_batch);
    GeneratorLossParts parts =
        generator_loss(tape, state.critic.critic_cfg, critic_live, generated,
                       hr_batch, cfg.alpha);
    rec.mode = "generator";
    rec.mse_term = parts.mse;
    rec.generator_loss = parts.total.item();
    rec.total = rec.generator_loss;
    train_detail::check_finite(rec.total, rec);
    // Only generator parameters receive updates here; the critic is fixed.
    state.gen_opt.step(state.generator, tape.backward(parts.total, gen_live));
    if (history) {
      LossRecord grec = rec;
      grec.wasserstein_estimate = -parts.mean_score;
      history->push_back(grec);
    }
  }

  ++state.step;
  return rec;
}

inline void write_history_header(std::ostream& os) {
  os << "step,mode,wasserstein,mse,gp,total\n";
}

inline void write_history_rows(std::ostream& os,
                               const std::vector<LossRecord>& rows) {
  os.precision(17);
  for (const auto& r : rows)
    os << r.step << "," << r.mode << "," << r.wasserstein_estimate << ","
       << r.mse_term << "," << r.gp_term << "," << r.total << "\n";
}

/// Validation RMSE in mm/hr of the clamped, denormalized generator output.
inline double validation_rmse(const NetworkParams& generator, const Dataset& val,
                              int batch_size) {
  if (val.empty()) throw Error("validation_rmse: empty dataset");
  double se = 0;
  int64_t n = 0;
  for (size_t start = 0; start < val.size(); start += (size_t)batch_size) {
    const size_t end = std::min(val.size(), start + (size_t)batch_size);
    std::vector<const PrecipField*> lr, hr;
    for (size_t i = start; i < end; ++i) {
      lr.push_back(&val.pairs[i].first);
      hr.push_back(&val.pairs[i].second);
    }
    const Tensor out = generator_infer(generator, batch_tensor(lr));
    const Tensor truth = batch_tensor(hr);
    for (int64_t k = 0; k < out.size(); ++k) {
      const double p = kNormCap * std::clamp(out.data()[k], 0.0, 1.0);
      const double t = kNormCap * truth.data()[k];
      se += (p - t) * (p - t);
      ++n;
    }
  }
  return std::sqrt(se / double(n));
}

struct RunResult {
  NetworkParams generator;
  NetworkParams critic;
  double best_val_rmse = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
};

namespace train_detail {

inline std::string epoch_tag(int epoch) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << epoch;
  return os.str();
}

}  // namespace train_detail

/// Full training loop: seeded shuffles, per-epoch checkpoints (parameters plus
/// optimizer state), appended CSV loss history, best-validation-RMSE
/// selection. With resume=true, continues from the newest epoch checkpoint in
/// checkpoint_dir and reproduces the uninterrupted run exactly.
inline RunResult run_training(const Dataset& train, const Dataset* validation,
                              const TrainConfig& cfg,
                              const GeneratorConfig& gen_cfg,
                              const CriticConfig& critic_cfg,
                              const std::filesystem::path& checkpoint_dir,
                              bool resume = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (train.empty()) throw Error("run_training: empty dataset");
  fs::create_directories(checkpoint_dir);

  TrainerState state;
  state.generator = build_generator(gen_cfg, cfg.seed);
  state.critic = build_critic(critic_cfg, train_detail::mix(cfg.seed, 1));
  state.gen_opt = Adam(cfg.adam, state.generator);
  state.critic_opt = Adam(cfg.adam, state.critic);

  int start_epoch = 1;
  if (resume) {
    int newest = 0;
    for (const auto& e : fs::directory_iterator(checkpoint_dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("generator_epoch_", 0) == 0) {
        const int ep = std::stoi(name.substr(16, 4));
        newest = std::max(newest, ep);
      }
    }
    if (newest > 0) {
      OptSnapshot gsnap, csnap;
      state.generator = load_checkpoint(
          checkpoint_dir / ("generator_epoch_" + train_detail::epoch_tag(newest) +
                            ".ckpt"),
          &gsnap);
      state.gen_opt = Adam(cfg.adam, state.generator);
      state.gen_opt.restore(gsnap);
      if (cfg.mode == TrainMode::kWgan) {
        state.critic = load_checkpoint(
            checkpoint_dir / ("critic_epoch_" + train_detail::epoch_tag(newest) +
                              ".ckpt"),
            &csnap);
        state.critic_opt = Adam(cfg.adam, state.critic);
        state.critic_opt.restore(csnap);
      }
      start_epoch = newest + 1;
      state.epoch_done = newest;
      const size_t steps_per_epoch =
          (train.size() + cfg.batch_size - 1) / (size_t)cfg.batch_size;
      state.step = (int64_t)newest * (int64_t)steps_per_epoch;
    }
  }

  const fs::path history_path = checkpoint_dir / "loss_history.csv";
  const bool new_history = !fs::exists(history_path) || !resume;
  std::ofstream history(history_path,
                        new_history ? std::ios::trunc : std::ios::app);
  if (!history) throw Error("run_training: cannot write " + history_path.string());
  if (new_history) write_history_header(history);

  RunResult result;
  // Recover best-so-far from an existing best checkpoint when resuming.
  if (resume && validation && fs::exists(checkpoint_dir / "generator_best.ckpt") &&
      start_epoch > 1) {
    const NetworkParams best =
        load_checkpoint(checkpoint_dir / "generator_best.ckpt");
    result.best_val_rmse = validation_rmse(best, *validation, cfg.batch_size);
  }

  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(train_detail::mix(cfg.seed, 0x5eed0000u + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<LossRecord> rows;
    for (size_t start = 0; start < order.size(); start += (size_t)cfg.batch_size) {
      const size_t end = std::min(order.size(), start + (size_t)cfg.batch_size);
      std::vector<const PrecipField*> lr, hr;
      for (size_t i = start; i < end; ++i) {
        lr.push_back(&train.pairs[order[i]].first);
        hr.push_back(&train.pairs[order[i]].second);
      }
      train_step(state, batch_tensor(lr), batch_tensor(hr), cfg, &rows);
    }
    write_history_rows(history, rows);
    history.flush();

    const std::string tag = train_detail::epoch_tag(epoch);
    OptSnapshot gsnap = state.gen_opt.snapshot((uint32_t)epoch);
    save_checkpoint(checkpoint_dir / ("generator_epoch_" + tag + ".ckpt"),
                    state.generator, &gsnap);
    if (cfg.mode == TrainMode::kWgan) {
      OptSnapshot csnap = state.critic_opt.snapshot((uint32_t)epoch);
      save_checkpoint(checkpoint_dir / ("critic_epoch_" + tag + ".ckpt"),
                      state.critic, &csnap);
    }
    state.epoch_done = epoch;

    if (validation && !validation->empty()) {
      const double vr = validation_rmse(state.generator, *validation,
                                        cfg.batch_size);
      if (vr < result.best_val_rmse) {
        result.best_val_rmse = vr;
        result.best_epoch = epoch;
        save_checkpoint(checkpoint_dir / "generator_best.ckpt", state.generator);
        if (cfg.mode == TrainMode::kWgan)
          save_checkpoint(checkpoint_dir / "critic_best.ckpt", state.critic);
      }
    }
  }

  result.generator = state.generator;
  result.critic = state.critic;
  return result;
}

}  // namespace rdwn
