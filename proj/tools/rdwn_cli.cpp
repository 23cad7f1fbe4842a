// Command-line pipeline: synthesize a corpus, train either model, run
// inference, evaluate, and rank cases by critic difference.
//
// Exit codes: 0 ok, 2 config/usage error, 3 I/O error, 4 training divergence,
// 5 checkpoint/field mismatch, 6 id mismatch between evaluation directories.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "rdwn/checkpoint.hpp"
#include "rdwn/metrics.hpp"
#include "rdwn/synth.hpp"
#include "rdwn/training.hpp"

namespace fs = std::filesystem;
using namespace rdwn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitMismatch = 5;
constexpr int kExitIdMismatch = 6;

using KvMap = std::map<std::string, std::string>;

KvMap parse_config_file(const fs::path& path) {
  KvMap kv;
  if (path.empty()) return kv;
  std::ifstream is(path);
  if (!is) throw Error("config: cannot open " + path.string());
  std::string line;
  while (std::getline(is, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
      line.pop_back();
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config: expected key=value, got: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

double kv_double(const KvMap& kv, const std::string& key, double dflt) {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : std::stod(it->second);
}

int64_t kv_int(const KvMap& kv, const std::string& key, int64_t dflt) {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : std::stoll(it->second);
}

std::vector<int> kv_int_list(const KvMap& kv, const std::string& key,
                             std::vector<int> dflt) {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  std::vector<int> out;
  std::string s = it->second;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || s[i] == ',') {
      out.push_back(std::stoi(s.substr(start, i - start)));
      start = i + 1;
    }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

/// Every run writes its fully resolved configuration next to its outputs.
void echo_config(const fs::path& out_dir, const std::string& name,
                 const KvMap& resolved) {
  std::ofstream os(out_dir / (name + "_config_resolved.txt"));
  if (!os) throw Error("cannot write resolved config");
  for (const auto& [k, v] : resolved) os << k << "=" << v << "\n";
}

std::string field_filename(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "field_%06zu.pfld", index);
  return buf;
}

std::vector<std::string> list_pfld(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".pfld") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

// ---------------------------------------------------------------- synth ----

int cmd_synth(const fs::path& config_path, const fs::path& out_dir,
              std::optional<uint64_t> seed_flag) {
  KvMap kv;
  SynthConfig cfg;
  double train_frac = 0.7, val_frac = 0.15;
  try {
    kv = parse_config_file(config_path);
    cfg.grid_size = (int)kv_int(kv, "grid_size", cfg.grid_size);
    cfg.count = (int)kv_int(kv, "count", cfg.count);
    cfg.band_fraction = kv_double(kv, "band_fraction", cfg.band_fraction);
    cfg.advect_min = kv_double(kv, "advect_min", cfg.advect_min);
    cfg.advect_max = kv_double(kv, "advect_max", cfg.advect_max);
    cfg.cell_density = kv_double(kv, "cell_density", cfg.cell_density);
    cfg.spectral_slope = kv_double(kv, "spectral_slope", cfg.spectral_slope);
    cfg.event_hours = (int)kv_int(kv, "event_hours", cfg.event_hours);
    cfg.seed = (uint64_t)kv_int(kv, "seed", (int64_t)cfg.seed);
    if (seed_flag) cfg.seed = *seed_flag;
    train_frac = kv_double(kv, "train_frac", train_frac);
    val_frac = kv_double(kv, "val_frac", val_frac);
    cfg.validate();
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
      throw Error("synth: bad split fractions");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    fs::create_directories(out_dir);
    const std::vector<PrecipField> fields = synth_generate(cfg);
    // Chronological split by contiguous index ranges.
    const size_t n_train = (size_t)(train_frac * cfg.count);
    const size_t n_val = (size_t)(val_frac * cfg.count);
    std::vector<ManifestEntry> manifest;
    size_t counts[3] = {0, 0, 0};
    for (size_t i = 0; i < fields.size(); ++i) {
      ManifestEntry e;
      e.filename = field_filename(i);
      e.split = i < n_train ? Split::kTrain
                : i < n_train + n_val ? Split::kValidation
                                      : Split::kTest;
      e.artifact = fields[i].artifact;
      counts[(int)e.split]++;
      write_field(out_dir / e.filename, fields[i]);
      manifest.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.csv", manifest);
    KvMap resolved = {
        {"grid_size", std::to_string(cfg.grid_size)},
        {"count", std::to_string(cfg.count)},
        {"band_fraction", std::to_string(cfg.band_fraction)},
        {"advect_min", std::to_string(cfg.advect_min)},
        {"advect_max", std::to_string(cfg.advect_max)},
        {"cell_density", std::to_string(cfg.cell_density)},
        {"spectral_slope", std::to_string(cfg.spectral_slope)},
        {"event_hours", std::to_string(cfg.event_hours)},
        {"seed", std::to_string(cfg.seed)},
        {"train_frac", std::to_string(train_frac)},
        {"val_frac", std::to_string(val_frac)},
    };
    echo_config(out_dir, "synth", resolved);
    std::cout << "synth: wrote " << fields.size() << " fields (train "
              << counts[0] << ", validation " << counts[1] << ", test "
              << counts[2] << ") to " << out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
}

// ---------------------------------------------------------------- train ----

Dataset load_split(const fs::path& corpus, Split split, int scale) {
  const std::vector<ManifestEntry> manifest = read_manifest(corpus / "manifest.csv");
  std::vector<PrecipField> hr;
  std::vector<std::string> ids;
  for (const auto& e : manifest)
    if (e.split == split) {
      hr.push_back(read_field(corpus / e.filename));
      ids.push_back(fs::path(e.filename).stem().string());
    }
  return make_dataset(hr, ids, scale, split);
}

int cmd_train(const fs::path& config_path, const fs::path& corpus,
              const fs::path& out_dir, const std::string& mode_str, int scale,
              std::optional<uint64_t> seed_flag, bool resume) {
  TrainConfig cfg;
  GeneratorConfig gen_cfg;
  CriticConfig critic_cfg;
  try {
    const KvMap kv = parse_config_file(config_path);
    cfg.alpha = kv_double(kv, "alpha", cfg.alpha);
    cfg.lambda_gp = kv_double(kv, "lambda_gp", cfg.lambda_gp);
    cfg.batch_size = (int)kv_int(kv, "batch_size", cfg.batch_size);
    cfg.n_critic = (int)kv_int(kv, "n_critic", cfg.n_critic);
    cfg.adam.lr = kv_double(kv, "lr", cfg.adam.lr);
    cfg.adam.beta1 = kv_double(kv, "beta1", cfg.adam.beta1);
    cfg.adam.beta2 = kv_double(kv, "beta2", cfg.adam.beta2);
    cfg.epochs = (int)kv_int(kv, "epochs", cfg.epochs);
    cfg.seed = (uint64_t)kv_int(kv, "seed", (int64_t)cfg.seed);
    if (seed_flag) cfg.seed = *seed_flag;
    cfg.mode = mode_str == "srcnn" ? TrainMode::kSrcnn : TrainMode::kWgan;
    cfg.validate();
    gen_cfg.scale_factor = scale;
    gen_cfg.channels = kv_int_list(kv, "gen_channels", gen_cfg.channels);
    gen_cfg.kernel_sizes = kv_int_list(kv, "gen_kernels", gen_cfg.kernel_sizes);
    auto it = kv.find("upsample_mode");
    if (it != kv.end())
      gen_cfg.upsample_mode = it->second == "nearest" ? UpsampleMode::kNearest
                                                      : UpsampleMode::kBilinear;
    gen_cfg.validate();
    critic_cfg.widths = kv_int_list(kv, "critic_widths", critic_cfg.widths);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const Dataset train = load_split(corpus, Split::kTrain, scale);
    const Dataset val = load_split(corpus, Split::kValidation, scale);
    if (train.empty()) throw Error("train: no training fields in corpus");
    critic_cfg.input_size = (int)train.pairs[0].second.height;
    critic_cfg.validate();
    fs::create_directories(out_dir);
    KvMap resolved = {
        {"mode", mode_str},
        {"scale", std::to_string(scale)},
        {"alpha", std::to_string(cfg.alpha)},
        {"lambda_gp", std::to_string(cfg.lambda_gp)},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"n_critic", std::to_string(cfg.n_critic)},
        {"lr", std::to_string(cfg.adam.lr)},
        {"beta1", std::to_string(cfg.adam.beta1)},
        {"beta2", std::to_string(cfg.adam.beta2)},
        {"epochs", std::to_string(cfg.epochs)},
        {"seed", std::to_string(cfg.seed)},
        {"gen_channels", join_ints(gen_cfg.channels)},
        {"gen_kernels", join_ints(gen_cfg.kernel_sizes)},
        {"critic_widths", join_ints(critic_cfg.widths)},
        {"critic_input_size", std::to_string(critic_cfg.input_size)},
        {"upsample_mode",
         gen_cfg.upsample_mode == UpsampleMode::kNearest ? "nearest" : "bilinear"},
    };
    echo_config(out_dir, "train", resolved);
    const RunResult result = run_training(train, val.empty() ? nullptr : &val,
                                          cfg, gen_cfg, critic_cfg, out_dir,
                                          resume);
    std::cout << "train: finished " << cfg.epochs << " epochs";
    if (result.best_epoch >= 0)
      std::cout << ", best validation RMSE " << result.best_val_rmse
                << " mm/hr at epoch " << result.best_epoch;
    std::cout << "\n";
    return 0;
  } catch (const TrainingDiverged& e) {
    std::cerr << "divergence: " << e.what() << "\nlast finite record: step "
              << e.last_record.step << " mode " << e.last_record.mode
              << " wasserstein " << e.last_record.wasserstein_estimate << " mse "
              << e.last_record.mse_term << " gp " << e.last_record.gp_term
              << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

// ---------------------------------------------------------------- infer ----

int cmd_infer(const fs::path& ckpt_path, const fs::path& in_dir,
              const fs::path& out_dir, bool upsample_only, int scale,
              const std::string& up_mode) {
  try {
    std::optional<NetworkParams> gen;
    if (!upsample_only) {
      gen = load_checkpoint(ckpt_path);
      if (gen->role != Role::kGenerator) {
        std::cerr << "error: checkpoint role is not generator\n";
        return kExitMismatch;
      }
    }
    fs::create_directories(out_dir);
    const UpsampleMode mode =
        up_mode == "nearest" ? UpsampleMode::kNearest : UpsampleMode::kBilinear;
    const int factor = upsample_only ? scale : gen->gen_cfg.scale_factor;
    for (const std::string& name : list_pfld(in_dir)) {
      const PrecipField lr = read_field(in_dir / name);
      const Tensor in = batch_tensor({&lr});
      Tensor out;
      if (upsample_only) {
        Tape tape;
        out = tape.upsample(tape.leaf(in), factor, mode).detached();
      } else {
        out = generator_infer(*gen, in);
      }
      PrecipField hr = make_field(lr.height * factor, lr.width * factor,
                                  lr.timestamp, lr.pixel_km / (float)factor);
      hr.grid = denormalize(out);
      write_field(out_dir / name, hr);
    }
    std::cout << "infer: wrote " << list_pfld(out_dir).size() << " fields to "
              << out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    const std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    if (what.find("shape") != std::string::npos ||
        what.find("size") != std::string::npos)
      return kExitMismatch;
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

// ------------------------------------------------------------- evaluate ----

int cmd_evaluate(const fs::path& truth_dir, const std::vector<fs::path>& pred_dirs,
                 const fs::path& critic_path, const fs::path& out_dir) {
  try {
    std::optional<NetworkParams> critic;
    if (!critic_path.empty()) {
      critic = load_checkpoint(critic_path);
      if (critic->role != Role::kCritic)
        throw Error("evaluate: --critic checkpoint role is not critic");
    }
    const std::vector<std::string> names = list_pfld(truth_dir);
    if (names.empty()) throw Error("evaluate: no fields in truth dir");
    for (const auto& pd : pred_dirs) {
      const std::vector<std::string> pn = list_pfld(pd);
      if (pn != names) {
        std::cerr << "error: field ids in " << pd << " do not match truth dir\n";
        return kExitIdMismatch;
      }
    }
    fs::create_directories(out_dir);

    std::vector<PrecipField> truth;
    truth.reserve(names.size());
    for (const auto& n : names) truth.push_back(read_field(truth_dir / n));

    std::vector<RadialSpectrum> truth_specs;
    for (const auto& f : truth) truth_specs.push_back(power_spectrum_radial(f));
    {
      std::ofstream os(out_dir / "spectrum_HR.csv");
      report_csv::write_spectrum(os, spectrum_aggregate(truth_specs));
    }

    std::vector<double> truth_scores;
    if (critic)
      for (const auto& f : truth) {
        const Tensor s = critic_score(*critic, batch_tensor({&f}));
        truth_scores.push_back(s.data()[0]);
      }

    std::ofstream hist;
    if (critic) {
      hist.open(out_dir / "critic_scores.csv");
      hist << "method,id,score\n";
      hist.precision(17);
      for (size_t i = 0; i < truth_scores.size(); ++i)
        hist << "HR," << fs::path(names[i]).stem().string() << ","
             << truth_scores[i] << "\n";
    }

    for (const auto& pd : pred_dirs) {
      const std::string method = pd.filename().empty()
                                     ? pd.parent_path().filename().string()
                                     : pd.filename().string();
      MetricsReport report;
      report.method = method;
      ContingencyCounts pooled10, pooled15;
      std::vector<RadialSpectrum> specs;
      for (size_t i = 0; i < names.size(); ++i) {
        const PrecipField pred = read_field(pd / names[i]);
        MetricsRow row;
        row.id = fs::path(names[i]).stem().string();
        row.rmse = rmse(pred, truth[i]);
        row.csi10 = csi(pred, truth[i], 10.0);
        row.csi15 = csi(pred, truth[i], 15.0);
        const auto c10 = csi_counts(pred, truth[i], 10.0);
        const auto c15 = csi_counts(pred, truth[i], 15.0);
        pooled10.tp += c10.tp; pooled10.fp += c10.fp; pooled10.fn += c10.fn;
        pooled15.tp += c15.tp; pooled15.fp += c15.fp; pooled15.fn += c15.fn;
        if (critic) {
          const Tensor s = critic_score(*critic, batch_tensor({&pred}));
          row.critic_score = s.data()[0];
          row.critic_diff = truth_scores[i] - *row.critic_score;
          hist << method << "," << row.id << "," << *row.critic_score << "\n";
        }
        specs.push_back(power_spectrum_radial(pred));
        report.rows.push_back(std::move(row));
      }
      // Pooled contingency counts emitted alongside the per-field average.
      MetricsRow pooled;
      pooled.id = "AGGREGATE_POOLED";
      pooled.rmse = report.aggregate().rmse;
      if (pooled10.tp + pooled10.fp + pooled10.fn > 0)
        pooled.csi10 = double(pooled10.tp) /
                       double(pooled10.tp + pooled10.fp + pooled10.fn);
      if (pooled15.tp + pooled15.fp + pooled15.fn > 0)
        pooled.csi15 = double(pooled15.tp) /
                       double(pooled15.tp + pooled15.fp + pooled15.fn);
      {
        std::ofstream os(out_dir / ("report_" + method + ".csv"));
        report_csv::write(os, report, pooled);
      }
      {
        std::ofstream os(out_dir / ("spectrum_" + method + ".csv"));
        report_csv::write_spectrum(os, spectrum_aggregate(specs));
      }
      std::cout << "evaluate: " << method << " mean RMSE "
                << report.aggregate().rmse << " mm/hr over " << names.size()
                << " fields\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

// ----------------------------------------------------------------- rank ----

int cmd_rank(const fs::path& report_path, int k, const fs::path& out_path) {
  MetricsReport report;
  try {
    std::ifstream is(report_path);
    if (!is) throw Error("rank: cannot open " + report_path.string());
    report = report_csv::read(is);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const CriticRanking ranking = rank_by_critic_difference(report, k);
    if (ranking.truncated)
      std::cerr << "rank: k exceeds report size, returning all rows\n";
    std::ostringstream os;
    os << "direction,id,critic_diff\n";
    os.precision(17);
    for (const auto& r : ranking.most_negative)
      os << "negative," << r.id << "," << *r.critic_diff << "\n";
    for (const auto& r : ranking.most_positive)
      os << "positive," << r.id << "," << *r.critic_diff << "\n";
    std::cout << os.str();
    if (!out_path.empty()) {
      std::ofstream f(out_path);
      if (!f) throw Error("rank: cannot write " + out_path.string());
      f << os.str();
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial precipitation downscaling pipeline"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "Override the config seed")->group("Global");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::string synth_config, synth_out;
  synth->add_option("--config", synth_config, "key=value config file");
  synth->add_option("--out", synth_out, "Output corpus directory")->required();

  auto* train = app.add_subcommand("train", "Train the SRCNN or WGAN model");
  std::string train_config, train_corpus, train_out, train_mode = "srcnn";
  int train_scale = 4;
  bool train_resume = false;
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--corpus", train_corpus, "Corpus directory")->required();
  train->add_option("--out", train_out, "Checkpoint/output directory")->required();
  train->add_option("--mode", train_mode, "srcnn | wgan")
      ->check(CLI::IsMember({"srcnn", "wgan"}));
  train->add_option("--scale", train_scale, "HR/LR scale factor")
      ->check(CLI::IsMember({2, 4, 8}));
  train->add_flag("--resume", train_resume, "Resume from newest checkpoint");

  auto* infer = app.add_subcommand("infer", "Downscale LR fields");
  std::string infer_ckpt, infer_in, infer_out, infer_up_mode = "bilinear";
  bool infer_upsample_only = false;
  int infer_scale = 4;
  infer->add_option("--checkpoint", infer_ckpt, "Generator checkpoint");
  infer->add_option("--in", infer_in, "LR field directory")->required();
  infer->add_option("--out", infer_out, "Output directory")->required();
  infer->add_flag("--upsample-only", infer_upsample_only,
                  "Plain upsampling baseline, no network");
  infer->add_option("--scale", infer_scale, "Factor for --upsample-only");
  infer->add_option("--upsample-mode", infer_up_mode, "nearest | bilinear");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions vs truth");
  std::string eval_truth, eval_critic, eval_out;
  std::vector<std::string> eval_preds;
  evaluate->add_option("--truth", eval_truth, "HR truth directory")->required();
  evaluate->add_option("--pred", eval_preds, "Prediction directories")
      ->required()
      ->expected(-1);
  evaluate->add_option("--critic", eval_critic, "Critic checkpoint (optional)");
  evaluate->add_option("--out", eval_out, "Report directory")->required();

  auto* rank = app.add_subcommand("rank", "Rank cases by critic difference");
  std::string rank_report, rank_out;
  int rank_k = 3;
  rank->add_option("--report", rank_report, "Report CSV from evaluate")->required();
  rank->add_option("-k,--top", rank_k, "Cases per direction");
  rank->add_option("--out", rank_out, "Optional output CSV");

  // let the global --seed appear after a subcommand name
  for (CLI::App* sub : {synth, train, infer, evaluate, rank}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) return cmd_synth(synth_config, synth_out, seed);
  if (train->parsed())
    return cmd_train(train_config, train_corpus, train_out, train_mode,
                     train_scale, seed, train_resume);
  if (infer->parsed()) {
    if (!infer_upsample_only && infer_ckpt.empty()) {
      std::cerr << "error: --checkpoint required unless --upsample-only\n";
      return kExitConfig;
    }
    return cmd_infer(infer_ckpt, infer_in, infer_out, infer_upsample_only,
                     infer_scale, infer_up_mode);
  }
  if (evaluate->parsed()) {
    std::vector<fs::path> preds(eval_preds.begin(), eval_preds.end());
    return cmd_evaluate(eval_truth, preds, eval_critic, eval_out);
  }
  if (rank->parsed()) return cmd_rank(rank_report, rank_k, rank_out);
  return kExitConfig;
}
