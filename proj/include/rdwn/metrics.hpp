#pragma once

// Forecast-verification metrics and spectral analysis. RMSE/CSI operate on
// physical mm/hr values so the 10/15 mm/hr thresholds apply literally; critic
// scores are computed on normalized fields because the critic is trained
// there.

#include <algorithm>
#include <limits>
#include <optional>
#include <sstream>

#include "rdwn/fft.hpp"
#include "rdwn/field.hpp"
#include "rdwn/networks.hpp"

namespace rdwn {

inline double rmse(const PrecipField& pred, const PrecipField& truth) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw Error("rmse: shape mismatch");
  double s = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred.grid[i]) - double(truth.grid[i]);
    s += d * d;
  }
  return std::sqrt(s / double(pred.size()));
}

/// Critical success index TP/(TP+FP+FN) at an intensity threshold.
/// nullopt when no pixel in either field reaches the threshold.
inline std::optional<double> csi(const PrecipField& pred, const PrecipField& truth,
                                 double threshold) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw Error("csi: shape mismatch");
  if (threshold < 0) throw Error("csi: negative threshold");
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.grid[i] >= threshold;
    const bool t = truth.grid[i] >= threshold;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return double(tp) / double(tp + fp + fn);
}

struct ContingencyCounts {
  int64_t tp = 0, fp = 0, fn = 0;
};

inline ContingencyCounts csi_counts(const PrecipField& pred,
                                    const PrecipField& truth, double threshold) {
  ContingencyCounts c;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.grid[i] >= threshold;
    const bool t = truth.grid[i] >= threshold;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

/// Radially binned power of one field: mean removed, centered frequencies,
/// bin r = round(sqrt(kx^2+ky^2)) clamped into 1..H/2 (corner modes fold into
/// the last bin so total power is preserved). power = |DFT|^2 / (H*W).
struct RadialSpectrum {
  std::vector<double> bin_power;  // average power per bin, index 0 = bin 1
  std::vector<int64_t> bin_count;
  double total_power = 0;  // sum over all non-DC modes of |DFT|^2/(HW)

  int64_t bins() const { return (int64_t)bin_power.size(); }
};

inline RadialSpectrum power_spectrum_radial(const double* data, int64_t H,
                                            int64_t W) {
  if (H != W) throw Error("power_spectrum_radial: square grid required");
  std::vector<double> centered(H * W);
  double mean = 0;
  for (int64_t i = 0; i < H * W; ++i) mean += data[i];
  mean /= double(H * W);
  for (int64_t i = 0; i < H * W; ++i) centered[i] = data[i] - mean;

  auto spec = fft::dft2d(centered.data(), H, W);
  const int64_t nbins = H / 2;
  RadialSpectrum out;
  out.bin_power.assign(nbins, 0.0);
  out.bin_count.assign(nbins, 0);
  const double norm = 1.0 / double(H * W);
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      const double kx = (double)fft::centered_freq(i, H);
      const double ky = (double)fft::centered_freq(j, W);
      int64_t r = (int64_t)std::llround(std::sqrt(kx * kx + ky * ky));
      if (r == 0) continue;  // DC removed with the mean
      r = std::min(r, nbins);
      const double p = std::norm(spec[i * W + j]) * norm;
      out.bin_power[r - 1] += p;
      out.bin_count[r - 1] += 1;
      out.total_power += p;
    }
  for (int64_t b = 0; b < nbins; ++b)
    if (out.bin_count[b] > 0) out.bin_power[b] /= double(out.bin_count[b]);
  return out;
}

inline RadialSpectrum power_spectrum_radial(const PrecipField& f) {
  std::vector<double> d(f.grid.begin(), f.grid.end());
  return power_spectrum_radial(d.data(), f.height, f.width);
}

inline constexpr double kLogPowerFloor = 1e-12;

/// Per-bin mean and standard deviation of log10(power + floor) over fields.
struct SpectrumCurve {
  std::vector<int64_t> bin;        // integer radial wavenumber, 1..H/2
  std::vector<double> mean_logpower;
  std::vector<double> sigma;
};

inline SpectrumCurve spectrum_aggregate(const std::vector<RadialSpectrum>& specs) {
  if (specs.size() < 2) throw Error("spectrum_aggregate: need at least 2 fields");
  const int64_t nbins = specs[0].bins();
  for (const auto& s : specs)
    if (s.bins() != nbins) throw Error("spectrum_aggregate: size mismatch");
  SpectrumCurve c;
  c.bin.resize(nbins);
  c.mean_logpower.assign(nbins, 0.0);
  c.sigma.assign(nbins, 0.0);
  for (int64_t b = 0; b < nbins; ++b) {
    c.bin[b] = b + 1;
    double m = 0;
    for (const auto& s : specs) m += std::log10(s.bin_power[b] + kLogPowerFloor);
    m /= double(specs.size());
    double var = 0;
    for (const auto& s : specs) {
      const double d = std::log10(s.bin_power[b] + kLogPowerFloor) - m;
      var += d * d;
    }
    c.mean_logpower[b] = m;
    c.sigma[b] = std::sqrt(var / double(specs.size()));
  }
  return c;
}

/// F(hr) - F(generated), both scored on normalized values. Negative means
/// the critic rates the generated field at least as highly as the reference.
inline double critic_difference(const NetworkParams& critic, const PrecipField& hr,
                                const PrecipField& generated) {
  const Tensor batch = batch_tensor({&hr, &generated});
  const Tensor scores = critic_score(critic, batch);
  return scores.data()[0] - scores.data()[1];
}

struct MetricsRow {
  std::string id;
  double rmse = 0;
  std::optional<double> csi10, csi15;
  std::optional<double> critic_score, critic_diff;
};

struct MetricsReport {
  std::string method;  // LR | SRCNN | WGAN | ...
  std::vector<MetricsRow> rows;

  MetricsRow aggregate() const {
    MetricsRow a;
    a.id = "AGGREGATE";
    if (rows.empty()) return a;
    double rs = 0, c10 = 0, c15 = 0, cs = 0, cd = 0;
    int64_t n10 = 0, n15 = 0, ncs = 0, ncd = 0;
    for (const auto& r : rows) {
      rs += r.rmse;
      if (r.csi10) { c10 += *r.csi10; ++n10; }
      if (r.csi15) { c15 += *r.csi15; ++n15; }
      if (r.critic_score) { cs += *r.critic_score; ++ncs; }
      if (r.critic_diff) { cd += *r.critic_diff; ++ncd; }
    }
    a.rmse = rs / double(rows.size());
    if (n10) a.csi10 = c10 / double(n10);
    if (n15) a.csi15 = c15 / double(n15);
    if (ncs) a.critic_score = cs / double(ncs);
    if (ncd) a.critic_diff = cd / double(ncd);
    return a;
  }
};

/// Top-k most negative and top-k most positive critic differences.
/// Ties break by field id ascending; k larger than the report returns all.
struct CriticRanking {
  std::vector<MetricsRow> most_negative;
  std::vector<MetricsRow> most_positive;
  bool truncated = false;  // set when k exceeded the report size
};

inline CriticRanking rank_by_critic_difference(const MetricsReport& report, int k) {
  if (k < 0) throw Error("rank: k must be non-negative");
  std::vector<const MetricsRow*> rows;
  for (const auto& r : report.rows)
    if (r.critic_diff) rows.push_back(&r);
  CriticRanking out;
  out.truncated = (size_t)k > rows.size();
  const size_t take = std::min((size_t)k, rows.size());
  auto by_id = [](const MetricsRow* a, const MetricsRow* b) {
    return a->id < b->id;
  };
  std::sort(rows.begin(), rows.end(), by_id);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const MetricsRow* a, const MetricsRow* b) {
                     return *a->critic_diff < *b->critic_diff;
                   });
  for (size_t i = 0; i < take; ++i) out.most_negative.push_back(*rows[i]);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const MetricsRow* a, const MetricsRow* b) {
                     return *a->critic_diff > *b->critic_diff;
                   });
  for (size_t i = 0; i < take; ++i) out.most_positive.push_back(*rows[i]);
  return out;
}

namespace report_csv {

inline std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

inline void write(std::ostream& os, const MetricsReport& report,
                  const std::optional<MetricsRow>& pooled = std::nullopt) {
  os << "id,method,rmse,csi10,csi15,critic_score,critic_diff\n";
  os.precision(17);
  auto emit = [&](const MetricsRow& r, const std::string& method) {
    os << r.id << "," << method << "," << r.rmse << "," << cell(r.csi10) << ","
       << cell(r.csi15) << "," << cell(r.critic_score) << ","
       << cell(r.critic_diff) << "\n";
  };
  for (const auto& r : report.rows) emit(r, report.method);
  emit(report.aggregate(), "AGGREGATE");
  if (pooled) emit(*pooled, "AGGREGATE_POOLED");
}

inline MetricsReport read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) ||
      line != "id,method,rmse,csi10,csi15,critic_score,critic_diff")
    throw Error("report: bad header");
  MetricsReport rep;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (f.size() != 7) throw Error("report: malformed row: " + line);
    if (f[1] == "AGGREGATE" || f[1] == "AGGREGATE_POOLED") continue;
    MetricsRow r;
    r.id = f[0];
    if (rep.method.empty()) rep.method = f[1];
    try {
      r.rmse = std::stod(f[2]);
      if (!f[3].empty()) r.csi10 = std::stod(f[3]);
      if (!f[4].empty()) r.csi15 = std::stod(f[4]);
      if (!f[5].empty()) r.critic_score = std::stod(f[5]);
      if (!f[6].empty()) r.critic_diff = std::stod(f[6]);
    } catch (const std::exception&) {
      throw Error("report: malformed numeric field in row: " + line);
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

inline void write_spectrum(std::ostream& os, const SpectrumCurve& c) {
  os << "bin,mean_logpower,sigma\n";
  os.precision(17);
  for (size_t i = 0; i < c.bin.size(); ++i)
    os << c.bin[i] << "," << c.mean_logpower[i] << "," << c.sigma[i] << "\n";
}

}  // namespace report_csv

}  // namespace rdwn
