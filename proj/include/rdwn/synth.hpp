#pragma once

// Synthetic precipitation generator: elongated Gaussian rain bands (echoing
// line-shaped convective events) riding on broad low-intensity background
// blobs, modulated by lognormal cellular texture shaped in the frequency
// domain to a power-law spectrum. Also the rectangular artifact injector used
// by the quality-control experiment.

#include <algorithm>
#include <random>

#include "rdwn/fft.hpp"
#include "rdwn/field.hpp"

namespace rdwn {

struct SynthConfig {
  int grid_size = 64;
  int count = 100;
  double band_fraction = 0.8;      // fraction of events containing a band
  double advect_min = 0.5;         // pixels per hour
  double advect_max = 3.0;
  double cell_density = 1.0;       // lognormal texture strength; 0 = smooth
  double spectral_slope = 3.0;     // target power-law slope of the texture
  uint64_t seed = 0;
  int event_hours = 8;             // fields sharing one advected event

  void validate() const {
    if (grid_size < 8) throw Error("synth config: grid_size too small");
    if (count < 0) throw Error("synth config: negative count");
    if (band_fraction < 0 || band_fraction > 1)
      throw Error("synth config: band_fraction outside [0,1]");
    if (cell_density < 0) throw Error("synth config: negative cell_density");
    if (advect_max < advect_min) throw Error("synth config: bad advection range");
    if (event_hours < 1) throw Error("synth config: event_hours must be >= 1");
  }
};

namespace synth_detail {

inline uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

struct EventState {
  bool has_band = false;
  double cx = 0, cy = 0;        // band center at event start
  double angle = 0;             // band orientation
  double sigma_perp = 3, sigma_along = 20;
  double amplitude = 8;
  double vx = 0, vy = 0;        // advection, pixels/hour
  // background blobs
  struct Blob {
    double cx, cy, sigma, amp;
  };
  std::vector<Blob> blobs;
};

inline EventState sample_event(std::mt19937_64& rng, const SynthConfig& cfg) {
  const double n = cfg.grid_size;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  EventState ev;
  ev.has_band = u01(rng) < cfg.band_fraction;
  ev.cx = u01(rng) * n;
  ev.cy = u01(rng) * n;
  ev.angle = u01(rng) * M_PI;
  ev.sigma_perp = 2.0 + 4.0 * u01(rng);
  ev.sigma_along = n / 3.0 + (2.0 * n / 3.0) * u01(rng);
  ev.amplitude = 5.0 + 10.0 * u01(rng);
  const double speed = cfg.advect_min + (cfg.advect_max - cfg.advect_min) * u01(rng);
  const double dir = u01(rng) * 2.0 * M_PI;
  ev.vx = speed * std::cos(dir);
  ev.vy = speed * std::sin(dir);
  const int n_blobs = 1 + (int)(u01(rng) * 2.999);
  for (int k = 0; k < n_blobs; ++k)
    ev.blobs.push_back({u01(rng) * n, u01(rng) * n, n / 4.0 + (n / 4.0) * u01(rng),
                        0.8 + 2.2 * u01(rng)});
  return ev;
}

/// Gaussian noise shaped to power ~ (|k|+1)^(-slope), unit variance.
inline std::vector<double> shaped_noise(std::mt19937_64& rng, int n, double slope) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> white(n * n);
  for (double& v : white) v = gauss(rng);
  auto spec = fft::dft2d(white.data(), n, n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      const double kx = (double)fft::centered_freq(i, n);
      const double ky = (double)fft::centered_freq(j, n);
      const double k = std::sqrt(kx * kx + ky * ky);
      spec[i * n + j] *= std::pow(k + 1.0, -slope / 2.0);
    }
  std::vector<double> field = fft::idft2d_real(std::move(spec), n, n);
  double mean = 0, var = 0;
  for (double v : field) mean += v;
  mean /= field.size();
  for (double v : field) var += (v - mean) * (v - mean);
  var /= field.size();
  const double inv_sd = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
  for (double& v : field) v = (v - mean) * inv_sd;
  return field;
}

inline PrecipField render_field(std::mt19937_64& rng, const SynthConfig& cfg,
                                const EventState& ev, int hour_in_event,
                                int64_t timestamp) {
  const int n = cfg.grid_size;
  PrecipField f = make_field(n, n, timestamp, 1.0f);

  const double cx = ev.cx + ev.vx * hour_in_event;
  const double cy = ev.cy + ev.vy * hour_in_event;
  const double ca = std::cos(ev.angle), sa = std::sin(ev.angle);

  std::vector<double> intensity(n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dy = i - cy, dx = j - cx;
      double v = 0;
      if (ev.has_band) {
        const double along = dx * ca + dy * sa;
        const double perp = -dx * sa + dy * ca;
        v += ev.amplitude *
             std::exp(-0.5 * (perp * perp / (ev.sigma_perp * ev.sigma_perp) +
                              along * along / (ev.sigma_along * ev.sigma_along)));
      }
      for (const auto& b : ev.blobs) {
        const double bdx = j - (b.cx + ev.vx * hour_in_event);
        const double bdy = i - (b.cy + ev.vy * hour_in_event);
        v += b.amp * std::exp(-0.5 * (bdx * bdx + bdy * bdy) / (b.sigma * b.sigma));
      }
      intensity[i * n + j] = v;
    }

  if (cfg.cell_density > 0) {
    std::vector<double> noise = shaped_noise(rng, n, cfg.spectral_slope);
    // lognormal with unit mean: exp(s*z - s^2/2)
    const double s = 0.6 * cfg.cell_density;
    for (int64_t k = 0; k < (int64_t)intensity.size(); ++k)
      intensity[k] *= std::exp(s * noise[k] - 0.5 * s * s);
  }

  // Rescale so 99.8% of rainy pixels fall below the 20 mm/hr normalization cap.
  std::vector<double> rainy;
  for (double v : intensity)
    if (v > 0.05) rainy.push_back(v);
  if (!rainy.empty()) {
    const size_t q = std::min(rainy.size() - 1,
                              (size_t)(0.998 * (double)rainy.size()));
    std::nth_element(rainy.begin(), rainy.begin() + q, rainy.end());
    const double hi = rainy[q];
    if (hi > 0) {
      const double scale = kNormCap / hi;
      for (double& v : intensity) v *= scale;
    }
  }

  for (int64_t k = 0; k < (int64_t)intensity.size(); ++k)
    f.grid[k] = (float)std::max(intensity[k], 0.0);
  return f;
}

}  // namespace synth_detail

/// Seed-deterministic corpus; every field passes sample_filter.
inline std::vector<PrecipField> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<PrecipField> fields;
  fields.reserve(cfg.count);
  synth_detail::EventState ev;
  for (int i = 0; i < cfg.count; ++i) {
    const int hour = i % cfg.event_hours;
    PrecipField f;
    bool ok = false;
    for (int attempt = 0; attempt < 32; ++attempt) {
      std::mt19937_64 rng(synth_detail::mix(cfg.seed,
                                            (uint64_t)i * 64 + attempt));
      if (hour == 0 || attempt > 0) ev = synth_detail::sample_event(rng, cfg);
      f = synth_detail::render_field(rng, cfg, ev, hour, i);
      if (sample_filter(f)) {
        ok = true;
        break;
      }
    }
    if (!ok)
      throw Error("synth: could not satisfy the sample filter after 32 attempts "
                  "(field " + std::to_string(i) + ")");
    fields.push_back(std::move(f));
  }
  return fields;
}

struct Rect {
  int64_t row = 0, col = 0, height = 0, width = 0;
};

/// Overwrite a rectangle with a constant level plus small seeded jitter,
/// flagging the field as artifact-bearing. Pixels outside are untouched.
inline PrecipField inject_artifact(const PrecipField& hr, const Rect& rect,
                                   double level, uint64_t seed,
                                   double jitter = 0.0) {
  if (rect.row < 0 || rect.col < 0 || rect.height < 0 || rect.width < 0 ||
      rect.row + rect.height > hr.height || rect.col + rect.width > hr.width)
    throw Error("inject_artifact: rectangle out of bounds");
  PrecipField out = hr;
  if (rect.height == 0 || rect.width == 0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  for (int64_t i = rect.row; i < rect.row + rect.height; ++i)
    for (int64_t j = rect.col; j < rect.col + rect.width; ++j)
      out.at(i, j) = (float)std::max(0.0, level + (jitter > 0 ? u(rng) : 0.0));
  out.artifact = true;
  return out;
}

}  // namespace rdwn
