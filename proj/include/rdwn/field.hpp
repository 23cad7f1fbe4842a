#pragma once

// Precipitation field type, normalization (cap 20 mm/hr), block-average
// downsampling, the rain-fraction sample filter, and the PFLD file format:
//   "PFLD" | u16 version | u32 H | u32 W | i64 timestamp | f32 pixel_km |
//   u8 artifact | f32 data[H*W] row-major, little-endian.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rdwn/tensor.hpp"

namespace rdwn {

inline constexpr double kNormCap = 20.0;        // mm/hr saturation cap
inline constexpr double kRainThreshold = 0.4;   // mm/hr
inline constexpr double kRainFraction = 0.2;

struct PrecipField {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> grid;       // mm/hr, row-major
  int64_t timestamp = 0;         // epoch hours
  float pixel_km = 1.0f;
  bool artifact = false;

  int64_t size() const { return height * width; }
  float at(int64_t i, int64_t j) const { return grid[i * width + j]; }
  float& at(int64_t i, int64_t j) { return grid[i * width + j]; }
};

inline PrecipField make_field(int64_t h, int64_t w, int64_t timestamp = 0,
                              float pixel_km = 1.0f) {
  PrecipField f;
  f.height = h;
  f.width = w;
  f.grid.assign(h * w, 0.0f);
  f.timestamp = timestamp;
  f.pixel_km = pixel_km;
  return f;
}

inline void validate_field(const PrecipField& f) {
  if (f.height <= 0 || f.width <= 0 ||
      (int64_t)f.grid.size() != f.height * f.width)
    throw Error("field: inconsistent dimensions");
  for (float v : f.grid)
    if (!std::isfinite(v) || v < 0)
      throw Error("field: values must be finite and non-negative");
}

/// Capped linear scaling: min(R/20, 1) per pixel. Returns [H,W].
inline Tensor normalize(const PrecipField& f) {
  validate_field(f);
  Tensor t({f.height, f.width});
  for (int64_t i = 0; i < f.size(); ++i)
    t.data()[i] = std::min(double(f.grid[i]) / kNormCap, 1.0);
  return t;
}

/// Inverse map; inputs outside [0,1] are clamped first.
inline std::vector<float> denormalize(const Tensor& grid) {
  std::vector<float> out(grid.size());
  for (int64_t i = 0; i < grid.size(); ++i)
    out[i] = (float)(kNormCap * std::clamp(grid.data()[i], 0.0, 1.0));
  return out;
}

/// Block-average pooling; preserves the domain mean exactly.
inline PrecipField downsample(const PrecipField& hr, int factor) {
  if (factor < 1) throw Error("downsample: factor must be positive");
  if (hr.height % factor != 0 || hr.width % factor != 0)
    throw Error("downsample: grid size not divisible by factor");
  PrecipField lr = make_field(hr.height / factor, hr.width / factor,
                              hr.timestamp, hr.pixel_km * factor);
  lr.artifact = hr.artifact;
  const double inv = 1.0 / (factor * factor);
  for (int64_t i = 0; i < lr.height; ++i)
    for (int64_t j = 0; j < lr.width; ++j) {
      double s = 0;
      for (int di = 0; di < factor; ++di)
        for (int dj = 0; dj < factor; ++dj)
          s += hr.at(i * factor + di, j * factor + dj);
      lr.at(i, j) = (float)(s * inv);
    }
  return lr;
}

/// True iff strictly more than 20% of pixels show >= 0.4 mm/hr
/// (raw values; intensity test inclusive, fraction test strict).
inline bool sample_filter(const PrecipField& f) {
  int64_t rainy = 0;
  for (float v : f.grid)
    if (v >= kRainThreshold) ++rainy;
  return double(rainy) / double(f.size()) > kRainFraction;
}

namespace field_io_detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("field file: truncated");
  return v;
}

}  // namespace field_io_detail

inline void write_field(const std::filesystem::path& path, const PrecipField& f) {
  namespace d = field_io_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("field file: cannot open " + path.string() + " for write");
  os.write("PFLD", 4);
  d::put<uint16_t>(os, 1);
  d::put<uint32_t>(os, (uint32_t)f.height);
  d::put<uint32_t>(os, (uint32_t)f.width);
  d::put<int64_t>(os, f.timestamp);
  d::put<float>(os, f.pixel_km);
  d::put<uint8_t>(os, f.artifact ? 1 : 0);
  os.write(reinterpret_cast<const char*>(f.grid.data()),
           (std::streamsize)(f.grid.size() * sizeof(float)));
  if (!os) throw Error("field file: write failed for " + path.string());
}

inline PrecipField read_field(const std::filesystem::path& path) {
  namespace d = field_io_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("field file: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PFLD", 4) != 0)
    throw Error("field file: bad magic in " + path.string());
  const uint16_t version = d::get<uint16_t>(is);
  if (version != 1) throw Error("field file: unsupported version");
  PrecipField f;
  f.height = d::get<uint32_t>(is);
  f.width = d::get<uint32_t>(is);
  if (f.height == 0 || f.width == 0 || f.height * f.width > (int64_t(1) << 28))
    throw Error("field file: dimension overflow in " + path.string());
  f.timestamp = d::get<int64_t>(is);
  f.pixel_km = d::get<float>(is);
  f.artifact = d::get<uint8_t>(is) != 0;
  f.grid.resize(f.height * f.width);
  is.read(reinterpret_cast<char*>(f.grid.data()),
          (std::streamsize)(f.grid.size() * sizeof(float)));
  if (!is) throw Error("field file: payload does not match H*W in " + path.string());
  char extra;
  if (is.read(&extra, 1))
    throw Error("field file: trailing bytes in " + path.string());
  return f;
}

enum class Split { kTrain, kValidation, kTest };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  throw Error("unknown split");
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw Error("manifest: unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string filename;
  Split split = Split::kTrain;
  bool artifact = false;
};

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw Error("manifest: cannot open " + path.string() + " for write");
  os << "filename,split,artifact\n";
  for (const auto& e : entries)
    os << e.filename << "," << split_name(e.split) << ","
       << (e.artifact ? 1 : 0) << "\n";
  if (!os) throw Error("manifest: write failed");
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "filename,split,artifact")
    throw Error("manifest: bad header in " + path.string());
  std::vector<ManifestEntry> entries;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t c1 = line.find(',');
    const size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw Error("manifest: malformed row: " + line);
    ManifestEntry e;
    e.filename = line.substr(0, c1);
    e.split = split_from_name(line.substr(c1 + 1, c2 - c1 - 1));
    e.artifact = line.substr(c2 + 1) == "1";
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Paired LR/HR samples; LR is the HR block-averaged by `factor`.
struct Dataset {
  Split split = Split::kTrain;
  std::vector<std::pair<PrecipField, PrecipField>> pairs;  // (lr, hr)
  std::vector<std::string> ids;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

inline Dataset make_dataset(const std::vector<PrecipField>& hr_fields,
                            const std::vector<std::string>& ids, int factor,
                            Split split) {
  Dataset d;
  d.split = split;
  d.ids = ids;
  d.pairs.reserve(hr_fields.size());
  for (const auto& hr : hr_fields) d.pairs.emplace_back(downsample(hr, factor), hr);
  return d;
}

/// Stack normalized fields into a [B,1,H,W] batch tensor.
inline Tensor batch_tensor(const std::vector<const PrecipField*>& fields) {
  if (fields.empty()) throw Error("batch_tensor: empty batch");
  const int64_t H = fields[0]->height, W = fields[0]->width;
  Tensor t({(int64_t)fields.size(), 1, H, W});
  for (size_t b = 0; b < fields.size(); ++b) {
    if (fields[b]->height != H || fields[b]->width != W)
      throw Error("batch_tensor: inconsistent field sizes");
    Tensor n = normalize(*fields[b]);
    std::copy(n.data(), n.data() + n.size(), t.data() + b * H * W);
  }
  return t;
}

}  // namespace rdwn
