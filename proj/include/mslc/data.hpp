#pragma once

// Multispectral image container, MSI1 file format, log preprocessing, and the
// synthetic correlated-band generator used in place of a real archive.

#include <cstdint>
#include <string>
#include <vector>

#include "mslc/tensor.hpp"

namespace mslc {

struct MsiImage {
  uint8_t bands = 0;
  uint32_t height = 0, width = 0;
  std::vector<float> pixels;  // band-major, physical units >= 0

  size_t plane() const { return size_t(height) * width; }
  float at(int b, int h, int w) const {
    return pixels[size_t(b) * plane() + size_t(h) * width + size_t(w)];
  }
};

// File layout (little-endian): magic "MSI1", bands u8, reserved u8, H u32,
// W u32, band-major f32 payload.
void save_msi(const std::string& path, const MsiImage& img);
MsiImage load_msi(const std::string& path);

struct GenOptions {
  int bands = 6;
  int size = 64;
  double rho = 0.8;           // inter-band correlation in [0, 1]
  bool identity_response = false;
};

// Deterministic per (seed, index): a shared blob field pushed through
// band-specific monotone response curves, mixed with independent smooth noise.
MsiImage generate_synthetic_one(uint64_t seed, int index, const GenOptions& opt);
std::vector<MsiImage> generate_synthetic(uint64_t seed, int count, const GenOptions& opt);

struct NormStats {
  std::vector<float> band_max;  // per-band max of log1p values over the train split
};

NormStats compute_norm_stats(const std::vector<MsiImage>& train);

// t = log1p(v) / band_max, as a [1, B, H, W] tensor; postprocess inverts it.
Tensor preprocess(const MsiImage& img, const NormStats& stats);
MsiImage postprocess(const Tensor& x, const NormStats& stats);

// All bands cropped identically at a uniformly random corner.
Tensor random_crop(const Tensor& t, int size, Rng& rng);

struct ManifestEntry {
  std::string path;
  bool is_train = true;
};

// One "path train|test" line per image.
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace mslc
