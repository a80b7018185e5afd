#include "mslc/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mslc {

void save_msi(const std::string& path, const MsiImage& img) {
  MSLC_CHECK(img.pixels.size() == size_t(img.bands) * img.plane(),
             "MSI pixel buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  MSLC_CHECK(os.good(), "cannot write MSI file: " << path);
  os.write("MSI1", 4);
  os.put(char(img.bands));
  os.put(0);  // reserved
  uint32_t hw[2] = {img.height, img.width};
  for (uint32_t v : hw)
    for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xFF));
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           std::streamsize(img.pixels.size() * 4));
  MSLC_CHECK(os.good(), "MSI write failed: " << path);
}

MsiImage load_msi(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MSLC_CHECK(is.good(), "cannot open MSI file: " << path);
  char magic[4];
  is.read(magic, 4);
  MSLC_CHECK(is.gcount() == 4 && std::memcmp(magic, "MSI1", 4) == 0,
             "bad MSI magic in " << path);
  MsiImage img;
  int b = is.get(), reserved = is.get();
  MSLC_CHECK(b != EOF && reserved != EOF, "MSI header truncated: " << path);
  img.bands = uint8_t(b);
  uint32_t hw[2] = {0, 0};
  for (auto& v : hw)
    for (int i = 0; i < 4; ++i) {
      int c = is.get();
      MSLC_CHECK(c != EOF, "MSI header truncated: " << path);
      v |= uint32_t(c) << (8 * i);
    }
  img.height = hw[0];
  img.width = hw[1];
  img.pixels.resize(size_t(img.bands) * img.plane());
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          std::streamsize(img.pixels.size() * 4));
  MSLC_CHECK(size_t(is.gcount()) == img.pixels.size() * 4,
             "MSI payload truncated: " << path);
  for (float v : img.pixels)
    MSLC_CHECK(std::isfinite(v) && v >= 0.0f, "MSI pixel out of range in " << path);
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Blob {
  double cx, cy, sx, sy, amp;
};

void add_blobs(std::vector<double>& field, int size, Rng& rng, int nblobs,
               double sigma_lo, double sigma_hi, double amp_lo, double amp_hi) {
  for (int b = 0; b < nblobs; ++b) {
    Blob blob;
    blob.cx = uniform(rng, 0.0, double(size));
    blob.cy = uniform(rng, 0.0, double(size));
    blob.sx = uniform(rng, sigma_lo, sigma_hi);
    blob.sy = uniform(rng, sigma_lo, sigma_hi);
    blob.amp = uniform(rng, amp_lo, amp_hi);
    for (int y = 0; y < size; ++y) {
      double dy = (y - blob.cy) / blob.sy;
      for (int x = 0; x < size; ++x) {
        double dx = (x - blob.cx) / blob.sx;
        field[size_t(y) * size + x] += blob.amp * std::exp(-0.5 * (dx * dx + dy * dy));
      }
    }
  }
}

struct BandResponse {
  double gain, gamma;
};

std::vector<BandResponse> band_responses(uint64_t seed, const GenOptions& opt) {
  std::vector<BandResponse> r(static_cast<size_t>(opt.bands));
  Rng rng(seed ^ 0x5e01af3b9d2cull);
  for (auto& br : r) {
    br.gain = uniform(rng, 0.6, 1.6);
    br.gamma = uniform(rng, 0.7, 1.4);
  }
  if (opt.identity_response)
    for (auto& br : r) br = {1.0, 1.0};
  return r;
}

}  // namespace

MsiImage generate_synthetic_one(uint64_t seed, int index, const GenOptions& opt) {
  MSLC_CHECK(opt.rho >= 0.0 && opt.rho <= 1.0, "correlation rho " << opt.rho
                                                                  << " outside [0,1]");
  MSLC_CHECK(opt.size % 16 == 0, "image size must be divisible by 16");
  auto responses = band_responses(seed, opt);
  Rng rng(seed * 1000003ull + uint64_t(index) * 7919ull + 17ull);
  int size = opt.size;
  std::vector<double> shared(size_t(size) * size, 0.0);
  int nblobs = 6 + int(rng() % 10);
  add_blobs(shared, size, rng, nblobs, size / 16.0, size / 4.0, 0.3, 1.0);

  MsiImage img;
  img.bands = uint8_t(opt.bands);
  img.height = img.width = uint32_t(size);
  img.pixels.resize(size_t(opt.bands) * size * size);
  std::vector<double> noise(size_t(size) * size);
  constexpr double kScale = 50.0;  // physical-ish dynamic range before log
  for (int b = 0; b < opt.bands; ++b) {
    // fine-grained zero-mean texture around a 0.5 offset; independent bands
    // must decorrelate, which broad smooth fields would not
    std::fill(noise.begin(), noise.end(), 0.5);
    add_blobs(noise, size, rng, 40, size / 32.0, size / 16.0, -0.5, 0.5);
    const auto& br = responses[size_t(b)];
    for (size_t i = 0; i < shared.size(); ++i) {
      double structural = br.gain * std::pow(shared[i], br.gamma);
      double v = opt.rho * structural + (1.0 - opt.rho) * noise[i];
      img.pixels[size_t(b) * shared.size() + i] = float(std::max(0.0, v * kScale));
    }
  }
  return img;
}

std::vector<MsiImage> generate_synthetic(uint64_t seed, int count,
                                         const GenOptions& opt) {
  std::vector<MsiImage> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_synthetic_one(seed, i, opt));
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

NormStats compute_norm_stats(const std::vector<MsiImage>& train) {
  MSLC_CHECK(!train.empty(), "cannot compute stats from an empty train split");
  int bands = train[0].bands;
  NormStats stats;
  stats.band_max.assign(size_t(bands), 1e-6f);
  for (const auto& img : train) {
    MSLC_CHECK(img.bands == bands, "mixed band counts in train split");
    for (int b = 0; b < bands; ++b)
      for (size_t i = 0; i < img.plane(); ++i) {
        float t = std::log1p(img.pixels[size_t(b) * img.plane() + i]);
        stats.band_max[size_t(b)] = std::max(stats.band_max[size_t(b)], t);
      }
  }
  return stats;
}

Tensor preprocess(const MsiImage& img, const NormStats& stats) {
  MSLC_CHECK(img.bands == stats.band_max.size(), "stats band count mismatch");
  std::vector<double> v(img.pixels.size());
  for (int b = 0; b < img.bands; ++b) {
    double inv = 1.0 / double(stats.band_max[size_t(b)]);
    for (size_t i = 0; i < img.plane(); ++i) {
      float px = img.pixels[size_t(b) * img.plane() + i];
      MSLC_CHECK(px >= 0.0f, "negative pixel value " << px);
      v[size_t(b) * img.plane() + i] = std::log1p(double(px)) * inv;
    }
  }
  return Tensor::from_values({1, img.bands, int(img.height), int(img.width)},
                             std::move(v));
}

MsiImage postprocess(const Tensor& x, const NormStats& stats) {
  MSLC_CHECK(x.ndim() == 4 && x.dim(0) == 1, "postprocess expects [1, B, H, W]");
  MsiImage img;
  img.bands = uint8_t(x.dim(1));
  img.height = uint32_t(x.dim(2));
  img.width = uint32_t(x.dim(3));
  MSLC_CHECK(img.bands == stats.band_max.size(), "stats band count mismatch");
  img.pixels.resize(x.values().size());
  for (int b = 0; b < img.bands; ++b) {
    double mx = double(stats.band_max[size_t(b)]);
    for (size_t i = 0; i < img.plane(); ++i) {
      double t = x.values()[size_t(b) * img.plane() + i] * mx;
      img.pixels[size_t(b) * img.plane() + i] = float(std::max(0.0, std::expm1(t)));
    }
  }
  return img;
}

Tensor random_crop(const Tensor& t, int size, Rng& rng) {
  MSLC_CHECK(t.ndim() == 4, "random_crop expects [B, C, H, W]");
  int H = t.dim(2), W = t.dim(3);
  MSLC_CHECK(size >= 1 && size <= H && size <= W,
             "crop " << size << " larger than image " << H << "x" << W);
  int top = int(rng() % uint64_t(H - size + 1));
  int left = int(rng() % uint64_t(W - size + 1));
  return slice(slice(t, 2, top, size), 3, left, size);
}

// ---------------------------------------------------------------------------
// Manifest

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  MSLC_CHECK(os.good(), "cannot write manifest: " << path);
  for (const auto& e : entries)
    os << e.path << " " << (e.is_train ? "train" : "test") << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  MSLC_CHECK(is.good(), "cannot open manifest: " << path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string tag;
    ls >> e.path >> tag;
    MSLC_CHECK(tag == "train" || tag == "test", "bad manifest tag: " << tag);
    e.is_train = tag == "train";
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace mslc
