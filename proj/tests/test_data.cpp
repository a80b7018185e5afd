#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "mslc/data.hpp"
#include "test_util.hpp"

using namespace mslc;
using namespace mslc::testing;

namespace {

double band_correlation(const MsiImage& img, int b1, int b2) {
  size_t n = img.plane();
  double m1 = 0, m2 = 0;
  for (size_t i = 0; i < n; ++i) {
    m1 += img.pixels[size_t(b1) * n + i];
    m2 += img.pixels[size_t(b2) * n + i];
  }
  m1 /= double(n);
  m2 /= double(n);
  double cov = 0, v1 = 0, v2 = 0;
  for (size_t i = 0; i < n; ++i) {
    double d1 = img.pixels[size_t(b1) * n + i] - m1;
    double d2 = img.pixels[size_t(b2) * n + i] - m2;
    cov += d1 * d2;
    v1 += d1 * d1;
    v2 += d2 * d2;
  }
  if (v1 <= 0 || v2 <= 0) return 0.0;
  return cov / std::sqrt(v1 * v2);
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generator: rho=1 with identity responses makes all bands identical") {
  GenOptions opt;
  opt.rho = 1.0;
  opt.identity_response = true;
  opt.size = 32;
  MsiImage img = generate_synthetic_one(5, 0, opt);
  for (int b = 1; b < 6; ++b)
    for (size_t i = 0; i < img.plane(); ++i)
      CHECK(img.pixels[size_t(b) * img.plane() + i] == img.pixels[i]);
}

TEST_CASE("generator: rho=0 gives nearly uncorrelated bands over 100 images") {
  GenOptions opt;
  opt.rho = 0.0;
  opt.size = 32;
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i < 100; ++i) {
    MsiImage img = generate_synthetic_one(11, i, opt);
    for (int b1 = 0; b1 < 6; ++b1)
      for (int b2 = b1 + 1; b2 < 6; ++b2) {
        acc += std::fabs(band_correlation(img, b1, b2));
        ++count;
      }
  }
  CHECK(acc / count < 0.1);
}

TEST_CASE("generator: rho=0.8 keeps bands strongly correlated") {
  GenOptions opt;
  opt.rho = 0.8;
  opt.size = 32;
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i < 20; ++i) {
    MsiImage img = generate_synthetic_one(11, i, opt);
    for (int b1 = 0; b1 < 6; ++b1)
      for (int b2 = b1 + 1; b2 < 6; ++b2) {
        acc += band_correlation(img, b1, b2);
        ++count;
      }
  }
  CHECK(acc / count > 0.4);
}

TEST_CASE("generator: deterministic per seed, distinct across seeds") {
  GenOptions opt;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    MsiImage a = generate_synthetic_one(seed, 3, opt);
    MsiImage b = generate_synthetic_one(seed, 3, opt);
    CHECK(a.pixels == b.pixels);
  }
  MsiImage a = generate_synthetic_one(1, 0, opt);
  MsiImage b = generate_synthetic_one(2, 0, opt);
  CHECK(a.pixels != b.pixels);
  GenOptions bad;
  bad.rho = 1.5;
  CHECK_THROWS_AS(generate_synthetic_one(1, 0, bad), Error);
}

TEST_CASE("preprocess: log1p endpoints and round trip") {
  NormStats stats;
  stats.band_max.assign(1, 1.0f);
  MsiImage img;
  img.bands = 1;
  img.height = img.width = 4;
  img.pixels.assign(16, 0.0f);
  img.pixels[1] = float(std::exp(1.0) - 1.0);
  Tensor t = preprocess(img, stats);
  CHECK(t.values()[0] == 0.0);
  CHECK(t.values()[1] == doctest::Approx(1.0).epsilon(1e-6));

  // random image, stats from itself: postprocess(preprocess(v)) = v
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    GenOptions opt;
    opt.size = 16;
    MsiImage r = generate_synthetic_one(seed, 0, opt);
    NormStats s = compute_norm_stats({r});
    MsiImage back = postprocess(preprocess(r, s), s);
    double worst = 0.0;
    for (size_t i = 0; i < r.pixels.size(); ++i) {
      double rel = std::fabs(double(back.pixels[i]) - double(r.pixels[i])) /
                   (std::fabs(double(r.pixels[i])) + 1e-6);
      worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("random_crop: identity at full size, reproducible, in bounds") {
  Rng rng(3);
  Tensor t = randn({1, 2, 8, 8}, rng);
  Rng crop_rng(7);
  Tensor full = random_crop(t, 8, crop_rng);
  CHECK(max_abs_diff(full.values(), t.values()) == 0.0);

  Rng r1(9), r2(9);
  for (int i = 0; i < 20; ++i) {
    Tensor a = random_crop(t, 3, r1);
    Tensor b = random_crop(t, 3, r2);
    CHECK(a.shape() == Shape{1, 2, 3, 3});
    CHECK(max_abs_diff(a.values(), b.values()) == 0.0);
  }
  CHECK_THROWS_AS(random_crop(t, 9, r1), Error);
}

TEST_CASE("random_crop: corners are uniform within chi-square tolerance") {
  // 4x4 image, crop 3 -> 4 equally likely corners
  Tensor t = Tensor::arange({1, 1, 4, 4});
  std::map<double, int> corner_counts;
  Rng crop_rng(123);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Tensor c = random_crop(t, 3, crop_rng);
    corner_counts[c.values()[0]]++;
  }
  CHECK(corner_counts.size() == 4);
  double chi2 = 0.0;
  for (auto& [corner, count] : corner_counts) {
    double expect = draws / 4.0;
    chi2 += (count - expect) * (count - expect) / expect;
    (void)corner;
  }
  CHECK(chi2 < 11.34);  // chi-square 99th percentile, 3 dof
}

TEST_CASE("crops are sub-rectangles: every value present in the source window") {
  Tensor t = Tensor::arange({1, 1, 8, 8});
  Rng crop_rng(29);
  for (int i = 0; i < 50; ++i) {
    Tensor c = random_crop(t, 4, crop_rng);
    double first = c.values()[0];
    int top = int(first) / 8, left = int(first) % 8;
    CHECK(top <= 4);
    CHECK(left <= 4);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        CHECK(c.values()[size_t(a * 4 + b)] == double((top + a) * 8 + left + b));
  }
}

TEST_CASE("MSI file: bit-exact round trip, size arithmetic, error contracts") {
  GenOptions opt;
  MsiImage img = generate_synthetic_one(21, 0, opt);
  std::string path = tmp_path("mslc_test.msi");
  save_msi(path, img);
  CHECK(std::filesystem::file_size(path) == 14 + size_t(6) * 64 * 64 * 4);
  MsiImage back = load_msi(path);
  CHECK(back.bands == img.bands);
  CHECK(back.height == img.height);
  CHECK(back.width == img.width);
  CHECK(back.pixels == img.pixels);

  // truncated payload
  {
    std::ifstream is(path, std::ios::binary);
    std::vector<char> bytes(std::istreambuf_iterator<char>(is), {});
    bytes.resize(bytes.size() - 10);
    std::ofstream os(tmp_path("mslc_trunc.msi"), std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_AS(load_msi(tmp_path("mslc_trunc.msi")), Error);

  // magic mismatch
  {
    std::ofstream os(tmp_path("mslc_bad.msi"), std::ios::binary);
    os.write("BAD0_______________", 19);
  }
  CHECK_THROWS_AS(load_msi(tmp_path("mslc_bad.msi")), Error);
}

TEST_CASE("manifest round trip") {
  std::vector<ManifestEntry> entries = {{"a.msi", true}, {"b.msi", false},
                                        {"c.msi", true}};
  std::string path = tmp_path("mslc_manifest.txt");
  save_manifest(path, entries);
  auto back = load_manifest(path);
  CHECK(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].path == entries[i].path);
    CHECK(back[i].is_train == entries[i].is_train);
  }
}
