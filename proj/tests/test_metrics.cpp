#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mslc/data.hpp"
#include "mslc/metrics.hpp"
#include "test_util.hpp"

using namespace mslc;
using namespace mslc::testing;

namespace {

std::vector<double> with_noise(const std::vector<double>& x, double amp, Rng& rng) {
  std::vector<double> out = x;
  for (double& v : out) v += uniform(rng, -amp, amp);
  return out;
}

}  // namespace

TEST_CASE("psnr: closed-form value, cap, and loop-oracle MSE") {
  // peak 1, MSE 0.01 -> 20 dB
  std::vector<double> x(100, 0.0), y(100, 0.1);
  CHECK(psnr(x, y, 1.0) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(psnr(x, x, 1.0) == 100.0);

  Rng rng(3);
  std::vector<double> a(257), b(257);
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = uniform(rng, 0.0, 1.0);
    b[i] = uniform(rng, 0.0, 1.0);
  }
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= double(a.size());
  double expect = 10.0 * std::log10(1.0 / mse);
  CHECK(std::fabs(psnr(a, b, 1.0) - expect) < 1e-9);

  CHECK_THROWS_AS(psnr(a, std::vector<double>(3, 0.0), 1.0), Error);
}

TEST_CASE("ms_ssim: identity, log transform, scale reduction") {
  Rng rng(5);
  int B = 2, H = 64, W = 64;
  std::vector<double> x(size_t(B) * H * W);
  for (double& v : x) v = uniform(rng, 0.0, 1.0);
  int scales = 0;
  CHECK(ms_ssim(x, x, B, H, W, &scales) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(scales == 3);  // 64 -> 32 -> 16 supports three 11x11 scales
  CHECK(ms_ssim_log_db(1.0) == 100.0);
  CHECK(ms_ssim_log_db(0.9) == doctest::Approx(10.0).epsilon(1e-9));

  std::vector<double> tiny(size_t(B) * 8 * 8, 0.5);
  CHECK_THROWS_AS(ms_ssim(tiny, tiny, B, 8, 8, nullptr), Error);
}

TEST_CASE("ms_ssim: constant vs constant+eps matches the per-scale closed form") {
  // constant planes have zero variance at every scale: cs = 1 and the
  // luminance term is l = (2ab + C1)/(a^2 + b^2 + C1), applied at the last
  // scale only, so ms_ssim = l^(w_last / sum w)
  int B = 1, H = 176, W = 176;  // five full scales
  double a = 0.5, eps = 0.02, b = a + eps;
  std::vector<double> xa(size_t(H) * W, a), xb(size_t(H) * W, b);
  int scales = 0;
  double v = ms_ssim(xa, xb, B, H, W, &scales);
  CHECK(scales == 5);
  double c1 = 0.01 * 0.01;
  double l = (2 * a * b + c1) / (a * a + b * b + c1);
  double expect = std::pow(l, 0.1333);  // standard last-scale weight
  CHECK(v == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("msid: identity, hand value, exact symmetry") {
  std::vector<double> x = {0.5, 0.5};  // one pixel, two bands (band-major)
  CHECK(msid(x, x, 2, 1, 1) == doctest::Approx(0.0).epsilon(1e-12));

  // p = (0.5, 0.5), q = (0.25, 0.75): D(p||q) + D(q||p) ~ 0.27465 nats
  std::vector<double> q = {0.25, 0.75};
  CHECK(msid(x, q, 2, 1, 1) == doctest::Approx(0.27465).epsilon(1e-4));
  CHECK(msid(x, q, 2, 1, 1) == msid(q, x, 2, 1, 1));

  std::vector<double> neg = {-0.1, 0.5};
  CHECK_THROWS_AS(msid(neg, x, 2, 1, 1), Error);
}

TEST_CASE("msid: symmetric and non-negative on random stacks") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    int B = 6, H = 32, W = 32;  // ~1e3 pixels
    std::vector<double> x(size_t(B) * H * W), y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] = uniform(rng, 0.0, 10.0);
      y[i] = uniform(rng, 0.0, 10.0);
    }
    double d1 = msid(x, y, B, H, W), d2 = msid(y, x, B, H, W);
    CHECK(d1 >= 0.0);
    CHECK(d1 == d2);
  }
}

TEST_CASE("psnr and ms_ssim never improve as noise grows") {
  Rng rng(11);
  int B = 3, H = 48, W = 48;
  std::vector<double> x(size_t(B) * H * W);
  for (double& v : x) v = uniform(rng, 0.2, 0.8);
  double prev_psnr = 1e9, prev_ssim = 2.0;
  for (double amp : {0.01, 0.03, 0.08, 0.2}) {
    Rng noise_rng(77);  // same noise pattern, growing amplitude
    auto y = with_noise(x, amp, noise_rng);
    double p = psnr(x, y, 1.0);
    double s = ms_ssim(x, y, B, H, W);
    CHECK(p < prev_psnr);
    CHECK(s < prev_ssim);
    prev_psnr = p;
    prev_ssim = s;
  }
}
