#include "mslc/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mslc {

double psnr(const std::vector<double>& x, const std::vector<double>& xhat,
            double peak) {
  MSLC_CHECK(x.size() == xhat.size() && !x.empty(), "psnr shape mismatch");
  MSLC_CHECK(peak > 0.0, "psnr peak must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - xhat[i];
    mse += d * d;
  }
  mse /= double(x.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

// ---------------------------------------------------------------------------
// MS-SSIM

namespace {

constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr int kSsimWindow = 11;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(static_cast<size_t>(kSsimWindow));
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    double d = i - (kSsimWindow - 1) / 2.0;
    k[size_t(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[size_t(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// separable valid-region filter
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& k, int& oh, int& ow) {
  int r = int(k.size());
  ow = w - r + 1;
  oh = h - r + 1;
  std::vector<double> tmp(size_t(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < r; ++i) s += img[size_t(y) * w + x + i] * k[size_t(i)];
      tmp[size_t(y) * ow + x] = s;
    }
  std::vector<double> out(size_t(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < r; ++i) s += tmp[size_t(y + i) * ow + x] * k[size_t(i)];
      out[size_t(y) * ow + x] = s;
    }
  return out;
}

void ssim_scale(const std::vector<double>& a, const std::vector<double>& b,
                int h, int w, double& mean_ssim, double& mean_cs) {
  static const std::vector<double> kern = gaussian_kernel();
  int oh, ow;
  auto mu_a = filter_valid(a, h, w, kern, oh, ow);
  auto mu_b = filter_valid(b, h, w, kern, oh, ow);
  std::vector<double> aa(a.size()), bb(b.size()), ab(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto m_aa = filter_valid(aa, h, w, kern, oh, ow);
  auto m_bb = filter_valid(bb, h, w, kern, oh, ow);
  auto m_ab = filter_valid(ab, h, w, kern, oh, ow);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    double va = m_aa[i] - mu_a[i] * mu_a[i];
    double vb = m_bb[i] - mu_b[i] * mu_b[i];
    double cov = m_ab[i] - mu_a[i] * mu_b[i];
    double l = (2.0 * mu_a[i] * mu_b[i] + kC1) /
               (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1);
    double cs = (2.0 * cov + kC2) / (va + vb + kC2);
    ssim_sum += l * cs;
    cs_sum += cs;
  }
  mean_ssim = ssim_sum / double(mu_a.size());
  mean_cs = cs_sum / double(mu_a.size());
}

std::vector<double> downsample2(const std::vector<double>& img, int& h, int& w) {
  int oh = h / 2, ow = w / 2;
  std::vector<double> out(size_t(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[size_t(y) * ow + x] =
          0.25 * (img[size_t(2 * y) * w + 2 * x] + img[size_t(2 * y) * w + 2 * x + 1] +
                  img[size_t(2 * y + 1) * w + 2 * x] +
                  img[size_t(2 * y + 1) * w + 2 * x + 1]);
  h = oh;
  w = ow;
  return out;
}

}  // namespace

double ms_ssim(const std::vector<double>& x, const std::vector<double>& xhat,
               int bands, int height, int width, int* scales_used) {
  MSLC_CHECK(x.size() == xhat.size() &&
                 x.size() == size_t(bands) * height * width,
             "ms_ssim shape mismatch");
  int scales = 0;
  int h = height, w = width;
  while (scales < 5 && h >= kSsimWindow && w >= kSsimWindow) {
    ++scales;
    h /= 2;
    w /= 2;
  }
  MSLC_CHECK(scales >= 1, "image too small for one SSIM scale ("
                              << height << "x" << width << ")");
  if (scales_used) *scales_used = scales;
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];

  double band_acc = 0.0;
  size_t plane = size_t(height) * width;
  for (int b = 0; b < bands; ++b) {
    std::vector<double> a(x.begin() + long(b * plane), x.begin() + long((b + 1) * plane));
    std::vector<double> bb(xhat.begin() + long(b * plane),
                           xhat.begin() + long((b + 1) * plane));
    int hh = height, ww = width;
    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
      double mean_ssim, mean_cs;
      ssim_scale(a, bb, hh, ww, mean_ssim, mean_cs);
      double term = s == scales - 1 ? mean_ssim : mean_cs;
      term = std::max(term, 0.0);  // fractional exponents need non-negative base
      value *= std::pow(term, kMsSsimWeights[s] / wsum);
      if (s + 1 < scales) {
        int h0 = hh, w0 = ww;
        a = downsample2(a, h0, w0);
        bb = downsample2(bb, hh, ww);
      }
    }
    band_acc += value;
  }
  double v = band_acc / double(bands);
  return std::min(1.0, std::max(0.0, v));
}

double ms_ssim_log_db(double v) {
  double rem = 1.0 - v;
  if (rem <= 1e-10) return 100.0;
  return std::min(100.0, -10.0 * std::log10(rem));
}

double msid(const std::vector<double>& x, const std::vector<double>& xhat,
            int bands, int height, int width, double eps) {
  MSLC_CHECK(x.size() == xhat.size() &&
                 x.size() == size_t(bands) * height * width,
             "msid shape mismatch");
  for (double v : x) MSLC_CHECK(v >= 0.0, "msid requires non-negative inputs");
  for (double v : xhat) MSLC_CHECK(v >= 0.0, "msid requires non-negative inputs");
  size_t plane = size_t(height) * width;
  double acc = 0.0;
  std::vector<double> p(static_cast<size_t>(bands)), q(static_cast<size_t>(bands));
  for (size_t i = 0; i < plane; ++i) {
    double sp = 0.0, sq = 0.0;
    for (int b = 0; b < bands; ++b) {
      p[size_t(b)] = x[size_t(b) * plane + i] + eps;
      q[size_t(b)] = xhat[size_t(b) * plane + i] + eps;
      sp += p[size_t(b)];
      sq += q[size_t(b)];
    }
    double sid = 0.0;
    for (int b = 0; b < bands; ++b) {
      double pb = p[size_t(b)] / sp, qb = q[size_t(b)] / sq;
      // (p-q)(ln p - ln q) = p ln(p/q) + q ln(q/p), and swapping the
      // arguments negates both factors, so symmetry holds bit-exactly
      sid += (pb - qb) * (std::log(pb) - std::log(qb));
    }
    acc += sid;
  }
  return acc / double(plane);
}

}  // namespace mslc
