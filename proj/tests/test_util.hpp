#pragma once

// Shared helpers for the test suites: independent oracles and input builders.

#include <cmath>
#include <vector>

#include "mslc/tensor.hpp"

namespace mslc::testing {

// uniform values bounded away from zero (relu/abs kinks)
inline Tensor random_away_from_kinks(Shape shape, Rng& rng, double lo = 0.1,
                                     double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) {
    double mag = uniform(rng, lo, hi);
    v = rng() % 2 ? mag : -mag;
  }
  return Tensor::from_values(shape, t.values());
}

// plain 7-loop convolution, independent of the im2col path under test
inline std::vector<double> conv2d_oracle(const std::vector<double>& x, int B,
                                         int C, int H, int W,
                                         const std::vector<double>& w, int Co,
                                         int kh, int kw,
                                         const std::vector<double>& bias,
                                         int stride, int pad, int groups) {
  int OH = (H + 2 * pad - kh) / stride + 1;
  int OW = (W + 2 * pad - kw) / stride + 1;
  int cig = C / groups, cog = Co / groups;
  std::vector<double> out(size_t(B) * Co * OH * OW, 0.0);
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co) {
      int g = co / cog;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[size_t(co)];
          for (int ci = 0; ci < cig; ++ci)
            for (int a = 0; a < kh; ++a)
              for (int c = 0; c < kw; ++c) {
                int ih = oh * stride - pad + a;
                int iw = ow * stride - pad + c;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w[size_t(((co * cig + ci) * kh + a) * kw + c)] *
                       x[size_t(((b * C + g * cig + ci) * H + ih) * W + iw)];
              }
          out[size_t(((b * Co + co) * OH + oh) * OW + ow)] = acc;
        }
    }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// the engine rounds every forward result to float32 precision
inline std::vector<double> to_f32(std::vector<double> v) {
  for (double& x : v) x = double(float(x));
  return v;
}

}  // namespace mslc::testing
