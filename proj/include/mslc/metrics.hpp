#pragma once

// Evaluation metrics: PSNR, MS-SSIM (plus its log transform), and Mean
// Spectral Information Divergence. All operate on plain band-major buffers so
// they stay independent of the codec path they grade.

#include <vector>

#include "mslc/common.hpp"

namespace mslc {

struct MetricReport {
  double bpp = 0.0;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  double ms_ssim_log_db = 0.0;
  double msid_nats = 0.0;
};

// 10*log10(peak^2 / MSE), capped at 100 dB (identical inputs hit the cap).
double psnr(const std::vector<double>& x, const std::vector<double>& xhat,
            double peak);

// Multi-scale SSIM per band, averaged. Up to five scales with the standard
// weights; fewer scales are used (weights renormalized) when the spatial dims
// cannot support all five, and the count used is reported via scales_used.
double ms_ssim(const std::vector<double>& x, const std::vector<double>& xhat,
               int bands, int height, int width, int* scales_used = nullptr);

double ms_ssim_log_db(double ms_ssim_value);  // -10*log10(1 - v), capped 100

// Symmetric KL between per-pixel band-normalized spectra, mean over pixels.
double msid(const std::vector<double>& x, const std::vector<double>& xhat,
            int bands, int height, int width, double eps = 1e-8);

}  // namespace mslc
