#pragma once

// Transform-coding skeleton: analysis/synthesis transforms embedding the
// spectral-graph and windowed-attention modules, hyper transforms,
// mean-subtracted quantization with channel-slice parameter prediction,
// latent residual correction, and file-level encode/decode.

#include <string>
#include <utility>
#include <vector>

#include "mslc/data.hpp"
#include "mslc/entropy.hpp"
#include "mslc/iswge.hpp"
#include "mslc/wsga.hpp"

namespace mslc {

extern const std::vector<double> kLambdaSweep;
uint8_t lambda_index(double lambda);  // 255 when outside the sweep set

enum class Ablation { kFull, kNoIswge, kNoWsgac, kConvOnly };
Ablation ablation_from_string(const std::string& s);
std::string ablation_to_string(Ablation a);

struct ModelConfig {
  int bands = 6;
  int base_channels = 32;    // N
  int latent_channels = 48;  // M
  int slices = 4;
  int window = 8;            // P
  int knn = 9;
  int group_width = 4;       // f
  int num_windows = 16;
  int dv = 16;
  int de = 16;
  int spectral_channels = 16;
  int conv_stem_channels = 16;
  int hyper_channels = 24;   // M/2
  int head_hidden = 64;
  int residual_hidden = 32;
  double lambda_rd = 0.0048;
  uint64_t seed = 1;
  Ablation ablation = Ablation::kFull;

  int slice_channels() const { return latent_channels / slices; }
  bool use_iswge() const {
    return ablation == Ablation::kFull || ablation == Ablation::kNoWsgac;
  }
  bool use_wsgac() const {
    return ablation == Ablation::kFull || ablation == Ablation::kNoIswge;
  }
  void validate() const;
};

enum class QuantMode {
  kRound,       // eval / coding: round(y - mu) + mu
  kNoisy,       // training: rate sees y + u, distortion path rounds with STE
  kContinuous,  // gradient checks: quantizer bypassed entirely
};

struct SliceParams {
  Tensor mu, sigma;
};

struct ForwardResult {
  Tensor y, z, z_hat, psi;
  std::vector<Tensor> y_hat;          // per-slice quantized latents
  std::vector<SliceParams> params;
  std::vector<Tensor> residual;
  Tensor y_bar;
  Tensor x_hat;
  Tensor bits_y, bits_z;              // scalars, base-2
};

struct CodecModel {
  ModelConfig cfg;

  IswgeModule enc_iswge;
  Conv2d enc_stem;
  Conv2d enc_d1, enc_d2, enc_d3, enc_d4;
  WsgaCModule enc_w1, enc_w2;

  Conv2d ha1, ha2;
  ConvTranspose2d hs1, hs2;
  Tensor z_prior_mu, z_prior_scale_raw;

  struct SliceHead {
    Conv2d h1, h2;  // 1x1 pair predicting (mu, raw sigma)
    Conv2d r1, r2;  // 1x1 pair predicting the latent residual offset
  };
  std::vector<SliceHead> heads;

  WsgaCModule dec_w2, dec_w1;
  ConvTranspose2d dec_u1, dec_u2, dec_u3;
  ConvTranspose2d dec_out_conv;
  Conv2d dec_spec_proj;
  IswgeModule dec_iswge;
  ConvTranspose2d dec_out_spec;

  NormStats stats;  // preprocessing stats travel with the checkpoint

  void init(const ModelConfig& config);
  ParamList parameters();
  uint64_t checksum();

  Tensor analyze(const Tensor& x) const;
  Tensor hyper_analyze(const Tensor& y) const;
  Tensor hyper_synthesize(const Tensor& z_hat) const;
  Tensor z_sigma() const;  // [hyper_channels], floored via softplus
  Tensor z_mu_map(int zh, int zw) const;
  SliceParams predict_slice_params(const Tensor& psi,
                                   const std::vector<Tensor>& prev_slices,
                                   int i) const;
  std::pair<Tensor, Tensor> latent_residual(const Tensor& y_hat_i,
                                            const Tensor& mu_i, int i) const;
  Tensor synthesize(const Tensor& y_bar) const;

  ForwardResult forward(const Tensor& x, QuantMode mode,
                        Rng* noise_rng = nullptr) const;
};

// round(y - mu) + mu, ties away from zero; gradient of the rounding is
// identity (straight-through).
Tensor quantize_mean_subtracted(const Tensor& y, const Tensor& mu);

// L = (bits_y + bits_z)/num_pixels + lambda * 255^2 * MSE(x, x_hat)
Tensor rd_loss(const Tensor& x, const Tensor& x_hat, const Tensor& bits_y,
               const Tensor& bits_z, double lambda, int64_t num_pixels);

// spatial dims of the hyper latent implied by conv arithmetic
std::pair<int, int> hyper_latent_dims(int height, int width);

struct EncodeResult {
  Bitstream stream;
  ForwardResult fwd;
};
EncodeResult encode_image(CodecModel& model, const Tensor& x);

struct DecodeResult {
  Tensor x_hat;
  std::vector<Tensor> y_hat;
};
DecodeResult decode_image(CodecModel& model, const Bitstream& stream);

// Checkpoint plus a key=value config block in a ".cfg" sidecar.
void save_model(const std::string& path, CodecModel& model);
CodecModel load_model(const std::string& path);

}  // namespace mslc
