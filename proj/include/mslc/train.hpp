#pragma once

// Optimization loop: Adam with bias correction, reduce-on-plateau scheduling,
// global-norm gradient clipping, seeded shuffling/cropping, and CSV logs.

#include <string>
#include <vector>

#include "mslc/codec.hpp"
#include "mslc/metrics.hpp"

namespace mslc {

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<double>> m, v;

  void init(const ParamList& params);
  void apply(ParamList& params, double lr);
};

struct PlateauScheduler {
  double factor = 0.5;
  int patience = 10;  // evaluations, not epochs
  double min_lr = 1e-6;
  double rel_improve = 1e-4;
  double best = 0.0;
  bool has_best = false;
  int bad_count = 0;

  double step(double eval_loss, double lr);
};

struct TrainConfig {
  double lambda_rd = 0.0048;
  int epochs = 30;
  int batch = 8;
  int crop = 64;
  uint64_t seed = 1;
  int eval_every = 1;     // epochs between eval snapshots
  int eval_images = 16;   // test images per snapshot
  double lr = 1e-4;
  double clip_norm = 1.0;
  std::string log_path;       // step CSV: epoch,step,loss,bpp_estimate,mse,lr
  std::string eval_log_path;  // eval CSV with metric-report columns
};

struct TrainStats {
  double first_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  double final_eval_mse = 0.0;
  double final_eval_bpp = 0.0;
  int steps = 0;
};

double grad_global_norm(const ParamList& params);

TrainStats train_model(CodecModel& model, const std::vector<MsiImage>& train_set,
                       const std::vector<MsiImage>& test_set,
                       const TrainConfig& config);

}  // namespace mslc
