#include "mslc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace mslc {

void AdamState::init(const ParamList& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.value.numel(), 0.0);
    v.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamState::apply(ParamList& params, double lr) {
  MSLC_CHECK(m.size() == params.size(), "optimizer state size mismatch");
  ++step;
  double bc1 = 1.0 - std::pow(beta1, double(step));
  double bc2 = 1.0 - std::pow(beta2, double(step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& val = params[pi].value.values();
    const auto& g = params[pi].value.grad();
    MSLC_CHECK(!g.empty() || params[pi].value.numel() == 0,
               "missing gradient for " << params[pi].name);
    auto& mi = m[pi];
    auto& vi = v[pi];
    for (size_t e = 0; e < val.size(); ++e) {
      double gr = g[e];
      mi[e] = beta1 * mi[e] + (1.0 - beta1) * gr;
      vi[e] = beta2 * vi[e] + (1.0 - beta2) * gr * gr;
      double mhat = mi[e] / bc1;
      double vhat = vi[e] / bc2;
      double w = val[e] - lr * mhat / (std::sqrt(vhat) + eps);
      float f = float(w);  // parameters keep float32 precision
      MSLC_CHECK(std::isfinite(f), "non-finite parameter after Adam step in "
                                       << params[pi].name);
      val[e] = double(f);
    }
  }
}

double PlateauScheduler::step(double eval_loss, double lr) {
  MSLC_CHECK(std::isfinite(eval_loss), "scheduler fed a non-finite loss");
  bool improved = !has_best || eval_loss < best * (1.0 - rel_improve);
  if (improved) {
    best = eval_loss;
    has_best = true;
    bad_count = 0;
    return lr;
  }
  if (++bad_count >= patience) {
    bad_count = 0;
    return std::max(min_lr, lr * factor);
  }
  return lr;
}

double grad_global_norm(const ParamList& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.value.grad()) sq += g * g;
  return std::sqrt(sq);
}

static void scale_grads(ParamList& params, double scale) {
  for (auto& p : params)
    for (double& v : p.value.grad_mut()) v *= scale;
}

namespace {

struct EvalSnapshot {
  double loss = 0.0, mse = 0.0, bpp = 0.0;
  double psnr_db = 0.0, msssim = 0.0, msid_nats = 0.0;
};

EvalSnapshot evaluate(CodecModel& model, const std::vector<Tensor>& eval_inputs,
                      const std::vector<MsiImage>& eval_images, double lambda) {
  NoGradGuard ng;
  EvalSnapshot s;
  for (size_t i = 0; i < eval_inputs.size(); ++i) {
    const Tensor& x = eval_inputs[i];
    ForwardResult f = model.forward(x, QuantMode::kRound);
    int64_t px = int64_t(x.dim(2)) * x.dim(3);
    s.loss += rd_loss(x, f.x_hat, f.bits_y, f.bits_z, lambda, px).item();
    Tensor diff = sub(x, f.x_hat);
    s.mse += mean(mul(diff, diff)).item();
    s.bpp += (f.bits_y.item() + f.bits_z.item()) / double(px);
    s.psnr_db += psnr(x.values(), f.x_hat.values(), 1.0);
    s.msssim += ms_ssim(x.values(), f.x_hat.values(), x.dim(1), x.dim(2), x.dim(3));
    MsiImage rec = postprocess(f.x_hat, model.stats);
    std::vector<double> phys_x(eval_images[i].pixels.begin(),
                               eval_images[i].pixels.end());
    std::vector<double> phys_r(rec.pixels.begin(), rec.pixels.end());
    s.msid_nats += msid(phys_x, phys_r, x.dim(1), x.dim(2), x.dim(3));
  }
  double n = double(eval_inputs.size());
  s.loss /= n;
  s.mse /= n;
  s.bpp /= n;
  s.psnr_db /= n;
  s.msssim /= n;
  s.msid_nats /= n;
  return s;
}

}  // namespace

TrainStats train_model(CodecModel& model, const std::vector<MsiImage>& train_set,
                       const std::vector<MsiImage>& test_set,
                       const TrainConfig& config) {
  MSLC_CHECK(!train_set.empty(), "empty training set");
  MSLC_CHECK(!test_set.empty(), "empty test set");
  model.stats = compute_norm_stats(train_set);
  ParamList params = model.parameters();
  AdamState adam;
  adam.init(params);
  PlateauScheduler sched;
  double lr = config.lr;

  Rng shuffle_rng(config.seed * 11400714819323198485ull + 1);
  Rng crop_rng(config.seed * 11400714819323198485ull + 2);
  Rng noise_rng(config.seed * 11400714819323198485ull + 3);

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    MSLC_CHECK(log.good(), "cannot write training log: " << config.log_path);
    log << "epoch,step,loss,bpp_estimate,mse,lr\n";
  }
  std::ofstream elog;
  if (!config.eval_log_path.empty()) {
    elog.open(config.eval_log_path);
    MSLC_CHECK(elog.good(), "cannot write eval log: " << config.eval_log_path);
    elog << "epoch,loss,bpp,psnr_db,ms_ssim,msid_nats,mse,lr\n";
  }
  char buf[512];

  int n_eval = std::min<int>(config.eval_images, int(test_set.size()));
  std::vector<Tensor> eval_inputs;
  std::vector<MsiImage> eval_images(test_set.begin(), test_set.begin() + n_eval);
  {
    NoGradGuard ng;
    for (const auto& img : eval_images) eval_inputs.push_back(preprocess(img, model.stats));
  }

  TrainStats stats;
  EvalSnapshot first = evaluate(model, eval_inputs, eval_images, config.lambda_rd);
  stats.first_eval_loss = first.loss;
  if (elog.is_open()) {
    std::snprintf(buf, sizeof buf, "0,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  first.loss, first.bpp, first.psnr_db, first.msssim,
                  first.msid_nats, first.mse, lr);
    elog << buf;
  }

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t(0));
  int global_step = 0;
  EvalSnapshot last = first;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += size_t(config.batch)) {
      size_t stop = std::min(order.size(), start + size_t(config.batch));
      Tensor batch;
      {
        NoGradGuard ng;
        std::vector<Tensor> crops;
        for (size_t bi = start; bi < stop; ++bi) {
          Tensor full = preprocess(train_set[order[bi]], model.stats);
          crops.push_back(random_crop(full, config.crop, crop_rng));
        }
        batch = concat(crops, 0);
      }
      Tape::get().clear();
      zero_grads(params);
      double loss_val = 0.0, bpp_val = 0.0, mse_val = 0.0;
      try {
        ForwardResult f = model.forward(batch, QuantMode::kNoisy, &noise_rng);
        int64_t px = int64_t(batch.dim(2)) * batch.dim(3) * batch.dim(0);
        Tensor loss = rd_loss(batch, f.x_hat, f.bits_y, f.bits_z,
                              config.lambda_rd, px);
        loss_val = loss.item();
        bpp_val = (f.bits_y.item() + f.bits_z.item()) / double(px);
        Tensor diff = sub(batch, f.x_hat);
        mse_val = mean(mul(diff, diff)).item();
        backward(loss);
      } catch (const NumericError& e) {
        std::string dump = "non-finite training step at epoch " +
                           std::to_string(epoch) + ", step " +
                           std::to_string(global_step) + "; batch images:";
        for (size_t bi = start; bi < stop; ++bi)
          dump += " " + std::to_string(order[bi]);
        throw NumericError(dump + " (" + e.what() + ")");
      }
      double norm = grad_global_norm(params);
      if (norm > config.clip_norm && norm > 0.0)
        scale_grads(params, config.clip_norm / norm);
      adam.apply(params, lr);
      Tape::get().clear();
      ++global_step;
      if (log.is_open()) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g\n", epoch,
                      global_step, loss_val, bpp_val, mse_val, lr);
        log << buf;
      }
    }
    if (epoch % config.eval_every == 0 || epoch == config.epochs) {
      last = evaluate(model, eval_inputs, eval_images, config.lambda_rd);
      lr = sched.step(last.loss, lr);
      if (elog.is_open()) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      epoch, last.loss, last.bpp, last.psnr_db, last.msssim,
                      last.msid_nats, last.mse, lr);
        elog << buf;
      }
    }
  }
  stats.final_eval_loss = last.loss;
  stats.final_eval_mse = last.mse;
  stats.final_eval_bpp = last.bpp;
  stats.steps = global_step;
  return stats;
}

}  // namespace mslc
