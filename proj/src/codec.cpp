#include "mslc/codec.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace mslc {

const std::vector<double> kLambdaSweep = {0.0018, 0.0048, 0.0085,
                                          0.0150, 0.1000, 0.5000};

uint8_t lambda_index(double lambda) {
  for (size_t i = 0; i < kLambdaSweep.size(); ++i)
    if (std::fabs(lambda - kLambdaSweep[i]) < 1e-12) return uint8_t(i);
  return 255;
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "none" || s == "full") return Ablation::kFull;
  if (s == "no-iswge") return Ablation::kNoIswge;
  if (s == "no-wsgac") return Ablation::kNoWsgac;
  if (s == "conv-only") return Ablation::kConvOnly;
  throw Error("unknown ablation: " + s);
}

std::string ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoIswge: return "no-iswge";
    case Ablation::kNoWsgac: return "no-wsgac";
    case Ablation::kConvOnly: return "conv-only";
  }
  return "full";
}

void ModelConfig::validate() const {
  MSLC_CHECK(latent_channels % slices == 0, "latent channels must split evenly");
  MSLC_CHECK(bands >= 3, "need at least 3 bands for the cyclic graph");
  if (use_iswge())
    MSLC_CHECK(spectral_channels + conv_stem_channels == base_channels,
               "branch widths must sum to the base channel count");
}

// ---------------------------------------------------------------------------

void CodecModel::init(const ModelConfig& config) {
  cfg = config;
  cfg.validate();
  Rng rng(cfg.seed);
  int N = cfg.base_channels, M = cfg.latent_channels;

  if (cfg.use_iswge()) {
    IswgeConfig ic;
    ic.groups = cfg.bands;
    ic.group_width = cfg.group_width;
    ic.num_windows = cfg.num_windows;
    ic.dv = cfg.dv;
    ic.de = cfg.de;
    ic.out_channels = cfg.spectral_channels;
    enc_iswge.init(cfg.bands, ic, rng);
    enc_stem.init(cfg.bands, cfg.conv_stem_channels, 3, 1, 1, 1, rng);
  } else {
    enc_stem.init(cfg.bands, N, 3, 1, 1, 1, rng);
  }
  enc_d1.init(N, N, 3, 2, 1, 1, rng);
  enc_d2.init(N, N, 3, 2, 1, 1, rng);
  enc_d3.init(N, N, 3, 2, 1, 1, rng);
  enc_d4.init(N, M, 3, 2, 1, 1, rng);
  if (cfg.use_wsgac()) {
    enc_w1.init(N, cfg.window, cfg.knn, rng);
    enc_w2.init(M, cfg.window, cfg.knn, rng);
  }

  ha1.init(M, cfg.hyper_channels, 3, 2, 1, 1, rng);
  ha2.init(cfg.hyper_channels, cfg.hyper_channels, 3, 2, 1, 1, rng);
  hs1.init(cfg.hyper_channels, M, 3, 2, 1, 1, rng);
  hs2.init(M, 2 * M, 3, 2, 1, 1, rng);
  z_prior_mu = Tensor({cfg.hyper_channels}, true);
  // softplus(0.54) + 0.11 starts sigma near 1
  z_prior_scale_raw = Tensor::full({cfg.hyper_channels}, 0.54, true);

  int sc = cfg.slice_channels();
  heads.resize(size_t(cfg.slices));
  for (int i = 0; i < cfg.slices; ++i) {
    int ctx = 2 * M + i * sc;
    heads[size_t(i)].h1.init(ctx, cfg.head_hidden, 1, 1, 0, 1, rng);
    heads[size_t(i)].h2.init(cfg.head_hidden, 2 * sc, 1, 1, 0, 1, rng);
    heads[size_t(i)].r1.init(2 * sc, cfg.residual_hidden, 1, 1, 0, 1, rng);
    heads[size_t(i)].r2.init(cfg.residual_hidden, sc, 1, 1, 0, 1, rng);
  }

  if (cfg.use_wsgac()) {
    dec_w2.init(M, cfg.window, cfg.knn, rng);
    dec_w1.init(N, cfg.window, cfg.knn, rng);
  }
  dec_u1.init(M, N, 3, 2, 1, 1, rng);
  dec_u2.init(N, N, 3, 2, 1, 1, rng);
  dec_u3.init(N, N, 3, 2, 1, 1, rng);
  dec_out_conv.init(N, cfg.bands, 3, 2, 1, 1, rng);
  if (cfg.use_iswge()) {
    dec_spec_proj.init(N, cfg.bands, 1, 1, 0, 1, rng);
    IswgeConfig ic;
    ic.groups = cfg.bands;
    ic.group_width = cfg.group_width;
    ic.num_windows = cfg.num_windows;
    ic.dv = cfg.dv;
    ic.de = cfg.de;
    ic.out_channels = cfg.spectral_channels;
    dec_iswge.init(cfg.bands, ic, rng);
    dec_out_spec.init(cfg.spectral_channels, cfg.bands, 3, 2, 1, 1, rng);
  }
  stats.band_max.assign(size_t(cfg.bands), 1.0f);
}

ParamList CodecModel::parameters() {
  ParamList out;
  if (cfg.use_iswge()) enc_iswge.collect(out, "enc.iswge");
  enc_stem.collect(out, "enc.stem");
  enc_d1.collect(out, "enc.d1");
  enc_d2.collect(out, "enc.d2");
  enc_d3.collect(out, "enc.d3");
  enc_d4.collect(out, "enc.d4");
  if (cfg.use_wsgac()) {
    enc_w1.collect(out, "enc.w1");
    enc_w2.collect(out, "enc.w2");
  }
  ha1.collect(out, "hyper.a1");
  ha2.collect(out, "hyper.a2");
  hs1.collect(out, "hyper.s1");
  hs2.collect(out, "hyper.s2");
  out.push_back({"hyper.prior_mu", z_prior_mu});
  out.push_back({"hyper.prior_scale", z_prior_scale_raw});
  for (size_t i = 0; i < heads.size(); ++i) {
    std::string p = "slice" + std::to_string(i);
    heads[i].h1.collect(out, p + ".h1");
    heads[i].h2.collect(out, p + ".h2");
    heads[i].r1.collect(out, p + ".r1");
    heads[i].r2.collect(out, p + ".r2");
  }
  if (cfg.use_wsgac()) {
    dec_w2.collect(out, "dec.w2");
    dec_w1.collect(out, "dec.w1");
  }
  dec_u1.collect(out, "dec.u1");
  dec_u2.collect(out, "dec.u2");
  dec_u3.collect(out, "dec.u3");
  dec_out_conv.collect(out, "dec.out_conv");
  if (cfg.use_iswge()) {
    dec_spec_proj.collect(out, "dec.spec_proj");
    dec_iswge.collect(out, "dec.iswge");
    dec_out_spec.collect(out, "dec.out_spec");
  }
  return out;
}

uint64_t CodecModel::checksum() { return params_checksum(parameters()); }

// ---------------------------------------------------------------------------
// Transforms

Tensor CodecModel::analyze(const Tensor& x) const {
  MSLC_CHECK(x.ndim() == 4 && x.dim(1) == cfg.bands, "analyze expects [B, bands, H, W]");
  MSLC_CHECK(x.dim(2) % 16 == 0 && x.dim(3) % 16 == 0,
             "spatial dims must be divisible by 16");
  Tensor t;
  if (cfg.use_iswge()) {
    Tensor spectral = enc_iswge.forward(x);
    Tensor spatial = relu(enc_stem(x));
    t = concat({spectral, spatial}, 1);
  } else {
    t = relu(enc_stem(x));
  }
  t = relu(enc_d1(t));
  t = relu(enc_d2(t));
  if (cfg.use_wsgac()) t = enc_w1.forward(t);
  t = relu(enc_d3(t));
  t = enc_d4(t);
  if (cfg.use_wsgac()) t = enc_w2.forward(t);
  return t;
}

Tensor CodecModel::hyper_analyze(const Tensor& y) const {
  return ha2(relu(ha1(y)));
}

Tensor CodecModel::hyper_synthesize(const Tensor& z_hat) const {
  return hs2(relu(hs1(z_hat)));
}

Tensor CodecModel::z_sigma() const {
  return add(softplus(z_prior_scale_raw), kSigmaMin);
}

Tensor CodecModel::z_mu_map(int zh, int zw) const {
  Tensor mu = reshape(z_prior_mu, {1, cfg.hyper_channels, 1, 1});
  (void)zh;
  (void)zw;
  return mu;
}

SliceParams CodecModel::predict_slice_params(const Tensor& psi,
                                             const std::vector<Tensor>& prev_slices,
                                             int i) const {
  MSLC_CHECK(i >= 0 && i < cfg.slices, "slice index out of range");
  MSLC_CHECK(int(prev_slices.size()) == i, "slice order violation: expected "
                                               << i << " decoded slices, got "
                                               << prev_slices.size());
  Tensor ctx = psi;
  if (!prev_slices.empty()) {
    std::vector<Tensor> parts = {psi};
    parts.insert(parts.end(), prev_slices.begin(), prev_slices.end());
    ctx = concat(parts, 1);
  }
  const auto& head = heads[size_t(i)];
  Tensor raw = head.h2(relu(head.h1(ctx)));
  int sc = cfg.slice_channels();
  SliceParams p;
  p.mu = slice(raw, 1, 0, sc);
  p.sigma = add(softplus(slice(raw, 1, sc, sc)), kSigmaMin);
  return p;
}

std::pair<Tensor, Tensor> CodecModel::latent_residual(const Tensor& y_hat_i,
                                                      const Tensor& mu_i,
                                                      int i) const {
  const auto& head = heads[size_t(i)];
  Tensor r = mul(tanh(head.r2(relu(head.r1(concat({y_hat_i, mu_i}, 1))))), 0.5);
  return {r, sub(y_hat_i, r)};
}

Tensor CodecModel::synthesize(const Tensor& y_bar) const {
  Tensor t = y_bar;
  if (cfg.use_wsgac()) t = dec_w2.forward(t);
  t = relu(dec_u1(t));
  t = relu(dec_u2(t));
  if (cfg.use_wsgac()) t = dec_w1.forward(t);
  t = relu(dec_u3(t));  // half-resolution trunk feature map
  Tensor img_conv = dec_out_conv(t);
  if (!cfg.use_iswge()) return img_conv;
  Tensor spec = dec_iswge.forward(dec_spec_proj(t));
  Tensor img_spec = dec_out_spec(spec);
  return mul(add(img_conv, img_spec), 0.5);
}

Tensor quantize_mean_subtracted(const Tensor& y, const Tensor& mu) {
  return add(ste_round(sub(y, mu)), mu);
}

Tensor rd_loss(const Tensor& x, const Tensor& x_hat, const Tensor& bits_y,
               const Tensor& bits_z, double lambda, int64_t num_pixels) {
  MSLC_CHECK(lambda > 0.0, "lambda must be positive");
  MSLC_CHECK(num_pixels > 0, "pixel count must be positive");
  Tensor rate = mul(add(bits_y, bits_z), 1.0 / double(num_pixels));
  Tensor diff = sub(x, x_hat);
  Tensor distortion = mean(mul(diff, diff));
  return add(rate, mul(distortion, lambda * 255.0 * 255.0));
}

// ---------------------------------------------------------------------------
// Full forward

ForwardResult CodecModel::forward(const Tensor& x, QuantMode mode,
                                  Rng* noise_rng) const {
  MSLC_CHECK(mode != QuantMode::kNoisy || noise_rng != nullptr,
             "noisy mode needs an rng");
  ForwardResult r;
  r.y = analyze(x);
  r.z = hyper_analyze(r.y);
  int zh = r.z.dim(2), zw = r.z.dim(3);

  Tensor z_mu = z_mu_map(zh, zw);
  Tensor z_sig = reshape(z_sigma(), {1, cfg.hyper_channels, 1, 1});
  if (mode == QuantMode::kContinuous) {
    r.z_hat = r.z;
  } else {
    r.z_hat = quantize_mean_subtracted(r.z, z_mu);
  }
  Tensor z_rate_point = r.z_hat;
  if (mode == QuantMode::kNoisy)
    z_rate_point = add(r.z, rand_uniform(r.z.shape(), *noise_rng, -0.5, 0.5));
  r.bits_z = estimate_rate_bits(gaussian_likelihood(z_rate_point, z_mu, z_sig));

  r.psi = hyper_synthesize(r.z_hat);
  int sc = cfg.slice_channels();
  Tensor bits_y;
  for (int i = 0; i < cfg.slices; ++i) {
    Tensor y_i = slice(r.y, 1, i * sc, sc);
    SliceParams p = predict_slice_params(r.psi, r.y_hat, i);
    Tensor y_hat_i = mode == QuantMode::kContinuous
                         ? y_i
                         : quantize_mean_subtracted(y_i, p.mu);
    Tensor rate_point = y_hat_i;
    if (mode == QuantMode::kNoisy)
      rate_point = add(y_i, rand_uniform(y_i.shape(), *noise_rng, -0.5, 0.5));
    Tensor bits_i = estimate_rate_bits(gaussian_likelihood(rate_point, p.mu, p.sigma));
    bits_y = i == 0 ? bits_i : add(bits_y, bits_i);
    r.y_hat.push_back(y_hat_i);
    r.params.push_back(p);
  }
  r.bits_y = bits_y;

  std::vector<Tensor> corrected;
  for (int i = 0; i < cfg.slices; ++i) {
    auto [res, y_bar_i] = latent_residual(r.y_hat[size_t(i)],
                                          r.params[size_t(i)].mu, i);
    r.residual.push_back(res);
    corrected.push_back(y_bar_i);
  }
  r.y_bar = concat(corrected, 1);
  r.x_hat = synthesize(r.y_bar);
  return r;
}

// ---------------------------------------------------------------------------
// File-level coding

std::pair<int, int> hyper_latent_dims(int height, int width) {
  auto down = [](int v) { return (v - 1) / 2 + 1; };
  int lh = height / 16, lw = width / 16;
  return {down(down(lh)), down(down(lw))};
}

// integer residual closest to (value - mu); values come from round(y-mu)+mu
static int32_t recover_residual(double value, double mu) {
  return int32_t(std::llround(value - mu));
}

static std::vector<CdfTable> tables_for_slice(const Tensor& sigma) {
  std::vector<CdfTable> tables;
  tables.reserve(sigma.values().size());
  for (double s : sigma.values()) tables.push_back(build_cdf_table(0.0, s));
  return tables;
}

EncodeResult encode_image(CodecModel& model, const Tensor& x) {
  NoGradGuard ng;
  EncodeResult out;
  out.fwd = model.forward(x, QuantMode::kRound);
  const ForwardResult& f = out.fwd;

  Bitstream& bs = out.stream;
  bs.height = uint16_t(x.dim(2));
  bs.width = uint16_t(x.dim(3));
  bs.bands = uint8_t(model.cfg.bands);
  bs.num_slices = uint8_t(model.cfg.slices);
  bs.lambda_index = lambda_index(model.cfg.lambda_rd);
  bs.model_checksum = model.checksum();

  // hyper segment: per-channel prior, raster order within each channel
  {
    Tensor z_sig = model.z_sigma();
    int zh = f.z_hat.dim(2), zw = f.z_hat.dim(3);
    std::vector<int32_t> q(f.z_hat.values().size());
    std::vector<CdfTable> tables(q.size());
    for (int c = 0; c < model.cfg.hyper_channels; ++c) {
      CdfTable t = build_cdf_table(0.0, z_sig.values()[size_t(c)]);
      double mu_c = model.z_prior_mu.values()[size_t(c)];
      for (int i = 0; i < zh * zw; ++i) {
        size_t at = size_t(c) * zh * zw + size_t(i);
        q[at] = recover_residual(f.z_hat.values()[at], mu_c);
        tables[at] = t;
      }
    }
    bs.hyper = range_encode_residuals(q, tables);
  }

  for (int i = 0; i < model.cfg.slices; ++i) {
    const Tensor& y_hat_i = f.y_hat[size_t(i)];
    const SliceParams& p = f.params[size_t(i)];
    std::vector<int32_t> q(y_hat_i.values().size());
    for (size_t e = 0; e < q.size(); ++e)
      q[e] = recover_residual(y_hat_i.values()[e], p.mu.values()[e]);
    bs.slices.push_back(range_encode_residuals(q, tables_for_slice(p.sigma)));
  }
  return out;
}

DecodeResult decode_image(CodecModel& model, const Bitstream& bs) {
  NoGradGuard ng;
  MSLC_CHECK(bs.model_checksum == model.checksum(),
             "bitstream/model checksum mismatch");
  MSLC_CHECK(bs.bands == model.cfg.bands && bs.num_slices == model.cfg.slices,
             "bitstream shape fields do not match the model");
  auto [zh, zw] = hyper_latent_dims(bs.height, bs.width);
  int zc = model.cfg.hyper_channels;

  Tensor z_sig = model.z_sigma();
  std::vector<CdfTable> z_tables(size_t(zc) * zh * zw);
  for (int c = 0; c < zc; ++c) {
    CdfTable t = build_cdf_table(0.0, z_sig.values()[size_t(c)]);
    for (int i = 0; i < zh * zw; ++i) z_tables[size_t(c) * zh * zw + size_t(i)] = t;
  }
  std::vector<int32_t> qz = range_decode_residuals(bs.hyper, z_tables);
  std::vector<double> z_vals(qz.size());
  for (size_t e = 0; e < qz.size(); ++e) z_vals[e] = double(qz[e]);
  Tensor z_hat = add(Tensor::from_values({1, zc, zh, zw}, std::move(z_vals)),
                     model.z_mu_map(zh, zw));

  Tensor psi = model.hyper_synthesize(z_hat);
  DecodeResult out;
  int sc = model.cfg.slice_channels();
  int lh = bs.height / 16, lw = bs.width / 16;
  std::vector<SliceParams> params;
  for (int i = 0; i < model.cfg.slices; ++i) {
    SliceParams p = model.predict_slice_params(psi, out.y_hat, i);
    std::vector<int32_t> q =
        range_decode_residuals(bs.slices[size_t(i)], tables_for_slice(p.sigma));
    std::vector<double> qd(q.size());
    for (size_t e = 0; e < q.size(); ++e) qd[e] = double(q[e]);
    out.y_hat.push_back(
        add(Tensor::from_values({1, sc, lh, lw}, std::move(qd)), p.mu));
    params.push_back(std::move(p));
  }
  std::vector<Tensor> corrected;
  for (int i = 0; i < model.cfg.slices; ++i) {
    auto [res, y_bar_i] =
        model.latent_residual(out.y_hat[size_t(i)], params[size_t(i)].mu, i);
    (void)res;
    corrected.push_back(y_bar_i);
  }
  out.x_hat = model.synthesize(concat(corrected, 1));
  return out;
}

// ---------------------------------------------------------------------------
// Model persistence

static std::string cfg_sidecar(const std::string& path) { return path + ".cfg"; }

void save_model(const std::string& path, CodecModel& model) {
  ParamList params = model.parameters();
  save_checkpoint(path, params);
  std::ofstream os(cfg_sidecar(path));
  MSLC_CHECK(os.good(), "cannot write model config: " << cfg_sidecar(path));
  const ModelConfig& c = model.cfg;
  os << "bands=" << c.bands << "\n";
  os << "base_channels=" << c.base_channels << "\n";
  os << "latent_channels=" << c.latent_channels << "\n";
  os << "slices=" << c.slices << "\n";
  os << "window=" << c.window << "\n";
  os << "knn=" << c.knn << "\n";
  os << "group_width=" << c.group_width << "\n";
  os << "num_windows=" << c.num_windows << "\n";
  os << "dv=" << c.dv << "\n";
  os << "de=" << c.de << "\n";
  os << "spectral_channels=" << c.spectral_channels << "\n";
  os << "conv_stem_channels=" << c.conv_stem_channels << "\n";
  os << "hyper_channels=" << c.hyper_channels << "\n";
  os << "head_hidden=" << c.head_hidden << "\n";
  os << "residual_hidden=" << c.residual_hidden << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", c.lambda_rd);
  os << "lambda=" << buf << "\n";
  os << "seed=" << c.seed << "\n";
  os << "ablation=" << ablation_to_string(c.ablation) << "\n";
  for (size_t b = 0; b < model.stats.band_max.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.9g", double(model.stats.band_max[b]));
    os << "norm_max_" << b << "=" << buf << "\n";
  }
}

CodecModel load_model(const std::string& path) {
  std::ifstream is(cfg_sidecar(path));
  MSLC_CHECK(is.good(), "cannot open model config: " << cfg_sidecar(path));
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    MSLC_CHECK(eq != std::string::npos, "bad config line: " << line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto geti = [&](const std::string& k) {
    MSLC_CHECK(kv.count(k), "missing config key: " << k);
    return std::stoi(kv[k]);
  };
  ModelConfig c;
  c.bands = geti("bands");
  c.base_channels = geti("base_channels");
  c.latent_channels = geti("latent_channels");
  c.slices = geti("slices");
  c.window = geti("window");
  c.knn = geti("knn");
  c.group_width = geti("group_width");
  c.num_windows = geti("num_windows");
  c.dv = geti("dv");
  c.de = geti("de");
  c.spectral_channels = geti("spectral_channels");
  c.conv_stem_channels = geti("conv_stem_channels");
  c.hyper_channels = geti("hyper_channels");
  c.head_hidden = geti("head_hidden");
  c.residual_hidden = geti("residual_hidden");
  c.lambda_rd = std::stod(kv["lambda"]);
  c.seed = std::stoull(kv["seed"]);
  c.ablation = ablation_from_string(kv["ablation"]);

  CodecModel model;
  model.init(c);
  model.stats.band_max.clear();
  for (int b = 0; b < c.bands; ++b) {
    std::string k = "norm_max_" + std::to_string(b);
    MSLC_CHECK(kv.count(k), "missing config key: " << k);
    model.stats.band_max.push_back(std::stof(kv[k]));
  }
  ParamList params = model.parameters();
  load_checkpoint(path, params);
  return model;
}

}  // namespace mslc
