// mslc: multispectral learned codec command line.
//
// Subcommands: gen-data, train, encode, decode, eval.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mslc/codec.hpp"
#include "mslc/metrics.hpp"
#include "mslc/train.hpp"

namespace fs = std::filesystem;
using namespace mslc;

namespace {

struct GenArgs {
  std::string out_dir;
  uint64_t seed = 7;
  int count = 96;
  int size = 64;
  int bands = 6;
  double rho = 0.8;
};

int cmd_gen_data(const GenArgs& a) {
  fs::create_directories(a.out_dir);
  GenOptions opt;
  opt.bands = a.bands;
  opt.size = a.size;
  opt.rho = a.rho;
  std::vector<ManifestEntry> manifest;
  for (int i = 0; i < a.count; ++i) {
    MsiImage img = generate_synthetic_one(a.seed, i, opt);
    char name[64];
    std::snprintf(name, sizeof name, "img_%05d.msi", i);
    std::string path = (fs::path(a.out_dir) / name).string();
    save_msi(path, img);
    manifest.push_back({path, i % 3 != 2});  // 2:1 train:test split
  }
  save_manifest((fs::path(a.out_dir) / "manifest.txt").string(), manifest);
  int n_train = 0;
  for (const auto& e : manifest) n_train += e.is_train ? 1 : 0;
  std::printf("wrote %d images (%d train, %d test) to %s\n", a.count, n_train,
              a.count - n_train, a.out_dir.c_str());
  return 0;
}

void load_split(const std::string& manifest_path, std::vector<MsiImage>& train,
                std::vector<MsiImage>& test) {
  for (const auto& e : load_manifest(manifest_path)) {
    MsiImage img = load_msi(e.path);
    (e.is_train ? train : test).push_back(std::move(img));
  }
  MSLC_CHECK(!train.empty() && !test.empty(),
             "manifest " << manifest_path << " needs both train and test images");
}

struct TrainArgs {
  std::string manifest;
  std::string out;  // checkpoint path; default derived from lambda index
  std::string log_dir = ".";
  double lambda = 0.0048;
  int epochs = 30;
  int batch = 8;
  int crop = 64;
  uint64_t seed = 1;
  std::string ablation = "none";
};

int cmd_train(const TrainArgs& a) {
  std::vector<MsiImage> train, test;
  load_split(a.manifest, train, test);

  ModelConfig mc;
  mc.lambda_rd = a.lambda;
  mc.seed = a.seed;
  mc.ablation = ablation_from_string(a.ablation);
  CodecModel model;
  model.init(mc);

  std::string out = a.out;
  if (out.empty()) {
    char name[64];
    std::snprintf(name, sizeof name, "model_l%d.hzwt", int(lambda_index(a.lambda)));
    out = (fs::path(a.log_dir) / name).string();
  }
  TrainConfig tc;
  tc.lambda_rd = a.lambda;
  tc.epochs = a.epochs;
  tc.batch = a.batch;
  tc.crop = a.crop;
  tc.seed = a.seed;
  tc.log_path = out + ".train.csv";
  tc.eval_log_path = out + ".eval.csv";

  TrainStats stats = train_model(model, train, test, tc);
  save_model(out, model);
  std::printf("trained lambda=%.4g: eval loss %.6g -> %.6g over %d steps\n",
              a.lambda, stats.first_eval_loss, stats.final_eval_loss, stats.steps);
  std::printf("checkpoint: %s\n", out.c_str());
  return 0;
}

int cmd_encode(const std::string& model_path, const std::string& input,
               const std::string& output) {
  CodecModel model = load_model(model_path);
  MsiImage img = load_msi(input);
  MSLC_CHECK(img.bands == model.cfg.bands, "image band count "
                                               << int(img.bands)
                                               << " does not match model");
  Tensor x = preprocess(img, model.stats);
  EncodeResult enc = encode_image(model, x);
  std::vector<uint8_t> bytes = enc.stream.serialize();
  std::ofstream os(output, std::ios::binary);
  MSLC_CHECK(os.good(), "cannot write bitstream: " << output);
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  MSLC_CHECK(os.good(), "bitstream write failed: " << output);
  double bpp = double(bytes.size()) * 8.0 / (double(img.height) * img.width);
  std::printf("%s: %zu bytes, %.6f bpp\n", output.c_str(), bytes.size(), bpp);
  return 0;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MSLC_CHECK(is.good(), "cannot open: " << path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(is),
                              std::istreambuf_iterator<char>());
}

int cmd_decode(const std::string& model_path, const std::string& input,
               const std::string& output) {
  CodecModel model = load_model(model_path);
  Bitstream bs = Bitstream::parse(read_file(input));
  DecodeResult dec = decode_image(model, bs);
  MsiImage rec = postprocess(dec.x_hat, model.stats);
  save_msi(output, rec);
  std::printf("decoded %s -> %s (%ux%u, %d bands)\n", input.c_str(),
              output.c_str(), rec.height, rec.width, int(rec.bands));
  return 0;
}

struct EvalRow {
  double lambda, bpp, psnr_db, msssim, msssim_log, msid_nats;
  std::string model_path;
};

void write_svg_plot(const std::string& path, const std::vector<EvalRow>& rows) {
  // two panels: PSNR vs bpp, MSID vs bpp
  auto minmax = [&](auto get) {
    double lo = 1e300, hi = -1e300;
    for (const auto& r : rows) {
      lo = std::min(lo, get(r));
      hi = std::max(hi, get(r));
    }
    if (hi - lo < 1e-9) {
      lo -= 1.0;
      hi += 1.0;
    }
    return std::pair<double, double>(lo, hi);
  };
  auto [bl, bh] = minmax([](const EvalRow& r) { return r.bpp; });
  auto [pl, ph] = minmax([](const EvalRow& r) { return r.psnr_db; });
  auto [ml, mh] = minmax([](const EvalRow& r) { return r.msid_nats; });
  const double W = 420, H = 300, pad = 45;
  std::ofstream os(path);
  MSLC_CHECK(os.good(), "cannot write plot: " << path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << int(2 * W)
     << "\" height=\"" << int(H) << "\">\n";
  char buf[256];
  auto panel = [&](double x0, const char* title, auto get, double lo, double hi) {
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"10\" width=\"%.1f\" height=\"%.1f\" "
                  "fill=\"none\" stroke=\"black\"/>\n",
                  x0 + pad, W - 2 * pad, H - 2 * pad);
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">%s</text>\n",
                  x0 + W / 2 - 40, H - 8.0, title);
    os << buf;
    std::string poly;
    for (const auto& r : rows) {
      double px = x0 + pad + (r.bpp - bl) / (bh - bl) * (W - 2 * pad);
      double py = 10 + (H - 2 * pad) * (1.0 - (get(r) - lo) / (hi - lo));
      std::snprintf(buf, sizeof buf,
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"steelblue\"/>\n",
                    px, py);
      os << buf;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px, py);
      poly += buf;
    }
    os << "<polyline points=\"" << poly
       << "\" fill=\"none\" stroke=\"steelblue\"/>\n";
  };
  panel(0, "PSNR (dB) vs bpp", [](const EvalRow& r) { return r.psnr_db; }, pl, ph);
  panel(W, "MSID (nats) vs bpp", [](const EvalRow& r) { return r.msid_nats; }, ml, mh);
  os << "</svg>\n";
}

int cmd_eval(const std::string& manifest, const std::vector<std::string>& models,
             const std::string& out_csv, const std::string& plot_path) {
  std::vector<MsiImage> train, test;
  load_split(manifest, train, test);
  MSLC_CHECK(!test.empty(), "empty test set");

  std::vector<EvalRow> rows;
  for (const auto& mp : models) {
    CodecModel model = load_model(mp);
    EvalRow row{model.cfg.lambda_rd, 0, 0, 0, 0, 0, mp};
    for (const auto& img : test) {
      Tensor x = preprocess(img, model.stats);
      EncodeResult enc = encode_image(model, x);
      std::vector<uint8_t> bytes = enc.stream.serialize();
      DecodeResult dec = decode_image(model, Bitstream::parse(bytes));
      row.bpp += double(bytes.size()) * 8.0 / (double(img.height) * img.width);
      row.psnr_db += psnr(x.values(), dec.x_hat.values(), 1.0);
      double ms = ms_ssim(x.values(), dec.x_hat.values(), x.dim(1), x.dim(2), x.dim(3));
      row.msssim += ms;
      MsiImage rec = postprocess(dec.x_hat, model.stats);
      std::vector<double> phys_x(img.pixels.begin(), img.pixels.end());
      std::vector<double> phys_r(rec.pixels.begin(), rec.pixels.end());
      row.msid_nats += msid(phys_x, phys_r, x.dim(1), x.dim(2), x.dim(3));
    }
    double n = double(test.size());
    row.bpp /= n;
    row.psnr_db /= n;
    row.msssim /= n;
    row.msid_nats /= n;
    row.msssim_log = ms_ssim_log_db(row.msssim);
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.lambda < b.lambda; });

  std::ofstream os(out_csv);
  MSLC_CHECK(os.good(), "cannot write CSV: " << out_csv);
  os << "lambda,bpp,psnr_db,ms_ssim,ms_ssim_log_db,msid_nats,model\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n", r.lambda,
                  r.bpp, r.psnr_db, r.msssim, r.msssim_log, r.msid_nats,
                  r.model_path.c_str());
    os << buf;
  }
  if (!plot_path.empty()) write_svg_plot(plot_path, rows);
  std::printf("wrote %zu rows to %s\n", rows.size(), out_csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mslc: graph-based learned codec for multispectral imagery"};
  app.require_subcommand(1);
  app.set_config("--config");
  if (const char* det = std::getenv("HZ_DETERMINISTIC"); det && det[0] == '1') {
    // all paths are single-threaded with fixed reduction order; the flag is
    // accepted for interface compatibility
  }

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic dataset");
  g->add_option("--out", gen.out_dir, "output directory")->required();
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--count", gen.count, "number of images");
  g->add_option("--size", gen.size, "image side length");
  g->add_option("--bands", gen.bands, "spectral bands");
  g->add_option("--rho", gen.rho, "inter-band correlation in [0,1]");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one rate point");
  t->add_option("--data", tr.manifest, "dataset manifest")->required();
  t->add_option("--out", tr.out, "checkpoint path (default model_l<idx>.hzwt)");
  t->add_option("--log-dir", tr.log_dir, "directory for default outputs");
  t->add_option("--lambda", tr.lambda, "rate-distortion weight");
  t->add_option("--epochs", tr.epochs, "training epochs");
  t->add_option("--batch", tr.batch, "batch size");
  t->add_option("--crop", tr.crop, "crop size");
  t->add_option("--seed", tr.seed, "training seed");
  t->add_option("--ablation", tr.ablation,
                "none | no-iswge | no-wsgac | conv-only");

  std::string enc_model, enc_in, enc_out;
  auto* e = app.add_subcommand("encode", "encode an MSI image to a bitstream");
  e->add_option("--model", enc_model, "checkpoint")->required();
  e->add_option("--input", enc_in, "input .msi")->required();
  e->add_option("--output", enc_out, "output .mslc")->required();

  std::string dec_model, dec_in, dec_out;
  auto* d = app.add_subcommand("decode", "decode a bitstream to an MSI image");
  d->add_option("--model", dec_model, "checkpoint")->required();
  d->add_option("--input", dec_in, "input .mslc")->required();
  d->add_option("--output", dec_out, "output .msi")->required();

  std::string ev_manifest, ev_csv = "results.csv", ev_plot;
  std::vector<std::string> ev_models;
  auto* ev = app.add_subcommand("eval", "rate-distortion evaluation");
  ev->add_option("--data", ev_manifest, "dataset manifest")->required();
  ev->add_option("--model", ev_models, "checkpoint (repeatable)")->required();
  ev->add_option("--out", ev_csv, "output CSV");
  ev->add_option("--plot", ev_plot, "optional SVG rate-distortion plot");

  try {
    app.parse(argc, argv);
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_encode(enc_model, enc_in, enc_out);
    if (d->parsed()) return cmd_decode(dec_model, dec_in, dec_out);
    if (ev->parsed()) return cmd_eval(ev_manifest, ev_models, ev_csv, ev_plot);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 1;
  } catch (const NumericError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
