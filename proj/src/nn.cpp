#include "mslc/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace mslc {

// ---------------------------------------------------------------------------
// Checkpoint I/O

static void put_u8(std::ostream& os, uint8_t v) { os.put(char(v)); }
static void put_u16(std::ostream& os, uint16_t v) {
  os.put(char(v & 0xff));
  os.put(char(v >> 8));
}
static void put_u32(std::ostream& os, uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

static uint8_t get_u8(std::istream& is) {
  int c = is.get();
  MSLC_CHECK(c != EOF, "checkpoint truncated");
  return uint8_t(c);
}
static uint16_t get_u16(std::istream& is) {
  uint16_t v = get_u8(is);
  return uint16_t(v | (uint16_t(get_u8(is)) << 8));
}
static uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(get_u8(is)) << (8 * i);
  return v;
}

void save_checkpoint(const std::string& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary);
  MSLC_CHECK(os.good(), "cannot open checkpoint for writing: " << path);
  os.write("HZWT", 4);
  put_u8(os, 1);
  put_u32(os, uint32_t(params.size()));
  for (const auto& p : params) {
    MSLC_CHECK(p.name.size() < 65536, "parameter name too long");
    put_u16(os, uint16_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    const Shape& s = p.value.shape();
    put_u8(os, uint8_t(s.size()));
    for (int d : s) put_u32(os, uint32_t(d));
    for (double v : p.value.values()) {
      float f = float(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      os.write(buf, 4);
    }
  }
  MSLC_CHECK(os.good(), "checkpoint write failed: " << path);
}

void load_checkpoint(const std::string& path, ParamList& params) {
  std::ifstream is(path, std::ios::binary);
  MSLC_CHECK(is.good(), "cannot open checkpoint: " << path);
  char magic[4];
  is.read(magic, 4);
  MSLC_CHECK(is.gcount() == 4 && std::memcmp(magic, "HZWT", 4) == 0,
             "bad checkpoint magic in " << path);
  uint8_t version = get_u8(is);
  MSLC_CHECK(version == 1, "unsupported checkpoint version " << int(version));
  uint32_t count = get_u32(is);
  MSLC_CHECK(count == params.size(), "checkpoint has " << count
                                                       << " parameters, model expects "
                                                       << params.size());
  for (auto& p : params) {
    uint16_t nlen = get_u16(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    MSLC_CHECK(is.gcount() == nlen, "checkpoint truncated");
    MSLC_CHECK(name == p.name, "checkpoint parameter order mismatch: got "
                                   << name << ", expected " << p.name);
    uint8_t rank = get_u8(is);
    Shape s(rank);
    for (auto& d : s) d = int(get_u32(is));
    MSLC_CHECK(s == p.value.shape(), "checkpoint shape mismatch for " << name);
    auto& vals = p.value.values();
    for (double& v : vals) {
      char buf[4];
      is.read(buf, 4);
      MSLC_CHECK(is.gcount() == 4, "checkpoint truncated in " << name);
      float f;
      std::memcpy(&f, buf, 4);
      MSLC_CHECK(std::isfinite(f), "non-finite parameter in checkpoint");
      v = double(f);
    }
  }
}

uint64_t params_checksum(const ParamList& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params) {
    h = fnv1a64(p.name.data(), p.name.size(), h);
    for (double v : p.value.values()) {
      float f = float(v);
      h = fnv1a64(&f, 4, h);
    }
  }
  return h;
}

void zero_grads(ParamList& params) {
  for (auto& p : params) p.value.zero_grad();
}

// ---------------------------------------------------------------------------
// Layers (He-uniform fan-in init)

static Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng, double scale) {
  double bound = scale * std::sqrt(6.0 / double(fan_in));
  return rand_uniform(std::move(shape), rng, -bound, bound, true);
}

void Conv2d::init(int cin, int cout, int k, int stride_, int pad_, int groups_,
                  Rng& rng, double weight_scale) {
  stride = stride_;
  pad = pad_;
  groups = groups_;
  int cig = cin / groups_;
  w = he_uniform({cout, cig, k, k}, int64_t(cig) * k * k, rng, weight_scale);
  b = Tensor({cout}, true);
}

void Conv2d::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

void ConvTranspose2d::init(int cin, int cout, int k, int stride_, int pad_,
                           int out_pad_, Rng& rng) {
  stride = stride_;
  pad = pad_;
  out_pad = out_pad_;
  w = he_uniform({cin, cout, k, k}, int64_t(cin) * k * k, rng, 1.0);
  b = Tensor({cout}, true);
}

void ConvTranspose2d::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

void Linear::init(int in, int out, Rng& rng, bool bias, double weight_scale) {
  use_bias = bias;
  w = he_uniform({in, out}, in, rng, weight_scale);
  if (bias) b = Tensor({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w);
  if (use_bias) y = add(y, b);
  return y;
}

void Linear::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".w", w});
  if (use_bias) out.push_back({prefix + ".b", b});
}

}  // namespace mslc
