#pragma once

// Layer building blocks, the named-parameter registry, and the HZWT
// checkpoint format.

#include <string>
#include <vector>

#include "mslc/tensor.hpp"

namespace mslc {

struct Parameter {
  std::string name;
  Tensor value;
};

using ParamList = std::vector<Parameter>;

// Checkpoint layout: magic "HZWT", version u8, count u32, then per parameter:
// name length u16 + UTF-8 name, rank u8, dims u32 each, little-endian f32
// payload. Round-trips bit-exactly (values always carry float32 precision).
void save_checkpoint(const std::string& path, const ParamList& params);
void load_checkpoint(const std::string& path, ParamList& params);
uint64_t params_checksum(const ParamList& params);

void zero_grads(ParamList& params);

// ---------------------------------------------------------------------------

struct Conv2d {
  Tensor w, b;
  int stride = 1, pad = 0, groups = 1;

  void init(int cin, int cout, int k, int stride_, int pad_, int groups_,
            Rng& rng, double weight_scale = 1.0);
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad, groups); }
  void collect(ParamList& out, const std::string& prefix);
};

struct ConvTranspose2d {
  Tensor w, b;
  int stride = 1, pad = 0, out_pad = 0;

  void init(int cin, int cout, int k, int stride_, int pad_, int out_pad_, Rng& rng);
  Tensor operator()(const Tensor& x) const {
    return conv_transpose2d(x, w, b, stride, pad, out_pad);
  }
  void collect(ParamList& out, const std::string& prefix);
};

// y = x . w + b with w [in, out]; broadcasts over leading dims of x.
struct Linear {
  Tensor w, b;
  bool use_bias = true;

  void init(int in, int out, Rng& rng, bool bias = true, double weight_scale = 1.0);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix);
};

}  // namespace mslc
