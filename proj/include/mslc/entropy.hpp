#pragma once

// Discretized Gaussian likelihoods, quantized CDF tables, a bit-exact range
// coder, and the bitstream container.

#include <cstdint>
#include <vector>

#include "mslc/tensor.hpp"

namespace mslc {

constexpr double kSigmaMin = 0.11;
constexpr int kCdfBits = 16;
constexpr uint32_t kCdfTotal = 1u << kCdfBits;
constexpr int kResidualSupport = 64;  // residual alphabet covers [-L, L]
constexpr double kLikelihoodFloor = 1e-9;

// p(v) = Phi((v + 0.5 - mu)/sigma) - Phi((v - 0.5 - mu)/sigma), elementwise,
// floored at kLikelihoodFloor; differentiable wherever the floor is inactive.
Tensor gaussian_likelihood(const Tensor& v, const Tensor& mu, const Tensor& sigma);

// scalar version used for table construction and oracles
double discrete_gaussian_prob(double v, double mu, double sigma);

// bits = sum(-log2 p)
Tensor estimate_rate_bits(const Tensor& likelihoods);

// Quantized cumulative table over [escape_lo, -L..L, escape_hi]: cum has
// alphabet+1 entries, cum[0] = 0, cum[alphabet] = 2^16, strictly increasing.
struct CdfTable {
  int L = kResidualSupport;
  std::vector<uint32_t> cum;

  int alphabet() const { return 2 * L + 3; }
  uint32_t freq(int sym) const { return cum[size_t(sym) + 1] - cum[size_t(sym)]; }
};

CdfTable build_cdf_table(double mu, double sigma, int L = kResidualSupport);

// ---------------------------------------------------------------------------
// Range coder: 64-bit low / 32-bit range, byte renormalization, carries
// resolved through a pending-byte cache. Bit-exact decode(encode(s)) == s.

class RangeEncoder {
 public:
  void encode(uint32_t cum_freq, uint32_t freq);  // total is always 2^16
  void encode_symbol(const CdfTable& table, int sym);
  void encode_byte_uniform(uint8_t byte);
  void encode_u32_uniform(uint32_t v);
  std::vector<uint8_t> finish();

 private:
  void shift_low();
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  int64_t pending_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const std::vector<uint8_t>& bytes);
  int decode_symbol(const CdfTable& table);
  uint8_t decode_byte_uniform();
  uint32_t decode_u32_uniform();

 private:
  uint8_t next_byte();
  const uint8_t* p_;
  const uint8_t* end_;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

// Residual streams: integers in [-L, L] code directly; outliers code an
// escape symbol followed by the raw value as a fixed-width word. A two-byte
// terminator is appended and checked so corruption surfaces as an error.
std::vector<uint8_t> range_encode_residuals(const std::vector<int32_t>& q,
                                            const std::vector<CdfTable>& tables);
std::vector<int32_t> range_decode_residuals(const std::vector<uint8_t>& bytes,
                                            const std::vector<CdfTable>& tables);

// ---------------------------------------------------------------------------
// Bitstream container (little-endian): magic "MSLC", version u8, H u16,
// W u16, bands u8, slices u8, lambda-index u8, model checksum u64, then the
// hyper segment (length u32 + bytes) and per-slice segments.

struct Bitstream {
  uint16_t height = 0, width = 0;
  uint8_t bands = 0, num_slices = 0, lambda_index = 0;
  uint64_t model_checksum = 0;
  std::vector<uint8_t> hyper;
  std::vector<std::vector<uint8_t>> slices;

  std::vector<uint8_t> serialize() const;
  static Bitstream parse(const std::vector<uint8_t>& bytes);
  size_t total_bytes() const;
};

}  // namespace mslc
