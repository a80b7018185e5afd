#include "mslc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mslc {

static double std_normal_cdf(double t) {
  return 0.5 * std::erfc(-t * 0.7071067811865476);
}

double discrete_gaussian_prob(double v, double mu, double sigma) {
  MSLC_CHECK(sigma >= kSigmaMin - 1e-12, "sigma " << sigma << " below floor");
  return std_normal_cdf((v + 0.5 - mu) / sigma) -
         std_normal_cdf((v - 0.5 - mu) / sigma);
}

Tensor gaussian_likelihood(const Tensor& v, const Tensor& mu, const Tensor& sigma) {
  for (double s : sigma.values())
    MSLC_CHECK(s >= kSigmaMin - 1e-6, "sigma " << s << " below floor " << kSigmaMin);
  Tensor centered = sub(v, mu);
  constexpr double inv_sqrt2 = 0.7071067811865476;
  Tensor up = mul(erf(mul(div(add(centered, 0.5), sigma), inv_sqrt2)), 0.5);
  Tensor lo = mul(erf(mul(div(add(centered, -0.5), sigma), inv_sqrt2)), 0.5);
  Tensor p = sub(up, lo);
  // floor keeps log finite on deep tails; gradient is 1 wherever p > floor
  return add(relu(add(p, -kLikelihoodFloor)), kLikelihoodFloor);
}

Tensor estimate_rate_bits(const Tensor& likelihoods) {
  for (double p : likelihoods.values())
    MSLC_CHECK(p > 0.0 && p <= 1.0 + 1e-9, "likelihood " << p << " outside (0,1]");
  constexpr double neg_inv_ln2 = -1.4426950408889634;
  return mul(sum(log(likelihoods)), neg_inv_ln2);
}

CdfTable build_cdf_table(double mu, double sigma, int L) {
  MSLC_CHECK(L >= 1, "cdf table needs L >= 1");
  MSLC_CHECK(sigma >= kSigmaMin - 1e-12, "sigma " << sigma << " below floor");
  int A = 2 * L + 3;
  std::vector<double> pmf(static_cast<size_t>(A));
  pmf[0] = std_normal_cdf((-L - 0.5 - mu) / sigma);
  for (int q = -L; q <= L; ++q)
    pmf[size_t(q + L + 1)] = discrete_gaussian_prob(q, mu, sigma);
  pmf[size_t(A - 1)] = 1.0 - std_normal_cdf((L + 0.5 - mu) / sigma);

  std::vector<uint32_t> freq(static_cast<size_t>(A));
  int64_t total = 0;
  for (int i = 0; i < A; ++i) {
    auto f = uint32_t(std::max<long long>(1, std::llround(pmf[size_t(i)] * kCdfTotal)));
    freq[size_t(i)] = f;
    total += f;
  }
  int64_t diff = int64_t(kCdfTotal) - total;
  size_t top = size_t(std::max_element(freq.begin(), freq.end()) - freq.begin());
  MSLC_CHECK(int64_t(freq[top]) + diff >= 1, "cdf quantization failed");
  freq[top] = uint32_t(int64_t(freq[top]) + diff);

  CdfTable t;
  t.L = L;
  t.cum.resize(size_t(A) + 1);
  t.cum[0] = 0;
  for (int i = 0; i < A; ++i) t.cum[size_t(i) + 1] = t.cum[size_t(i)] + freq[size_t(i)];
  MSLC_CHECK(t.cum.back() == kCdfTotal, "cdf table does not sum to 2^16");
  return t;
}

// ---------------------------------------------------------------------------
// Range coder

void RangeEncoder::shift_low() {
  if (low_ < 0xFF000000ull || low_ > 0xFFFFFFFFull) {
    uint8_t carry = uint8_t(low_ >> 32);
    out_.push_back(uint8_t(cache_ + carry));
    while (--pending_ > 0) out_.push_back(uint8_t(0xFFu + carry));
    cache_ = uint8_t((low_ >> 24) & 0xFF);
    pending_ = 0;
  }
  ++pending_;
  low_ = (low_ << 8) & 0xFFFFFFFFull;
}

void RangeEncoder::encode(uint32_t cum_freq, uint32_t freq) {
  uint32_t r = range_ >> kCdfBits;
  low_ += uint64_t(cum_freq) * r;
  range_ = freq * r;
  while (range_ < (1u << 24)) {
    shift_low();
    range_ <<= 8;
  }
}

void RangeEncoder::encode_symbol(const CdfTable& table, int sym) {
  encode(table.cum[size_t(sym)], table.freq(sym));
}

void RangeEncoder::encode_byte_uniform(uint8_t byte) {
  encode(uint32_t(byte) << 8, 1u << 8);  // 256 equiprobable symbols
}

void RangeEncoder::encode_u32_uniform(uint32_t v) {
  for (int i = 3; i >= 0; --i) encode_byte_uniform(uint8_t((v >> (8 * i)) & 0xFF));
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const std::vector<uint8_t>& bytes)
    : p_(bytes.data()), end_(bytes.data() + bytes.size()) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() { return p_ < end_ ? *p_++ : 0; }

int RangeDecoder::decode_symbol(const CdfTable& table) {
  uint32_t r = range_ >> kCdfBits;
  uint32_t dcf = std::min(code_ / r, kCdfTotal - 1);
  auto it = std::upper_bound(table.cum.begin() + 1, table.cum.end(), dcf);
  int sym = int(it - table.cum.begin()) - 1;
  code_ -= table.cum[size_t(sym)] * r;
  range_ = table.freq(sym) * r;
  while (range_ < (1u << 24)) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return sym;
}

uint8_t RangeDecoder::decode_byte_uniform() {
  uint32_t r = range_ >> kCdfBits;
  uint32_t dcf = std::min(code_ / r, kCdfTotal - 1);
  auto byte = uint8_t(dcf >> 8);
  code_ -= (uint32_t(byte) << 8) * r;
  range_ = (1u << 8) * r;
  while (range_ < (1u << 24)) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return byte;
}

uint32_t RangeDecoder::decode_u32_uniform() {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | decode_byte_uniform();
  return v;
}

// ---------------------------------------------------------------------------
// Residual streams

static constexpr uint8_t kTerminator[2] = {0xA5, 0x5A};

static uint32_t zigzag(int32_t v) {
  return (uint32_t(v) << 1) ^ uint32_t(v >> 31);
}
static int32_t unzigzag(uint32_t z) {
  return int32_t(z >> 1) ^ -int32_t(z & 1);
}

std::vector<uint8_t> range_encode_residuals(const std::vector<int32_t>& q,
                                            const std::vector<CdfTable>& tables) {
  MSLC_CHECK(q.size() == tables.size(), "one table per symbol required");
  RangeEncoder enc;
  for (size_t i = 0; i < q.size(); ++i) {
    const CdfTable& t = tables[i];
    int32_t v = q[i];
    if (v < -t.L) {
      enc.encode_symbol(t, 0);
      enc.encode_u32_uniform(zigzag(v));
    } else if (v > t.L) {
      enc.encode_symbol(t, t.alphabet() - 1);
      enc.encode_u32_uniform(zigzag(v));
    } else {
      enc.encode_symbol(t, v + t.L + 1);
    }
  }
  enc.encode_byte_uniform(kTerminator[0]);
  enc.encode_byte_uniform(kTerminator[1]);
  return enc.finish();
}

std::vector<int32_t> range_decode_residuals(const std::vector<uint8_t>& bytes,
                                            const std::vector<CdfTable>& tables) {
  RangeDecoder dec(bytes);
  std::vector<int32_t> q(tables.size(), 0);
  for (size_t i = 0; i < tables.size(); ++i) {
    const CdfTable& t = tables[i];
    int sym = dec.decode_symbol(t);
    if (sym == 0 || sym == t.alphabet() - 1) {
      q[i] = unzigzag(dec.decode_u32_uniform());
      MSLC_CHECK(sym == 0 ? q[i] < -t.L : q[i] > t.L,
                 "escape symbol with in-range payload");
    } else {
      q[i] = sym - t.L - 1;
    }
  }
  MSLC_CHECK(dec.decode_byte_uniform() == kTerminator[0] &&
                 dec.decode_byte_uniform() == kTerminator[1],
             "bitstream terminator check failed");
  return q;
}

// ---------------------------------------------------------------------------
// Bitstream container

static void push_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x & 0xFF));
  v.push_back(uint8_t(x >> 8));
}
static void push_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t((x >> (8 * i)) & 0xFF));
}
static void push_u64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(uint8_t((x >> (8 * i)) & 0xFF));
}

struct Reader {
  const uint8_t* p;
  const uint8_t* end;
  uint8_t u8() {
    MSLC_CHECK(p < end, "bitstream truncated");
    return *p++;
  }
  uint16_t u16() {
    uint16_t v = u8();
    return uint16_t(v | (uint16_t(u8()) << 8));
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(u8()) << (8 * i);
    return v;
  }
  std::vector<uint8_t> bytes(uint32_t n) {
    MSLC_CHECK(end - p >= ptrdiff_t(n), "bitstream truncated");
    std::vector<uint8_t> out(p, p + n);
    p += n;
    return out;
  }
};

std::vector<uint8_t> Bitstream::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'M', 'S', 'L', 'C'});
  out.push_back(1);  // version
  push_u16(out, height);
  push_u16(out, width);
  out.push_back(bands);
  out.push_back(num_slices);
  out.push_back(lambda_index);
  push_u64(out, model_checksum);
  push_u32(out, uint32_t(hyper.size()));
  out.insert(out.end(), hyper.begin(), hyper.end());
  MSLC_CHECK(slices.size() == num_slices, "slice segment count mismatch");
  for (const auto& s : slices) {
    push_u32(out, uint32_t(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

Bitstream Bitstream::parse(const std::vector<uint8_t>& bytes) {
  Reader r{bytes.data(), bytes.data() + bytes.size()};
  MSLC_CHECK(bytes.size() >= 4 && std::memcmp(bytes.data(), "MSLC", 4) == 0,
             "bad bitstream magic");
  r.p += 4;
  uint8_t version = r.u8();
  MSLC_CHECK(version == 1, "unsupported bitstream version " << int(version));
  Bitstream b;
  b.height = r.u16();
  b.width = r.u16();
  b.bands = r.u8();
  b.num_slices = r.u8();
  b.lambda_index = r.u8();
  b.model_checksum = r.u64();
  b.hyper = r.bytes(r.u32());
  for (int i = 0; i < b.num_slices; ++i) b.slices.push_back(r.bytes(r.u32()));
  MSLC_CHECK(r.p == r.end, "trailing bytes after bitstream");
  return b;
}

size_t Bitstream::total_bytes() const {
  size_t n = 4 + 1 + 2 + 2 + 1 + 1 + 1 + 8 + 4 + hyper.size();
  for (const auto& s : slices) n += 4 + s.size();
  return n;
}

}  // namespace mslc
