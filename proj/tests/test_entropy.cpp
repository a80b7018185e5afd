#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mslc/entropy.hpp"
#include "test_util.hpp"

using namespace mslc;
using namespace mslc::testing;

namespace {

// Simpson-rule integration of the normal density over [v-0.5, v+0.5]
double numeric_integration_oracle(double v, double mu, double sigma) {
  auto pdf = [&](double t) {
    double z = (t - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
  };
  int n = 2000;
  double a = v - 0.5, h = 1.0 / n, acc = pdf(a) + pdf(v + 0.5);
  for (int i = 1; i < n; ++i) acc += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

std::vector<uint8_t> corrupt(std::vector<uint8_t> bytes) {
  REQUIRE(!bytes.empty());
  bytes[bytes.size() / 2] ^= 0x55;
  return bytes;
}

}  // namespace

TEST_CASE("gaussian likelihood: unit sigma at the mean") {
  // error-function oracle, evaluated independently
  double expect = 0.5 * (std::erf(0.5 / std::sqrt(2.0)) -
                         std::erf(-0.5 / std::sqrt(2.0)));
  CHECK(expect == doctest::Approx(0.382925).epsilon(1e-5));
  CHECK(discrete_gaussian_prob(0.0, 0.0, 1.0) == doctest::Approx(expect).epsilon(1e-12));

  Tensor v = Tensor::full({1}, 3.0);
  Tensor mu = Tensor::full({1}, 3.0);
  Tensor sigma = Tensor::full({1}, 1.0);
  CHECK(gaussian_likelihood(v, mu, sigma).item() ==
        doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("gaussian likelihood: wide sigma matches numeric integration") {
  double p = discrete_gaussian_prob(0.0, 0.0, 100.0);
  CHECK(p == doctest::Approx(0.0039894).epsilon(1e-4));
  for (double sigma : {0.11, 0.5, 2.0, 100.0})
    for (double v : {-2.0, 0.0, 1.0})
      CHECK(discrete_gaussian_prob(v, 0.3, sigma) ==
            doctest::Approx(numeric_integration_oracle(v, 0.3, sigma)).epsilon(1e-6));
}

TEST_CASE("gaussian likelihood: probabilities telescope to one") {
  for (auto [mu, sigma] : {std::pair{0.0, 0.3}, {0.49, 1.7}, {-0.2, 11.0}}) {
    double total = 0.0;
    for (int v = -2000; v <= 2000; ++v)
      total += discrete_gaussian_prob(v, mu, sigma);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("gaussian likelihood rejects sigma below the floor") {
  Tensor v = Tensor::full({1}, 0.0);
  Tensor sigma = Tensor::full({1}, 0.05);
  CHECK_THROWS_AS(gaussian_likelihood(v, v, sigma), Error);
}

TEST_CASE("cdf tables: normalization, monotonicity, floor") {
  CdfTable t = build_cdf_table(0.0, kSigmaMin);
  CHECK(t.cum.back() == kCdfTotal);
  for (size_t i = 1; i < t.cum.size(); ++i) CHECK(t.cum[i] > t.cum[i - 1]);
  // nearly all mass on the central symbol
  CHECK(t.freq(t.L + 1) > kCdfTotal - 2 * uint32_t(t.alphabet()));

  for (double sigma : {0.11, 0.7, 3.0, 40.0})
    for (double mu : {-0.5, -0.169, 0.0, 0.31, 0.5}) {
      CdfTable tt = build_cdf_table(mu, sigma);
      CHECK(tt.cum.back() == kCdfTotal);
      for (size_t i = 1; i < tt.cum.size(); ++i) CHECK(tt.cum[i] > tt.cum[i - 1]);
    }
}

TEST_CASE("cdf tables: quantization loss below 0.01 bits per symbol") {
  // expected code length under the table vs the exact model entropy
  for (double sigma : {1.0, 3.0, 10.0}) {
    CdfTable t = build_cdf_table(0.0, sigma);
    double bits_table = 0.0, bits_model = 0.0;
    for (int q = -t.L; q <= t.L; ++q) {
      double p = discrete_gaussian_prob(q, 0.0, sigma);
      if (p <= 0.0) continue;
      bits_table += p * -std::log2(double(t.freq(q + t.L + 1)) / kCdfTotal);
      bits_model += p * -std::log2(p);
    }
    CHECK(bits_table - bits_model < 0.01);
    CHECK(bits_table >= bits_model - 1e-9);
  }
}

TEST_CASE("range coder: empty sequence round trips through flush bytes") {
  std::vector<CdfTable> none;
  std::vector<uint8_t> bytes = range_encode_residuals({}, none);
  CHECK(bytes.size() <= 8);  // terminator + flush only
  CHECK(range_decode_residuals(bytes, none).empty());
}

TEST_CASE("range coder: million-symbol fuzzed round trip with adversarial tables") {
  Rng rng(12345);
  // pool of tables including floor-sigma and grid-edge means
  std::vector<CdfTable> pool;
  pool.push_back(build_cdf_table(-0.5, kSigmaMin));
  pool.push_back(build_cdf_table(0.5, kSigmaMin));
  pool.push_back(build_cdf_table(0.0, kSigmaMin));
  pool.push_back(build_cdf_table(0.499, 2000.0));
  for (int i = 0; i < 60; ++i)
    pool.push_back(build_cdf_table(
        uniform(rng, -0.5, 0.5),
        std::exp(uniform(rng, std::log(0.11), std::log(200.0)))));
  const int n = 1'000'000;
  std::vector<int32_t> symbols(static_cast<size_t>(n));
  std::vector<CdfTable> tables(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    tables[size_t(i)] = pool[rng() % pool.size()];
    switch (rng() % 3) {
      case 0:
        symbols[size_t(i)] =
            int32_t(rng() % (2 * kResidualSupport + 1)) - kResidualSupport;
        break;
      case 1:
        symbols[size_t(i)] = int32_t(std::lround(gaussian(rng, 0.0, 3.0)));
        break;
      default:
        symbols[size_t(i)] = int32_t(rng() % 100000) - 50000;  // escapes
    }
  }
  std::vector<uint8_t> bytes = range_encode_residuals(symbols, tables);
  std::vector<int32_t> back = range_decode_residuals(bytes, tables);
  CHECK(back == symbols);
  CHECK_THROWS_AS(range_decode_residuals(corrupt(bytes), tables), Error);
}

TEST_CASE("range coder: uniform bytes cost within 0.5% of 8 bits each") {
  Rng rng(7);
  RangeEncoder enc;
  const int n = 20000;
  for (int i = 0; i < n; ++i) enc.encode_byte_uniform(uint8_t(rng() % 256));
  std::vector<uint8_t> bytes = enc.finish();
  double bits_per_symbol = double(bytes.size()) * 8.0 / n;
  CHECK(bits_per_symbol == doctest::Approx(8.0).epsilon(0.005));
}

TEST_CASE("estimate_rate: closed-form examples") {
  Tensor p = Tensor::full({8}, 0.5);
  CHECK(estimate_rate_bits(p).item() == doctest::Approx(8.0).epsilon(1e-6));
  Tensor one = Tensor::full({3}, 1.0);
  CHECK(estimate_rate_bits(one).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("rate estimate matches coded length on latent-sized batches") {
  // 4 slices of 48x4x4 residuals drawn from the model they are coded with
  Rng rng(99);
  double est_bits = 0.0;
  size_t actual_bits = 0;
  for (int s = 0; s < 4; ++s) {
    int n = 48 * 4 * 4;
    std::vector<double> sig(static_cast<size_t>(n)), res(static_cast<size_t>(n));
    std::vector<CdfTable> tables;
    std::vector<int32_t> q(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      sig[size_t(i)] = std::exp(uniform(rng, std::log(0.3), std::log(8.0)));
      q[size_t(i)] = int32_t(std::lround(gaussian(rng, 0.0, sig[size_t(i)])));
      res[size_t(i)] = double(q[size_t(i)]);
      tables.push_back(build_cdf_table(0.0, sig[size_t(i)]));
    }
    Tensor vr = Tensor::from_values({n}, res);
    Tensor mu = Tensor::full({n}, 0.0);
    Tensor sg = Tensor::from_values({n}, sig);
    est_bits += estimate_rate_bits(gaussian_likelihood(vr, mu, sg)).item();
    actual_bits += range_encode_residuals(q, tables).size() * 8;
  }
  CHECK(double(actual_bits) <= est_bits * 1.01 + 16 * 8 * 4);
  CHECK(double(actual_bits) >= est_bits * 0.98);
}

TEST_CASE("bitstream container round trip and error contracts") {
  Bitstream b;
  b.height = 64;
  b.width = 48;
  b.bands = 6;
  b.num_slices = 2;
  b.lambda_index = 1;
  b.model_checksum = 0xDEADBEEFCAFEBABEull;
  b.hyper = {1, 2, 3};
  b.slices = {{4, 5}, {}};
  std::vector<uint8_t> bytes = b.serialize();
  Bitstream p = Bitstream::parse(bytes);
  CHECK(p.height == 64);
  CHECK(p.width == 48);
  CHECK(p.bands == 6);
  CHECK(p.num_slices == 2);
  CHECK(p.lambda_index == 1);
  CHECK(p.model_checksum == b.model_checksum);
  CHECK(p.hyper == b.hyper);
  CHECK(p.slices == b.slices);
  CHECK(b.total_bytes() == bytes.size());

  std::vector<uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Bitstream::parse(bad), Error);
  std::vector<uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(Bitstream::parse(truncated), Error);
}
