#include "mslc/wsga.hpp"

#include <algorithm>
#include <cmath>

namespace mslc {

LocalGraph knn_graph(const Tensor& window_feats, int k) {
  MSLC_CHECK(window_feats.ndim() == 2, "knn_graph expects [N, M] features");
  int N = window_feats.dim(0), M = window_feats.dim(1);
  MSLC_CHECK(k >= 1 && k <= N, "knn k=" << k << " out of range for N=" << N);
  LocalGraph gph;
  gph.N = N;
  gph.P = int(std::lround(std::sqrt(double(N))));
  gph.k = k;
  gph.nbr.resize(size_t(N) * k);
  const auto& v = window_feats.values();
  std::vector<std::pair<double, int>> dist(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    const double* xi = v.data() + size_t(i) * M;
    for (int j = 0; j < N; ++j) {
      const double* xj = v.data() + size_t(j) * M;
      double d = 0.0;
      for (int c = 0; c < M; ++c) {
        double t = xi[c] - xj[c];
        d += t * t;
      }
      dist[size_t(j)] = {d, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int j = 0; j < k; ++j) gph.nbr[size_t(i) * k + j] = dist[size_t(j)].second;
  }
  return gph;
}

void AttentionWeights::init(int M, Rng& rng) {
  double b = std::sqrt(6.0 / double(M));
  Wq = rand_uniform({M, M}, rng, -b, b, true);
  Wk = rand_uniform({M, M}, rng, -b, b, true);
  Wv = rand_uniform({M, M}, rng, -b, b, true);
  Wz = rand_uniform({M, M}, rng, -b, b, true);
}

void AttentionWeights::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".Wq", Wq});
  out.push_back({prefix + ".Wk", Wk});
  out.push_back({prefix + ".Wv", Wv});
  out.push_back({prefix + ".Wz", Wz});
}

// mask holds 1 on neighborhood entries; mask_bias holds 0 there and -1e9
// elsewhere, which underflows to exactly zero weight after the softmax.
static void build_masks(const std::vector<LocalGraph>& graphs, int N,
                        Tensor& mask, Tensor& mask_bias) {
  int Wn = int(graphs.size());
  std::vector<double> m(size_t(Wn) * N * N, 0.0);
  std::vector<double> mb(size_t(Wn) * N * N, -1e9);
  for (int w = 0; w < Wn; ++w) {
    const auto& gph = graphs[size_t(w)];
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < gph.k; ++j) {
        size_t at = (size_t(w) * N + size_t(i)) * N + size_t(gph.nbr[size_t(i) * gph.k + j]);
        m[at] = 1.0;
        mb[at] = 0.0;
      }
  }
  mask = Tensor::from_values({Wn, N, N}, std::move(m));
  mask_bias = Tensor::from_values({Wn, N, N}, std::move(mb));
}

Tensor graph_attention_batched(const Tensor& nodes, const Tensor& mask,
                               const Tensor& mask_bias, const AttentionWeights& w) {
  Tensor q = matmul(nodes, w.Wq);
  Tensor kk = matmul(nodes, w.Wk);
  Tensor logits = matmul(q, permute(kk, {0, 2, 1}));
  Tensor alpha = softmax(add(mul(logits, mask), mask_bias), 2);
  Tensor v = matmul(nodes, w.Wv);
  return add(nodes, matmul(matmul(alpha, v), w.Wz));
}

Tensor graph_attention(const Tensor& window_feats, const LocalGraph& graph,
                       const AttentionWeights& w) {
  MSLC_CHECK(window_feats.ndim() == 2, "graph_attention expects [N, M]");
  int N = window_feats.dim(0), M = window_feats.dim(1);
  MSLC_CHECK(graph.N == N, "graph built for different node count");
  for (int idx : graph.nbr)
    MSLC_CHECK(idx >= 0 && idx < N, "neighborhood index " << idx << " out of range");
  Tensor mask, mask_bias;
  build_masks({graph}, N, mask, mask_bias);
  Tensor out = graph_attention_batched(reshape(window_feats, {1, N, M}), mask,
                                       mask_bias, w);
  return reshape(out, {N, M});
}

void CbamWeights::init(int M, int reduction, Rng& rng) {
  MSLC_CHECK(M % reduction == 0, "cbam reduction " << reduction
                                                   << " does not divide " << M);
  mlp1.init(M, M / reduction, rng);
  mlp2.init(M / reduction, M, rng);
  spatial.init(2, 1, 7, 1, 0, 1, rng);  // input is symmetric-padded by 3
}

void CbamWeights::collect(ParamList& out, const std::string& prefix) {
  mlp1.collect(out, prefix + ".mlp1");
  mlp2.collect(out, prefix + ".mlp2");
  spatial.collect(out, prefix + ".spatial");
}

Tensor windowed_cbam(const Tensor& windows, const CbamWeights& w) {
  MSLC_CHECK(windows.ndim() == 4, "windowed_cbam expects [Wn, M, P, P]");
  int Wn = windows.dim(0), M = windows.dim(1), P = windows.dim(2);
  Tensor flat = reshape(windows, {Wn, M, P * P});
  Tensor avg = mean(flat, 2, false);
  Tensor mx = reduce_max(flat, 2, false);
  auto mlp = [&](const Tensor& t) { return w.mlp2(relu(w.mlp1(t))); };
  Tensor a_ch = sigmoid(add(mlp(avg), mlp(mx)));
  Tensor x_ch = mul(windows, reshape(a_ch, {Wn, M, 1, 1}));
  Tensor c_avg = mean(x_ch, 1, true);
  Tensor c_max = reduce_max(x_ch, 1, true);
  Tensor a_sp = sigmoid(w.spatial(pad2d_symmetric(concat({c_avg, c_max}, 1), 3)));
  return mul(x_ch, a_sp);
}

void WsgaCModule::init(int M, int P_, int k_, Rng& rng) {
  channels = M;
  P = P_;
  k = k_;
  attn.init(M, rng);
  cbam.init(M, 4, rng);
  fuse.init(2 * M, M, 1, 1, 0, 1, rng);
}

Tensor WsgaCModule::forward(const Tensor& x) const {
  MSLC_CHECK(x.ndim() == 4 && x.dim(1) == channels, "wsga_c channel mismatch");
  int H = x.dim(2), W = x.dim(3);
  int Pe = std::min({P, H, W});
  MSLC_CHECK(H % Pe == 0 && W % Pe == 0,
             "window " << Pe << " does not divide " << H << "x" << W);
  Tensor xw = window_partition(x, Pe);  // [Wn, M, Pe, Pe]
  int Wn = xw.dim(0), N = Pe * Pe;
  int ke = std::min(k, N);

  Tensor nodes = permute(reshape(xw, {Wn, channels, N}), {0, 2, 1});
  std::vector<LocalGraph> graphs;
  graphs.reserve(size_t(Wn));
  {
    NoGradGuard ng;  // graph construction reads values only
    Tensor nd = detach(nodes);
    for (int wi = 0; wi < Wn; ++wi)
      graphs.push_back(knn_graph(reshape(slice(nd, 0, wi, 1), {N, channels}), ke));
  }
  Tensor mask, mask_bias;
  build_masks(graphs, N, mask, mask_bias);

  Tensor ga = graph_attention_batched(nodes, mask, mask_bias, attn);
  Tensor ga_spatial = reshape(permute(ga, {0, 2, 1}), {Wn, channels, Pe, Pe});
  Tensor cb = windowed_cbam(xw, cbam);
  Tensor fused = fuse(concat({ga_spatial, cb}, 1));
  return window_merge(fused, Pe, H, W);
}

void WsgaCModule::collect(ParamList& out, const std::string& prefix) {
  attn.collect(out, prefix + ".attn");
  cbam.collect(out, prefix + ".cbam");
  fuse.collect(out, prefix + ".fuse");
}

}  // namespace mslc
