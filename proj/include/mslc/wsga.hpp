#pragma once

// Windowed spatial graph attention plus windowed CBAM, fused by channel
// concatenation and a 1x1 convolution. The k-NN graph is rebuilt from the
// window features on every forward pass.

#include <vector>

#include "mslc/nn.hpp"
#include "mslc/tensor.hpp"

namespace mslc {

struct LocalGraph {
  int P = 0;
  int N = 0;  // P*P
  int k = 0;
  std::vector<int> nbr;  // N*k node indices, each row ordered by (distance, index)
};

// Squared euclidean distances over node features [N, M]; ties broken by the
// smaller node index, so identical features give {0, 1, ..., k-1} everywhere.
LocalGraph knn_graph(const Tensor& window_feats, int k);

struct AttentionWeights {
  Tensor Wq, Wk, Wv, Wz;  // [M, M], applied on the right of row features

  void init(int M, Rng& rng);
  void collect(ParamList& out, const std::string& prefix);
};

// Single window [N, M]: out_i = x_i + (sum_j alpha_ij x_j Wv) Wz with the
// softmax restricted to graph neighborhoods.
Tensor graph_attention(const Tensor& window_feats, const LocalGraph& graph,
                       const AttentionWeights& w);

// Batched core over windows [Wn, N, M] with a 0/1 neighborhood mask [Wn, N, N].
Tensor graph_attention_batched(const Tensor& nodes, const Tensor& mask,
                               const Tensor& mask_bias, const AttentionWeights& w);

struct CbamWeights {
  Linear mlp1, mlp2;  // M -> M/r -> M, shared for avg and max paths
  Conv2d spatial;     // 2 -> 1, 7x7, pad 3

  void init(int M, int reduction, Rng& rng);
  void collect(ParamList& out, const std::string& prefix);
};

// [Wn, M, P, P]: channel gate from pooled stats, then spatial gate.
Tensor windowed_cbam(const Tensor& windows, const CbamWeights& w);

struct WsgaCModule {
  int channels = 0;
  int P = 8;
  int k = 9;
  AttentionWeights attn;
  CbamWeights cbam;
  Conv2d fuse;  // 1x1: 2M -> M

  void init(int M, int P_, int k_, Rng& rng);
  // The effective window is min(P, H, W) so the block also runs on small
  // feature maps; k is clamped to the node count.
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix);
};

}  // namespace mslc
