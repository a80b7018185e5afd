#pragma once

// Inter-spectral windowed graph embedding: a cyclic graph over spectral
// groups per spatial window, with node/edge co-embedding refinement and
// re-injection of the refined spectral features into the feature map.

#include <utility>
#include <vector>

#include "mslc/nn.hpp"
#include "mslc/tensor.hpp"

namespace mslc {

struct SpectralGraphTopology {
  int g = 0;                              // node count (spectral groups)
  std::vector<std::pair<int, int>> edges; // edge e connects bands e, (e+1) mod g
  Tensor T;        // [g, E] binary incidence
  Tensor T_t;      // [E, g]
  Tensor Av_norm;  // [g, g] D^-1/2 (A+I) D^-1/2
  Tensor Ae_norm;  // [E, E] same normalization on the edge-adjacency graph
};

SpectralGraphTopology build_cyclic_topology(int g);

// Plain-text adjacency listing for inspection.
std::string topology_dump(const SpectralGraphTopology& topo);

// [B, g*f, H, W] -> per-window descriptors [B*nw, g, f]; entry (r, c) is the
// mean of channel r*f + c over the window. num_windows must be a perfect
// square whose side divides H and W.
Tensor pool_window_descriptors(const Tensor& feats, int num_windows, int g, int f);

struct CensnetWeights {
  Tensor Wv;  // [dv, dv]
  Tensor We;  // [de, de]
  Tensor Pv;  // [dv, 1]
  Tensor Pe;  // [de, 1]

  void init(int dv, int de, Rng& rng);
  void collect(ParamList& out, const std::string& prefix);
};

// One co-embedding layer: the node update runs first and feeds the edge
// update. Hv [N, g, dv], He [N, E, de] (N = batched windows).
std::pair<Tensor, Tensor> censnet_layer(const Tensor& Hv, const Tensor& He,
                                        const SpectralGraphTopology& topo,
                                        const CensnetWeights& w);

struct IswgeConfig {
  int groups = 6;        // g, fixed to the spectral band count
  int group_width = 4;   // f
  int num_windows = 16;
  int dv = 16;
  int de = 16;
  int layers = 3;
  int out_channels = 16;
};

struct IswgeModule {
  IswgeConfig cfg;
  SpectralGraphTopology topo;
  Conv2d grouped_conv;              // cin -> g*f, groups = g, 3x3 s1 p1
  Linear node_mlp1, node_mlp2;      // f -> 2dv -> dv, shared across windows
  Linear edge_mlp1, edge_mlp2;      // f -> 2de -> de, shared across edges
  std::vector<CensnetWeights> coembed;
  Conv2d proj;                      // 1x1: g*dv -> out_channels

  void init(int cin, const IswgeConfig& c, Rng& rng);

  // node/edge MLPs on pooled descriptors X [N, g, f]
  std::pair<Tensor, Tensor> initial_embeddings(const Tensor& X) const;

  // full pipeline on [B, cin, H, W] (H == W, divisible by the window grid)
  Tensor forward(const Tensor& x) const;

  void collect(ParamList& out, const std::string& prefix);
};

}  // namespace mslc
