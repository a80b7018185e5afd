#include "mslc/iswge.hpp"

#include <cmath>
#include <sstream>

namespace mslc {

// D^-1/2 (A+I) D^-1/2 from a 0/1 adjacency (self-loops added here).
static Tensor normalized_adjacency(const std::vector<std::vector<int>>& adj) {
  int n = int(adj.size());
  std::vector<double> a(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    a[size_t(i) * n + i] = 1.0;
    for (int j : adj[size_t(i)]) a[size_t(i) * n + j] = 1.0;
  }
  std::vector<double> dinv(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += a[size_t(i) * n + j];
    dinv[size_t(i)] = 1.0 / std::sqrt(deg);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a[size_t(i) * n + j] *= dinv[size_t(i)] * dinv[size_t(j)];
  return Tensor::from_values({n, n}, std::move(a));
}

SpectralGraphTopology build_cyclic_topology(int g) {
  MSLC_CHECK(g >= 3, "cyclic band graph needs g >= 3, got " << g);
  SpectralGraphTopology topo;
  topo.g = g;
  int E = g;
  for (int e = 0; e < E; ++e) topo.edges.emplace_back(e, (e + 1) % g);

  std::vector<double> t(size_t(g) * E, 0.0);
  for (int e = 0; e < E; ++e) {
    t[size_t(topo.edges[size_t(e)].first) * E + e] = 1.0;
    t[size_t(topo.edges[size_t(e)].second) * E + e] = 1.0;
  }
  topo.T = Tensor::from_values({g, E}, t);
  {
    NoGradGuard ng;
    topo.T_t = transpose2d(topo.T);
  }

  std::vector<std::vector<int>> node_adj(static_cast<size_t>(g));
  for (auto [j, k] : topo.edges) {
    node_adj[size_t(j)].push_back(k);
    node_adj[size_t(k)].push_back(j);
  }
  topo.Av_norm = normalized_adjacency(node_adj);

  // edges are adjacent iff they share a node
  std::vector<std::vector<int>> edge_adj(static_cast<size_t>(E));
  for (int e = 0; e < E; ++e)
    for (int e2 = 0; e2 < E; ++e2) {
      if (e == e2) continue;
      auto [a1, b1] = topo.edges[size_t(e)];
      auto [a2, b2] = topo.edges[size_t(e2)];
      if (a1 == a2 || a1 == b2 || b1 == a2 || b1 == b2)
        edge_adj[size_t(e)].push_back(e2);
    }
  topo.Ae_norm = normalized_adjacency(edge_adj);
  return topo;
}

std::string topology_dump(const SpectralGraphTopology& topo) {
  std::ostringstream os;
  os << "cyclic band graph: g=" << topo.g << " |E|=" << topo.edges.size() << "\n";
  for (size_t e = 0; e < topo.edges.size(); ++e)
    os << "edge " << e << ": " << topo.edges[e].first << " -- "
       << topo.edges[e].second << "\n";
  return os.str();
}

Tensor pool_window_descriptors(const Tensor& feats, int num_windows, int g, int f) {
  MSLC_CHECK(feats.ndim() == 4, "pool_window_descriptors expects 4D features");
  int grid = int(std::lround(std::sqrt(double(num_windows))));
  MSLC_CHECK(grid * grid == num_windows,
             "num_windows " << num_windows << " is not a perfect square");
  int B = feats.dim(0), C = feats.dim(1), H = feats.dim(2), W = feats.dim(3);
  MSLC_CHECK(C == g * f, "channel count " << C << " != g*f");
  MSLC_CHECK(H % grid == 0 && W % grid == 0,
             "window grid " << grid << " does not divide " << H << "x" << W);
  int hb = H / grid, wb = W / grid;
  Tensor split = reshape(feats, {B, C, grid, hb, grid, wb});
  Tensor pooled = mean(mean(split, 5, false), 3, false);  // [B, C, grid, grid]
  Tensor perm = permute(pooled, {0, 2, 3, 1});             // [B, grid, grid, C]
  return reshape(perm, {B * num_windows, g, f});
}

void CensnetWeights::init(int dv, int de, Rng& rng) {
  double bv = std::sqrt(6.0 / double(dv));
  double be = std::sqrt(6.0 / double(de));
  Wv = rand_uniform({dv, dv}, rng, -bv, bv, true);
  We = rand_uniform({de, de}, rng, -be, be, true);
  Pv = rand_uniform({dv, 1}, rng, -bv, bv, true);
  Pe = rand_uniform({de, 1}, rng, -be, be, true);
}

void CensnetWeights::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".Wv", Wv});
  out.push_back({prefix + ".We", We});
  out.push_back({prefix + ".Pv", Pv});
  out.push_back({prefix + ".Pe", Pe});
}

std::pair<Tensor, Tensor> censnet_layer(const Tensor& Hv, const Tensor& He,
                                        const SpectralGraphTopology& topo,
                                        const CensnetWeights& w) {
  MSLC_CHECK(Hv.ndim() == 3 && He.ndim() == 3, "censnet_layer expects batched embeddings");
  int N = Hv.dim(0), g = Hv.dim(1);
  int E = He.dim(1);
  MSLC_CHECK(He.dim(0) == N && g == topo.g && E == int(topo.edges.size()),
             "censnet_layer embedding/topology mismatch");

  Tensor gate_e = reshape(matmul(He, w.Pe), {N, 1, E});
  Tensor t_scaled = mul(topo.T, gate_e);                 // [N, g, E]
  Tensor gv_mix = mul(matmul(t_scaled, topo.T_t), topo.Av_norm);
  Tensor Hv1 = relu(matmul(matmul(gv_mix, Hv), w.Wv));

  Tensor gate_v = reshape(matmul(Hv1, w.Pv), {N, 1, g});
  Tensor tt_scaled = mul(topo.T_t, gate_v);              // [N, E, g]
  Tensor ge_mix = mul(matmul(tt_scaled, topo.T), topo.Ae_norm);
  Tensor He1 = relu(matmul(matmul(ge_mix, He), w.We));
  return {Hv1, He1};
}

void IswgeModule::init(int cin, const IswgeConfig& c, Rng& rng) {
  cfg = c;
  MSLC_CHECK(cin % c.groups == 0,
             "iswge input channels " << cin << " not divisible by g=" << c.groups);
  topo = build_cyclic_topology(c.groups);
  // 1x1 keeps spatially constant inputs constant (zero padding would not);
  // spatial context enters through the window pooling that follows
  grouped_conv.init(cin, c.groups * c.group_width, 1, 1, 0, c.groups, rng);
  node_mlp1.init(c.group_width, 2 * c.dv, rng);
  node_mlp2.init(2 * c.dv, c.dv, rng);
  edge_mlp1.init(c.group_width, 2 * c.de, rng);
  edge_mlp2.init(2 * c.de, c.de, rng);
  coembed.resize(size_t(c.layers));
  for (auto& l : coembed) l.init(c.dv, c.de, rng);
  proj.init(c.groups * c.dv, c.out_channels, 1, 1, 0, 1, rng);
}

std::pair<Tensor, Tensor> IswgeModule::initial_embeddings(const Tensor& X) const {
  MSLC_CHECK(X.ndim() == 3 && X.dim(1) == cfg.groups && X.dim(2) == cfg.group_width,
             "descriptor shape " << shape_str(X.shape()) << " does not match config");
  Tensor Hv = node_mlp2(relu(node_mlp1(X)));
  int g = cfg.groups;
  Tensor x_next = concat({slice(X, 1, 1, g - 1), slice(X, 1, 0, 1)}, 1);
  Tensor e_raw = abs(sub(X, x_next));  // row e = |X_e - X_{e+1 mod g}|
  Tensor He = edge_mlp2(relu(edge_mlp1(e_raw)));
  return {Hv, He};
}

Tensor IswgeModule::forward(const Tensor& x) const {
  MSLC_CHECK(x.ndim() == 4, "iswge_forward expects 4D input");
  MSLC_CHECK(x.dim(2) == x.dim(3), "iswge_forward expects square inputs");
  Tensor feats = grouped_conv(x);  // [B, g*f, H, W]
  int B = feats.dim(0), H = feats.dim(2), W = feats.dim(3);
  int grid = int(std::lround(std::sqrt(double(cfg.num_windows))));
  Tensor X = pool_window_descriptors(feats, cfg.num_windows, cfg.groups, cfg.group_width);
  auto [Hv, He] = initial_embeddings(X);
  for (const auto& layer : coembed) {
    auto next = censnet_layer(Hv, He, topo, layer);
    Hv = next.first;
    He = next.second;  // discarded after the last layer; only nodes are emitted
  }
  Tensor grid_map = reshape(Hv, {B, grid, grid, cfg.groups * cfg.dv});
  grid_map = permute(grid_map, {0, 3, 1, 2});
  Tensor tiled = upsample_nearest2d(grid_map, H / grid);
  (void)W;
  return proj(tiled);
}

void IswgeModule::collect(ParamList& out, const std::string& prefix) {
  grouped_conv.collect(out, prefix + ".gconv");
  node_mlp1.collect(out, prefix + ".node_mlp1");
  node_mlp2.collect(out, prefix + ".node_mlp2");
  edge_mlp1.collect(out, prefix + ".edge_mlp1");
  edge_mlp2.collect(out, prefix + ".edge_mlp2");
  for (size_t l = 0; l < coembed.size(); ++l)
    coembed[l].collect(out, prefix + ".coembed" + std::to_string(l));
  proj.collect(out, prefix + ".proj");
}

}  // namespace mslc
