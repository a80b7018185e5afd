#include "mslc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace mslc {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

// ---------------------------------------------------------------------------
// Mode flags and tape

static thread_local bool g_shadow_fp64 = false;

bool shadow_fp64_active() { return g_shadow_fp64; }

ShadowFp64Guard::ShadowFp64Guard() : prev(g_shadow_fp64) { g_shadow_fp64 = true; }
ShadowFp64Guard::~ShadowFp64Guard() { g_shadow_fp64 = prev; }

Tape& Tape::get() {
  static thread_local Tape tape;
  return tape;
}

NoGradGuard::NoGradGuard() : prev(Tape::get().record_enabled) {
  Tape::get().record_enabled = false;
}
NoGradGuard::~NoGradGuard() { Tape::get().record_enabled = prev; }

// Rounds op results to float precision (unless shadow mode) and rejects
// non-finite values; every forward op funnels through here.
static void finalize(TensorData& d, const char* op) {
  if (g_shadow_fp64) {
    for (double x : d.v) {
      if (!std::isfinite(x))
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
    return;
  }
  for (double& x : d.v) {
    float f = float(x);
    if (!std::isfinite(f))
      throw NumericError(std::string("non-finite value produced by ") + op);
    x = double(f);
  }
}

static bool recording() { return Tape::get().record_enabled; }

static std::vector<double>& gbuf(GradMap& g, TensorData* t) {
  auto& buf = g[t];
  if (buf.empty()) buf.assign(t->v.size(), 0.0);
  return buf;
}

// ---------------------------------------------------------------------------
// Tensor basics

Tensor::Tensor(Shape shape, bool requires_grad) {
  d_ = std::make_shared<TensorData>();
  d_->shape = std::move(shape);
  d_->v.assign(size_t(shape_numel(d_->shape)), 0.0);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.d_->v.begin(), t.d_->v.end(), value);
  finalize(*t.d_, "full");
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  MSLC_CHECK(int64_t(values.size()) == shape_numel(shape),
             "value count " << values.size() << " does not match shape "
                            << shape_str(shape));
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = std::move(shape);
  t.d_->v = std::move(values);
  t.d_->requires_grad = requires_grad;
  finalize(*t.d_, "from_values");
  return t;
}

Tensor Tensor::arange(Shape shape) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.d_->v.size(); ++i) t.d_->v[i] = double(i);
  finalize(*t.d_, "arange");
  return t;
}

double Tensor::item() const {
  MSLC_CHECK(numel() == 1, "item() on tensor of shape " << shape_str(shape()));
  return d_->v[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  d_->requires_grad = rg;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (d_->grad.empty()) d_->grad.assign(d_->v.size(), 0.0);
  return d_->grad;
}

std::vector<double>& Tensor::grad_mut() {
  if (d_->grad.empty()) d_->grad.assign(d_->v.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (double& x : t.values()) x = gaussian(rng, 0.0, stddev);
  finalize(*t.ptr(), "randn");
  return t;
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                    bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (double& x : t.values()) x = uniform(rng, lo, hi);
  finalize(*t.ptr(), "rand_uniform");
  return t;
}

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss) {
  MSLC_CHECK(loss.defined() && loss.numel() == 1,
             "backward requires a scalar loss");
  auto& tape = Tape::get();
  MSLC_CHECK(!tape.entries.empty(), "backward on an empty tape");
  GradMap g;
  g[loss.raw()].assign(1, 1.0);
  for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
    if (g.count(it->output.get())) it->pull(g);
  }
  for (auto& [node, buf] : g) {
    if (!node->requires_grad) continue;
    if (node->grad.empty()) node->grad.assign(node->v.size(), 0.0);
    for (size_t i = 0; i < buf.size(); ++i) node->grad[i] += buf[i];
  }
}

// ---------------------------------------------------------------------------
// Broadcasting

static Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    MSLC_CHECK(da == db || da == 1 || db == 1,
               op << ": shapes " << shape_str(a) << " and " << shape_str(b)
                  << " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// out-linear-index -> input-linear-index, identity maps elided
static std::vector<int64_t> bcast_map(const Shape& out, const Shape& in) {
  if (out == in) return {};
  size_t n = out.size();
  std::vector<int64_t> in_stride(n, 0);
  int64_t s = 1;
  for (size_t i = n; i-- > 0;) {
    int di = i < n - in.size() ? 1 : in[i - (n - in.size())];
    if (di != 1) {
      in_stride[i] = s;
      s *= di;
    }
  }
  int64_t total = shape_numel(out);
  std::vector<int64_t> map(static_cast<size_t>(total));
  std::vector<int> idx(n, 0);
  int64_t src = 0;
  for (int64_t o = 0; o < total; ++o) {
    map[size_t(o)] = src;
    for (size_t i = n; i-- > 0;) {
      ++idx[i];
      src += in_stride[i];
      if (idx[i] < out[i]) break;
      idx[i] = 0;
      src -= in_stride[i] * out[i];
    }
  }
  return map;
}

enum class BinOp { Add, Sub, Mul, Div };

static Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op,
                        const char* name) {
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  auto ma = bcast_map(os, a.shape());
  auto mb = bcast_map(os, b.shape());
  Tensor out(os, recording() && (a.requires_grad() || b.requires_grad()));
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  int64_t n = out.numel();
  auto at = [&](int64_t i) { return ma.empty() ? av[size_t(i)] : av[size_t(ma[size_t(i)])]; };
  auto bt = [&](int64_t i) { return mb.empty() ? bv[size_t(i)] : bv[size_t(mb[size_t(i)])]; };
  switch (op) {
    case BinOp::Add:
      for (int64_t i = 0; i < n; ++i) ov[size_t(i)] = at(i) + bt(i);
      break;
    case BinOp::Sub:
      for (int64_t i = 0; i < n; ++i) ov[size_t(i)] = at(i) - bt(i);
      break;
    case BinOp::Mul:
      for (int64_t i = 0; i < n; ++i) ov[size_t(i)] = at(i) * bt(i);
      break;
    case BinOp::Div:
      for (int64_t i = 0; i < n; ++i) ov[size_t(i)] = at(i) / bt(i);
      break;
  }
  finalize(*out.ptr(), name);
  if (out.requires_grad()) {
    DataPtr ap = a.ptr(), bp = b.ptr(), op_ = out.ptr();
    Tape::get().push({{ap, bp},
                      op_,
                      [ap, bp, op_, ma = std::move(ma), mb = std::move(mb), op](GradMap& g) {
      const auto& go = g[op_.get()];
      int64_t n = int64_t(go.size());
      auto ai = [&](int64_t i) { return ma.empty() ? i : ma[size_t(i)]; };
      auto bi = [&](int64_t i) { return mb.empty() ? i : mb[size_t(i)]; };
      if (ap->requires_grad) {
        auto& ga = gbuf(g, ap.get());
        switch (op) {
          case BinOp::Add:
          case BinOp::Sub:
            for (int64_t i = 0; i < n; ++i) ga[size_t(ai(i))] += go[size_t(i)];
            break;
          case BinOp::Mul:
            for (int64_t i = 0; i < n; ++i)
              ga[size_t(ai(i))] += go[size_t(i)] * bp->v[size_t(bi(i))];
            break;
          case BinOp::Div:
            for (int64_t i = 0; i < n; ++i)
              ga[size_t(ai(i))] += go[size_t(i)] / bp->v[size_t(bi(i))];
            break;
        }
      }
      if (bp->requires_grad) {
        auto& gb = gbuf(g, bp.get());
        switch (op) {
          case BinOp::Add:
            for (int64_t i = 0; i < n; ++i) gb[size_t(bi(i))] += go[size_t(i)];
            break;
          case BinOp::Sub:
            for (int64_t i = 0; i < n; ++i) gb[size_t(bi(i))] -= go[size_t(i)];
            break;
          case BinOp::Mul:
            for (int64_t i = 0; i < n; ++i)
              gb[size_t(bi(i))] += go[size_t(i)] * ap->v[size_t(ai(i))];
            break;
          case BinOp::Div:
            for (int64_t i = 0; i < n; ++i) {
              double bv = bp->v[size_t(bi(i))];
              gb[size_t(bi(i))] -= go[size_t(i)] * ap->v[size_t(ai(i))] / (bv * bv);
            }
            break;
        }
      }
    }});
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div, "div"); }

Tensor add(const Tensor& a, double s) {
  return add(a, Tensor::full({1}, s));
}
Tensor mul(const Tensor& a, double s) {
  return mul(a, Tensor::full({1}, s));
}

// ---------------------------------------------------------------------------
// Unary ops

template <class Fwd, class Bwd>
static Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd dpart) {
  Tensor out(x.shape(), recording() && x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  finalize(*out.ptr(), name);
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), op = out.ptr();
    Tape::get().push({{xp}, op, [xp, op, dpart](GradMap& g) {
      if (!xp->requires_grad) return;
      const auto& go = g[op.get()];
      auto& gx = gbuf(g, xp.get());
      for (size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * dpart(xp->v[i], op->v[i]);
    }});
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

static double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", stable_sigmoid,
                  [](double, double yv) { return yv * (1.0 - yv); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                  [](double, double yv) { return 1.0 - yv * yv; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); },
                  [](double, double yv) { return yv; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    MSLC_CHECK(v > 0.0, "log of non-positive input " << v);
  }
  return unary_op(x, "log", [](double v) { return std::log(v); },
                  [](double xv, double) { return 1.0 / xv; });
}

Tensor abs(const Tensor& x) {
  return unary_op(x, "abs", [](double v) { return std::fabs(v); },
                  [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

Tensor erf(const Tensor& x) {
  constexpr double two_over_sqrt_pi = 1.1283791670955126;
  return unary_op(x, "erf", [](double v) { return std::erf(v); },
                  [=](double xv, double) { return two_over_sqrt_pi * std::exp(-xv * xv); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(x, "softplus",
                  [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
                  [](double xv, double) { return stable_sigmoid(xv); });
}

Tensor ste_round(const Tensor& x) {
  return unary_op(x, "ste_round", [](double v) { return std::round(v); },
                  [](double, double) { return 1.0; });
}

Tensor detach(const Tensor& x) {
  Tensor out(x.shape(), false);
  out.values() = x.values();
  return out;
}

// ---------------------------------------------------------------------------
// Axis helpers

static void axis_spans(const Shape& s, int axis, int64_t& outer, int64_t& len,
                       int64_t& inner) {
  MSLC_CHECK(axis >= 0 && axis < int(s.size()),
             "axis " << axis << " out of range for " << shape_str(s));
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
  len = s[size_t(axis)];
  inner = 1;
  for (size_t i = size_t(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

Tensor softmax(const Tensor& x, int axis) {
  int64_t outer, len, inner;
  axis_spans(x.shape(), axis, outer, len, inner);
  Tensor out(x.shape(), recording() && x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * len * inner + in;
      double mx = xv[size_t(base)];
      for (int64_t l = 1; l < len; ++l) mx = std::max(mx, xv[size_t(base + l * inner)]);
      double sum = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        double e = std::exp(xv[size_t(base + l * inner)] - mx);
        ov[size_t(base + l * inner)] = e;
        sum += e;
      }
      for (int64_t l = 0; l < len; ++l) ov[size_t(base + l * inner)] /= sum;
    }
  finalize(*out.ptr(), "softmax");
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), op = out.ptr();
    Tape::get().push({{xp}, op, [xp, op, outer, len, inner](GradMap& g) {
      if (!xp->requires_grad) return;
      const auto& go = g[op.get()];
      auto& gx = gbuf(g, xp.get());
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * len * inner + in;
          double dot = 0.0;
          for (int64_t l = 0; l < len; ++l)
            dot += go[size_t(base + l * inner)] * op->v[size_t(base + l * inner)];
          for (int64_t l = 0; l < len; ++l) {
            size_t i = size_t(base + l * inner);
            gx[i] += op->v[i] * (go[i] - dot);
          }
        }
    }});
  }
  return out;
}

enum class Red { Sum, Mean, Max };

static Tensor reduce_axis(const Tensor& x, int axis, bool keepdim, Red kind,
                          const char* name) {
  int64_t outer, len, inner;
  axis_spans(x.shape(), axis, outer, len, inner);
  Shape os = x.shape();
  if (keepdim)
    os[size_t(axis)] = 1;
  else
    os.erase(os.begin() + axis);
  if (os.empty()) os = {1};
  Tensor out(os, recording() && x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  std::vector<int64_t> argmax;
  if (kind == Red::Max) argmax.assign(size_t(outer * inner), 0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * len * inner + in;
      if (kind == Red::Max) {
        double best = xv[size_t(base)];
        int64_t bl = 0;
        for (int64_t l = 1; l < len; ++l) {
          double v = xv[size_t(base + l * inner)];
          if (v > best) {
            best = v;
            bl = l;
          }
        }
        ov[size_t(o * inner + in)] = best;
        argmax[size_t(o * inner + in)] = bl;
      } else {
        double s = 0.0;
        for (int64_t l = 0; l < len; ++l) s += xv[size_t(base + l * inner)];
        ov[size_t(o * inner + in)] = kind == Red::Mean ? s / double(len) : s;
      }
    }
  finalize(*out.ptr(), name);
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), op = out.ptr();
    Tape::get().push({{xp}, op,
                      [xp, op, outer, len, inner, kind, argmax = std::move(argmax)](GradMap& g) {
      if (!xp->requires_grad) return;
      const auto& go = g[op.get()];
      auto& gx = gbuf(g, xp.get());
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * len * inner + in;
          double gv = go[size_t(o * inner + in)];
          if (kind == Red::Max) {
            gx[size_t(base + argmax[size_t(o * inner + in)] * inner)] += gv;
          } else {
            double scale = kind == Red::Mean ? 1.0 / double(len) : 1.0;
            for (int64_t l = 0; l < len; ++l) gx[size_t(base + l * inner)] += gv * scale;
          }
        }
    }});
  }
  return out;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, Red::Sum, "sum");
}
Tensor mean(const Tensor& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, Red::Mean, "mean");
}
Tensor reduce_max(const Tensor& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, Red::Max, "reduce_max");
}

Tensor sum(const Tensor& x) {
  Tensor flat = reshape(x, {int(x.numel())});
  return sum(flat, 0, false);
}

Tensor mean(const Tensor& x) {
  Tensor flat = reshape(x, {int(x.numel())});
  return mean(flat, 0, false);
}

// ---------------------------------------------------------------------------
// Data-movement ops via an index map: out[i] = x[map[i]]

static Tensor map_op(const Tensor& x, Shape os, std::vector<int64_t> map,
                     const char* name) {
  (void)name;
  Tensor out(std::move(os), recording() && x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < map.size(); ++i) ov[i] = xv[size_t(map[i])];
  // pure moves of already-finite values; no rounding pass needed
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), op = out.ptr();
    Tape::get().push({{xp}, op, [xp, op, map = std::move(map)](GradMap& g) {
      if (!xp->requires_grad) return;
      const auto& go = g[op.get()];
      auto& gx = gbuf(g, xp.get());
      for (size_t i = 0; i < map.size(); ++i) gx[size_t(map[i])] += go[i];
    }});
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  MSLC_CHECK(shape_numel(shape) == x.numel(),
             "reshape " << shape_str(x.shape()) << " -> " << shape_str(shape));
  Tensor out(std::move(shape), recording() && x.requires_grad());
  out.values() = x.values();
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), op = out.ptr();
    Tape::get().push({{xp}, op, [xp, op](GradMap& g) {
      if (!xp->requires_grad) return;
      const auto& go = g[op.get()];
      auto& gx = gbuf(g, xp.get());
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }});
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const Shape& s = x.shape();
  MSLC_CHECK(order.size() == s.size(), "permute order rank mismatch");
  size_t n = s.size();
  Shape os(n);
  for (size_t i = 0; i < n; ++i) os[i] = s[size_t(order[i])];
  std::vector<int64_t> in_stride(n, 1);
  for (size_t i = n - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  std::vector<int64_t> stride_in_out(n);
  for (size_t i = 0; i < n; ++i) stride_in_out[i] = in_stride[size_t(order[i])];
  int64_t total = shape_numel(os);
  std::vector<int64_t> map(static_cast<size_t>(total));
  std::vector<int> idx(n, 0);
  int64_t src = 0;
  for (int64_t o = 0; o < total; ++o) {
    map[size_t(o)] = src;
    for (size_t i = n; i-- > 0;) {
      ++idx[i];
      src += stride_in_out[i];
      if (idx[i] < os[i]) break;
      idx[i] = 0;
      src -= stride_in_out[i] * os[i];
    }
  }
  return map_op(x, os, std::move(map), "permute");
}

Tensor transpose2d(const Tensor& a) {
  MSLC_CHECK(a.ndim() == 2, "transpose2d expects a matrix");
  return permute(a, {1, 0});
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  int64_t outer, alen, inner;
  axis_spans(x.shape(), axis, outer, alen, inner);
  MSLC_CHECK(start >= 0 && len > 0 && start + len <= alen,
             "slice [" << start << "," << start + len << ") out of range " << alen);
  Shape os = x.shape();
  os[size_t(axis)] = len;
  std::vector<int64_t> map(size_t(outer * len * inner));
  int64_t o2 = 0;
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t in = 0; in < inner; ++in)
        map[size_t(o2++)] = (o * alen + start + l) * inner + in;
  return map_op(x, os, std::move(map), "slice");
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  MSLC_CHECK(!xs.empty(), "concat of nothing");
  Shape os = xs[0].shape();
  int64_t outer, len0, inner;
  axis_spans(os, axis, outer, len0, inner);
  int64_t total_len = 0;
  for (const auto& t : xs) {
    MSLC_CHECK(t.ndim() == int(os.size()), "concat rank mismatch");
    for (int i = 0; i < t.ndim(); ++i)
      MSLC_CHECK(i == axis || t.dim(i) == os[size_t(i)],
                 "concat shape mismatch at axis " << i);
    total_len += t.dim(axis);
  }
  os[size_t(axis)] = int(total_len);
  bool rg = false;
  for (const auto& t : xs) rg = rg || t.requires_grad();
  Tensor out(os, recording() && rg);
  auto& ov = out.values();
  std::vector<int64_t> offsets(xs.size());
  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    offsets[k] = off;
    int64_t lk = xs[k].dim(axis);
    const auto& v = xs[k].values();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(&ov[size_t((o * total_len + off) * inner)],
                  &v[size_t(o * lk * inner)], size_t(lk * inner) * sizeof(double));
    off += lk;
  }
  if (out.requires_grad()) {
    std::vector<DataPtr> ins;
    for (const auto& t : xs) ins.push_back(t.ptr());
    DataPtr op = out.ptr();
    std::vector<int64_t> lens;
    for (const auto& t : xs) lens.push_back(t.dim(axis));
    Tape::get().push({ins, op,
                      [ins, op, offsets, lens, outer, total_len, inner](GradMap& g) {
      const auto& go = g[op.get()];
      for (size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        auto& gx = gbuf(g, ins[k].get());
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t l = 0; l < lens[k]; ++l)
            for (int64_t in = 0; in < inner; ++in)
              gx[size_t((o * lens[k] + l) * inner + in)] +=
                  go[size_t((o * total_len + offsets[k] + l) * inner + in)];
      }
    }});
  }
  return out;
}

// ---------------------------------------------------------------------------
// GEMM kernels (row-major, fixed loop order for reproducibility)

static void gemm_nn(const double* A, const double* B, double* C, int64_t M,
                    int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      double av = a[k];
      const double* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
static void gemm_nt(const double* A, const double* B, double* C, int64_t M,
                    int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double s = 0.0;
      for (int64_t k = 0; k < K; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
static void gemm_tn(const double* A, const double* B, double* C, int64_t M,
                    int64_t K, int64_t N) {
  for (int64_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (int64_t i = 0; i < M; ++i) {
      double av = a[i];
      double* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  int ra = a.ndim(), rb = b.ndim();
  MSLC_CHECK((ra == 2 && rb == 2) || (ra == 3 && (rb == 2 || rb == 3)),
             "matmul ranks " << ra << "x" << rb << " unsupported");
  int64_t batch = ra == 3 ? a.dim(0) : 1;
  int64_t M = a.dim(ra - 2), K = a.dim(ra - 1);
  int64_t Kb = b.dim(rb - 2), N = b.dim(rb - 1);
  MSLC_CHECK(K == Kb, "matmul inner dims " << K << " vs " << Kb);
  if (rb == 3) MSLC_CHECK(b.dim(0) == batch, "matmul batch mismatch");
  Shape os = ra == 3 ? Shape{int(batch), int(M), int(N)} : Shape{int(M), int(N)};
  Tensor out(os, recording() && (a.requires_grad() || b.requires_grad()));
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.values().data();
  bool shared_b = rb == 2;
  for (int64_t n = 0; n < batch; ++n)
    gemm_nn(av + n * M * K, shared_b ? bv : bv + n * K * N, ov + n * M * N, M, K, N);
  finalize(*out.ptr(), "matmul");
  if (out.requires_grad()) {
    DataPtr ap = a.ptr(), bp = b.ptr(), op = out.ptr();
    Tape::get().push({{ap, bp}, op,
                      [ap, bp, op, batch, M, K, N, shared_b](GradMap& g) {
      const auto& go = g[op.get()];
      if (ap->requires_grad) {
        auto& ga = gbuf(g, ap.get());
        for (int64_t n = 0; n < batch; ++n)
          gemm_nt(go.data() + n * M * N,
                  shared_b ? bp->v.data() : bp->v.data() + n * K * N,
                  ga.data() + n * M * K, M, N, K);
      }
      if (bp->requires_grad) {
        auto& gb = gbuf(g, bp.get());
        for (int64_t n = 0; n < batch; ++n)
          gemm_tn(ap->v.data() + n * M * K, go.data() + n * M * N,
                  shared_b ? gb.data() : gb.data() + n * K * N, K, M, N);
      }
    }});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution via im2col / col2im

// x [C,H,W] -> col [(C*kh*kw), (OH*OW)]
static void im2col(const double* x, int64_t C, int64_t H, int64_t W, int64_t kh,
                   int64_t kw, int64_t stride, int64_t pad, int64_t OH,
                   int64_t OW, double* col) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t a = 0; a < kh; ++a)
      for (int64_t b = 0; b < kw; ++b) {
        double* row = col + ((c * kh + a) * kw + b) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          int64_t ih = oh * stride - pad + a;
          if (ih < 0 || ih >= H) {
            std::fill(row + oh * OW, row + (oh + 1) * OW, 0.0);
            continue;
          }
          const double* xr = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            int64_t iw = ow * stride - pad + b;
            row[oh * OW + ow] = (iw < 0 || iw >= W) ? 0.0 : xr[iw];
          }
        }
      }
}

static void col2im(const double* col, int64_t C, int64_t H, int64_t W,
                   int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                   int64_t OH, int64_t OW, double* x) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t a = 0; a < kh; ++a)
      for (int64_t b = 0; b < kw; ++b) {
        const double* row = col + ((c * kh + a) * kw + b) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          int64_t ih = oh * stride - pad + a;
          if (ih < 0 || ih >= H) continue;
          double* xr = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            int64_t iw = ow * stride - pad + b;
            if (iw >= 0 && iw < W) xr[iw] += row[oh * OW + ow];
          }
        }
      }
}

static std::vector<double>& col_scratch() {
  static thread_local std::vector<double> buf;
  return buf;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding, int groups) {
  MSLC_CHECK(x.ndim() == 4 && w.ndim() == 4, "conv2d expects 4D input/weight");
  MSLC_CHECK(stride >= 1 && padding >= 0 && groups >= 1, "conv2d bad hyperparams");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Co = w.dim(0), Cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  MSLC_CHECK(C % groups == 0 && Co % groups == 0,
             "conv2d groups " << groups << " do not divide channels " << C << "/" << Co);
  MSLC_CHECK(Cig == C / groups, "conv2d weight in-channel block " << Cig
                                    << " != " << C / groups);
  MSLC_CHECK(H + 2 * padding >= kh && W + 2 * padding >= kw,
             "conv2d kernel larger than padded input");
  if (b.defined()) MSLC_CHECK(b.numel() == Co, "conv2d bias size");
  int64_t OH = (H + 2 * padding - kh) / stride + 1;
  int64_t OW = (W + 2 * padding - kw) / stride + 1;
  int64_t cog = Co / groups;
  Tensor out({int(B), int(Co), int(OH), int(OW)},
             recording() && (x.requires_grad() || w.requires_grad() ||
                             (b.defined() && b.requires_grad())));
  auto& ov = out.values();
  if (b.defined()) {
    for (int64_t n = 0; n < B; ++n)
      for (int64_t co = 0; co < Co; ++co)
        std::fill(&ov[size_t(((n * Co) + co) * OH * OW)],
                  &ov[size_t(((n * Co) + co + 1) * OH * OW)], b.values()[size_t(co)]);
  }
  auto& col = col_scratch();
  col.resize(size_t(Cig * kh * kw * OH * OW));
  for (int64_t n = 0; n < B; ++n)
    for (int64_t gi = 0; gi < groups; ++gi) {
      im2col(x.values().data() + (n * C + gi * Cig) * H * W, Cig, H, W, kh, kw,
             stride, padding, OH, OW, col.data());
      gemm_nn(w.values().data() + gi * cog * Cig * kh * kw, col.data(),
              ov.data() + (n * Co + gi * cog) * OH * OW, cog, Cig * kh * kw,
              OH * OW);
    }
  finalize(*out.ptr(), "conv2d");
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), wp = w.ptr(), op = out.ptr();
    DataPtr bp = b.defined() ? b.ptr() : nullptr;
    std::vector<DataPtr> ins = {xp, wp};
    if (bp) ins.push_back(bp);
    int64_t s = stride, p = padding, G = groups;
    Tape::get().push({ins, op,
                      [xp, wp, bp, op, B, C, H, W, Co, Cig, kh, kw, OH, OW, cog, s, p, G](GradMap& g) {
      const auto& go = g[op.get()];
      auto& col = col_scratch();
      col.resize(size_t(Cig * kh * kw * OH * OW));
      if (bp && bp->requires_grad) {
        auto& gb = gbuf(g, bp.get());
        for (int64_t n = 0; n < B; ++n)
          for (int64_t co = 0; co < Co; ++co) {
            double sacc = 0.0;
            const double* gr = go.data() + (n * Co + co) * OH * OW;
            for (int64_t i = 0; i < OH * OW; ++i) sacc += gr[i];
            gb[size_t(co)] += sacc;
          }
      }
      if (wp->requires_grad) {
        auto& gw = gbuf(g, wp.get());
        for (int64_t n = 0; n < B; ++n)
          for (int64_t gi = 0; gi < G; ++gi) {
            im2col(xp->v.data() + (n * C + gi * Cig) * H * W, Cig, H, W, kh, kw,
                   s, p, OH, OW, col.data());
            gemm_nt(go.data() + (n * Co + gi * cog) * OH * OW, col.data(),
                    gw.data() + gi * cog * Cig * kh * kw, cog, OH * OW,
                    Cig * kh * kw);
          }
      }
      if (xp->requires_grad) {
        auto& gx = gbuf(g, xp.get());
        for (int64_t n = 0; n < B; ++n)
          for (int64_t gi = 0; gi < G; ++gi) {
            std::fill(col.begin(), col.end(), 0.0);
            gemm_tn(wp->v.data() + gi * cog * Cig * kh * kw,
                    go.data() + (n * Co + gi * cog) * OH * OW, col.data(),
                    Cig * kh * kw, cog, OH * OW);
            col2im(col.data(), Cig, H, W, kh, kw, s, p, OH, OW,
                   gx.data() + (n * C + gi * Cig) * H * W);
          }
      }
    }});
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride, int padding, int output_padding) {
  MSLC_CHECK(x.ndim() == 4 && w.ndim() == 4, "conv_transpose2d expects 4D");
  MSLC_CHECK(output_padding >= 0 && output_padding < stride,
             "conv_transpose2d output_padding must be < stride");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Ci = w.dim(0), Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  MSLC_CHECK(Ci == C, "conv_transpose2d weight in-channels " << Ci << " != " << C);
  if (b.defined()) MSLC_CHECK(b.numel() == Co, "conv_transpose2d bias size");
  int64_t OH = (H - 1) * stride - 2 * padding + kh + output_padding;
  int64_t OW = (W - 1) * stride - 2 * padding + kw + output_padding;
  MSLC_CHECK(OH > 0 && OW > 0, "conv_transpose2d empty output");
  Tensor out({int(B), int(Co), int(OH), int(OW)},
             recording() && (x.requires_grad() || w.requires_grad() ||
                             (b.defined() && b.requires_grad())));
  auto& ov = out.values();
  if (b.defined()) {
    for (int64_t n = 0; n < B; ++n)
      for (int64_t co = 0; co < Co; ++co)
        std::fill(&ov[size_t((n * Co + co) * OH * OW)],
                  &ov[size_t((n * Co + co + 1) * OH * OW)], b.values()[size_t(co)]);
  }
  auto& col = col_scratch();
  col.resize(size_t(Co * kh * kw * H * W));
  for (int64_t n = 0; n < B; ++n) {
    std::fill(col.begin(), col.end(), 0.0);
    gemm_tn(w.values().data(), x.values().data() + n * C * H * W, col.data(),
            Co * kh * kw, Ci, H * W);
    col2im(col.data(), Co, OH, OW, kh, kw, stride, padding, H, W,
           ov.data() + n * Co * OH * OW);
  }
  finalize(*out.ptr(), "conv_transpose2d");
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), wp = w.ptr(), op = out.ptr();
    DataPtr bp = b.defined() ? b.ptr() : nullptr;
    std::vector<DataPtr> ins = {xp, wp};
    if (bp) ins.push_back(bp);
    int64_t s = stride, p = padding;
    Tape::get().push({ins, op,
                      [xp, wp, bp, op, B, C, Co, H, W, OH, OW, kh, kw, s, p](GradMap& g) {
      const auto& go = g[op.get()];
      auto& col = col_scratch();
      col.resize(size_t(Co * kh * kw * H * W));
      if (bp && bp->requires_grad) {
        auto& gb = gbuf(g, bp.get());
        for (int64_t n = 0; n < B; ++n)
          for (int64_t co = 0; co < Co; ++co) {
            double sacc = 0.0;
            const double* gr = go.data() + (n * Co + co) * OH * OW;
            for (int64_t i = 0; i < OH * OW; ++i) sacc += gr[i];
            gb[size_t(co)] += sacc;
          }
      }
      for (int64_t n = 0; n < B; ++n) {
        im2col(go.data() + n * Co * OH * OW, Co, OH, OW, kh, kw, s, p, H, W,
               col.data());
        if (xp->requires_grad) {
          auto& gx = gbuf(g, xp.get());
          gemm_nn(wp->v.data(), col.data(), gx.data() + n * C * H * W, C,
                  Co * kh * kw, H * W);
        }
        if (wp->requires_grad) {
          auto& gw = gbuf(g, wp.get());
          gemm_nt(xp->v.data() + n * C * H * W, col.data(), gw.data(), C, H * W,
                  Co * kh * kw);
        }
      }
    }});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling

Tensor avg_pool2d(const Tensor& x, int k) {
  MSLC_CHECK(x.ndim() == 4, "avg_pool2d expects 4D");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  MSLC_CHECK(k > 0 && H % k == 0 && W % k == 0,
             "avg_pool2d " << k << " does not divide " << H << "x" << W);
  int64_t OH = H / k, OW = W / k;
  Tensor out({int(B), int(C), int(OH), int(OW)}, recording() && x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  double inv = 1.0 / double(k * k);
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        double s = 0.0;
        for (int64_t a = 0; a < k; ++a)
          for (int64_t c = 0; c < k; ++c)
            s += xv[size_t((bc * H + oh * k + a) * W + ow * k + c)];
        ov[size_t((bc * OH + oh) * OW + ow)] = s * inv;
      }
  finalize(*out.ptr(), "avg_pool2d");
  if (out.requires_grad()) {
    DataPtr xp = x.ptr(), op = out.ptr();
    int64_t kk = k;
    Tape::get().push({{xp}, op, [xp, op, B, C, H, W, OH, OW, kk, inv](GradMap& g) {
      if (!xp->requires_grad) return;
      const auto& go = g[op.get()];
      auto& gx = gbuf(g, xp.get());
      for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t oh = 0; oh < OH; ++oh)
          for (int64_t ow = 0; ow < OW; ++ow) {
            double gv = go[size_t((bc * OH + oh) * OW + ow)] * inv;
            for (int64_t a = 0; a < kk; ++a)
              for (int64_t c = 0; c < kk; ++c)
                gx[size_t((bc * H + oh * kk + a) * W + ow * kk + c)] += gv;
          }
    }});
  }
  return out;
}

Tensor upsample_nearest2d(const Tensor& x, int factor) {
  MSLC_CHECK(x.ndim() == 4 && factor >= 1, "upsample_nearest2d expects 4D");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OH = H * factor, OW = W * factor;
  std::vector<int64_t> map(size_t(B * C * OH * OW));
  int64_t i = 0;
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow)
        map[size_t(i++)] = (bc * H + oh / factor) * W + ow / factor;
  return map_op(x, {int(B), int(C), int(OH), int(OW)}, std::move(map),
                "upsample_nearest2d");
}

Tensor pad2d_symmetric(const Tensor& x, int pad) {
  MSLC_CHECK(x.ndim() == 4 && pad >= 0, "pad2d_symmetric expects 4D input");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto fold = [](int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
    }
    return i;
  };
  int64_t OH = H + 2 * pad, OW = W + 2 * pad;
  std::vector<int64_t> map(size_t(B * C * OH * OW));
  int64_t i = 0;
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t oh = 0; oh < OH; ++oh) {
      int64_t ih = fold(oh - pad, H);
      for (int64_t ow = 0; ow < OW; ++ow)
        map[size_t(i++)] = (bc * H + ih) * W + fold(ow - pad, W);
    }
  return map_op(x, {int(B), int(C), int(OH), int(OW)}, std::move(map),
                "pad2d_symmetric");
}

Tensor window_partition(const Tensor& x, int P) {
  MSLC_CHECK(x.ndim() == 4, "window_partition expects 4D");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  MSLC_CHECK(P > 0 && H % P == 0 && W % P == 0,
             "window size " << P << " does not divide " << H << "x" << W);
  int64_t nh = H / P, nw = W / P;
  std::vector<int64_t> map(size_t(B * nh * nw * C * P * P));
  int64_t i = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t wy = 0; wy < nh; ++wy)
      for (int64_t wx = 0; wx < nw; ++wx)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t ph = 0; ph < P; ++ph)
            for (int64_t pw = 0; pw < P; ++pw)
              map[size_t(i++)] =
                  ((b * C + c) * H + wy * P + ph) * W + wx * P + pw;
  return map_op(x, {int(B * nh * nw), int(C), P, P}, std::move(map),
                "window_partition");
}

Tensor window_merge(const Tensor& x, int P, int H, int W) {
  MSLC_CHECK(x.ndim() == 4 && x.dim(2) == P && x.dim(3) == P,
             "window_merge shape mismatch");
  MSLC_CHECK(H % P == 0 && W % P == 0, "window_merge target not divisible");
  int64_t nh = H / P, nw = W / P;
  int64_t nwin = nh * nw;
  MSLC_CHECK(x.dim(0) % nwin == 0, "window count mismatch");
  int64_t B = x.dim(0) / nwin;
  int64_t C = x.dim(1);
  std::vector<int64_t> map(size_t(B * C * H * W));
  int64_t i = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          map[size_t(i++)] =
              (((b * nwin + (h / P) * nw + w / P) * C + c) * P + h % P) * P + w % P;
  return map_op(x, {int(B), int(C), H, W}, std::move(map), "window_merge");
}

}  // namespace mslc
