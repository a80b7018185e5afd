#pragma once

// Dense tensor arithmetic with reverse-mode differentiation over the fixed
// operation set the codec needs. Values carry float32 semantics: every
// forward op rounds its result to float precision unless shadow mode is on,
// in which case the full double pipeline runs (used by the gradient oracle).
// All ops use a single fixed reduction order, so outputs are bit-identical
// across runs.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mslc/common.hpp"

namespace mslc {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> v;     // row-major values, float32-rounded unless shadow
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first backward touches this node
};

using DataPtr = std::shared_ptr<TensorData>;
using GradMap = std::unordered_map<TensorData*, std::vector<double>>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor arange(Shape shape);  // 0,1,2,... row-major

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int dim(int i) const { return d_->shape[size_t(i)]; }
  int ndim() const { return int(d_->shape.size()); }
  int64_t numel() const { return int64_t(d_->v.size()); }

  std::vector<double>& values() { return d_->v; }
  const std::vector<double>& values() const { return d_->v; }
  double item() const;  // scalar tensors only

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool rg);
  const std::vector<double>& grad() const;  // zeros if never populated
  std::vector<double>& grad_mut();
  void zero_grad();

  DataPtr ptr() const { return d_; }
  TensorData* raw() const { return d_.get(); }

 private:
  DataPtr d_;
};

// ---------------------------------------------------------------------------
// Tape

struct TapeEntry {
  std::vector<DataPtr> inputs;
  DataPtr output;
  std::function<void(GradMap&)> pull;  // adds d(loss)/d(input) into the map
};

class Tape {
 public:
  static Tape& get();  // one tape per thread
  void push(TapeEntry e) { entries.push_back(std::move(e)); }
  void clear() { entries.clear(); }
  size_t size() const { return entries.size(); }
  bool recording() const { return record_enabled; }

  std::vector<TapeEntry> entries;
  bool record_enabled = true;
};

// Disables tape recording in scope (eval mode).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// Disables float32 rounding in scope; the whole pipeline runs in double.
struct ShadowFp64Guard {
  ShadowFp64Guard();
  ~ShadowFp64Guard();
  bool prev;
};
bool shadow_fp64_active();

// Reverse-mode sweep from a scalar loss. Grad buffers accumulate additively:
// two calls without zero_grad double every gradient.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Elementwise (broadcasting follows trailing-dimension alignment)

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

Tensor relu(const Tensor& x);     // subgradient at 0 is 0
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);      // throws on non-positive input
Tensor abs(const Tensor& x);
Tensor erf(const Tensor& x);
Tensor softplus(const Tensor& x);

// round half away from zero; backward is identity (straight-through)
Tensor ste_round(const Tensor& x);
Tensor detach(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions / shape ops

Tensor softmax(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim);
Tensor mean(const Tensor& x, int axis, bool keepdim);
Tensor reduce_max(const Tensor& x, int axis, bool keepdim);  // grad to first argmax

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& xs, int axis);

// ---------------------------------------------------------------------------
// Spatial ops on [B, C, H, W]

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding, int groups = 1);
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride, int padding, int output_padding);
Tensor pad2d_symmetric(const Tensor& x, int pad);  // mirror-with-edge padding
Tensor avg_pool2d(const Tensor& x, int k);            // non-overlapping, stride k
Tensor upsample_nearest2d(const Tensor& x, int factor);

// [B, C, H, W] -> [B*nw, C, P, P], windows row-major; merge is the inverse.
Tensor window_partition(const Tensor& x, int P);
Tensor window_merge(const Tensor& x, int P, int H, int W);

// ---------------------------------------------------------------------------
// matmul: 2D x 2D, 3D x 3D (batched), 3D x 2D (shared right operand)

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// ---------------------------------------------------------------------------
// Construction helpers

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                    bool requires_grad = false);

}  // namespace mslc
