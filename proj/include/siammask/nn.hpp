#pragma once

// Minimal reverse-mode automatic differentiation over CHW tensors of doubles.
// Every op builds a backward closure only when gradients are enabled and at
// least one input requires them, so inference under NoGradGuard is graph-free.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace siammask::nn {

// Storage starts on a cache line so vectorized reductions split the same way on every run.
template <class T>
struct CacheAligned {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  CacheAligned() = default;
  template <class U>
  CacheAligned(const CacheAligned<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t n) { ::operator delete(p, n * sizeof(T), alignment); }
  friend bool operator==(const CacheAligned&, const CacheAligned&) { return true; }
};

using Buffer = std::vector<double, CacheAligned<double>>;

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  Buffer data;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double* channel(int ch) { return data.data() + static_cast<std::size_t>(ch) * h * w; }
  const double* channel(int ch) const { return data.data() + static_cast<std::size_t>(ch) * h * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading; not tracked.
  Tensor& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Gradient accumulated by backward(); zero-filled when first touched.
  Tensor& grad();
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Back-propagates from a single-element tensor.
void backward(const Var& scalar);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

/// weight: (out_channels, in_channels, k*k); bias: (out_channels, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt = {});
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var max_pool(const Var& x, int kernel, int stride, int pad);
Var crop(const Var& x, int y0, int x0, int height, int width);
/// Half-pixel-centre bilinear resampling.
Var resize_bilinear(const Var& x, int height, int width);
/// Per-channel valid cross-correlation of `search` with `kernel`.
Var depthwise_xcorr(const Var& search, const Var& kernel);
/// Picks spatial cells (row-major index y*w+x) into a (C, 1, P) tensor.
Var gather_cells(const Var& x, std::span<const int> cells);
Var reshape(const Var& x, int channels, int height, int width);
/// Sum of all elements as a (1, 1, 1) tensor.
Var sum(const Var& x);

/// sum_i weight_i * log(1 + exp(-label_i * logit_i)); labels are +-1.
Var logistic_loss(const Var& logits, const Tensor& labels, const Tensor& weights);
/// Pairwise softmax cross-entropy. logits: (2k, H, W) with channel 2i background and
/// 2i+1 foreground of anchor i; labels: (k, H, W) in {+1, -1}. Returns
/// -weight * sum [y log p + (1 - y) log(1 - p)] with p clamped to [clamp, 1 - clamp].
Var softmax_pair_loss(const Var& logits, const Tensor& labels, double weight, double clamp);
/// sum_i weight_i * smooth_l1(target_i - pred_i, beta).
Var smooth_l1_loss(const Var& pred, const Tensor& target, const Tensor& weights, double beta);

/// Foreground probability for each anchor of a (2k, H, W) score map, as (k, H, W).
Tensor pair_softmax(const Tensor& logits);
Tensor sigmoid(const Tensor& logits);

}  // namespace siammask::nn
