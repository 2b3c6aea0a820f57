#include "siammask/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "siammask/errors.hpp"

namespace siammask::nn {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<Mat>;
using ConstMapMat = Eigen::Map<const Mat>;

thread_local bool g_grad_enabled = true;

Tensor& grad_of(Node& n) {
  if (n.grad.empty()) n.grad = Tensor(n.value.c, n.value.h, n.value.w);
  return n.grad;
}

bool needs_grad(std::initializer_list<const Var*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Var* v : inputs) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

Var make_result(Tensor value, bool track, std::vector<std::shared_ptr<Node>> inputs,
                std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
  }
  return Var::from_node(std::move(node));
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct ConvGeometry {
  int cin, cout, k, stride, pad, dilation, h, w, ho, wo;
};

void im2col(const Tensor& x, const ConvGeometry& g, double* cols) {
  const int n_out = g.ho * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    const double* src = x.channel(ci);
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * n_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dilation;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, Tensor& dx) {
  const int n_out = g.ho * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    double* dst = dx.channel(ci);
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * n_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dilation;
          if (iy < 0 || iy >= g.h) continue;
          double* drow = dst + static_cast<std::size_t>(iy) * g.w;
          const double* srow = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dilation;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

struct LinearTap {
  int i0, i1;
  double w0, w1;
};

std::vector<LinearTap> bilinear_taps(int in, int out) {
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = src - i0;
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Tensor::Tensor(int channels, int height, int width, double fill)
    : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, fill) {}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor& Var::grad() { return grad_of(*node_); }

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  require(root.defined() && root.value().size() == 1, "backward: root must be a single-element tensor");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad_of(*root.node()).data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(W.w))));
  require(k * k == W.w, "conv2d: kernel must be square");
  require(W.h == X.c, "conv2d: weight expects " + std::to_string(W.h) + " input channels, got " + X.shape_str());
  ConvGeometry g{X.c, W.c, k, opt.stride, opt.pad, opt.dilation, X.h, X.w, 0, 0};
  g.ho = (X.h + 2 * opt.pad - opt.dilation * (k - 1) - 1) / opt.stride + 1;
  g.wo = (X.w + 2 * opt.pad - opt.dilation * (k - 1) - 1) / opt.stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: input " + X.shape_str() + " too small for kernel");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(g.cout), "conv2d: bias size mismatch");

  const bool pointwise = k == 1 && opt.stride == 1 && opt.pad == 0;
  const int n_out = g.ho * g.wo;
  const int kdim = g.cin * k * k;

  Tensor cols;
  const double* cols_ptr = X.data.data();
  if (!pointwise) {
    cols = Tensor(1, kdim, n_out);
    im2col(X, g, cols.data.data());
    cols_ptr = cols.data.data();
  }

  Tensor out(g.cout, g.ho, g.wo);
  ConstMapMat wm(W.data.data(), g.cout, kdim);
  ConstMapMat cm(cols_ptr, kdim, n_out);
  MapMat om(out.data.data(), g.cout, n_out);
  om.noalias() = wm * cm;
  if (has_bias) {
    const auto& b = bias.value().data;
    for (int o = 0; o < g.cout; ++o) om.row(o).array() += b[o];
  }

  const bool track = needs_grad({&x, &weight, &bias});
  std::vector<std::shared_ptr<Node>> inputs{x.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  return make_result(
      std::move(out), track, std::move(inputs),
      [g, pointwise, has_bias, kdim, n_out, cols = std::move(cols)](Node& self) {
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        ConstMapMat gm(self.grad.data.data(), g.cout, n_out);
        const double* cptr = pointwise ? xn.value.data.data() : cols.data.data();
        ConstMapMat cm(cptr, kdim, n_out);
        if (wn.requires_grad) {
          MapMat dw(grad_of(wn).data.data(), g.cout, kdim);
          dw.noalias() += gm * cm.transpose();
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          auto& db = grad_of(*self.inputs[2]).data;
          for (int o = 0; o < g.cout; ++o) db[o] += gm.row(o).sum();
        }
        if (xn.requires_grad) {
          ConstMapMat wm(wn.value.data.data(), g.cout, kdim);
          if (pointwise) {
            MapMat dx(grad_of(xn).data.data(), kdim, n_out);
            dx.noalias() += wm.transpose() * gm;
          } else {
            Mat dcols = wm.transpose() * gm;
            col2im(dcols.data(), g, grad_of(xn));
          }
        }
      });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), needs_grad({&x}), {x.node()}, [](Node& self) {
    Node& xn = *self.inputs[0];
    auto& dx = grad_of(xn).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xn.value.data[i] > 0.0) dx[i] += self.grad.data[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: " + a.value().shape_str() + " vs " + b.value().shape_str());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return make_result(std::move(out), needs_grad({&a, &b}), {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& d = grad_of(*in).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad.data[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.data) v *= factor;
  return make_result(std::move(out), needs_grad({&x}), {x.node()}, [factor](Node& self) {
    auto& d = grad_of(*self.inputs[0]).data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * self.grad.data[i];
  });
}

Var max_pool(const Var& x, int kernel, int stride, int pad) {
  const Tensor& X = x.value();
  const int ho = (X.h + 2 * pad - kernel) / stride + 1;
  const int wo = (X.w + 2 * pad - kernel) / stride + 1;
  require(ho > 0 && wo > 0, "max_pool: input too small");
  Tensor out(X.c, ho, wo);
  std::vector<int> arg(out.size(), -1);
  for (int ch = 0; ch < X.c; ++ch) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= X.h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= X.w) continue;
            const double v = X.at(ch, iy, ix);
            if (v > best) {
              best = v;
              best_idx = (ch * X.h + iy) * X.w + ix;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * ho + oy) * wo + ox;
        out.data[o] = best;
        arg[o] = best_idx;
      }
    }
  }
  return make_result(std::move(out), needs_grad({&x}), {x.node()}, [arg = std::move(arg)](Node& self) {
    auto& d = grad_of(*self.inputs[0]).data;
    for (std::size_t o = 0; o < arg.size(); ++o) {
      if (arg[o] >= 0) d[arg[o]] += self.grad.data[o];
    }
  });
}

Var crop(const Var& x, int y0, int x0, int height, int width) {
  const Tensor& X = x.value();
  require(y0 >= 0 && x0 >= 0 && y0 + height <= X.h && x0 + width <= X.w,
          "crop: window out of bounds for " + X.shape_str());
  Tensor out(X.c, height, width);
  for (int ch = 0; ch < X.c; ++ch) {
    for (int y = 0; y < height; ++y) {
      const double* src = &X.data[(static_cast<std::size_t>(ch) * X.h + y0 + y) * X.w + x0];
      std::copy(src, src + width, &out.at(ch, y, 0));
    }
  }
  return make_result(std::move(out), needs_grad({&x}), {x.node()}, [y0, x0](Node& self) {
    Tensor& d = grad_of(*self.inputs[0]);
    const Tensor& g = self.grad;
    for (int ch = 0; ch < g.c; ++ch) {
      for (int y = 0; y < g.h; ++y) {
        for (int xx = 0; xx < g.w; ++xx) d.at(ch, y0 + y, x0 + xx) += g.at(ch, y, xx);
      }
    }
  });
}

Var resize_bilinear(const Var& x, int height, int width) {
  const Tensor& X = x.value();
  auto ty = bilinear_taps(X.h, height);
  auto tx = bilinear_taps(X.w, width);
  Tensor out(X.c, height, width);
  for (int ch = 0; ch < X.c; ++ch) {
    for (int y = 0; y < height; ++y) {
      const LinearTap& a = ty[y];
      for (int xx = 0; xx < width; ++xx) {
        const LinearTap& b = tx[xx];
        out.at(ch, y, xx) = a.w0 * (b.w0 * X.at(ch, a.i0, b.i0) + b.w1 * X.at(ch, a.i0, b.i1)) +
                            a.w1 * (b.w0 * X.at(ch, a.i1, b.i0) + b.w1 * X.at(ch, a.i1, b.i1));
      }
    }
  }
  return make_result(std::move(out), needs_grad({&x}), {x.node()},
                     [ty = std::move(ty), tx = std::move(tx)](Node& self) {
                       Tensor& d = grad_of(*self.inputs[0]);
                       const Tensor& g = self.grad;
                       for (int ch = 0; ch < g.c; ++ch) {
                         for (int y = 0; y < g.h; ++y) {
                           const LinearTap& a = ty[y];
                           for (int xx = 0; xx < g.w; ++xx) {
                             const LinearTap& b = tx[xx];
                             const double v = g.at(ch, y, xx);
                             d.at(ch, a.i0, b.i0) += a.w0 * b.w0 * v;
                             d.at(ch, a.i0, b.i1) += a.w0 * b.w1 * v;
                             d.at(ch, a.i1, b.i0) += a.w1 * b.w0 * v;
                             d.at(ch, a.i1, b.i1) += a.w1 * b.w1 * v;
                           }
                         }
                       }
                     });
}

Var depthwise_xcorr(const Var& search, const Var& kernel) {
  const Tensor& X = search.value();
  const Tensor& Z = kernel.value();
  require(X.c == Z.c, "depthwise_xcorr: channel mismatch " + X.shape_str() + " vs " + Z.shape_str());
  require(Z.h <= X.h && Z.w <= X.w, "depthwise_xcorr: kernel larger than search map");
  const int ho = X.h - Z.h + 1, wo = X.w - Z.w + 1;
  Tensor out(X.c, ho, wo);
  for (int ch = 0; ch < X.c; ++ch) {
    for (int u = 0; u < Z.h; ++u) {
      for (int v = 0; v < Z.w; ++v) {
        const double kv = Z.at(ch, u, v);
        if (kv == 0.0) continue;
        for (int i = 0; i < ho; ++i) {
          const double* src = &X.data[(static_cast<std::size_t>(ch) * X.h + i + u) * X.w + v];
          double* dst = &out.at(ch, i, 0);
          for (int j = 0; j < wo; ++j) dst[j] += kv * src[j];
        }
      }
    }
  }
  return make_result(std::move(out), needs_grad({&search, &kernel}), {search.node(), kernel.node()},
                     [](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& zn = *self.inputs[1];
                       const Tensor& X = xn.value;
                       const Tensor& Z = zn.value;
                       const Tensor& G = self.grad;
                       for (int ch = 0; ch < X.c; ++ch) {
                         for (int u = 0; u < Z.h; ++u) {
                           for (int v = 0; v < Z.w; ++v) {
                             double acc = 0.0;
                             const double kv = Z.at(ch, u, v);
                             for (int i = 0; i < G.h; ++i) {
                               const std::size_t xrow = (static_cast<std::size_t>(ch) * X.h + i + u) * X.w + v;
                               const double* g = &G.data[(static_cast<std::size_t>(ch) * G.h + i) * G.w];
                               if (xn.requires_grad) {
                                 double* dx = &grad_of(xn).data[xrow];
                                 for (int j = 0; j < G.w; ++j) dx[j] += kv * g[j];
                               }
                               const double* xs = &X.data[xrow];
                               for (int j = 0; j < G.w; ++j) acc += g[j] * xs[j];
                             }
                             if (zn.requires_grad) grad_of(zn).at(ch, u, v) += acc;
                           }
                         }
                       }
                     });
}

Var gather_cells(const Var& x, std::span<const int> cells) {
  const Tensor& X = x.value();
  const int hw = X.h * X.w;
  std::vector<int> idx(cells.begin(), cells.end());
  for (int c : idx) require(c >= 0 && c < hw, "gather_cells: cell index out of range");
  Tensor out(X.c, 1, static_cast<int>(idx.size()));
  for (int ch = 0; ch < X.c; ++ch) {
    const double* src = X.channel(ch);
    for (std::size_t p = 0; p < idx.size(); ++p) out.at(ch, 0, static_cast<int>(p)) = src[idx[p]];
  }
  return make_result(std::move(out), needs_grad({&x}), {x.node()}, [idx = std::move(idx)](Node& self) {
    Tensor& d = grad_of(*self.inputs[0]);
    for (int ch = 0; ch < d.c; ++ch) {
      double* dst = d.channel(ch);
      for (std::size_t p = 0; p < idx.size(); ++p) dst[idx[p]] += self.grad.at(ch, 0, static_cast<int>(p));
    }
  });
}

Var reshape(const Var& x, int channels, int height, int width) {
  require(static_cast<std::size_t>(channels) * height * width == x.value().size(), "reshape: element count mismatch");
  Tensor out = x.value();
  out.c = channels;
  out.h = height;
  out.w = width;
  return make_result(std::move(out), needs_grad({&x}), {x.node()}, [](Node& self) {
    auto& d = grad_of(*self.inputs[0]).data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad.data[i];
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data) total += v;
  return make_result(Tensor(1, 1, 1, total), needs_grad({&x}), {x.node()}, [](Node& self) {
    auto& d = grad_of(*self.inputs[0]).data;
    for (auto& v : d) v += self.grad.data[0];
  });
}

Var logistic_loss(const Var& logits, const Tensor& labels, const Tensor& weights) {
  const Tensor& L = logits.value();
  require(L.size() == labels.size() && L.size() == weights.size(), "logistic_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < L.size(); ++i) {
    if (weights.data[i] != 0.0) total += weights.data[i] * softplus(-labels.data[i] * L.data[i]);
  }
  return make_result(Tensor(1, 1, 1, total), needs_grad({&logits}), {logits.node()},
                     [labels, weights](Node& self) {
                       Node& ln = *self.inputs[0];
                       auto& d = grad_of(ln).data;
                       const double g = self.grad.data[0];
                       for (std::size_t i = 0; i < d.size(); ++i) {
                         if (weights.data[i] == 0.0) continue;
                         const double y = labels.data[i];
                         d[i] += g * weights.data[i] * (-y) * sigmoid_scalar(-y * ln.value.data[i]);
                       }
                     });
}

Var softmax_pair_loss(const Var& logits, const Tensor& labels, double weight, double clamp) {
  const Tensor& L = logits.value();
  require(L.c == 2 * labels.c && L.h == labels.h && L.w == labels.w, "softmax_pair_loss: shape mismatch");
  const int hw = L.h * L.w;
  double total = 0.0;
  Tensor dfg(labels.c, labels.h, labels.w);  // d loss / d (fg - bg) logit difference
  for (int a = 0; a < labels.c; ++a) {
    for (int i = 0; i < hw; ++i) {
      const double bg = L.channel(2 * a)[i];
      const double fg = L.channel(2 * a + 1)[i];
      const double p = sigmoid_scalar(fg - bg);
      const double y = labels.channel(a)[i] > 0.0 ? 1.0 : 0.0;
      const double pc = std::clamp(p, clamp, 1.0 - clamp);
      total -= weight * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
      const bool clamped = p < clamp || p > 1.0 - clamp;
      dfg.channel(a)[i] = clamped ? 0.0 : weight * (p - y);
    }
  }
  return make_result(Tensor(1, 1, 1, total), needs_grad({&logits}), {logits.node()},
                     [dfg = std::move(dfg), hw](Node& self) {
                       Tensor& d = grad_of(*self.inputs[0]);
                       const double g = self.grad.data[0];
                       for (int a = 0; a < dfg.c; ++a) {
                         for (int i = 0; i < hw; ++i) {
                           const double v = g * dfg.channel(a)[i];
                           d.channel(2 * a + 1)[i] += v;
                           d.channel(2 * a)[i] -= v;
                         }
                       }
                     });
}

Var smooth_l1_loss(const Var& pred, const Tensor& target, const Tensor& weights, double beta) {
  const Tensor& P = pred.value();
  require(P.size() == target.size() && P.size() == weights.size(), "smooth_l1_loss: size mismatch");
  const double b2 = beta * beta;
  double total = 0.0;
  Tensor dpred(P.c, P.h, P.w);
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (weights.data[i] == 0.0) continue;
    const double x = target.data[i] - P.data[i];
    if (std::abs(x) < 1.0 / b2) {
      total += weights.data[i] * 0.5 * b2 * x * x;
      dpred.data[i] = -weights.data[i] * b2 * x;
    } else {
      total += weights.data[i] * (std::abs(x) - 0.5 / b2);
      dpred.data[i] = -weights.data[i] * (x > 0.0 ? 1.0 : -1.0);
    }
  }
  return make_result(Tensor(1, 1, 1, total), needs_grad({&pred}), {pred.node()},
                     [dpred = std::move(dpred)](Node& self) {
                       auto& d = grad_of(*self.inputs[0]).data;
                       const double g = self.grad.data[0];
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * dpred.data[i];
                     });
}

Tensor pair_softmax(const Tensor& logits) {
  require(logits.c % 2 == 0, "pair_softmax: channel count must be even");
  Tensor p(logits.c / 2, logits.h, logits.w);
  const int hw = logits.h * logits.w;
  for (int a = 0; a < p.c; ++a) {
    for (int i = 0; i < hw; ++i) p.channel(a)[i] = sigmoid_scalar(logits.channel(2 * a + 1)[i] - logits.channel(2 * a)[i]);
  }
  return p;
}

Tensor sigmoid(const Tensor& logits) {
  Tensor out = logits;
  for (auto& v : out.data) v = sigmoid_scalar(v);
  return out;
}

}  // namespace siammask::nn
