#include "rvsl/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rvsl/errors.hpp"
#include "rvsl/parallel.hpp"

namespace rvsl::ad {
namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

[[noreturn]] void shape_fail(Op op, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": " + what);
}

// Geometry of a strided convolution window sweep: an image of in_h x in_w is
// scanned by a k x k kernel producing out_h x out_w positions.
struct ConvGeom {
  std::size_t channels, in_h, in_w, k, stride, pad, out_h, out_w;
};

// cols is (channels*k*k) x ld row-major; this sample writes columns
// [col0, col0 + out_h*out_w).
// Output columns [lo, hi) whose input column ox*stride + kx - pad is inside the image.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeom& g, std::size_t kx) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad), s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - pad;
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(g.in_w) - off + s - 1) / s;
  hi = std::clamp<std::ptrdiff_t>(hi, 0, static_cast<std::ptrdiff_t>(g.out_w));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void im2col(const double* img, const ConvGeom& g, double* cols, std::size_t ld,
            std::size_t col0) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * ld + col0;
        const auto [lo, hi] = valid_cols(g, kx);
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          std::fill(dst, dst + lo, 0.0);
          if (lo < hi) {
            const double* src = img + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo * g.stride) + x0);
            if (g.stride == 1) {
              std::copy(src, src + (hi - lo), dst + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.stride];
            }
          }
          std::fill(dst + hi, dst + g.out_w, 0.0);
        }
      }
    }
  }
}

// Per-thread im2col buffer, reused across calls.
double* scratch(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// Adjoint of im2col: accumulates columns back into the image.
void col2im(const double* cols, const ConvGeom& g, double* img, std::size_t ld,
            std::size_t col0) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * ld + col0;
        const auto [lo, hi] = valid_cols(g, kx);
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          if (lo >= hi) continue;
          double* dst = img + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                        static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo * g.stride) + x0);
          const double* src = row + oy * g.out_w + lo;
          if (g.stride == 1) {
            for (std::size_t i = 0; i < hi - lo; ++i) dst[i] += src[i];
          } else {
            for (std::size_t i = 0; i < hi - lo; ++i) dst[i * g.stride] += src[i];
          }
        }
      }
    }
  }
}

// outer x len x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.raw();
  const double* s = src.raw();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFFu;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof u);
  return u;
}

}  // namespace

void Parameter::zero_grad() {
  if (grad.empty() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  } else {
    grad.fill(0.0);
  }
}

std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::input: return "input";
    case Op::conv2d: return "conv2d";
    case Op::conv2d_transpose: return "conv2d_transpose";
    case Op::batch_norm: return "batch_norm";
    case Op::relu: return "relu";
    case Op::global_avg_pool: return "global_avg_pool";
    case Op::dense: return "dense";
    case Op::concat_channels: return "concat_channels";
    case Op::concat_batch: return "concat_batch";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::mul_scalar: return "mul_scalar";
    case Op::add_scalar: return "add_scalar";
    case Op::abs: return "abs";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::l2_normalize: return "l2_normalize";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::sigmoid: return "sigmoid";
    case Op::min_reduce: return "min_reduce";
    case Op::clamp: return "clamp";
    case Op::clamp_stopgrad: return "clamp_stopgrad";
    case Op::slice: return "slice";
    case Op::gather: return "gather";
    case Op::pairwise_distance: return "pairwise_distance";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->node(id_).value; }
const Shape& Var::shape() const { return graph_->node(id_).value.shape(); }

Var Graph::input(Tensor value, bool requires_grad, std::string tag) {
  if (value.empty()) throw ShapeError("input: empty tensor");
  Node n;
  n.id = nodes_.size();
  n.kind = Op::input;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.tag = std::move(tag);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p, bool trainable) {
  if (auto it = param_leaf_.find(&p); it != param_leaf_.end()) {
    return Var(this, it->second);
  }
  Var v = input(p.value, trainable && p.trainable, p.name);
  nodes_[v.id()].param = &p;
  param_leaf_.emplace(&p, v.id());
  return v;
}

const Tensor& Graph::grad(Var v) const { return nodes_.at(v.id()).grad; }

std::vector<Parameter*> Graph::bound_parameters() const {
  std::vector<Parameter*> out;
  for (const Node& n : nodes_) {
    if (n.param != nullptr && n.requires_grad) out.push_back(n.param);
  }
  return out;
}

std::size_t Graph::first_non_finite() const {
  for (const Node& n : nodes_) {
    if (!n.value.all_finite()) return n.id;
  }
  return nodes_.size();
}

Var Graph::build_node(Op kind, const std::vector<Var>& inputs, Attrs attrs) {
  if (kind == Op::input) throw ShapeError("build_node: use Graph::input for leaves");
  Node n;
  n.id = nodes_.size();
  n.kind = kind;
  n.attrs = std::move(attrs);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw ShapeError(std::string(op_name(kind)) + ": input from another graph");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (kind == Op::clamp_stopgrad) n.requires_grad = false;
  forward(n);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Graph::forward(Node& n) {
  const Op op = n.kind;
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs.at(i)].value; };
  auto arity = [&](std::size_t k) {
    if (n.inputs.size() != k) {
      shape_fail(op, "expects " + std::to_string(k) + " inputs, got " +
                         std::to_string(n.inputs.size()));
    }
  };
  const Attrs& a = n.attrs;

  switch (op) {
    case Op::input:
      break;

    case Op::conv2d: {
      arity(3);
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 4) shape_fail(op, "input must be NxCxHxW, got " + shape_str(x.shape()));
      if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
        shape_fail(op, "weight must be OxCxkxk, got " + shape_str(w.shape()));
      }
      if (w.dim(1) != x.dim(1)) {
        shape_fail(op, "weight in-channels " + std::to_string(w.dim(1)) + " vs input channels " +
                           std::to_string(x.dim(1)));
      }
      if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
        shape_fail(op, "bias must be [" + std::to_string(w.dim(0)) + "], got " + shape_str(b.shape()));
      }
      if (a.stride == 0) shape_fail(op, "stride must be positive");
      const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t O = w.dim(0), k = w.dim(2);
      if (H + 2 * a.padding < k || W + 2 * a.padding < k) {
        shape_fail(op, "kernel " + std::to_string(k) + " larger than padded input " + shape_str(x.shape()));
      }
      const std::size_t Ho = (H + 2 * a.padding - k) / a.stride + 1;
      const std::size_t Wo = (W + 2 * a.padding - k) / a.stride + 1;
      const ConvGeom g{C, H, W, k, a.stride, a.padding, Ho, Wo};
      const std::size_t K = C * k * k, P = Ho * Wo;
      Tensor out = Tensor::uninitialized({N, O, Ho, Wo});
      parallel_for(N, [&](std::size_t s) {
        double* cols = scratch(K * P);
        im2col(x.raw() + s * C * H * W, g, cols, P, 0);
        MapRM y(out.raw() + s * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
        y.noalias() = CMapRM(w.raw(), O, K) * CMapRM(cols, K, P);
        for (std::size_t o = 0; o < O; ++o) y.row(static_cast<Eigen::Index>(o)).array() += b[o];
      });
      n.value = std::move(out);
      break;
    }

    case Op::conv2d_transpose: {
      arity(3);
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 4) shape_fail(op, "input must be NxCxHxW, got " + shape_str(x.shape()));
      if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(0) != x.dim(1)) {
        shape_fail(op, "weight must be Cin x Cout x k x k with Cin=" + std::to_string(x.dim(1)) +
                           ", got " + shape_str(w.shape()));
      }
      if (b.rank() != 1 || b.dim(0) != w.dim(1)) {
        shape_fail(op, "bias must be [" + std::to_string(w.dim(1)) + "], got " + shape_str(b.shape()));
      }
      if (a.stride == 0) shape_fail(op, "stride must be positive");
      const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t Cout = w.dim(1), k = w.dim(2);
      const std::ptrdiff_t ho = static_cast<std::ptrdiff_t>((H - 1) * a.stride + k) -
                                2 * static_cast<std::ptrdiff_t>(a.padding);
      const std::ptrdiff_t wo = static_cast<std::ptrdiff_t>((W - 1) * a.stride + k) -
                                2 * static_cast<std::ptrdiff_t>(a.padding);
      if (ho <= 0 || wo <= 0) shape_fail(op, "non-positive output size");
      const std::size_t Ho = static_cast<std::size_t>(ho), Wo = static_cast<std::size_t>(wo);
      const std::size_t HW = H * W, K = Cout * k * k;
      const ConvGeom g{Cout, Ho, Wo, k, a.stride, a.padding, H, W};
      Tensor out({N, Cout, Ho, Wo}, 0.0);
      parallel_for(N, [&](std::size_t s) {
        double* cols = scratch(K * HW);
        MapRM(cols, K, HW).noalias() = CMapRM(w.raw(), Cin, K).transpose() * CMapRM(x.raw() + s * Cin * HW, Cin, HW);
        double* img = out.raw() + s * Cout * Ho * Wo;
        col2im(cols, g, img, HW, 0);
        for (std::size_t c = 0; c < Cout; ++c) {
          double* ch = img + c * Ho * Wo;
          for (std::size_t p = 0; p < Ho * Wo; ++p) ch[p] += b[c];
        }
      });
      n.value = std::move(out);
      break;
    }

    case Op::batch_norm: {
      arity(3);
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& beta = in(2);
      if (x.rank() != 2 && x.rank() != 4) shape_fail(op, "input must be NxC or NxCxHxW, got " + shape_str(x.shape()));
      const std::size_t N = x.dim(0), C = x.dim(1), S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
      if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        shape_fail(op, "gamma/beta must be [" + std::to_string(C) + "]");
      }
      if (a.epsilon <= 0.0) shape_fail(op, "epsilon must be positive");
      const bool have_stats = a.stats.running_mean != nullptr && a.stats.running_var != nullptr;
      if (have_stats && (a.stats.running_mean->value.shape() != Shape{C} ||
                         a.stats.running_var->value.shape() != Shape{C})) {
        shape_fail(op, "running statistics must be [" + std::to_string(C) + "]");
      }
      if (!a.training && !have_stats) shape_fail(op, "eval mode requires running statistics");
      const double m = static_cast<double>(N * S);
      Tensor xhat = Tensor::uninitialized(x.shape());
      Tensor inv_std({C});
      Tensor out = Tensor::uninitialized(x.shape());
      for (std::size_t c = 0; c < C; ++c) {
        double mu, var;
        if (a.training) {
          double acc = 0.0;
          for (std::size_t s = 0; s < N; ++s) {
            const double* p = x.raw() + (s * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) acc += p[i];
          }
          mu = acc / m;
          double sq = 0.0;
          for (std::size_t s = 0; s < N; ++s) {
            const double* p = x.raw() + (s * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) sq += (p[i] - mu) * (p[i] - mu);
          }
          var = sq / m;
          if (have_stats) {
            double& rm = a.stats.running_mean->value[c];
            double& rv = a.stats.running_var->value[c];
            const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
            rm = a.momentum * rm + (1.0 - a.momentum) * mu;
            rv = a.momentum * rv + (1.0 - a.momentum) * unbiased;
          }
        } else {
          mu = a.stats.running_mean->value[c];
          var = a.stats.running_var->value[c];
        }
        const double inv = 1.0 / std::sqrt(var + a.epsilon);
        inv_std[c] = inv;
        for (std::size_t s = 0; s < N; ++s) {
          const std::size_t off = (s * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            const double h = (x[off + i] - mu) * inv;
            xhat[off + i] = h;
            out[off + i] = gamma[c] * h + beta[c];
          }
        }
      }
      n.cache = std::move(xhat);
      n.cache2 = std::move(inv_std);
      n.value = std::move(out);
      break;
    }

    case Op::relu: {
      arity(1);
      Tensor out = in(0);
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      n.value = std::move(out);
      break;
    }

    case Op::global_avg_pool: {
      arity(1);
      const Tensor& x = in(0);
      if (x.rank() != 4) shape_fail(op, "input must be NxCxHxW, got " + shape_str(x.shape()));
      const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
      Tensor out({N, C});
      for (std::size_t i = 0; i < N * C; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < S; ++p) acc += x[i * S + p];
        out[i] = acc / static_cast<double>(S);
      }
      n.value = std::move(out);
      break;
    }

    case Op::dense: {
      arity(3);
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 2) shape_fail(op, "input must be NxD, got " + shape_str(x.shape()));
      if (w.rank() != 2 || w.dim(1) != x.dim(1)) {
        shape_fail(op, "weight must be Mx" + std::to_string(x.dim(1)) + ", got " + shape_str(w.shape()));
      }
      if (b.shape() != Shape{w.dim(0)}) shape_fail(op, "bias must be [" + std::to_string(w.dim(0)) + "]");
      const std::size_t N = x.dim(0), D = x.dim(1), M = w.dim(0);
      Tensor out({N, M});
      MapRM(out.raw(), N, M) = CMapRM(x.raw(), N, D) * CMapRM(w.raw(), M, D).transpose();
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < M; ++j) out[i * M + j] += b[j];
      }
      n.value = std::move(out);
      break;
    }

    case Op::concat_channels: {
      arity(2);
      const Tensor& x = in(0);
      const Tensor& y = in(1);
      if (x.rank() != 4 || y.rank() != 4 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) ||
          x.dim(3) != y.dim(3)) {
        shape_fail(op, "incompatible " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
      }
      const std::size_t N = x.dim(0), C1 = x.dim(1), C2 = y.dim(1), S = x.dim(2) * x.dim(3);
      Tensor out({N, C1 + C2, x.dim(2), x.dim(3)});
      for (std::size_t s = 0; s < N; ++s) {
        std::memcpy(out.raw() + s * (C1 + C2) * S, x.raw() + s * C1 * S, C1 * S * sizeof(double));
        std::memcpy(out.raw() + (s * (C1 + C2) + C1) * S, y.raw() + s * C2 * S, C2 * S * sizeof(double));
      }
      n.value = std::move(out);
      break;
    }

    case Op::concat_batch: {
      arity(2);
      const Tensor& x = in(0);
      const Tensor& y = in(1);
      if (x.rank() == 0 || x.rank() != y.rank() ||
          !std::equal(x.shape().begin() + 1, x.shape().end(), y.shape().begin() + 1)) {
        shape_fail(op, "incompatible " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
      }
      Shape os = x.shape();
      os[0] += y.dim(0);
      Tensor out = Tensor::uninitialized(std::move(os));
      std::copy(y.raw(), y.raw() + y.size(), std::copy(x.raw(), x.raw() + x.size(), out.raw()));
      n.value = std::move(out);
      break;
    }

    case Op::add:
    case Op::sub:
    case Op::mul: {
      arity(2);
      const Tensor& x = in(0);
      const Tensor& y = in(1);
      if (x.shape() != y.shape()) {
        shape_fail(op, "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
      }
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = op == Op::add ? x[i] + y[i] : op == Op::sub ? x[i] - y[i] : x[i] * y[i];
      }
      n.value = std::move(out);
      break;
    }

    case Op::mul_scalar:
    case Op::add_scalar: {
      arity(1);
      Tensor out = in(0);
      for (double& v : out.data()) v = op == Op::mul_scalar ? v * a.scalar : v + a.scalar;
      n.value = std::move(out);
      break;
    }

    case Op::abs:
    case Op::exp:
    case Op::log:
    case Op::sigmoid: {
      arity(1);
      Tensor out = in(0);
      for (double& v : out.data()) {
        switch (op) {
          case Op::abs: v = std::abs(v); break;
          case Op::exp: v = std::exp(v); break;
          case Op::log: v = std::log(v); break;
          default:
            v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }
      }
      n.value = std::move(out);
      break;
    }

    case Op::sum:
    case Op::mean: {
      arity(1);
      const Tensor& x = in(0);
      if (a.axis < 0) {
        double acc = x.sum();
        if (op == Op::mean) acc /= static_cast<double>(x.size());
        n.value = Tensor::scalar(acc);
      } else {
        const std::size_t axis = static_cast<std::size_t>(a.axis);
        if (axis >= x.rank()) shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
        const AxisSplit sp = split_axis(x.shape(), axis);
        Shape os = x.shape();
        os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
        Tensor out(os.empty() ? Shape{} : os, 0.0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t l = 0; l < sp.len; ++l) {
            const double* src = x.raw() + (o * sp.len + l) * sp.inner;
            double* dst = out.raw() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
          }
        }
        if (op == Op::mean) {
          for (double& v : out.data()) v /= static_cast<double>(sp.len);
        }
        n.value = std::move(out);
      }
      break;
    }

    case Op::l2_normalize: {
      arity(1);
      const Tensor& x = in(0);
      if (a.axis < 0 || static_cast<std::size_t>(a.axis) >= x.rank()) {
        shape_fail(op, "axis out of range for " + shape_str(x.shape()));
      }
      const AxisSplit sp = split_axis(x.shape(), static_cast<std::size_t>(a.axis));
      Tensor out(x.shape());
      Tensor norms({sp.outer * sp.inner});
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          double sq = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const double v = x[(o * sp.len + l) * sp.inner + i];
            sq += v * v;
          }
          const double nrm = std::sqrt(sq);
          norms[o * sp.inner + i] = nrm;
          const bool degenerate = nrm < a.epsilon;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t idx = (o * sp.len + l) * sp.inner + i;
            out[idx] = degenerate ? 0.0 : x[idx] / nrm;
          }
        }
      }
      n.cache = std::move(norms);
      n.value = std::move(out);
      break;
    }

    case Op::softmax:
    case Op::log_softmax: {
      arity(1);
      const Tensor& x = in(0);
      if (x.rank() != 2) shape_fail(op, "input must be NxC, got " + shape_str(x.shape()));
      const std::size_t N = x.dim(0), C = x.dim(1);
      Tensor out(x.shape());
      for (std::size_t r = 0; r < N; ++r) {
        const double* src = x.raw() + r * C;
        double* dst = out.raw() + r * C;
        const double mx = *std::max_element(src, src + C);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(src[c] - mx);
        const double logz = std::log(z);
        for (std::size_t c = 0; c < C; ++c) {
          dst[c] = op == Op::softmax ? std::exp(src[c] - mx) / z : src[c] - mx - logz;
        }
      }
      n.value = std::move(out);
      break;
    }

    case Op::min_reduce: {
      arity(1);
      const Tensor& x = in(0);
      if (a.min_axis == MinAxis::channel) {
        if (x.rank() < 3) shape_fail(op, "channel min needs rank >= 3, got " + shape_str(x.shape()));
        const AxisSplit sp = split_axis(x.shape(), x.rank() - 3);
        Shape os = x.shape();
        os.erase(os.end() - 3);
        Tensor out(os);
        n.argmin.assign(out.size(), 0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = o * sp.len * sp.inner + i;
            for (std::size_t l = 1; l < sp.len; ++l) {
              const std::size_t idx = (o * sp.len + l) * sp.inner + i;
              if (x[idx] < x[best]) best = idx;
            }
            out[o * sp.inner + i] = x[best];
            n.argmin[o * sp.inner + i] = best;
          }
        }
        n.value = std::move(out);
      } else {
        if (x.rank() < 2) shape_fail(op, "window min needs rank >= 2, got " + shape_str(x.shape()));
        if (a.patch == 0 || a.patch % 2 == 0) shape_fail(op, "patch must be odd and positive");
        const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
        if (a.patch > H && a.patch > W) {
          shape_fail(op, "patch " + std::to_string(a.patch) + " larger than both image dims " + shape_str(x.shape()));
        }
        const std::size_t planes = x.size() / (H * W);
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(a.patch / 2);
        Tensor out(x.shape());
        n.argmin.assign(out.size(), 0);
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const std::size_t base = pl * H * W;
          for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(H); ++i) {
            const std::size_t r0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, i - r));
            const std::size_t r1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H) - 1, i + r));
            for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(W); ++j) {
              const std::size_t c0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, j - r));
              const std::size_t c1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W) - 1, j + r));
              std::size_t best = base + r0 * W + c0;
              for (std::size_t yy = r0; yy <= r1; ++yy) {
                for (std::size_t xx = c0; xx <= c1; ++xx) {
                  const std::size_t idx = base + yy * W + xx;
                  if (x[idx] < x[best]) best = idx;
                }
              }
              const std::size_t o = base + static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j);
              out[o] = x[best];
              n.argmin[o] = best;
            }
          }
        }
        n.value = std::move(out);
      }
      break;
    }

    case Op::clamp:
    case Op::clamp_stopgrad: {
      arity(1);
      if (!(a.lo <= a.hi)) shape_fail(op, "lo must not exceed hi");
      Tensor out = in(0);
      for (double& v : out.data()) v = std::clamp(v, a.lo, a.hi);
      n.value = std::move(out);
      break;
    }

    case Op::slice: {
      arity(1);
      const Tensor& x = in(0);
      if (x.rank() < 2) shape_fail(op, "needs rank >= 2, got " + shape_str(x.shape()));
      const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
      if (a.row0 >= a.row1 || a.row1 > H || a.col0 >= a.col1 || a.col1 > W) {
        shape_fail(op, "window out of range for " + shape_str(x.shape()));
      }
      Shape os = x.shape();
      os[os.size() - 2] = a.row1 - a.row0;
      os[os.size() - 1] = a.col1 - a.col0;
      Tensor out(os);
      const std::size_t planes = x.size() / (H * W);
      const std::size_t oh = a.row1 - a.row0, ow = a.col1 - a.col0;
      for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t i = 0; i < oh; ++i) {
          std::memcpy(out.raw() + (pl * oh + i) * ow, x.raw() + pl * H * W + (a.row0 + i) * W + a.col0,
                      ow * sizeof(double));
        }
      }
      n.value = std::move(out);
      break;
    }

    case Op::gather: {
      arity(1);
      const Tensor& x = in(0);
      if (a.indices.empty()) shape_fail(op, "no indices");
      Tensor out({a.indices.size()});
      for (std::size_t i = 0; i < a.indices.size(); ++i) {
        if (a.indices[i] >= x.size()) shape_fail(op, "index " + std::to_string(a.indices[i]) + " out of range");
        out[i] = x[a.indices[i]];
      }
      n.value = std::move(out);
      break;
    }

    case Op::pairwise_distance: {
      arity(1);
      const Tensor& x = in(0);
      if (x.rank() != 2) shape_fail(op, "input must be NxD, got " + shape_str(x.shape()));
      const std::size_t N = x.dim(0), D = x.dim(1);
      Tensor out({N, N}, 0.0);
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i + 1; j < N; ++j) {
          double sq = 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            const double diff = x[i * D + d] - x[j * D + d];
            sq += diff * diff;
          }
          out[i * N + j] = out[j * N + i] = std::sqrt(sq);
        }
      }
      n.value = std::move(out);
      break;
    }
  }
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var root) {
  if (&root.graph() != this) throw ShapeError("backward: root from another graph");
  const Node& r = nodes_.at(root.id());
  if (r.value.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(r.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  grad_slot(root.id()).fill(1.0);
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || n.inputs.empty()) continue;
    backward_node(n);
  }
  for (Node& n : nodes_) {
    if (n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  }
}

void Graph::accumulate_param_grads() {
  for (Node& n : nodes_) {
    if (n.param == nullptr || !n.requires_grad || n.grad.empty()) continue;
    if (n.param->grad.empty() || n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
    add_into(n.param->grad, n.grad);
  }
}

void Graph::backward_node(Node& n) {
  const Op op = n.kind;
  const Attrs& a = n.attrs;
  const Tensor& dy = n.grad;
  auto needs = [&](std::size_t i) { return nodes_[n.inputs[i]].requires_grad; };
  auto val = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
  auto gin = [&](std::size_t i) -> Tensor& { return grad_slot(n.inputs[i]); };

  switch (op) {
    case Op::input:
      break;

    case Op::conv2d: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t O = w.dim(0), k = w.dim(2);
      const std::size_t Ho = dy.dim(2), Wo = dy.dim(3);
      const ConvGeom g{C, H, W, k, a.stride, a.padding, Ho, Wo};
      const std::size_t K = C * k * k, P = Ho * Wo;
      const bool dw = needs(1), dx = needs(0);
      // Per-sample weight gradients, reduced below in sample order.
      std::vector<double> dw_parts(dw ? N * O * K : 0);
      double* gx = dx ? gin(0).raw() : nullptr;
      if (dw || dx) {
        parallel_for(N, [&](std::size_t s) {
          double* cols = scratch(K * P);
          CMapRM dys(dy.raw() + s * O * P, O, P);
          if (dw) {
            im2col(x.raw() + s * C * H * W, g, cols, P, 0);
            MapRM(dw_parts.data() + s * O * K, O, K).noalias() = dys * CMapRM(cols, K, P).transpose();
          }
          if (dx) {
            MapRM(cols, K, P).noalias() = CMapRM(w.raw(), O, K).transpose() * dys;
            col2im(cols, g, gx + s * C * H * W, P, 0);
          }
        });
      }
      if (dw) {
        double* gw = gin(1).raw();
        for (std::size_t s = 0; s < N; ++s) {
          const double* part = dw_parts.data() + s * O * K;
          for (std::size_t i = 0; i < O * K; ++i) gw[i] += part[i];
        }
      }
      if (needs(2)) {
        Tensor& db = gin(2);
        for (std::size_t s = 0; s < N; ++s) {
          for (std::size_t o = 0; o < O; ++o) {
            const double* row = dy.raw() + (s * O + o) * P;
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += row[p];
            db[o] += acc;
          }
        }
      }
      break;
    }

    case Op::conv2d_transpose: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t Cout = w.dim(1), k = w.dim(2);
      const std::size_t Ho = dy.dim(2), Wo = dy.dim(3);
      const std::size_t HW = H * W, K = Cout * k * k;
      const ConvGeom g{Cout, Ho, Wo, k, a.stride, a.padding, H, W};
      const bool dw = needs(1), dx = needs(0);
      std::vector<double> dw_parts(dw ? N * Cin * K : 0);
      double* gx = dx ? gin(0).raw() : nullptr;
      if (dw || dx) {
        parallel_for(N, [&](std::size_t s) {
          double* dcols = scratch(K * HW);
          im2col(dy.raw() + s * Cout * Ho * Wo, g, dcols, HW, 0);
          if (dx) {
            MapRM(gx + s * Cin * HW, Cin, HW).noalias() += CMapRM(w.raw(), Cin, K) * CMapRM(dcols, K, HW);
          }
          if (dw) {
            MapRM(dw_parts.data() + s * Cin * K, Cin, K).noalias() =
                CMapRM(x.raw() + s * Cin * HW, Cin, HW) * CMapRM(dcols, K, HW).transpose();
          }
        });
      }
      if (dw) {
        double* gw = gin(1).raw();
        for (std::size_t s = 0; s < N; ++s) {
          const double* part = dw_parts.data() + s * Cin * K;
          for (std::size_t i = 0; i < Cin * K; ++i) gw[i] += part[i];
        }
      }
      if (needs(2)) {
        Tensor& db = gin(2);
        const std::size_t S = Ho * Wo;
        for (std::size_t s = 0; s < N; ++s) {
          for (std::size_t c = 0; c < Cout; ++c) {
            const double* p = dy.raw() + (s * Cout + c) * S;
            double acc = 0.0;
            for (std::size_t i = 0; i < S; ++i) acc += p[i];
            db[c] += acc;
          }
        }
      }
      break;
    }

    case Op::batch_norm: {
      const Tensor& x = val(0);
      const Tensor& gamma = val(1);
      const Tensor& xhat = n.cache;
      const Tensor& inv = n.cache2;
      const std::size_t N = x.dim(0), C = x.dim(1), S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
      const double m = static_cast<double>(N * S);
      for (std::size_t c = 0; c < C; ++c) {
        double sdy = 0.0, sdyx = 0.0;
        for (std::size_t s = 0; s < N; ++s) {
          const std::size_t off = (s * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            sdy += dy[off + i];
            sdyx += dy[off + i] * xhat[off + i];
          }
        }
        if (needs(1)) gin(1)[c] += sdyx;
        if (needs(2)) gin(2)[c] += sdy;
        if (needs(0)) {
          Tensor& dx = gin(0);
          const double scale = gamma[c] * inv[c];
          for (std::size_t s = 0; s < N; ++s) {
            const std::size_t off = (s * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
              if (a.training) {
                dx[off + i] += scale / m * (m * dy[off + i] - sdy - xhat[off + i] * sdyx);
              } else {
                dx[off + i] += scale * dy[off + i];
              }
            }
          }
        }
      }
      break;
    }

    case Op::relu: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      Tensor& dx = gin(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
      }
      break;
    }

    case Op::global_avg_pool: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      const std::size_t S = x.dim(2) * x.dim(3);
      Tensor& dx = gin(0);
      const double inv = 1.0 / static_cast<double>(S);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        for (std::size_t p = 0; p < S; ++p) dx[i * S + p] += dy[i] * inv;
      }
      break;
    }

    case Op::dense: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const std::size_t N = x.dim(0), D = x.dim(1), M = w.dim(0);
      CMapRM dym(dy.raw(), N, M);
      if (needs(0)) MapRM(gin(0).raw(), N, D).noalias() += dym * CMapRM(w.raw(), M, D);
      if (needs(1)) MapRM(gin(1).raw(), M, D).noalias() += dym.transpose() * CMapRM(x.raw(), N, D);
      if (needs(2)) {
        Tensor& db = gin(2);
        for (std::size_t i = 0; i < N; ++i) {
          for (std::size_t j = 0; j < M; ++j) db[j] += dy[i * M + j];
        }
      }
      break;
    }

    case Op::concat_channels: {
      const Tensor& x = val(0);
      const Tensor& y = val(1);
      const std::size_t N = x.dim(0), C1 = x.dim(1), C2 = y.dim(1), S = x.dim(2) * x.dim(3);
      for (std::size_t part = 0; part < 2; ++part) {
        if (!needs(part)) continue;
        Tensor& g = gin(part);
        const std::size_t Cp = part == 0 ? C1 : C2;
        const std::size_t off = part == 0 ? 0 : C1;
        for (std::size_t s = 0; s < N; ++s) {
          const double* src = dy.raw() + (s * (C1 + C2) + off) * S;
          double* dst = g.raw() + s * Cp * S;
          for (std::size_t i = 0; i < Cp * S; ++i) dst[i] += src[i];
        }
      }
      break;
    }

    case Op::concat_batch: {
      const std::size_t split = val(0).size();
      if (needs(0)) {
        double* g = gin(0).raw();
        for (std::size_t i = 0; i < split; ++i) g[i] += dy[i];
      }
      if (needs(1)) {
        double* g = gin(1).raw();
        for (std::size_t i = split; i < dy.size(); ++i) g[i - split] += dy[i];
      }
      break;
    }

    case Op::add:
    case Op::sub: {
      if (needs(0)) add_into(gin(0), dy);
      if (needs(1)) {
        Tensor& g = gin(1);
        const double sign = op == Op::add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += sign * dy[i];
      }
      break;
    }

    case Op::mul: {
      const Tensor& x = val(0);
      const Tensor& y = val(1);
      if (needs(0)) {
        Tensor& g = gin(0);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * y[i];
      }
      if (needs(1)) {
        Tensor& g = gin(1);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * x[i];
      }
      break;
    }

    case Op::mul_scalar: {
      if (!needs(0)) break;
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * a.scalar;
      break;
    }

    case Op::add_scalar: {
      if (needs(0)) add_into(gin(0), dy);
      break;
    }

    case Op::abs: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        g[i] += x[i] > 0.0 ? dy[i] : (x[i] < 0.0 ? -dy[i] : 0.0);
      }
      break;
    }

    case Op::exp: {
      if (!needs(0)) break;
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * n.value[i];
      break;
    }

    case Op::log: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] / x[i];
      break;
    }

    case Op::sigmoid: {
      if (!needs(0)) break;
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const double s = n.value[i];
        g[i] += dy[i] * s * (1.0 - s);
      }
      break;
    }

    case Op::sum:
    case Op::mean: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      Tensor& g = gin(0);
      if (a.axis < 0) {
        const double v = op == Op::mean ? dy[0] / static_cast<double>(x.size()) : dy[0];
        for (double& e : g.data()) e += v;
      } else {
        const AxisSplit sp = split_axis(x.shape(), static_cast<std::size_t>(a.axis));
        const double scale = op == Op::mean ? 1.0 / static_cast<double>(sp.len) : 1.0;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t l = 0; l < sp.len; ++l) {
            double* dst = g.raw() + (o * sp.len + l) * sp.inner;
            const double* src = dy.raw() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * scale;
          }
        }
      }
      break;
    }

    case Op::l2_normalize: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      const AxisSplit sp = split_axis(x.shape(), static_cast<std::size_t>(a.axis));
      Tensor& g = gin(0);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double nrm = n.cache[o * sp.inner + i];
          if (nrm < a.epsilon) continue;
          double dot = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t idx = (o * sp.len + l) * sp.inner + i;
            dot += n.value[idx] * dy[idx];
          }
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t idx = (o * sp.len + l) * sp.inner + i;
            g[idx] += (dy[idx] - n.value[idx] * dot) / nrm;
          }
        }
      }
      break;
    }

    case Op::softmax:
    case Op::log_softmax: {
      if (!needs(0)) break;
      const std::size_t N = dy.dim(0), C = dy.dim(1);
      Tensor& g = gin(0);
      for (std::size_t r = 0; r < N; ++r) {
        const double* y = n.value.raw() + r * C;
        const double* d = dy.raw() + r * C;
        double* dst = g.raw() + r * C;
        if (op == Op::softmax) {
          double dot = 0.0;
          for (std::size_t c = 0; c < C; ++c) dot += d[c] * y[c];
          for (std::size_t c = 0; c < C; ++c) dst[c] += y[c] * (d[c] - dot);
        } else {
          double total = 0.0;
          for (std::size_t c = 0; c < C; ++c) total += d[c];
          for (std::size_t c = 0; c < C; ++c) dst[c] += d[c] - std::exp(y[c]) * total;
        }
      }
      break;
    }

    case Op::min_reduce: {
      if (!needs(0)) break;
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) g[n.argmin[i]] += dy[i];
      break;
    }

    case Op::clamp: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] >= a.lo && x[i] <= a.hi) g[i] += dy[i];
      }
      break;
    }

    case Op::clamp_stopgrad:
      break;

    case Op::slice: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
      const std::size_t oh = a.row1 - a.row0, ow = a.col1 - a.col0;
      const std::size_t planes = x.size() / (H * W);
      Tensor& g = gin(0);
      for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t i = 0; i < oh; ++i) {
          double* dst = g.raw() + pl * H * W + (a.row0 + i) * W + a.col0;
          const double* src = dy.raw() + (pl * oh + i) * ow;
          for (std::size_t j = 0; j < ow; ++j) dst[j] += src[j];
        }
      }
      break;
    }

    case Op::gather: {
      if (!needs(0)) break;
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < a.indices.size(); ++i) g[a.indices[i]] += dy[i];
      break;
    }

    case Op::pairwise_distance: {
      if (!needs(0)) break;
      const Tensor& x = val(0);
      const std::size_t N = x.dim(0), D = x.dim(1);
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
          if (i == j) continue;
          const double dist = n.value[i * N + j];
          if (dist < 1e-12) continue;
          const double coef = dy[i * N + j] / dist;
          for (std::size_t d = 0; d < D; ++d) {
            const double diff = x[i * D + d] - x[j * D + d];
            g[i * D + d] += coef * diff;
            g[j * D + d] -= coef * diff;
          }
        }
      }
      break;
    }
  }
}

std::uint64_t Graph::kink_signature() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const Node& n : nodes_) {
    h = fnv(h, static_cast<std::uint64_t>(n.kind));
    switch (n.kind) {
      case Op::input:
        if (!n.requires_grad) {
          for (double v : n.value.data()) h = fnv(h, bits(v));
        }
        break;
      case Op::relu:
      case Op::abs: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        for (double v : x.data()) h = fnv(h, v > 0.0 ? 1u : (v < 0.0 ? 2u : 0u));
        break;
      }
      case Op::min_reduce:
        for (std::size_t i : n.argmin) h = fnv(h, i);
        break;
      case Op::clamp:
      case Op::clamp_stopgrad: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        for (double v : x.data()) h = fnv(h, v < n.attrs.lo ? 1u : (v > n.attrs.hi ? 2u : 0u));
        break;
      }
      case Op::gather:
        for (std::size_t i : n.attrs.indices) h = fnv(h, i);
        break;
      case Op::l2_normalize:
        for (double v : n.cache.data()) h = fnv(h, v < n.attrs.epsilon ? 1u : 0u);
        break;
      default:
        break;
    }
  }
  return h;
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  Attrs a;
  a.stride = stride;
  a.padding = padding;
  return x.graph().build_node(Op::conv2d, {x, weight, bias}, std::move(a));
}

Var conv2d_transpose(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  Attrs a;
  a.stride = stride;
  a.padding = padding;
  return x.graph().build_node(Op::conv2d_transpose, {x, weight, bias}, std::move(a));
}

Var batch_norm(Var x, Var gamma, Var beta, bool training, BatchNormStats stats, double epsilon,
               double momentum) {
  Attrs a;
  a.training = training;
  a.stats = stats;
  a.epsilon = epsilon;
  a.momentum = momentum;
  return x.graph().build_node(Op::batch_norm, {x, gamma, beta}, std::move(a));
}

Var relu(Var x) { return x.graph().build_node(Op::relu, {x}); }
Var global_avg_pool(Var x) { return x.graph().build_node(Op::global_avg_pool, {x}); }
Var dense(Var x, Var weight, Var bias) { return x.graph().build_node(Op::dense, {x, weight, bias}); }
Var concat_channels(Var a, Var b) { return a.graph().build_node(Op::concat_channels, {a, b}); }
Var concat_batch(Var a, Var b) { return a.graph().build_node(Op::concat_batch, {a, b}); }
Var add(Var a, Var b) { return a.graph().build_node(Op::add, {a, b}); }
Var sub(Var a, Var b) { return a.graph().build_node(Op::sub, {a, b}); }
Var mul(Var a, Var b) { return a.graph().build_node(Op::mul, {a, b}); }

Var mul_scalar(Var x, double s) {
  Attrs a;
  a.scalar = s;
  return x.graph().build_node(Op::mul_scalar, {x}, std::move(a));
}

Var add_scalar(Var x, double s) {
  Attrs a;
  a.scalar = s;
  return x.graph().build_node(Op::add_scalar, {x}, std::move(a));
}

Var abs(Var x) { return x.graph().build_node(Op::abs, {x}); }

Var sum(Var x, int axis) {
  Attrs a;
  a.axis = axis;
  return x.graph().build_node(Op::sum, {x}, std::move(a));
}

Var mean(Var x, int axis) {
  Attrs a;
  a.axis = axis;
  return x.graph().build_node(Op::mean, {x}, std::move(a));
}

Var l2_normalize(Var x, int axis, double epsilon) {
  Attrs a;
  a.axis = axis;
  a.epsilon = epsilon;
  return x.graph().build_node(Op::l2_normalize, {x}, std::move(a));
}

Var exp(Var x) { return x.graph().build_node(Op::exp, {x}); }
Var log(Var x) { return x.graph().build_node(Op::log, {x}); }
Var softmax(Var x) { return x.graph().build_node(Op::softmax, {x}); }
Var log_softmax(Var x) { return x.graph().build_node(Op::log_softmax, {x}); }
Var sigmoid(Var x) { return x.graph().build_node(Op::sigmoid, {x}); }

Var min_reduce(Var x, MinAxis axis, std::size_t patch) {
  Attrs a;
  a.min_axis = axis;
  a.patch = patch;
  return x.graph().build_node(Op::min_reduce, {x}, std::move(a));
}

Var clamp(Var x, double lo, double hi) {
  Attrs a;
  a.lo = lo;
  a.hi = hi;
  return x.graph().build_node(Op::clamp, {x}, std::move(a));
}

Var clamp_stopgrad(Var x, double lo, double hi) {
  Attrs a;
  a.lo = lo;
  a.hi = hi;
  return x.graph().build_node(Op::clamp_stopgrad, {x}, std::move(a));
}

Var slice(Var x, std::size_t row0, std::size_t row1, std::size_t col0, std::size_t col1) {
  Attrs a;
  a.row0 = row0;
  a.row1 = row1;
  a.col0 = col0;
  a.col1 = col1;
  return x.graph().build_node(Op::slice, {x}, std::move(a));
}

Var gather(Var x, std::vector<std::size_t> indices) {
  Attrs a;
  a.indices = std::move(indices);
  return x.graph().build_node(Op::gather, {x}, std::move(a));
}

Var pairwise_distance(Var x) { return x.graph().build_node(Op::pairwise_distance, {x}); }

Var dark_channel(Var images, std::size_t patch) {
  return min_reduce(min_reduce(images, MinAxis::channel), MinAxis::window, patch);
}

}  // namespace rvsl::ad
