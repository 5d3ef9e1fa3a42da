// SPDX-License-Identifier: Apache-2.0
#include "r2g/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "r2g/errors.hpp"

namespace r2g {
namespace {

using detail::Node;

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// outer x n x inner decomposition around one axis
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

std::shared_ptr<const Broadcast> broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  auto plan = std::make_shared<Broadcast>();
  if (a == b) {
    plan->out = a;
    plan->same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  plan->out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    plan->out[i] = pa[i] == 1 ? pb[i] : pa[i];
  }
  const auto sa = strides_of(pa), sb = strides_of(pb);
  const std::size_t n = shape_numel(plan->out);
  plan->ia.resize(n);
  plan->ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < r; ++d) {
      if (pa[d] != 1) oa += idx[d] * sa[d];
      if (pb[d] != 1) ob += idx[d] * sb[d];
    }
    plan->ia[i] = oa;
    plan->ib[i] = ob;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < plan->out[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

template <class F, class GA, class GB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, GA ga, GB gb) {
  auto plan = broadcast_plan(a.shape(), b.shape(), op);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[plan->same ? i : plan->ia[i]];
    const double y = bv[plan->same ? i : plan->ib[i]];
    out[i] = f(x, y);
  }
  return Tensor::make_result(plan->out, std::move(out), op, {a, b}, [plan, ga, gb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = plan->same ? i : plan->ia[i];
      const std::size_t ib = plan->same ? i : plan->ib[i];
      const double x = pa.value[ia], y = pb.value[ib], g = self.grad[i];
      if (pa.requires_grad) pa.grad_buffer()[ia] += g * ga(x, y, self.value[i]);
      if (pb.requires_grad) pb.grad_buffer()[ib] += g * gb(x, y, self.value[i]);
    }
  });
}

// df receives (input, output)
template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), op, {x}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

// out[i] = in[map[i]]; backward scatters.
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::size_t> map, const char* op) {
  const auto xv = x.values();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xv[map[i]];
  auto shared = std::make_shared<const std::vector<std::size_t>>(std::move(map));
  return Tensor::make_result(std::move(out_shape), std::move(out), op, {x}, [shared](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& m = *shared;
    for (std::size_t i = 0; i < m.size(); ++i) g[m[i]] += self.grad[i];
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double s) {
  return unary(
      x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary(
      x, "log_sigmoid", [](double v) { return -softplus_scalar(-v); },
      [](double v, double) { return sigmoid_scalar(-v); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_scalar, [](double v, double) { return sigmoid_scalar(v); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      x, "clamp_min", [lo](double v) { return v < lo ? lo : v; }, [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

Tensor pow(const Tensor& x, double p) {
  return unary(
      x, "pow", [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t M = sa[sa.size() - 2], K = sa.back(), N = sb.back();
  Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  std::shared_ptr<const Broadcast> plan;
  try {
    plan = broadcast_plan(ba, bb, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t batches = shape_numel(plan->out);
  Shape out_shape = plan->out;
  out_shape.push_back(M);
  out_shape.push_back(N);

  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(batches * M * N, 0.0);
  for (std::size_t t = 0; t < batches; ++t) {
    const double* A = av.data() + (plan->same ? t : plan->ia[t]) * M * K;
    const double* B = bv.data() + (plan->same ? t : plan->ib[t]) * K * N;
    double* C = out.data() + t * M * N;
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = A[i * K + k];
        const double* brow = B + k * N;
        double* crow = C + i * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), "matmul", {a, b},
                             [plan, M, K, N, batches](Node& self) {
                               Node& pa = *self.parents[0];
                               Node& pb = *self.parents[1];
                               for (std::size_t t = 0; t < batches; ++t) {
                                 const std::size_t oa = (plan->same ? t : plan->ia[t]) * M * K;
                                 const std::size_t ob = (plan->same ? t : plan->ib[t]) * K * N;
                                 const double* G = self.grad.data() + t * M * N;
                                 const double* A = pa.value.data() + oa;
                                 const double* B = pb.value.data() + ob;
                                 if (pa.requires_grad) {
                                   double* dA = pa.grad_buffer().data() + oa;
                                   for (std::size_t i = 0; i < M; ++i)
                                     for (std::size_t k = 0; k < K; ++k) {
                                       double s = 0.0;
                                       for (std::size_t j = 0; j < N; ++j) s += G[i * N + j] * B[k * N + j];
                                       dA[i * K + k] += s;
                                     }
                                 }
                                 if (pb.requires_grad) {
                                   double* dB = pb.grad_buffer().data() + ob;
                                   for (std::size_t i = 0; i < M; ++i)
                                     for (std::size_t k = 0; k < K; ++k) {
                                       const double aik = A[i * K + k];
                                       for (std::size_t j = 0; j < N; ++j) dB[k * N + j] += aik * G[i * N + j];
                                     }
                                 }
                               }
                             });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  if (axes.size() != s.size()) throw DimensionError("permute: axis list does not match rank of " + shape_str(s));
  std::vector<bool> used(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= s.size() || used[axes[i]]) throw DimensionError("permute: invalid axis order");
    used[axes[i]] = true;
    out_shape[i] = s[axes[i]];
  }
  const auto in_strides = strides_of(s);
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < s.size(); ++d) off += idx[d] * in_strides[axes[d]];
    map[i] = off;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return gather(x, std::move(out_shape), std::move(map), "permute");
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[norm_axis(axis0, x.rank())], axes[norm_axis(axis1, x.rank())]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (start + length > x.shape()[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for shape " + shape_str(x.shape()));
  }
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), start);
  return index_select(x, axis, idx);
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), ax);
  for (auto i : indices) {
    if (i >= v.n) throw DimensionError("index " + std::to_string(i) + " out of range for shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = indices.size();
  std::vector<std::size_t> map;
  map.reserve(v.outer * indices.size() * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (auto j : indices)
      for (std::size_t in = 0; in < v.inner; ++in) map.push_back((o * v.n + j) * v.inner + in);
  return gather(x, std::move(out_shape), std::move(map), "index_select");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat: rank mismatch at " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != out_shape[d]) {
        throw DimensionError("concat: shape " + shape_str(s) + " disagrees with " + shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += s[ax];
  }
  const auto ov = axis_view(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t base = 0;
  for (const auto& p : parts) {
    offsets.push_back(base);
    const auto pv = axis_view(p.shape(), ax);
    const auto vals = p.values();
    for (std::size_t o = 0; o < pv.outer; ++o)
      std::copy_n(vals.begin() + static_cast<std::ptrdiff_t>(o * pv.n * pv.inner), pv.n * pv.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * ov.n + base) * ov.inner));
    base += pv.n;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), "concat", parts,
                             [offsets, ov](Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 Node& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 auto& g = p.grad_buffer();
                                 const std::size_t chunk = g.size() / ov.outer;
                                 for (std::size_t o = 0; o < ov.outer; ++o) {
                                   const double* src = self.grad.data() + (o * ov.n + offsets[k]) * ov.inner;
                                   for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                                 }
                               }
                             });
}

Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::make_result({}, {s}, "sum", {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto xv = x.values();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t j = 0; j < v.n; ++j)
      for (std::size_t in = 0; in < v.inner; ++in) out[o * v.inner + in] += xv[(o * v.n + j) * v.inner + in];
  return Tensor::make_result(std::move(out_shape), std::move(out), "sum_axis", {x}, [v](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t j = 0; j < v.n; ++j)
        for (std::size_t in = 0; in < v.inner; ++in) g[(o * v.n + j) * v.inner + in] += self.grad[o * v.inner + in];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t n = x.dim(axis);
  if (n == 0) throw DimensionError("mean over an empty axis of " + shape_str(x.shape()));
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor max(const Tensor& x, int axis, bool keepdim) { return max(x, axis, Mask(x.dim(axis), true), keepdim); }

Tensor max(const Tensor& x, int axis, const Mask& valid, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), ax);
  if (valid.size() != v.n) {
    throw DimensionError("max: mask of length " + std::to_string(valid.size()) + " for axis extent " +
                         std::to_string(v.n));
  }
  if (std::none_of(valid.begin(), valid.end(), [](bool b) { return b; })) {
    throw DegenerateError("max over a fully masked axis");
  }
  Shape out_shape = x.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto xv = x.values();
  std::vector<double> out(v.outer * v.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      bool found = false;
      std::size_t best = 0;
      for (std::size_t j = 0; j < v.n; ++j) {
        if (!valid[j]) continue;
        const std::size_t idx = (o * v.n + j) * v.inner + in;
        if (!found || xv[idx] > xv[best]) best = idx;
        found = true;
      }
      out[o * v.inner + in] = xv[best];
      (*arg)[o * v.inner + in] = best;
    }
  return Tensor::make_result(std::move(out_shape), std::move(out), "max", {x}, [arg](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < arg->size(); ++i) g[(*arg)[i]] += self.grad[i];
  });
}

Tensor softmax(const Tensor& x, int axis) { return softmax(x, axis, Mask(x.dim(axis), true)); }

Tensor softmax(const Tensor& x, int axis, const Mask& valid) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), ax);
  if (valid.size() != v.n) {
    throw DimensionError("softmax: mask of length " + std::to_string(valid.size()) + " for axis extent " +
                         std::to_string(v.n));
  }
  if (std::none_of(valid.begin(), valid.end(), [](bool b) { return b; })) {
    throw DegenerateError("softmax over a fully masked slice");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      double m = kNegInf;
      for (std::size_t j = 0; j < v.n; ++j) {
        const double logit = valid[j] ? xv[(o * v.n + j) * v.inner + in] : kNegInf;
        m = std::max(m, logit);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) {
        const std::size_t idx = (o * v.n + j) * v.inner + in;
        const double logit = valid[j] ? xv[idx] : kNegInf;
        out[idx] = std::exp(logit - m);
        s += out[idx];
      }
      for (std::size_t j = 0; j < v.n; ++j) out[(o * v.n + j) * v.inner + in] /= s;
    }
  return Tensor::make_result(x.shape(), std::move(out), "softmax", {x}, [v](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        double dot = 0.0;
        for (std::size_t j = 0; j < v.n; ++j) {
          const std::size_t idx = (o * v.n + j) * v.inner + in;
          dot += y[idx] * gy[idx];
        }
        for (std::size_t j = 0; j < v.n; ++j) {
          const std::size_t idx = (o * v.n + j) * v.inner + in;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v.n; ++j) m = std::max(m, xv[(o * v.n + j) * v.inner + in]);
      double s = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) s += std::exp(xv[(o * v.n + j) * v.inner + in] - m);
      const double lse = m + std::log(s);
      for (std::size_t j = 0; j < v.n; ++j) {
        const std::size_t idx = (o * v.n + j) * v.inner + in;
        out[idx] = xv[idx] - lse;
      }
    }
  return Tensor::make_result(x.shape(), std::move(out), "log_softmax", {x}, [v](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        double gs = 0.0;
        for (std::size_t j = 0; j < v.n; ++j) gs += self.grad[(o * v.n + j) * v.inner + in];
        for (std::size_t j = 0; j < v.n; ++j) {
          const std::size_t idx = (o * v.n + j) * v.inner + in;
          g[idx] += self.grad[idx] - std::exp(self.value[idx]) * gs;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t D = x.dim(-1);
  if (gain.shape() != Shape{D} || bias.shape() != Shape{D}) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match feature extent of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / D;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * D;
    double mu = 0.0;
    for (std::size_t d = 0; d < D; ++d) mu += row[d];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
    var /= static_cast<double>(D);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t d = 0; d < D; ++d) {
      const double h = (row[d] - mu) * rs;
      (*xhat)[r * D + d] = h;
      out[r * D + d] = h * gv[d] + bv[d];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), "layer_norm", {x, gain, bias},
                             [xhat, rstd, rows, D](Node& self) {
                               Node& px = *self.parents[0];
                               Node& pg = *self.parents[1];
                               Node& pb = *self.parents[2];
                               const auto& G = self.grad;
                               if (pg.requires_grad || pb.requires_grad) {
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t d = 0; d < D; ++d) {
                                     if (pg.requires_grad) pg.grad_buffer()[d] += G[r * D + d] * (*xhat)[r * D + d];
                                     if (pb.requires_grad) pb.grad_buffer()[d] += G[r * D + d];
                                   }
                               }
                               if (!px.requires_grad) return;
                               auto& gx = px.grad_buffer();
                               const auto& gain_v = pg.value;
                               std::vector<double> dh(D);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double m1 = 0.0, m2 = 0.0;
                                 for (std::size_t d = 0; d < D; ++d) {
                                   dh[d] = G[r * D + d] * gain_v[d];
                                   m1 += dh[d];
                                   m2 += dh[d] * (*xhat)[r * D + d];
                                 }
                                 m1 /= static_cast<double>(D);
                                 m2 /= static_cast<double>(D);
                                 for (std::size_t d = 0; d < D; ++d)
                                   gx[r * D + d] += (*rstd)[r] * (dh[d] - m1 - (*xhat)[r * D + d] * m2);
                               }
                             });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  return div(x, sqrt(add_scalar(sum(square(x), -1, true), eps)));
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  if (x.rank() != 2 || weight.rank() != 3 || weight.dim(1) != x.dim(1)) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (stride == 0) throw DimensionError("conv1d: stride must be >= 1");
  const std::size_t T = x.dim(0), Cin = x.dim(1), kernel = weight.dim(0), Cout = weight.dim(2);
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{Cout}) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " for " + std::to_string(Cout) + " outputs");
  }
  if (T + 2 * padding < kernel) {
    throw DimensionError("conv1d: input of length " + std::to_string(T) + " too short for kernel " +
                         std::to_string(kernel));
  }
  const std::size_t Tout = (T + 2 * padding - kernel) / stride + 1;
  const auto xv = x.values();
  const auto wv = weight.values();
  std::vector<double> out(Tout * Cout, 0.0);
  for (std::size_t t = 0; t < Tout; ++t) {
    double* orow = out.data() + t * Cout;
    if (has_bias) std::copy_n(bias.values().begin(), Cout, orow);
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(padding);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xrow = xv.data() + static_cast<std::size_t>(src) * Cin;
      for (std::size_t c = 0; c < Cin; ++c) {
        const double xc = xrow[c];
        const double* wrow = wv.data() + (j * Cin + c) * Cout;
        for (std::size_t o = 0; o < Cout; ++o) orow[o] += xc * wrow[o];
      }
    }
  }
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Tensor::make_result({Tout, Cout}, std::move(out), "conv1d", parents,
                             [=](Node& self) {
                               Node& px = *self.parents[0];
                               Node& pw = *self.parents[1];
                               const auto& G = self.grad;
                               if (has_bias && self.parents[2]->requires_grad) {
                                 auto& gb = self.parents[2]->grad_buffer();
                                 for (std::size_t t = 0; t < Tout; ++t)
                                   for (std::size_t o = 0; o < Cout; ++o) gb[o] += G[t * Cout + o];
                               }
                               for (std::size_t t = 0; t < Tout; ++t) {
                                 const double* grow = G.data() + t * Cout;
                                 for (std::size_t j = 0; j < kernel; ++j) {
                                   const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                                              static_cast<std::ptrdiff_t>(padding);
                                   if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                                   const std::size_t s = static_cast<std::size_t>(src);
                                   for (std::size_t c = 0; c < Cin; ++c) {
                                     const std::size_t wo = (j * Cin + c) * Cout;
                                     if (pw.requires_grad) {
                                       auto& gw = pw.grad_buffer();
                                       const double xc = px.value[s * Cin + c];
                                       for (std::size_t o = 0; o < Cout; ++o) gw[wo + o] += xc * grow[o];
                                     }
                                     if (px.requires_grad) {
                                       double acc = 0.0;
                                       for (std::size_t o = 0; o < Cout; ++o) acc += pw.value[wo + o] * grow[o];
                                       px.grad_buffer()[s * Cin + c] += acc;
                                     }
                                   }
                                 }
                               }
                             });
}

}  // namespace r2g
