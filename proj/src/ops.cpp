#include "srf/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "compensated.hpp"
#include "gemm.hpp"
#include "srf/branch_trace.hpp"

namespace srf {

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

void require_rank(const Tensor& x, int rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(x.shape()));
  }
}

// outer × axis × inner decomposition of a shape around one axis.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// ---------------------------------------------------------------------------
// broadcasting binary ops

struct Broadcast {
  Shape out;
  std::array<std::int64_t, 4> dims{1, 1, 1, 1};
  std::array<std::int64_t, 4> a_stride{0, 0, 0, 0};
  std::array<std::int64_t, 4> b_stride{0, 0, 0, 0};
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  Broadcast p;
  p.same = a == b;
  const std::size_t r = a.size();
  const std::size_t pad = 4 - r;
  std::array<std::int64_t, 4> ad{1, 1, 1, 1}, bd{1, 1, 1, 1};
  for (std::size_t i = 0; i < r; ++i) {
    ad[pad + i] = a[i];
    bd[pad + i] = b[i];
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  std::int64_t as = 1, bs = 1;
  for (int i = 3; i >= 0; --i) {
    p.dims[i] = std::max(ad[i], bd[i]);
    p.a_stride[i] = ad[i] == 1 ? 0 : as;
    p.b_stride[i] = bd[i] == 1 ? 0 : bs;
    as *= ad[i];
    bs *= bd[i];
  }
  for (std::size_t i = 0; i < r; ++i) p.out.push_back(p.dims[pad + i]);
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < p.dims[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < p.dims[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < p.dims[2]; ++i2) {
        const std::int64_t abase = i0 * p.a_stride[0] + i1 * p.a_stride[1] + i2 * p.a_stride[2];
        const std::int64_t bbase = i0 * p.b_stride[0] + i1 * p.b_stride[1] + i2 * p.b_stride[2];
        for (std::int64_t i3 = 0; i3 < p.dims[3]; ++i3, ++o) {
          f(o, abase + i3 * p.a_stride[3], bbase + i3 * p.b_stride[3]);
        }
      }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  check_same_dtype(a, b, name);
  const Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  return dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto bv = b.data<T>();
    std::vector<T> out(static_cast<std::size_t>(shape_numel(plan.out)));
    if (plan.same) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = kind == BinaryKind::add ? av[i] + bv[i] : kind == BinaryKind::sub ? av[i] - bv[i] : av[i] * bv[i];
      }
    } else {
      for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ai, std::int64_t bi) {
        const T x = av[ai], y = bv[bi];
        out[o] = kind == BinaryKind::add ? x + y : kind == BinaryKind::sub ? x - y : x * y;
      });
    }
    return make_op_result<T>(plan.out, std::move(out), {a, b}, [a, b, plan, kind](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto ga = ctx.grad_input<T>(0);
      auto gb = ctx.grad_input<T>(1);
      auto av = a.data<T>();
      auto bv = b.data<T>();
      const T sign = kind == BinaryKind::sub ? T(-1) : T(1);
      for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ai, std::int64_t bi) {
        if (kind == BinaryKind::mul) {
          if (!ga.empty()) ga[ai] += g[o] * bv[bi];
          if (!gb.empty()) gb[bi] += g[o] * av[ai];
        } else {
          if (!ga.empty()) ga[ai] += g[o];
          if (!gb.empty()) gb[bi] += sign * g[o];
        }
      });
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    const T f = static_cast<T>(factor);
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * f;
    return make_op_result<T>(x.shape(), std::move(out), {x}, [f](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
    });
  });
}

Tensor relu(const Tensor& x) {
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (tracing_branches()) {
      std::uint64_t word = 0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        word = (word << 1) | (xv[i] > T(0));
        if (i % 64 == 63 || i + 1 == out.size()) trace_branch(word), word = 0;
      }
    }
    return make_op_result<T>(x.shape(), std::move(out), {x}, [x](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      auto xv = x.data<T>();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > T(0)) gx[i] += g[i];
      }
    });
  });
}

Tensor sigmoid(const Tensor& x) {
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      // Branch on sign so exp() never overflows.
      const T v = xv[i];
      if (v >= T(0)) {
        out[i] = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        out[i] = e / (T(1) + e);
      }
    }
    auto y = std::make_shared<std::vector<T>>(out);
    return make_op_result<T>(x.shape(), std::move(out), {x}, [y](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      const auto& yv = *y;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (T(1) - yv[i]);
    });
  });
}

Tensor sum(const Tensor& x) {
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    detail::CompensatedSum acc;
    for (auto v : xv) acc.add(static_cast<double>(v));
    return make_op_result<T>({1}, {static_cast<T>(acc.value())}, {x}, [](BackwardContext& ctx) {
      const T g = ctx.grad_output<T>()[0];
      for (auto& v : ctx.grad_input<T>(0)) v += g;
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    return make_op_result<T>(std::move(shape), std::vector<T>(xv.begin(), xv.end()), {x}, [](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  const int ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    check_same_dtype(parts[0], p, "concat");
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    for (int i = 0; i < rank; ++i) {
      if (i != ax && p.shape()[static_cast<std::size_t>(i)] != parts[0].shape()[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()) +
                         " differ off the concat axis");
      }
    }
    out_shape[static_cast<std::size_t>(ax)] += p.shape()[static_cast<std::size_t>(ax)];
  }
  const AxisSplit os = split_at(out_shape, ax);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return dispatch(parts[0].dtype(), [&]<class T>() {
    std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& p : inputs) {
      offsets.push_back(off);
      const AxisSplit ps = split_at(p.shape(), ax);
      auto pv = p.data<T>();
      for (std::int64_t o = 0; o < ps.outer; ++o) {
        std::copy_n(pv.begin() + o * ps.len * ps.inner, ps.len * ps.inner,
                    out.begin() + (o * os.len + off) * os.inner);
      }
      off += ps.len;
    }
    return make_op_result<T>(out_shape, std::move(out), inputs, [inputs, offsets, os, ax](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto gp = ctx.grad_input<T>(k);
        if (gp.empty()) continue;
        const AxisSplit ps = split_at(inputs[k].shape(), ax);
        for (std::int64_t o = 0; o < ps.outer; ++o) {
          const T* src = g.data() + (o * os.len + offsets[k]) * os.inner;
          T* dst = gp.data() + o * ps.len * ps.inner;
          for (std::int64_t i = 0; i < ps.len * ps.inner; ++i) dst[i] += src[i];
        }
      }
    });
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    std::vector<T> out(xv.size());
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t in = 0; in < s.inner; ++in) {
        const std::int64_t base = o * s.len * s.inner + in;
        T mx = xv[base];
        for (std::int64_t l = 1; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
        T total = 0;
        for (std::int64_t l = 0; l < s.len; ++l) {
          const T e = std::exp(xv[base + l * s.inner] - mx);
          out[base + l * s.inner] = e;
          total += e;
        }
        for (std::int64_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
      }
    }
    auto y = std::make_shared<std::vector<T>>(out);
    return make_op_result<T>(x.shape(), std::move(out), {x}, [y, s](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      const auto& yv = *y;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
          const std::int64_t base = o * s.len * s.inner + in;
          T dot = 0;
          for (std::int64_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * yv[base + l * s.inner];
          for (std::int64_t l = 0; l < s.len; ++l) {
            const std::int64_t i = base + l * s.inner;
            gx[i] += yv[i] * (g[i] - dot);
          }
        }
      }
    });
  });
}

Tensor center(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "center");
  const AxisSplit s = split_at(x.shape(), ax);
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    std::vector<T> out(xv.size());
    const T inv = T(1) / static_cast<T>(s.len);
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t in = 0; in < s.inner; ++in) {
        const std::int64_t base = o * s.len * s.inner + in;
        T acc = 0;
        for (std::int64_t l = 0; l < s.len; ++l) acc += xv[base + l * s.inner];
        const T mu = acc * inv;
        for (std::int64_t l = 0; l < s.len; ++l) out[base + l * s.inner] = xv[base + l * s.inner] - mu;
      }
    }
    return make_op_result<T>(x.shape(), std::move(out), {x}, [s, inv](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
          const std::int64_t base = o * s.len * s.inner + in;
          T acc = 0;
          for (std::int64_t l = 0; l < s.len; ++l) acc += g[base + l * s.inner];
          const T mu = acc * inv;
          for (std::int64_t l = 0; l < s.len; ++l) gx[base + l * s.inner] += g[base + l * s.inner] - mu;
        }
      }
    });
  });
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
  const int ax = normalize_axis(axis, x.rank(), "l2_normalize");
  const AxisSplit s = split_at(x.shape(), ax);
  return dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    std::vector<T> out(xv.size());
    auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.outer * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t in = 0; in < s.inner; ++in) {
        const std::int64_t base = o * s.len * s.inner + in;
        T sq = 0;
        for (std::int64_t l = 0; l < s.len; ++l) sq += xv[base + l * s.inner] * xv[base + l * s.inner];
        const T n = std::sqrt(sq + static_cast<T>(eps));
        (*norms)[static_cast<std::size_t>(o * s.inner + in)] = n;
        for (std::int64_t l = 0; l < s.len; ++l) out[base + l * s.inner] = xv[base + l * s.inner] / n;
      }
    }
    auto y = std::make_shared<std::vector<T>>(out);
    return make_op_result<T>(x.shape(), std::move(out), {x}, [y, norms, s](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      const auto& yv = *y;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
          const std::int64_t base = o * s.len * s.inner + in;
          const T n = (*norms)[static_cast<std::size_t>(o * s.inner + in)];
          T dot = 0;
          for (std::int64_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * yv[base + l * s.inner];
          for (std::int64_t l = 0; l < s.len; ++l) {
            const std::int64_t i = base + l * s.inner;
            gx[i] += (g[i] - yv[i] * dot) / n;
          }
        }
      }
    });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check_same_dtype(a, b, "matmul");
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul: expected two rank-2 or two rank-3 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const std::int64_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) {
    throw ShapeError("matmul: batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::int64_t ar = a.dim(-2), ac = a.dim(-1), br = b.dim(-2), bc = b.dim(-1);
  const std::int64_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const std::int64_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto bv = b.data<T>();
    std::vector<T> out(static_cast<std::size_t>(batch * m * n));
    for (std::int64_t bi = 0; bi < batch; ++bi) {
      detail::gemm<T>(trans_a, trans_b, m, n, k, av.data() + bi * ar * ac, ac, bv.data() + bi * br * bc, bc,
                      out.data() + bi * m * n, n, false);
    }
    return make_op_result<T>(out_shape, std::move(out), {a, b},
                             [a, b, trans_a, trans_b, batch, m, n, k, ar, ac, br, bc](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto ga = ctx.grad_input<T>(0);
      auto gb = ctx.grad_input<T>(1);
      auto av = a.data<T>();
      auto bv = b.data<T>();
      for (std::int64_t bi = 0; bi < batch; ++bi) {
        const T* gp = g.data() + bi * m * n;
        const T* ap = av.data() + bi * ar * ac;
        const T* bp = bv.data() + bi * br * bc;
        if (!ga.empty()) {
          T* dst = ga.data() + bi * ar * ac;
          if (!trans_a) {
            detail::gemm<T>(false, !trans_b, m, k, n, gp, n, bp, bc, dst, ac, true);
          } else {
            detail::gemm<T>(trans_b, true, k, m, n, bp, bc, gp, n, dst, ac, true);
          }
        }
        if (!gb.empty()) {
          T* dst = gb.data() + bi * br * bc;
          if (!trans_b) {
            detail::gemm<T>(!trans_a, false, k, n, m, ap, ac, gp, n, dst, bc, true);
          } else {
            detail::gemm<T>(true, trans_a, n, k, m, gp, n, ap, ac, dst, bc, true);
          }
        }
      }
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  Tensor y = matmul(x, weight, false, true);
  if (!bias.defined()) return y;
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  return add(y, reshape(bias, {1, bias.dim(0)}));
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct ConvGeometry {
  std::int64_t n, c_in, h, w, c_out, k, oh, ow;
  int stride, padding, groups;
  std::int64_t cin_g() const { return c_in / groups; }
  std::int64_t cout_g() const { return c_out / groups; }
  std::int64_t col_rows() const { return cin_g() * k * k; }
  std::int64_t col_cols() const { return oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && padding == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, std::int64_t c0, T* col) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    const T* plane = x + (c0 + c) * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, T(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix < 0 || ix >= g.w) ? T(0) : plane[iy * g.w + ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, std::int64_t c0, T* dx) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    T* plane = dx + (c0 + c) * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding, int groups) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  check_same_dtype(input, weight, "conv2d");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  if (groups < 1 || input.dim(1) % groups != 0 || weight.dim(0) % groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(groups) + " must divide input channels (" +
                      std::to_string(input.dim(1)) + ") and output channels (" + std::to_string(weight.dim(0)) + ")");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), 0, 0,
                 stride, padding, groups};
  if (weight.dim(1) != g.cin_g() || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(input.shape()) + " at groups=" + std::to_string(groups));
  }
  if (bias.defined()) {
    check_same_dtype(input, bias, "conv2d");
    if (bias.rank() != 1 || bias.dim(0) != g.c_out) {
      throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                       shape_str(weight.shape()));
    }
  }
  const std::int64_t span_h = g.h + 2 * padding - g.k, span_w = g.w + 2 * padding - g.k;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                     shape_str(input.shape()));
  }
  g.oh = span_h / stride + 1;
  g.ow = span_w / stride + 1;
  Shape out_shape{g.n, g.c_out, g.oh, g.ow};

  return dispatch(input.dtype(), [&]<class T>() {
    auto xv = input.data<T>();
    auto wv = weight.data<T>();
    std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    for (std::int64_t n = 0; n < g.n; ++n) {
      const T* xn = xv.data() + n * g.c_in * g.h * g.w;
      for (std::int64_t gr = 0; gr < groups; ++gr) {
        const T* colp = xn + gr * g.cin_g() * g.h * g.w;
        if (!g.pointwise()) {
          im2col(xn, g, gr * g.cin_g(), col.data());
          colp = col.data();
        }
        detail::gemm<T>(false, false, g.cout_g(), g.col_cols(), g.col_rows(), wv.data() + gr * g.cout_g() * g.col_rows(),
                        g.col_rows(), colp, g.col_cols(),
                        out.data() + (n * g.c_out + gr * g.cout_g()) * g.col_cols(), g.col_cols(), false);
      }
    }
    if (bias.defined()) {
      auto bv = bias.data<T>();
      for (std::int64_t n = 0; n < g.n; ++n)
        for (std::int64_t c = 0; c < g.c_out; ++c) {
          T* p = out.data() + (n * g.c_out + c) * g.col_cols();
          for (std::int64_t i = 0; i < g.col_cols(); ++i) p[i] += bv[c];
        }
    }
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_op_result<T>(out_shape, std::move(out), inputs, [input, weight, g, has_bias](BackwardContext& ctx) {
      auto gout = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      auto gw = ctx.grad_input<T>(1);
      if (has_bias) {
        auto gb = ctx.grad_input<T>(2);
        if (!gb.empty()) {
          for (std::int64_t n = 0; n < g.n; ++n)
            for (std::int64_t c = 0; c < g.c_out; ++c) {
              const T* p = gout.data() + (n * g.c_out + c) * g.col_cols();
              T acc = 0;
              for (std::int64_t i = 0; i < g.col_cols(); ++i) acc += p[i];
              gb[c] += acc;
            }
        }
      }
      auto xv = input.data<T>();
      auto wv = weight.data<T>();
      std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
      std::vector<T> dcol(gx.empty() ? 0 : col.size());
      for (std::int64_t n = 0; n < g.n; ++n) {
        const T* xn = xv.data() + n * g.c_in * g.h * g.w;
        for (std::int64_t gr = 0; gr < g.groups; ++gr) {
          const T* gp = gout.data() + (n * g.c_out + gr * g.cout_g()) * g.col_cols();
          if (!gw.empty()) {
            const T* colp = xn + gr * g.cin_g() * g.h * g.w;
            if (!g.pointwise()) {
              im2col(xn, g, gr * g.cin_g(), col.data());
              colp = col.data();
            }
            detail::gemm<T>(false, true, g.cout_g(), g.col_rows(), g.col_cols(), gp, g.col_cols(), colp, g.col_cols(),
                            gw.data() + gr * g.cout_g() * g.col_rows(), g.col_rows(), true);
          }
          if (!gx.empty()) {
            const T* wp = wv.data() + gr * g.cout_g() * g.col_rows();
            T* dxn = gx.data() + n * g.c_in * g.h * g.w;
            if (g.pointwise()) {
              detail::gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout_g(), wp, g.col_rows(), gp, g.col_cols(),
                              dxn + gr * g.cin_g() * g.h * g.w, g.col_cols(), true);
            } else {
              detail::gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout_g(), wp, g.col_rows(), gp, g.col_cols(),
                              dcol.data(), g.col_cols(), false);
              col2im_add(dcol.data(), g, gr * g.cin_g(), dxn);
            }
          }
        }
      }
    });
  });
}

Tensor pool2d(const Tensor& input, PoolMode mode, std::int64_t out_h, std::int64_t out_w) {
  require_rank(input, 4, "pool2d");
  if (out_h <= 0 || out_w <= 0) throw ConfigError("pool2d: output extents must be positive");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (mode == PoolMode::global_average) {
    out_h = 1;
    out_w = 1;
  }
  if (out_h > h || out_w > w || h % out_h != 0 || w % out_w != 0) {
    throw ShapeError("pool2d: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " does not evenly divide input " + shape_str(input.shape()));
  }
  const std::int64_t wh = h / out_h, ww = w / out_w;
  return dispatch(input.dtype(), [&]<class T>() {
    auto xv = input.data<T>();
    std::vector<T> out(static_cast<std::size_t>(n * c * out_h * out_w));
    const T inv = T(1) / static_cast<T>(wh * ww);
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* plane = xv.data() + p * h * w;
      for (std::int64_t oy = 0; oy < out_h; ++oy)
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          T acc = 0;
          for (std::int64_t y = oy * wh; y < (oy + 1) * wh; ++y)
            for (std::int64_t x = ox * ww; x < (ox + 1) * ww; ++x) acc += plane[y * w + x];
          out[static_cast<std::size_t>((p * out_h + oy) * out_w + ox)] = acc * inv;
        }
    }
    return make_op_result<T>({n, c, out_h, out_w}, std::move(out), {input},
                             [n, c, h, w, out_h, out_w, wh, ww, inv](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      for (std::int64_t p = 0; p < n * c; ++p) {
        T* plane = gx.data() + p * h * w;
        for (std::int64_t oy = 0; oy < out_h; ++oy)
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const T v = g[static_cast<std::size_t>((p * out_h + oy) * out_w + ox)] * inv;
            for (std::int64_t y = oy * wh; y < (oy + 1) * wh; ++y)
              for (std::int64_t x = ox * ww; x < (ox + 1) * ww; ++x) plane[y * w + x] += v;
          }
      }
    });
  });
}

Tensor channel_norm(const Tensor& input, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(input, 4, "channel_norm");
  check_same_dtype(input, gain, "channel_norm");
  check_same_dtype(input, bias, "channel_norm");
  const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw ShapeError("channel_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not match input " + shape_str(input.shape()));
  }
  return dispatch(input.dtype(), [&]<class T>() {
    auto xv = input.data<T>();
    auto gv = gain.data<T>();
    auto bv = bias.data<T>();
    std::vector<T> out(xv.size());
    auto xhat = std::make_shared<std::vector<T>>(xv.size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * c));
    const T inv_hw = T(1) / static_cast<T>(hw);
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* x = xv.data() + p * hw;
      T mu = 0;
      for (std::int64_t i = 0; i < hw; ++i) mu += x[i];
      mu *= inv_hw;
      T var = 0;
      for (std::int64_t i = 0; i < hw; ++i) var += (x[i] - mu) * (x[i] - mu);
      var *= inv_hw;
      const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*inv_std)[static_cast<std::size_t>(p)] = is;
      const std::int64_t ch = p % c;
      for (std::int64_t i = 0; i < hw; ++i) {
        const T xh = (x[i] - mu) * is;
        (*xhat)[static_cast<std::size_t>(p * hw + i)] = xh;
        out[static_cast<std::size_t>(p * hw + i)] = gv[ch] * xh + bv[ch];
      }
    }
    return make_op_result<T>(input.shape(), std::move(out), {input, gain, bias},
                             [gain, xhat, inv_std, n, c, hw, inv_hw](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      auto gg = ctx.grad_input<T>(1);
      auto gb = ctx.grad_input<T>(2);
      auto gv = gain.data<T>();
      const auto& xh = *xhat;
      for (std::int64_t p = 0; p < n * c; ++p) {
        const std::int64_t ch = p % c;
        const T* gp = g.data() + p * hw;
        const T* xp = xh.data() + p * hw;
        T sum_g = 0, sum_gx = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * xp[i];
        }
        if (!gg.empty()) gg[ch] += sum_gx;
        if (!gb.empty()) gb[ch] += sum_g;
        if (!gx.empty()) {
          const T k = gv[ch] * (*inv_std)[static_cast<std::size_t>(p)];
          const T mg = sum_g * inv_hw, mgx = sum_gx * inv_hw;
          T* dst = gx.data() + p * hw;
          for (std::int64_t i = 0; i < hw; ++i) dst[i] += k * (gp[i] - mg - xp[i] * mgx);
        }
      }
    });
  });
}

Tensor scale_channels(const Tensor& input, const Tensor& gains) {
  require_rank(input, 4, "scale_channels");
  if (gains.shape() != Shape{input.dim(0), input.dim(1), 1, 1}) {
    throw ShapeError("scale_channels: gains " + shape_str(gains.shape()) + " do not match input " +
                     shape_str(input.shape()));
  }
  return mul(input, gains);
}

Tensor gather_pixels(const Tensor& input, std::span<const std::int64_t> pixels) {
  require_rank(input, 4, "gather_pixels");
  const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (pixels.empty()) throw ShapeError("gather_pixels: empty index list");
  for (auto p : pixels) {
    if (p < 0 || p >= n * hw) throw ShapeError("gather_pixels: pixel index " + std::to_string(p) + " out of range");
  }
  auto idx = std::make_shared<std::vector<std::int64_t>>(pixels.begin(), pixels.end());
  const auto a = static_cast<std::int64_t>(idx->size());
  return dispatch(input.dtype(), [&]<class T>() {
    auto xv = input.data<T>();
    std::vector<T> out(static_cast<std::size_t>(a * c));
    for (std::int64_t r = 0; r < a; ++r) {
      const std::int64_t img = (*idx)[r] / hw, pix = (*idx)[r] % hw;
      for (std::int64_t ch = 0; ch < c; ++ch) out[r * c + ch] = xv[(img * c + ch) * hw + pix];
    }
    return make_op_result<T>({a, c}, std::move(out), {input}, [idx, a, c, hw](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      for (std::int64_t r = 0; r < a; ++r) {
        const std::int64_t img = (*idx)[r] / hw, pix = (*idx)[r] % hw;
        for (std::int64_t ch = 0; ch < c; ++ch) gx[(img * c + ch) * hw + pix] += g[r * c + ch];
      }
    });
  });
}

}  // namespace srf
