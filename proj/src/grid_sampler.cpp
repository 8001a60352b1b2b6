#include "srf/grid_sampler.hpp"

#include <algorithm>
#include <cmath>

#include "srf/branch_trace.hpp"

namespace srf {

namespace {

// Interpolation taps along one axis for every output coordinate.
template <class T>
struct Taps {
  std::vector<std::int64_t> lo, hi;
  std::vector<T> frac;
};

template <class T>
Taps<T> upsample_taps(std::int64_t in, std::int64_t out, int factor) {
  Taps<T> t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const T inv = T(1) / static_cast<T>(factor);
  for (std::int64_t d = 0; d < out; ++d) {
    T src = (static_cast<T>(d) + T(0.5)) * inv - T(0.5);
    if (src < T(0)) src = T(0);
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    t.lo[d] = lo;
    t.hi[d] = std::min(lo + 1, in - 1);
    t.frac[d] = src - static_cast<T>(lo);
  }
  return t;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, int factor) {
  if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  if (input.rank() != 4) throw ShapeError("bilinear_upsample: expected N×C×H×W, got " + shape_str(input.shape()));
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  return dispatch(input.dtype(), [&]<class T>() {
    auto ty = upsample_taps<T>(h, oh, factor);
    auto tx = upsample_taps<T>(w, ow, factor);
    auto xv = input.data<T>();
    std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* src = xv.data() + p * h * w;
      T* dst = out.data() + p * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y) {
        const T ly = ty.frac[y];
        const T* r0 = src + ty.lo[y] * w;
        const T* r1 = src + ty.hi[y] * w;
        for (std::int64_t x = 0; x < ow; ++x) {
          const T lx = tx.frac[x];
          const T top = (T(1) - lx) * r0[tx.lo[x]] + lx * r0[tx.hi[x]];
          const T bot = (T(1) - lx) * r1[tx.lo[x]] + lx * r1[tx.hi[x]];
          dst[y * ow + x] = (T(1) - ly) * top + ly * bot;
        }
      }
    }
    return make_op_result<T>({n, c, oh, ow}, std::move(out), {input}, [ty, tx, n, c, h, w, oh, ow](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gx = ctx.grad_input<T>(0);
      for (std::int64_t p = 0; p < n * c; ++p) {
        const T* gp = g.data() + p * oh * ow;
        T* dst = gx.data() + p * h * w;
        for (std::int64_t y = 0; y < oh; ++y) {
          const T ly = ty.frac[y];
          T* r0 = dst + ty.lo[y] * w;
          T* r1 = dst + ty.hi[y] * w;
          for (std::int64_t x = 0; x < ow; ++x) {
            const T lx = tx.frac[x];
            const T v = gp[y * ow + x];
            r0[tx.lo[x]] += (T(1) - ly) * (T(1) - lx) * v;
            r0[tx.hi[x]] += (T(1) - ly) * lx * v;
            r1[tx.lo[x]] += ly * (T(1) - lx) * v;
            r1[tx.hi[x]] += ly * lx * v;
          }
        }
      }
    });
  });
}

Tensor sample_with_offsets(const Tensor& input, const Tensor& offsets) {
  if (input.rank() != 4 || offsets.rank() != 4) {
    throw ShapeError("sample_with_offsets: expected rank-4 input and offsets, got " + shape_str(input.shape()) +
                     " and " + shape_str(offsets.shape()));
  }
  if (offsets.dim(1) != 2) {
    throw ShapeError("sample_with_offsets: offsets need exactly 2 channels, got " + shape_str(offsets.shape()));
  }
  if (offsets.dim(0) != input.dim(0) || offsets.dim(2) != input.dim(2) || offsets.dim(3) != input.dim(3)) {
    throw ShapeError("sample_with_offsets: offsets " + shape_str(offsets.shape()) + " do not match input " +
                     shape_str(input.shape()));
  }
  check_same_dtype(input, offsets, "sample_with_offsets");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3), hw = h * w;

  return dispatch(input.dtype(), [&]<class T>() {
    // Per-pixel cell corner (x0, y0) and fractional position in (0, 1].
    struct Cell {
      std::int64_t x0, y0;
      T fx, fy;
    };
    auto ov = offsets.data<T>();
    auto cells = std::make_shared<std::vector<Cell>>(static_cast<std::size_t>(n * hw));
    const bool tracing = tracing_branches();
    for (std::int64_t b = 0; b < n; ++b) {
      const T* dx = ov.data() + b * 2 * hw;
      const T* dy = dx + hw;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t i = y * w + x;
          const T sx = static_cast<T>(x) + dx[i];
          const T sy = static_cast<T>(y) + dy[i];
          const T cx = std::ceil(sx) - T(1);
          const T cy = std::ceil(sy) - T(1);
          (*cells)[static_cast<std::size_t>(b * hw + i)] = Cell{static_cast<std::int64_t>(cx), static_cast<std::int64_t>(cy),
                                                                sx - cx, sy - cy};
          if (tracing) trace_branch(static_cast<std::uint64_t>(cx) * 0x100000001B3ULL ^ static_cast<std::uint64_t>(cy));
        }
    }

    auto xv = input.data<T>();
    std::vector<T> out(static_cast<std::size_t>(n * c * hw), T(0));
    auto inside = [h, w](std::int64_t yy, std::int64_t xx) { return yy >= 0 && yy < h && xx >= 0 && xx < w; };
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t i = 0; i < hw; ++i) {
        const Cell& cl = (*cells)[static_cast<std::size_t>(b * hw + i)];
        const T wts[4] = {(T(1) - cl.fy) * (T(1) - cl.fx), (T(1) - cl.fy) * cl.fx, cl.fy * (T(1) - cl.fx), cl.fy * cl.fx};
        const std::int64_t ys[4] = {cl.y0, cl.y0, cl.y0 + 1, cl.y0 + 1};
        const std::int64_t xs[4] = {cl.x0, cl.x0 + 1, cl.x0, cl.x0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (!inside(ys[k], xs[k])) continue;
          const std::int64_t src = ys[k] * w + xs[k];
          for (std::int64_t ch = 0; ch < c; ++ch) {
            out[static_cast<std::size_t>((b * c + ch) * hw + i)] += wts[k] * xv[(b * c + ch) * hw + src];
          }
        }
      }
    }

    return make_op_result<T>(input.shape(), std::move(out), {input, offsets},
                             [input, cells, n, c, h, w, hw, inside](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gin = ctx.grad_input<T>(0);
      auto goff = ctx.grad_input<T>(1);
      auto xv = input.data<T>();
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t i = 0; i < hw; ++i) {
          const Cell& cl = (*cells)[static_cast<std::size_t>(b * hw + i)];
          const T wts[4] = {(T(1) - cl.fy) * (T(1) - cl.fx), (T(1) - cl.fy) * cl.fx, cl.fy * (T(1) - cl.fx),
                            cl.fy * cl.fx};
          // d weight / d sx and d weight / d sy for the four corners.
          const T dwx[4] = {-(T(1) - cl.fy), (T(1) - cl.fy), -cl.fy, cl.fy};
          const T dwy[4] = {-(T(1) - cl.fx), -cl.fx, (T(1) - cl.fx), cl.fx};
          const std::int64_t ys[4] = {cl.y0, cl.y0, cl.y0 + 1, cl.y0 + 1};
          const std::int64_t xs[4] = {cl.x0, cl.x0 + 1, cl.x0, cl.x0 + 1};
          T acc_x = 0, acc_y = 0;
          for (int k = 0; k < 4; ++k) {
            if (!inside(ys[k], xs[k])) continue;
            const std::int64_t src = ys[k] * w + xs[k];
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const T gv = g[static_cast<std::size_t>((b * c + ch) * hw + i)];
              if (!gin.empty()) gin[(b * c + ch) * hw + src] += wts[k] * gv;
              if (!goff.empty()) {
                const T v = xv[(b * c + ch) * hw + src] * gv;
                acc_x += dwx[k] * v;
                acc_y += dwy[k] * v;
              }
            }
          }
          if (!goff.empty()) {
            goff[static_cast<std::size_t>(b * 2 * hw + i)] += acc_x;
            goff[static_cast<std::size_t>(b * 2 * hw + hw + i)] += acc_y;
          }
        }
      }
    });
  });
}

}  // namespace srf
