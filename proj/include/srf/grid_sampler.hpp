#pragma once

#include "srf/tensor.hpp"

namespace srf {

/// Bilinear upsampling by an integer factor with the half-pixel
/// (align-corners = false) convention: source = (dst + 0.5) / factor - 0.5,
/// clamped to the input extent. Factor 1 is the identity.
Tensor bilinear_upsample(const Tensor& input, int factor);

/// Samples `input` (N×C×H×W) at (x + dx, y + dy) for every pixel, where
/// `offsets` is N×2×H×W with channel 0 = dx (columns) and channel 1 = dy
/// (rows), in pixels. Each output is
///
///   sum_{m,n} input(m, n) · max(0, 1 - |x + dx - m|) · max(0, 1 - |y + dy - n|)
///
/// evaluated over the (at most four) grid points with non-zero weight. Grid
/// points outside the map contribute nothing, so samples farther than one
/// pixel outside vanish.
///
/// The offset gradient is taken from the cell (ceil(s) - 1, ceil(s)], i.e. the
/// left-sided derivative at integer sample positions.
Tensor sample_with_offsets(const Tensor& input, const Tensor& offsets);

}  // namespace srf
