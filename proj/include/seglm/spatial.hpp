#pragma once

// Fixed resampling maps over images stored one pixel per row (row index
// y·width + x, channels as columns), optionally stacked in batch blocks.

#include <memory>

#include "seglm/autograd.hpp"

namespace seglm::spatial {

using MapPtr = std::shared_ptr<const ag::SparseMap>;

/// [H·W × C] → [(H/p)(W/p) × p·p·C]; column (dy·p + dx)·C + c.
MapPtr patchify(int height, int width, int channels, int patch);

/// 3×3 zero-padded neighbourhoods: [h·w × C] → [h·w × 9C]; column (ky·3 + kx)·C + c.
MapPtr im2col3x3(int height, int width, int channels, int batch = 1);

/// [h·w × 4C] → [2h·2w × C]; input column (dy·2 + dx)·C + c lands at (2y+dy, 2x+dx).
MapPtr pixel_shuffle2(int height, int width, int channels, int batch = 1);

/// Bilinear upsampling by an integer factor with half-pixel centres and edge
/// clamping: [h·w × C] → [fh·fw × C].
MapPtr upsample_bilinear(int height, int width, int channels, int factor, int batch = 1);

/// 2-D sinusoidal position code for a grid, one row per cell: [h·w × dim].
ag::Mat sinusoidal_grid(int height, int width, int dim);

}  // namespace seglm::spatial
