#pragma once

#include "recon/grid.hpp"

namespace recon {

enum class LaplacianMode { two_d, three_d };

struct LaplacianBaselineConfig {
  LaplacianMode mode = LaplacianMode::three_d;
  double threshold = 0.05;
  int dilation_width = 7;
};

// Per z-slice: 3x3 kernel [[0,-1,0],[-1,4,-1],[0,-1,0]] with zero padding,
// |response| >= threshold, then a width x width square dilation per slice.
SurfaceMask laplacian2d_mask(const ScalarGrid& chi, const LaplacianBaselineConfig& cfg);

// Single 3D 3x3x3 Laplace kernel (center -6, face neighbors +1), zero
// padding, |response| >= threshold, then a width^3 cube dilation.
SurfaceMask laplacian3d_mask(const ScalarGrid& chi, const LaplacianBaselineConfig& cfg);

// Morphological dilation with a width^3 cube, zero-padded boundary.
SurfaceMask dilate(const SurfaceMask& mask, int width);

// Marks the voxel containing each point (floor of p*r, clamped), then
// dilates with a width^3 cube.
SurfaceMask gt_mask_from_points(const OrientedPointCloud& cloud, int res, int width);

}  // namespace recon
