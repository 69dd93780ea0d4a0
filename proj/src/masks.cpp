#include "recon/masks.hpp"

#include <cmath>

namespace recon {

namespace {

void check_width(int width) {
  if (width < 1 || width % 2 == 0) throw invalid_input("dilation width must be odd and >= 1");
}

void check_config(const LaplacianBaselineConfig& cfg) {
  if (!(cfg.threshold >= 0.0)) throw invalid_input("laplacian mask: threshold must be >= 0");
  check_width(cfg.dilation_width);
}

// dilate along one axis with a centered window of the given width
void dilate_axis(const SurfaceMask& in, SurfaceMask& out, int axis, int width) {
  int r = in.res;
  int h = (width - 1) / 2;
  int stride[3] = {1, r, r * r};
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        int pos[3] = {i, j, k};
        uint8_t v = 0;
        for (int d = -h; d <= h && !v; ++d) {
          int q = pos[axis] + d;
          if (q < 0 || q >= r) continue;
          size_t lin = in.index(i, j, k) + static_cast<size_t>(stride[axis]) * (q - pos[axis]);
          v = in.data[lin];
        }
        out.data[out.index(i, j, k)] = v;
      }
}

SurfaceMask dilate_axes(const SurfaceMask& mask, int width, bool include_z) {
  SurfaceMask a = mask, b(mask.res);
  dilate_axis(a, b, 0, width);
  dilate_axis(b, a, 1, width);
  if (!include_z) return a;
  dilate_axis(a, b, 2, width);
  return b;
}

}  // namespace

SurfaceMask laplacian2d_mask(const ScalarGrid& chi, const LaplacianBaselineConfig& cfg) {
  if (cfg.mode != LaplacianMode::two_d) throw invalid_input("laplacian2d_mask: config mode is not 2D");
  check_config(cfg);
  int r = chi.res;
  SurfaceMask mask(r);
  auto at = [&](int i, int j, int k) {
    if (i < 0 || i >= r || j < 0 || j >= r) return 0.0;  // zero padding in-slice
    return chi.at(i, j, k);
  };
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        double resp = 4.0 * at(i, j, k) - at(i - 1, j, k) - at(i + 1, j, k) - at(i, j - 1, k) - at(i, j + 1, k);
        mask.set(i, j, k, std::abs(resp) >= cfg.threshold);
      }
  return dilate_axes(mask, cfg.dilation_width, /*include_z=*/false);
}

SurfaceMask laplacian3d_mask(const ScalarGrid& chi, const LaplacianBaselineConfig& cfg) {
  if (cfg.mode != LaplacianMode::three_d) throw invalid_input("laplacian3d_mask: config mode is not 3D");
  check_config(cfg);
  int r = chi.res;
  SurfaceMask mask(r);
  auto at = [&](int i, int j, int k) {
    if (i < 0 || i >= r || j < 0 || j >= r || k < 0 || k >= r) return 0.0;
    return chi.at(i, j, k);
  };
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        double resp = -6.0 * at(i, j, k) + at(i - 1, j, k) + at(i + 1, j, k) + at(i, j - 1, k) +
                      at(i, j + 1, k) + at(i, j, k - 1) + at(i, j, k + 1);
        mask.set(i, j, k, std::abs(resp) >= cfg.threshold);
      }
  return dilate(mask, cfg.dilation_width);
}

SurfaceMask dilate(const SurfaceMask& mask, int width) {
  check_width(width);
  if (width == 1) return mask;
  return dilate_axes(mask, width, /*include_z=*/true);
}

SurfaceMask gt_mask_from_points(const OrientedPointCloud& cloud, int res, int width) {
  check_width(width);
  if (res < 2) throw invalid_input("gt_mask_from_points: resolution must be >= 2");
  SurfaceMask mask(res);
  for (const Vec3& p : cloud.positions) {
    if (!p.allFinite()) throw invalid_input("gt_mask_from_points: non-finite point");
    int i = std::clamp(static_cast<int>(std::floor(p[0] * res)), 0, res - 1);
    int j = std::clamp(static_cast<int>(std::floor(p[1] * res)), 0, res - 1);
    int k = std::clamp(static_cast<int>(std::floor(p[2] * res)), 0, res - 1);
    mask.set(i, j, k, true);
  }
  return dilate(mask, width);
}

}  // namespace recon
