#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "recon/errors.hpp"

namespace recon {

using Vec3 = Eigen::Vector3d;

// Dense r^3 scalar field on the unit cube. Layout is x-fastest, then y, then
// z; voxel centers sit at ((i+0.5)/r, (j+0.5)/r, (k+0.5)/r).
struct ScalarGrid {
  int res = 0;
  std::vector<double> data;

  ScalarGrid() = default;
  explicit ScalarGrid(int r, double fill = 0.0)
      : res(r), data(static_cast<size_t>(r) * r * r, fill) {}

  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) + static_cast<size_t>(res) * (static_cast<size_t>(j) + static_cast<size_t>(res) * k);
  }
  double& at(int i, int j, int k) { return data[index(i, j, k)]; }
  double at(int i, int j, int k) const { return data[index(i, j, k)]; }
  size_t size() const { return data.size(); }
};

// Dense r^3 field of 3-vectors, interleaved xyz, same layout as ScalarGrid.
struct VectorGrid {
  int res = 0;
  std::vector<double> data;

  VectorGrid() = default;
  explicit VectorGrid(int r) : res(r), data(static_cast<size_t>(r) * r * r * 3, 0.0) {}

  size_t index(int i, int j, int k) const {
    return 3 * (static_cast<size_t>(i) + static_cast<size_t>(res) * (static_cast<size_t>(j) + static_cast<size_t>(res) * k));
  }
  double& at(int i, int j, int k, int c) { return data[index(i, j, k) + c]; }
  double at(int i, int j, int k, int c) const { return data[index(i, j, k) + c]; }
  size_t voxels() const { return data.size() / 3; }
};

// Binary voxel mask, same layout as ScalarGrid.
struct SurfaceMask {
  int res = 0;
  std::vector<uint8_t> data;

  SurfaceMask() = default;
  explicit SurfaceMask(int r, bool fill = false)
      : res(r), data(static_cast<size_t>(r) * r * r, fill ? 1 : 0) {}

  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) + static_cast<size_t>(res) * (static_cast<size_t>(j) + static_cast<size_t>(res) * k);
  }
  bool at(int i, int j, int k) const { return data[index(i, j, k)] != 0; }
  void set(int i, int j, int k, bool v) { data[index(i, j, k)] = v ? 1 : 0; }
  size_t count() const;
};

// Point samples in the unit cube. Normals are optional (empty for unoriented
// clouds); when present they match positions one-to-one and are unit length.
struct OrientedPointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;

  bool has_normals() const { return !normals.empty(); }
  size_t size() const { return positions.size(); }
};

// The 8 trilinear corner weights of a point. Corner indices are clamped to
// the grid, so weights always sum to 1 and samples beyond the outermost voxel
// centers read the boundary value.
struct TrilinearStencil {
  std::array<int, 2> ix, iy, iz;  // clamped corner indices per axis
  std::array<double, 2> wx, wy, wz;  // 1-t / t weights per axis
};

TrilinearStencil trilinear_stencil(int res, const Vec3& p);

double trilinear_sample(const ScalarGrid& grid, const Vec3& p);
Vec3 trilinear_sample(const VectorGrid& grid, const Vec3& p);

// Value and its derivative with respect to the sample position.
void trilinear_sample_grad(const ScalarGrid& grid, const Vec3& p, double* value, Vec3* dvalue_dp);

// Scatters each normal to the 8 voxels around its point with trilinear
// weights (the adjoint of trilinear_sample); contributions accumulate.
VectorGrid rasterize_point_normals(const OrientedPointCloud& cloud, int res);

// Scatters scalar weight 1 per point; used by the solver's backward pass.
ScalarGrid rasterize_point_weights(const std::vector<Vec3>& positions, int res);

// Gradients of <upstream, rasterize(cloud)> with respect to positions and
// normals; matches central finite differences.
void rasterize_vjp(const OrientedPointCloud& cloud, const VectorGrid& upstream,
                   std::vector<Vec3>* grad_positions, std::vector<Vec3>* grad_normals);

// Binary grid file formats: magic ("VGRD"/"VVEC"/"VMSK"), u32 little-endian
// resolution, then the payload as little-endian f32 (mask: u8 in {0,1}),
// x-fastest order.
void save_grid(const std::string& path, const ScalarGrid& grid);
void save_grid(const std::string& path, const VectorGrid& grid);
void save_grid(const std::string& path, const SurfaceMask& mask);
ScalarGrid load_scalar_grid(const std::string& path);
VectorGrid load_vector_grid(const std::string& path);
SurfaceMask load_surface_mask(const std::string& path);

}  // namespace recon
