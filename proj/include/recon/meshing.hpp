#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "recon/grid.hpp"

namespace recon {

extern const int kMcEdgeTable[256];
extern const int kMcTriTable[256][16];

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<uint32_t, 3>> triangles;
  std::vector<Vec3> normals;  // optional, per-vertex

  bool empty() const { return triangles.empty(); }
};

enum class CellRule { all, any };

// Standard 256-case marching cubes over the (r-1)^3 cell lattice spanned by
// voxel centers; vertices by linear interpolation at the iso crossing.
TriangleMesh marching_cubes(const ScalarGrid& chi, double iso);

// Same extraction, but a cell is processed only if its 8 corner voxels
// satisfy cell_rule against the mask. A full mask reproduces marching_cubes
// exactly.
TriangleMesh masked_marching_cubes(const ScalarGrid& chi, const SurfaceMask& mask, double iso,
                                   CellRule cell_rule = CellRule::all);

// n points drawn area-proportionally over triangles, uniform within each via
// barycentric sampling; normals are the face normals of the source triangle.
OrientedPointCloud sample_mesh_surface(const TriangleMesh& mesh, size_t n, uint64_t seed);

struct WatertightReport {
  bool is_watertight = false;
  size_t boundary_edge_count = 0;
};

WatertightReport watertight_check(const TriangleMesh& mesh);

// OBJ (v/vn/f, 1-based); OFF input also accepted. Polygon faces are
// fan-triangulated on load.
void save_mesh_obj(const std::string& path, const TriangleMesh& mesh);
TriangleMesh load_mesh(const std::string& path);

}  // namespace recon
