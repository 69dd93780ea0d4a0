#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "recon/meshing.hpp"
#include "recon/rng.hpp"

using namespace recon;

namespace {

ScalarGrid sphere_sdf(int r, double radius) {
  ScalarGrid g(r);
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        Vec3 p((i + 0.5) / r, (j + 0.5) / r, (k + 0.5) / r);
        g.at(i, j, k) = (p - Vec3(0.5, 0.5, 0.5)).norm() - radius;
      }
  return g;
}

std::multiset<std::array<long long, 9>> triangle_soup_keys(const TriangleMesh& mesh) {
  auto quant = [](double x) { return static_cast<long long>(std::llround(x * 1e12)); };
  std::multiset<std::array<long long, 9>> keys;
  for (const auto& t : mesh.triangles) {
    std::array<std::array<long long, 3>, 3> pts;
    for (int c = 0; c < 3; ++c) {
      const Vec3& v = mesh.vertices[t[c]];
      pts[c] = {quant(v[0]), quant(v[1]), quant(v[2])};
    }
    std::sort(pts.begin(), pts.end());
    keys.insert({pts[0][0], pts[0][1], pts[0][2], pts[1][0], pts[1][1], pts[1][2], pts[2][0], pts[2][1], pts[2][2]});
  }
  return keys;
}

}  // namespace

TEST_CASE("marching_cubes: sphere SDF vertices sit on the sphere, mesh watertight") {
  int r = 64;
  ScalarGrid g = sphere_sdf(r, 0.3);
  TriangleMesh mesh = marching_cubes(g, 0.0);
  REQUIRE(!mesh.empty());
  for (const Vec3& v : mesh.vertices) {
    CHECK(v[0] >= 0.0);
    CHECK(v[0] <= 1.0);
    double dist = std::abs((v - Vec3(0.5, 0.5, 0.5)).norm() - 0.3);
    CHECK(dist < 1.5 / 64.0);
  }
  WatertightReport wt = watertight_check(mesh);
  CHECK(wt.is_watertight);
  CHECK(wt.boundary_edge_count == 0);
}

TEST_CASE("marching_cubes: constant grid gives empty mesh") {
  ScalarGrid g(8, 1.0);
  CHECK(marching_cubes(g, 0.0).empty());
  ScalarGrid h(8, -1.0);
  CHECK(marching_cubes(h, 0.0).empty());
}

TEST_CASE("marching_cubes: negated grid and iso give the same vertex set") {
  Rng rng(3);
  ScalarGrid g(8);
  for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
  double iso = 0.05;
  TriangleMesh a = marching_cubes(g, iso);
  ScalarGrid neg = g;
  for (double& v : neg.data) v = -v;
  TriangleMesh b = marching_cubes(neg, -iso);
  REQUIRE(a.vertices.size() == b.vertices.size());

  auto key = [](const Vec3& v) {
    return std::array<long long, 3>{static_cast<long long>(std::llround(v[0] * 1e12)),
                                    static_cast<long long>(std::llround(v[1] * 1e12)),
                                    static_cast<long long>(std::llround(v[2] * 1e12))};
  };
  std::multiset<std::array<long long, 3>> ka, kb;
  for (const Vec3& v : a.vertices) ka.insert(key(v));
  for (const Vec3& v : b.vertices) kb.insert(key(v));
  CHECK(ka == kb);
}

TEST_CASE("marching_cubes vertices straddle iso along their cell edge") {
  Rng rng(11);
  ScalarGrid g(6);
  for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
  double iso = 0.1;
  TriangleMesh mesh = marching_cubes(g, iso);
  REQUIRE(!mesh.empty());
  int r = g.res;
  for (const Vec3& v : mesh.vertices) {
    // recover the lattice edge this vertex lies on: exactly one coordinate is
    // off-center
    Vec3 gridc = v * r - Vec3(0.5, 0.5, 0.5);
    int axis = -1;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      double rounded = std::round(gridc[a]);
      if (std::abs(gridc[a] - rounded) > 1e-9) {
        REQUIRE(axis == -1);
        axis = a;
        idx[a] = static_cast<int>(std::floor(gridc[a]));
      } else {
        idx[a] = static_cast<int>(rounded);
      }
    }
    REQUIRE(axis != -1);
    int lo[3] = {idx[0], idx[1], idx[2]};
    int hi[3] = {idx[0], idx[1], idx[2]};
    hi[axis] += 1;
    double va = g.at(lo[0], lo[1], lo[2]);
    double vb = g.at(hi[0], hi[1], hi[2]);
    CHECK(std::min(va, vb) <= iso);
    CHECK(std::max(va, vb) >= iso);
  }
}

TEST_CASE("masked_marching_cubes: full mask is bitwise identical") {
  ScalarGrid g = sphere_sdf(32, 0.3);
  SurfaceMask mask(32, true);
  TriangleMesh plain = marching_cubes(g, 0.0);
  TriangleMesh masked = masked_marching_cubes(g, mask, 0.0, CellRule::all);
  REQUIRE(plain.vertices.size() == masked.vertices.size());
  REQUIRE(plain.triangles.size() == masked.triangles.size());
  for (size_t i = 0; i < plain.vertices.size(); ++i) {
    CHECK(plain.vertices[i][0] == masked.vertices[i][0]);
    CHECK(plain.vertices[i][1] == masked.vertices[i][1]);
    CHECK(plain.vertices[i][2] == masked.vertices[i][2]);
  }
  CHECK(plain.triangles == masked.triangles);
}

TEST_CASE("masked_marching_cubes: empty mask gives empty mesh") {
  ScalarGrid g = sphere_sdf(32, 0.3);
  SurfaceMask mask(32, false);
  CHECK(masked_marching_cubes(g, mask, 0.0).empty());
}

TEST_CASE("masked_marching_cubes: hemisphere mask opens the sphere") {
  int r = 64;
  ScalarGrid g = sphere_sdf(r, 0.3);
  SurfaceMask mask(r);
  // upper half-space z >= 0.5, dilated down one voxel
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        double z = (k + 0.5) / static_cast<double>(r);
        mask.set(i, j, k, z >= 0.5 - 1.0 / r);
      }
  TriangleMesh mesh = masked_marching_cubes(g, mask, 0.0, CellRule::all);
  REQUIRE(!mesh.empty());
  WatertightReport wt = watertight_check(mesh);
  CHECK(!wt.is_watertight);
  CHECK(wt.boundary_edge_count > 0);
  for (const Vec3& v : mesh.vertices) {
    CHECK(std::abs((v - Vec3(0.5, 0.5, 0.5)).norm() - 0.3) < 1.5 / 64.0);
    CHECK(v[2] >= 0.5 - 2.0 / 64.0);
  }
}

TEST_CASE("masked_marching_cubes: cell_rule=all output is a triangle subset") {
  ScalarGrid g = sphere_sdf(32, 0.28);
  Rng rng(7);
  SurfaceMask mask(32);
  for (auto& v : mask.data) v = rng.uniform() < 0.7 ? 1 : 0;
  TriangleMesh full = marching_cubes(g, 0.0);
  TriangleMesh restricted = masked_marching_cubes(g, mask, 0.0, CellRule::all);
  auto full_keys = triangle_soup_keys(full);
  auto sub_keys = triangle_soup_keys(restricted);
  CHECK(std::includes(full_keys.begin(), full_keys.end(), sub_keys.begin(), sub_keys.end()));

  // any-rule admits at least as many cells as all-rule
  TriangleMesh loose = masked_marching_cubes(g, mask, 0.0, CellRule::any);
  CHECK(loose.triangles.size() >= restricted.triangles.size());
}

TEST_CASE("masked_marching_cubes rejects resolution mismatch") {
  ScalarGrid g(8);
  SurfaceMask mask(4);
  CHECK_THROWS_AS(masked_marching_cubes(g, mask, 0.0), invalid_input);
}

TEST_CASE("sample_mesh_surface: single triangle stays in plane with its normal") {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0.1, 0.1, 0.3), Vec3(0.9, 0.2, 0.3), Vec3(0.4, 0.8, 0.3)};
  mesh.triangles = {{0, 1, 2}};
  OrientedPointCloud cloud = sample_mesh_surface(mesh, 1000, 5);
  Vec3 expected_normal = (mesh.vertices[1] - mesh.vertices[0]).cross(mesh.vertices[2] - mesh.vertices[0]).normalized();
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(std::abs(cloud.positions[i][2] - 0.3) < 1e-12);
    CHECK((cloud.normals[i] - expected_normal).norm() < 1e-12);
  }
}

TEST_CASE("sample_mesh_surface: area-proportional allocation") {
  TriangleMesh mesh;
  // right triangles with legs 0.9 and 0.3: areas 0.405 and 0.045 (ratio 9:1)
  mesh.vertices = {Vec3(0, 0, 0), Vec3(0.9, 0, 0), Vec3(0, 0.9, 0),
                   Vec3(0, 0, 0.5), Vec3(0.3, 0, 0.5), Vec3(0, 0.3, 0.5)};
  mesh.triangles = {{0, 1, 2}, {3, 4, 5}};
  size_t n = 10000;
  OrientedPointCloud cloud = sample_mesh_surface(mesh, n, 17);
  size_t big = 0;
  for (const Vec3& p : cloud.positions) big += p[2] < 0.25;
  double expect = 9000.0, sigma = std::sqrt(10000 * 0.9 * 0.1);
  CHECK(std::abs(static_cast<double>(big) - expect) < 3 * sigma);
}

TEST_CASE("sample_mesh_surface: deterministic and mean near centroid") {
  ScalarGrid g = sphere_sdf(32, 0.3);
  TriangleMesh mesh = marching_cubes(g, 0.0);
  OrientedPointCloud a = sample_mesh_surface(mesh, 2000, 99);
  OrientedPointCloud b = sample_mesh_surface(mesh, 2000, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.positions[i] == b.positions[i]);
    CHECK(a.normals[i] == b.normals[i]);
  }

  size_t n = 100000;
  OrientedPointCloud big = sample_mesh_surface(mesh, n, 7);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : big.positions) mean += p;
  mean /= static_cast<double>(n);
  // sphere sampling: per-axis sigma ~ radius/sqrt(3n)
  double tol = 3.0 * 0.3 / std::sqrt(3.0 * n);
  CHECK((mean - Vec3(0.5, 0.5, 0.5)).norm() < 3 * tol);
}

TEST_CASE("sample_mesh_surface rejects empty meshes") {
  TriangleMesh mesh;
  CHECK_THROWS_AS(sample_mesh_surface(mesh, 10, 0), invalid_input);
}

TEST_CASE("watertight_check: tetrahedron closed, lone triangle open") {
  TriangleMesh tet;
  tet.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  tet.triangles = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  WatertightReport wt = watertight_check(tet);
  CHECK(wt.is_watertight);
  CHECK(wt.boundary_edge_count == 0);

  TriangleMesh tri;
  tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  tri.triangles = {{0, 1, 2}};
  wt = watertight_check(tri);
  CHECK(!wt.is_watertight);
  CHECK(wt.boundary_edge_count == 3);
}

TEST_CASE("OBJ round-trip preserves geometry") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "recon_mesh_io";
  fs::create_directories(dir);

  ScalarGrid g = sphere_sdf(16, 0.3);
  TriangleMesh mesh = marching_cubes(g, 0.0);
  std::string path = (dir / "sphere.obj").string();
  save_mesh_obj(path, mesh);
  TriangleMesh back = load_mesh(path);
  REQUIRE(back.vertices.size() == mesh.vertices.size());
  REQUIRE(back.triangles.size() == mesh.triangles.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    CHECK((back.vertices[i] - mesh.vertices[i]).norm() == 0.0);
  CHECK(back.triangles == mesh.triangles);
}

TEST_CASE("OFF parsing with polygon fan-triangulation") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "recon_mesh_io";
  fs::create_directories(dir);
  std::string path = (dir / "quad.off").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fprintf(f, "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
    std::fclose(f);
  }
  TriangleMesh mesh = load_mesh(path);
  REQUIRE(mesh.vertices.size() == 4);
  REQUIRE(mesh.triangles.size() == 2);
  CHECK(mesh.triangles[0] == std::array<uint32_t, 3>{0, 1, 2});
  CHECK(mesh.triangles[1] == std::array<uint32_t, 3>{0, 2, 3});
}

TEST_CASE("mesh loaders reject garbage") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "recon_mesh_io";
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_mesh((dir / "missing.obj").string()), invalid_input);

  std::string path = (dir / "bad.obj").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fprintf(f, "v 0 0 0\nv 1 0 0\nf 1 2 5\n");
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_mesh(path), invalid_input);
}
