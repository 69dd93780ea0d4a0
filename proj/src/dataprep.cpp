#include "recon/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "recon/masks.hpp"

namespace recon {

Eigen::Matrix3d random_rotation(Rng& rng) {
  // Shoemake: uniform unit quaternion from three uniforms
  double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  Eigen::Quaterniond q(a * std::sin(2.0 * M_PI * u2), a * std::cos(2.0 * M_PI * u2),
                       b * std::sin(2.0 * M_PI * u3), b * std::cos(2.0 * M_PI * u3));
  return q.toRotationMatrix();
}

TriangleMesh normalize_mesh(const TriangleMesh& mesh, const Eigen::Matrix3d& rotation) {
  if (mesh.vertices.empty() || mesh.triangles.empty())
    throw invalid_input("normalize_mesh: empty mesh");
  TriangleMesh out = mesh;
  out.normals.clear();  // stale after rotation; consumers resample anyway
  for (Vec3& v : out.vertices) v = rotation * v;

  Vec3 lo = out.vertices[0], hi = out.vertices[0];
  for (const Vec3& v : out.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw invalid_input("normalize_mesh: zero-extent mesh");
  double scale = 0.8 / extent;
  Vec3 center = 0.5 * (lo + hi);
  for (Vec3& v : out.vertices) v = Vec3(0.5, 0.5, 0.5) + scale * (v - center);
  return out;
}

TriangleMesh normalize_mesh(const TriangleMesh& mesh, uint64_t seed) {
  Rng rng(seed);
  return normalize_mesh(mesh, random_rotation(rng));
}

OrientedPointCloud punch_holes(const OrientedPointCloud& cloud, const HolePunchConfig& cfg) {
  if (cloud.positions.empty()) throw invalid_input("punch_holes: empty cloud");
  if (!(cfg.radius_min > 0.0) || cfg.radius_min > cfg.radius_max || cfg.radius_max >= 0.5)
    throw invalid_input("punch_holes: need 0 < radius_min <= radius_max < 0.5");
  if (cfg.num_regions == 0) return cloud;

  Rng rng(cfg.seed);
  std::vector<Vec3> centers(cfg.num_regions);
  std::vector<double> radii(cfg.num_regions);
  for (size_t h = 0; h < cfg.num_regions; ++h) {
    centers[h] = cloud.positions[rng.below(cloud.positions.size())];
    radii[h] = rng.uniform(cfg.radius_min, cfg.radius_max);
  }

  OrientedPointCloud out;
  bool with_normals = cloud.has_normals();
  for (size_t i = 0; i < cloud.positions.size(); ++i) {
    bool removed = false;
    for (size_t h = 0; h < cfg.num_regions && !removed; ++h)
      removed = (cloud.positions[i] - centers[h]).norm() < radii[h];
    if (removed) continue;
    out.positions.push_back(cloud.positions[i]);
    if (with_normals) out.normals.push_back(cloud.normals[i]);
  }
  return out;
}

OrientedPointCloud augment(const OrientedPointCloud& cloud, const AugmentationSetting& setting,
                           uint64_t seed) {
  if (cloud.positions.empty()) throw invalid_input("augment: empty cloud");
  Rng rng(seed);
  size_t n = cloud.positions.size();
  OrientedPointCloud out;
  out.positions = cloud.positions;

  auto clamp_cube = [](Vec3& p) {
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], 0.0, 1.0);
  };

  if (setting.kind == AugmentKind::outliers) {
    // exact-half split via Fisher-Yates
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    std::vector<uint8_t> keep_noise(n, 0);
    for (size_t i = 0; i < n / 2; ++i) keep_noise[idx[i]] = 1;

    for (size_t i = 0; i < n; ++i) {
      if (keep_noise[i]) {
        for (int a = 0; a < 3; ++a) out.positions[i][a] += setting.sigma * rng.gaussian();
        clamp_cube(out.positions[i]);
      } else {
        out.positions[i] = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
      }
    }
    return out;
  }

  for (size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) out.positions[i][a] += setting.sigma * rng.gaussian();
    clamp_cube(out.positions[i]);
  }
  return out;
}

TrainingExample make_example(const TriangleMesh& mesh, const ExampleConfig& cfg) {
  TriangleMesh normalized = normalize_mesh(mesh, derive_seed(cfg.seed, "rotate"));
  OrientedPointCloud full =
      sample_mesh_surface(normalized, cfg.n_samples, derive_seed(cfg.seed, "sample"));

  SolverConfig solver;
  solver.res = cfg.res;
  solver.sigma = cfg.sigma;
  solver.iso_scale = cfg.iso_scale;

  TrainingExample example;
  example.gt_chi = dpsr_forward(full, solver, nullptr);

  HolePunchConfig holes = cfg.holes;
  holes.seed = derive_seed(cfg.seed, "holes");
  example.gt_cloud = holes.num_regions > 0 ? punch_holes(full, holes) : full;
  if (example.gt_cloud.positions.empty())
    throw runtime_failure("make_example: hole punching removed every point");

  example.gt_mask = gt_mask_from_points(example.gt_cloud, cfg.res, cfg.mask_width);

  if (cfg.aug) {
    example.input_cloud = augment(example.gt_cloud, *cfg.aug, derive_seed(cfg.seed, "augment"));
  } else {
    example.input_cloud.positions = example.gt_cloud.positions;
  }
  return example;
}

TriangleMesh make_icosphere(int subdivisions) {
  if (subdivisions < 0 || subdivisions > 7) throw invalid_input("make_icosphere: subdivisions in [0,7]");
  double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh mesh;
  mesh.vertices = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
  };
  for (Vec3& v : mesh.vertices) v.normalize();
  mesh.triangles = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
      {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
  };

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint;
    auto mid = [&](uint32_t a, uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      uint32_t idx = static_cast<uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<uint32_t, 3>> next;
    next.reserve(mesh.triangles.size() * 4);
    for (const auto& tr : mesh.triangles) {
      uint32_t ab = mid(tr[0], tr[1]), bc = mid(tr[1], tr[2]), ca = mid(tr[2], tr[0]);
      next.push_back({tr[0], ab, ca});
      next.push_back({tr[1], bc, ab});
      next.push_back({tr[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.triangles = std::move(next);
  }
  return mesh;
}

TriangleMesh make_torus(double major, double minor, int major_segments, int minor_segments) {
  if (!(major > minor) || !(minor > 0.0)) throw invalid_input("make_torus: need major > minor > 0");
  if (major_segments < 3 || minor_segments < 3) throw invalid_input("make_torus: need >= 3 segments");
  TriangleMesh mesh;
  for (int i = 0; i < major_segments; ++i) {
    double u = 2.0 * M_PI * i / major_segments;
    for (int j = 0; j < minor_segments; ++j) {
      double v = 2.0 * M_PI * j / minor_segments;
      double ring = major + minor * std::cos(v);
      mesh.vertices.emplace_back(ring * std::cos(u), ring * std::sin(u), minor * std::sin(v));
    }
  }
  auto vid = [&](int i, int j) {
    return static_cast<uint32_t>((i % major_segments) * minor_segments + (j % minor_segments));
  };
  for (int i = 0; i < major_segments; ++i)
    for (int j = 0; j < minor_segments; ++j) {
      uint32_t a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
      mesh.triangles.push_back({a, b, c});
      mesh.triangles.push_back({a, c, d});
    }
  return mesh;
}

TriangleMesh make_box() {
  TriangleMesh mesh;
  for (int c = 0; c < 8; ++c)
    mesh.vertices.emplace_back(c & 1 ? 1.0 : -1.0, c & 2 ? 1.0 : -1.0, c & 4 ? 1.0 : -1.0);
  // two triangles per face, outward winding
  mesh.triangles = {
      {0, 2, 3}, {0, 3, 1},  // z = -1
      {4, 5, 7}, {4, 7, 6},  // z = +1
      {0, 1, 5}, {0, 5, 4},  // y = -1
      {2, 6, 7}, {2, 7, 3},  // y = +1
      {0, 4, 6}, {0, 6, 2},  // x = -1
      {1, 3, 7}, {1, 7, 5},  // x = +1
  };
  return mesh;
}

}  // namespace recon
