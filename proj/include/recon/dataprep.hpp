#pragma once

#include <optional>

#include "recon/dpsr.hpp"
#include "recon/grid.hpp"
#include "recon/meshing.hpp"
#include "recon/rng.hpp"

namespace recon {

enum class AugmentKind { low_noise, high_noise, outliers };

struct AugmentationSetting {
  AugmentKind kind = AugmentKind::low_noise;
  double sigma = 0.005;  // Gaussian sigma; for outliers, the sigma of the noised half

  static AugmentationSetting low_noise() { return {AugmentKind::low_noise, 0.005}; }
  static AugmentationSetting high_noise() { return {AugmentKind::high_noise, 0.025}; }
  static AugmentationSetting outliers() { return {AugmentKind::outliers, 0.005}; }
};

struct HolePunchConfig {
  size_t num_regions = 4;
  double radius_min = 0.08;
  double radius_max = 0.15;
  uint64_t seed = 0;
};

struct TrainingExample {
  OrientedPointCloud input_cloud;  // unoriented, augmented
  OrientedPointCloud gt_cloud;     // oriented, holes punched
  ScalarGrid gt_chi;
  SurfaceMask gt_mask;
};

// Uniformly random rotation (Shoemake's quaternion method).
Eigen::Matrix3d random_rotation(Rng& rng);

// Rotates, then translates/uniformly scales so the bounding box is centered
// in the unit cube with the longest axis spanning exactly 0.8.
TriangleMesh normalize_mesh(const TriangleMesh& mesh, const Eigen::Matrix3d& rotation);
TriangleMesh normalize_mesh(const TriangleMesh& mesh, uint64_t seed);

// Removes every point strictly inside any of num_regions spheres; centers are
// drawn uniformly from the cloud's own points, radii from the config range.
OrientedPointCloud punch_holes(const OrientedPointCloud& cloud, const HolePunchConfig& cfg);

// low/high: i.i.d. Gaussian per coordinate, clamped to the unit cube.
// outliers: an exact-half subset gets the Gaussian treatment, the rest are
// replaced by uniform samples. Output is unoriented.
OrientedPointCloud augment(const OrientedPointCloud& cloud, const AugmentationSetting& setting,
                           uint64_t seed);

struct ExampleConfig {
  int res = 64;
  size_t n_samples = 20000;
  HolePunchConfig holes;
  std::optional<AugmentationSetting> aug;  // nullopt: input = punched cloud, unoriented
  int mask_width = 5;
  double sigma = 2.0;
  double iso_scale = 0.5;
  uint64_t seed = 0;
};

// normalize -> sample -> gt_chi (pre-hole) -> punch -> gt_mask -> augment.
// Stage RNG streams are derived from cfg.seed, so gt_chi does not depend on
// the hole or augmentation draws.
TrainingExample make_example(const TriangleMesh& mesh, const ExampleConfig& cfg);

// Analytic closed test shapes, centered at the origin (normalize_mesh fits
// them to the unit cube).
TriangleMesh make_icosphere(int subdivisions);
TriangleMesh make_torus(double major, double minor, int major_segments, int minor_segments);
TriangleMesh make_box();

}  // namespace recon
