#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recon/grid.hpp"
#include "recon/meshing.hpp"

namespace recon {

// Exact nearest-neighbor index. Distances are computed with the same
// expression brute force would use, so query results are bit-identical to an
// O(n^2) scan (asserted in tests).
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points);

  // squared distance to the nearest point
  double nearest_dist2(const Vec3& q) const;

  // indices of the k nearest points, closest first; ties broken by index
  std::vector<size_t> knn(const Vec3& q, size_t k) const;

  size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;
    size_t begin = 0, end = 0;  // leaf range into order_
    int left = -1, right = -1;
    double split = 0.0;
  };

  int build(size_t begin, size_t end);
  void nearest(int node, const Vec3& q, double& best) const;
  struct KnnHeap;
  void knn_walk(int node, const Vec3& q, KnnHeap& heap) const;

  std::vector<Vec3> points_;
  std::vector<size_t> order_;
  std::vector<Node> nodes_;
};

// CD = (1/|S1|) sum_x min_y |x-y|^2 + (1/|S2|) sum_y min_x |x-y|^2
double chamfer(const std::vector<Vec3>& s1, const std::vector<Vec3>& s2);

// HD = max of the two directed sup-inf distances, unsquared
double hausdorff(const std::vector<Vec3>& s1, const std::vector<Vec3>& s2);

struct MetricReport {
  double chamfer = 0.0;    // squared-distance units
  double hausdorff = 0.0;  // distance units
  size_t n_source = 0;
  size_t n_target = 0;
  uint64_t seed = 0;
  // watertightness context (the metrics alone can miss small holes)
  int64_t pred_boundary_edges = -1;
  int64_t gt_boundary_edges = -1;
};

MetricReport evaluate_meshes(const TriangleMesh& pred, const TriangleMesh& gt, size_t n, uint64_t seed);

std::string metric_report_json(const MetricReport& report);
std::string metric_report_csv_header();
std::string metric_report_csv_row(const std::string& label, const MetricReport& report);

}  // namespace recon
