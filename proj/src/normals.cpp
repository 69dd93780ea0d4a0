#include "recon/normals.hpp"

#include <Eigen/Eigenvalues>
#include <queue>

#include "recon/metrics.hpp"

namespace recon {

OrientedPointCloud estimate_normals(const std::vector<Vec3>& positions, int k,
                                    std::vector<uint8_t>* degenerate) {
  size_t n = positions.size();
  if (k < 3) throw invalid_input("estimate_normals: need k >= 3");
  if (n < static_cast<size_t>(k)) throw invalid_input("estimate_normals: k exceeds cloud size");

  KdTree3 tree(positions);
  std::vector<std::vector<size_t>> neighbors(n);
  OrientedPointCloud cloud;
  cloud.positions = positions;
  cloud.normals.resize(n);
  if (degenerate) degenerate->assign(n, 0);

  for (size_t i = 0; i < n; ++i) {
    neighbors[i] = tree.knn(positions[i], k);
    Vec3 mean = Vec3::Zero();
    for (size_t j : neighbors[i]) mean += positions[j];
    mean /= static_cast<double>(k);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (size_t j : neighbors[i]) {
      Vec3 d = positions[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    // eigenvalues ascending: lambda0 <= lambda1 <= lambda2; the normal needs
    // a full-rank tangent plane, i.e. lambda1 well away from zero
    double l1 = eig.eigenvalues()[1], l2 = eig.eigenvalues()[2];
    if (!(l2 > 0.0) || l1 <= 1e-9 * l2) {
      cloud.normals[i] = Vec3(0.0, 0.0, 1.0);
      if (degenerate) (*degenerate)[i] = 1;
      continue;
    }
    cloud.normals[i] = eig.eigenvectors().col(0).normalized();
  }

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : positions) centroid += p;
  centroid /= static_cast<double>(n);

  // symmetric k-NN adjacency so orientation can flow both ways
  std::vector<std::vector<size_t>> adj(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j : neighbors[i]) {
      if (j == i) continue;
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
  }

  std::vector<uint8_t> collected(n, 0);
  std::vector<uint8_t> visited(n, 0);
  std::vector<size_t> comp;
  for (size_t scan = 0; scan < n; ++scan) {
    if (collected[scan]) continue;
    comp.assign(1, scan);
    collected[scan] = 1;
    for (size_t head = 0; head < comp.size(); ++head)
      for (size_t nb : adj[comp[head]])
        if (!collected[nb]) {
          collected[nb] = 1;
          comp.push_back(nb);
        }

    // at the farthest point the surface normal is parallel to p - centroid,
    // so the away-from-centroid sign check is reliable there
    size_t root = comp[0];
    double best = (positions[root] - centroid).squaredNorm();
    for (size_t idx : comp) {
      double d = (positions[idx] - centroid).squaredNorm();
      if (d > best) {
        best = d;
        root = idx;
      }
    }
    if (cloud.normals[root].dot(positions[root] - centroid) < 0.0)
      cloud.normals[root] = -cloud.normals[root];
    visited[root] = 1;
    std::queue<size_t> frontier;
    frontier.push(root);
    while (!frontier.empty()) {
      size_t cur = frontier.front();
      frontier.pop();
      for (size_t nb : adj[cur]) {
        if (visited[nb]) continue;
        if (cloud.normals[nb].dot(cloud.normals[cur]) < 0.0) cloud.normals[nb] = -cloud.normals[nb];
        visited[nb] = 1;
        frontier.push(nb);
      }
    }
  }
  return cloud;
}

}  // namespace recon
