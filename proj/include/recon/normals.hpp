#pragma once

#include <cstdint>
#include <vector>

#include "recon/grid.hpp"

namespace recon {

// Local-PCA normal estimation with greedy BFS orientation over the k-NN
// graph; the BFS root points away from the cloud centroid. Rank-deficient
// neighborhoods fall back to (0,0,1) and are flagged in `degenerate`.
OrientedPointCloud estimate_normals(const std::vector<Vec3>& positions, int k,
                                    std::vector<uint8_t>* degenerate = nullptr);

}  // namespace recon
