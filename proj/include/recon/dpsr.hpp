#pragma once

#include <string>
#include <vector>

#include "recon/grid.hpp"

namespace recon {

// The computation produced a field that cannot be normalized (|chi'(x=0)|
// below threshold), which signals an empty or ill-posed input.
class degenerate_normalization : public runtime_failure {
 public:
  explicit degenerate_normalization(const std::string& msg) : runtime_failure(msg) {}
};

struct SolverConfig {
  double sigma = 2.0;      // Gaussian bandwidth, grid-cell units
  double iso_scale = 0.5;  // m in the normalization
  int res = 128;
};

// Per-axis spectral tables for an r^3 grid. Frequencies are integer cycles
// per unit-cube period in standard DFT order 0,1,...,r/2,-r/2+1,...,-1. The
// derivative map zeroes the Nyquist bin: it has no sign-consistent odd
// extension, and keeping it breaks the Hermitian symmetry of i*u multipliers
// on real fields.
struct SpectralWorkspace {
  int res = 0;
  double sigma = 0.0;
  std::vector<double> freq;    // length r, Nyquist bin = +r/2
  std::vector<double> dfreq;   // derivative frequencies, Nyquist bin = 0
  std::vector<double> gauss;   // per-axis factor of g_{sigma,r}(u)
};

SpectralWorkspace make_workspace(const SolverConfig& cfg);

// chi' = Re IFFT( g(u) * (i u . v~(u)) / (-2 pi |u|^2) ), with X~(0) = 0.
ScalarGrid solve_unnormalized(const VectorGrid& v, const SolverConfig& cfg);

// chi = (m / |chi'(x=0)|) * (chi' - mean_i chi'(c_i)); chi'(x=0) is the
// clamped trilinear sample at the spatial corner (0,0,0).
ScalarGrid normalize_chi(const ScalarGrid& chi_raw, const OrientedPointCloud& cloud,
                         const SolverConfig& cfg);

struct DpsrTape {
  SolverConfig cfg;
  OrientedPointCloud cloud;
  ScalarGrid chi_raw;
  double corner_value = 0.0;  // chi'(x=0)
  double mean_sample = 0.0;   // mean_i chi'(c_i)
};

ScalarGrid dpsr_forward(const OrientedPointCloud& cloud, const SolverConfig& cfg, DpsrTape* tape);

// Gradients of <upstream, chi> with respect to the input positions and
// normals, chaining through normalization, the spectral solve, and
// rasterization.
void dpsr_backward(const DpsrTape& tape, const ScalarGrid& upstream,
                   std::vector<Vec3>* grad_positions, std::vector<Vec3>* grad_normals);

// loss = mean (pred-target)^2; grad = dloss/dpred.
double mse_loss(const ScalarGrid& pred, const ScalarGrid& target, ScalarGrid* grad);

}  // namespace recon
