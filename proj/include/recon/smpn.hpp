#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recon/errors.hpp"
#include "recon/grid.hpp"
#include "recon/rng.hpp"

namespace recon {

struct corrupt_weights : invalid_input {
  using invalid_input::invalid_input;
};

struct training_failure : runtime_failure {
  using runtime_failure::runtime_failure;
};

// Dense (n, c, d, h, w) volume, w fastest.
struct Tensor {
  int n = 0, c = 0, d = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int d_, int h_, int w_)
      : n(n_), c(c_), d(d_), h(h_), w(w_),
        data(static_cast<size_t>(n_) * c_ * d_ * h_ * w_, 0.0) {}

  size_t size() const { return data.size(); }
  size_t index(int in, int ic, int iz, int iy, int ix) const {
    return ((((static_cast<size_t>(in) * c + ic) * d + iz) * h + iy) * w) + ix;
  }
  double& at(int in, int ic, int iz, int iy, int ix) { return data[index(in, ic, iz, iy, ix)]; }
  double at(int in, int ic, int iz, int iy, int ix) const { return data[index(in, ic, iz, iy, ix)]; }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && d == o.d && h == o.h && w == o.w;
  }
};

struct UNetConfig {
  std::vector<int> channels{4, 8, 16};
  int in_channels = 1;
  int out_channels = 1;
  int res = 32;
};

void validate_config(const UNetConfig& cfg);

struct ConvParams {
  Tensor kernel;  // (co, ci, k, k, k)
  std::vector<double> bias;
};

struct BnParams {
  std::vector<double> scale, shift, running_mean, running_var;
};

struct DoubleConvParams {
  ConvParams conv1;
  BnParams bn1;
  ConvParams conv2;
  BnParams bn2;
};

struct UNetParams {
  UNetConfig config;
  std::vector<DoubleConvParams> enc;  // depth-1 levels, shallow first
  DoubleConvParams bottleneck;
  std::vector<Tensor> up;   // tconv kernels (ci, co, 2, 2, 2), deepest first
  std::vector<DoubleConvParams> dec;  // deepest first
  ConvParams head;          // 1x1x1 -> out_channels
};

struct ParamRef {
  std::string name;
  double* data;
  std::vector<int> shape;
  size_t count;
  bool trainable;  // running stats are state, not optimized
};

std::vector<ParamRef> enumerate_params(UNetParams& params);

// He-uniform kernels, zero biases, identity batchnorm. Every value is
// f32-exact.
UNetParams init_unet(const UNetConfig& cfg, uint64_t seed);

// Layer primitives. Forward caches feed the matching backward.
struct Conv3dCache {
  Tensor input;
};
Tensor conv3d(const Tensor& input, const ConvParams& p, int padding, Conv3dCache* cache = nullptr);
Tensor conv3d_backward(const Tensor& gout, const Conv3dCache& cache, const ConvParams& p,
                       int padding, ConvParams* grad);

struct BnCache {
  Tensor xhat;
  std::vector<double> invstd;
  bool train = true;
};
Tensor batchnorm3d(const Tensor& input, BnParams& p, bool train, BnCache* cache = nullptr);
Tensor batchnorm3d_backward(const Tensor& gout, const BnCache& cache, const BnParams& p,
                            BnParams* grad);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& gout, const Tensor& input);

struct MaxpoolCache {
  std::vector<size_t> argmax;  // linear index into the input, ties -> lowest
  int in_d = 0, in_h = 0, in_w = 0;
};
Tensor maxpool3d(const Tensor& input, MaxpoolCache* cache = nullptr);
Tensor maxpool3d_backward(const Tensor& gout, const MaxpoolCache& cache, int n, int c);

// Stride-2 2x2x2 transposed convolution, no bias; kernel (ci, co, 2, 2, 2).
Tensor transposed_conv3d(const Tensor& input, const Tensor& kernel);
Tensor transposed_conv3d_backward(const Tensor& gout, const Tensor& input, const Tensor& kernel,
                                  Tensor* grad_kernel);

struct DoubleConvTape {
  Conv3dCache c1;
  BnCache b1;
  Tensor relu1_in;
  Conv3dCache c2;
  BnCache b2;
  Tensor relu2_in;
};

struct UNetTape {
  std::vector<DoubleConvTape> enc;
  std::vector<MaxpoolCache> pool;
  DoubleConvTape bottleneck;
  std::vector<Tensor> up_in;  // tconv inputs, deepest first
  std::vector<DoubleConvTape> dec;
  Conv3dCache head;
  Tensor prob;  // sigmoid output
};

Tensor unet_forward(const Tensor& input, UNetParams& params, bool train, UNetTape* tape = nullptr);
ScalarGrid unet_forward(const ScalarGrid& chi, UNetParams& params, bool train);

// Returns the gradient with respect to the input volume.
Tensor unet_backward(const Tensor& grad_prob, const UNetTape& tape, const UNetParams& params,
                     UNetParams* grad);

UNetParams zero_like(const UNetParams& params);

// L = 1 - (2*sum(p*t) + 1)/(sum(t^2) + sum(p^2) + 1), averaged over the batch.
double dice_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr);
double dice_loss(const ScalarGrid& pred, const SurfaceMask& target, ScalarGrid* grad = nullptr);

double dice_score(const SurfaceMask& a, const SurfaceMask& b);

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_steps = 500;
  uint64_t seed = 0;
};

struct MaskExample {
  ScalarGrid chi;
  SurfaceMask mask;
};

std::vector<double> train_smpn(const std::vector<MaskExample>& dataset, const TrainConfig& cfg,
                               UNetParams& params);

void save_params(const UNetParams& params, const std::string& path);
UNetParams load_params(const std::string& path);

SurfaceMask predict_mask(const ScalarGrid& chi, UNetParams& params, double threshold = 0.5);

}  // namespace recon
