#include "recon/smpn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <utility>

#include <json.hpp>

namespace recon {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

double f32(double x) {
  volatile float f = static_cast<float>(x);
  return static_cast<double>(f);
}

ConvParams make_conv(int co, int ci, int k) {
  ConvParams c;
  c.kernel = Tensor(co, ci, k, k, k);
  c.bias.assign(co, 0.0);
  return c;
}

BnParams make_bn(int c) {
  BnParams b;
  b.scale.assign(c, 1.0);
  b.shift.assign(c, 0.0);
  b.running_mean.assign(c, 0.0);
  b.running_var.assign(c, 1.0);
  return b;
}

DoubleConvParams make_double_conv(int ci, int co) {
  DoubleConvParams d;
  d.conv1 = make_conv(co, ci, 3);
  d.bn1 = make_bn(co);
  d.conv2 = make_conv(co, co, 3);
  d.bn2 = make_bn(co);
  return d;
}

UNetParams make_shell(const UNetConfig& cfg) {
  validate_config(cfg);
  UNetParams p;
  p.config = cfg;
  int depth = static_cast<int>(cfg.channels.size());
  int prev = cfg.in_channels;
  for (int i = 0; i < depth - 1; ++i) {
    p.enc.push_back(make_double_conv(prev, cfg.channels[i]));
    prev = cfg.channels[i];
  }
  p.bottleneck = make_double_conv(prev, cfg.channels[depth - 1]);
  for (int i = depth - 2; i >= 0; --i) {
    p.up.push_back(Tensor(cfg.channels[i + 1], cfg.channels[i], 2, 2, 2));
    p.dec.push_back(make_double_conv(2 * cfg.channels[i], cfg.channels[i]));
  }
  p.head = make_conv(cfg.out_channels, cfg.channels[0], 1);
  return p;
}

void add_ref(std::vector<ParamRef>& out, std::string name, double* data, std::vector<int> shape,
             bool trainable) {
  size_t count = 1;
  for (int s : shape) count *= static_cast<size_t>(s);
  out.push_back({std::move(name), data, std::move(shape), count, trainable});
}

void add_conv(std::vector<ParamRef>& out, const std::string& prefix, ConvParams& c) {
  Tensor& k = c.kernel;
  add_ref(out, prefix + ".kernel", k.data.data(), {k.n, k.c, k.d, k.h, k.w}, true);
  add_ref(out, prefix + ".bias", c.bias.data(), {static_cast<int>(c.bias.size())}, true);
}

void add_bn(std::vector<ParamRef>& out, const std::string& prefix, BnParams& b) {
  int c = static_cast<int>(b.scale.size());
  add_ref(out, prefix + ".scale", b.scale.data(), {c}, true);
  add_ref(out, prefix + ".shift", b.shift.data(), {c}, true);
  add_ref(out, prefix + ".running_mean", b.running_mean.data(), {c}, false);
  add_ref(out, prefix + ".running_var", b.running_var.data(), {c}, false);
}

void add_double_conv(std::vector<ParamRef>& out, const std::string& prefix, DoubleConvParams& d) {
  add_conv(out, prefix + ".conv1", d.conv1);
  add_bn(out, prefix + ".bn1", d.bn1);
  add_conv(out, prefix + ".conv2", d.conv2);
  add_bn(out, prefix + ".bn2", d.bn2);
}

}  // namespace

void validate_config(const UNetConfig& cfg) {
  if (cfg.channels.empty()) throw invalid_input("unet: channels must be nonempty");
  for (int c : cfg.channels)
    if (c < 1) throw invalid_input("unet: channel widths must be positive");
  for (size_t i = 0; i + 1 < cfg.channels.size(); ++i)
    if (cfg.channels[i] >= cfg.channels[i + 1])
      throw invalid_input("unet: channels must be strictly increasing");
  if (cfg.in_channels < 1 || cfg.out_channels < 1)
    throw invalid_input("unet: in/out channels must be positive");
  int div = 1 << (cfg.channels.size() - 1);
  if (cfg.res < 1 || cfg.res % div != 0)
    throw invalid_input("unet: res must be divisible by 2^(depth-1)");
}

std::vector<ParamRef> enumerate_params(UNetParams& params) {
  std::vector<ParamRef> out;
  for (size_t i = 0; i < params.enc.size(); ++i)
    add_double_conv(out, "enc" + std::to_string(i), params.enc[i]);
  add_double_conv(out, "bottleneck", params.bottleneck);
  for (size_t i = 0; i < params.up.size(); ++i) {
    Tensor& k = params.up[i];
    add_ref(out, "up" + std::to_string(i) + ".kernel", k.data.data(), {k.n, k.c, k.d, k.h, k.w},
            true);
    add_double_conv(out, "dec" + std::to_string(i), params.dec[i]);
  }
  add_conv(out, "head", params.head);
  return out;
}

UNetParams init_unet(const UNetConfig& cfg, uint64_t seed) {
  UNetParams p = make_shell(cfg);
  Rng rng(seed);
  auto fill = [&rng](Tensor& k, int fan_in) {
    double bound = std::sqrt(6.0 / fan_in);
    for (double& v : k.data) v = f32(rng.uniform(-bound, bound));
  };
  auto fill_double_conv = [&fill](DoubleConvParams& d) {
    fill(d.conv1.kernel, d.conv1.kernel.c * 27);
    fill(d.conv2.kernel, d.conv2.kernel.c * 27);
  };
  for (auto& e : p.enc) fill_double_conv(e);
  fill_double_conv(p.bottleneck);
  for (size_t i = 0; i < p.up.size(); ++i) {
    fill(p.up[i], p.up[i].n * 8);
    fill_double_conv(p.dec[i]);
  }
  fill(p.head.kernel, p.head.kernel.c);
  return p;
}

UNetParams zero_like(const UNetParams& params) {
  UNetParams z = make_shell(params.config);
  for (ParamRef& ref : enumerate_params(z)) std::fill(ref.data, ref.data + ref.count, 0.0);
  return z;
}

// ---------------------------------------------------------------------------
// layers

Tensor conv3d(const Tensor& input, const ConvParams& p, int padding, Conv3dCache* cache) {
  const Tensor& ker = p.kernel;
  if (ker.c != input.c) throw invalid_input("conv3d: channel mismatch");
  if (static_cast<int>(p.bias.size()) != ker.n) throw invalid_input("conv3d: bias size mismatch");
  if (ker.d != ker.h || ker.d != ker.w) throw invalid_input("conv3d: kernel must be cubic");
  int k = ker.d, pad = padding;
  int od = input.d + 2 * pad - k + 1;
  int oh = input.h + 2 * pad - k + 1;
  int ow = input.w + 2 * pad - k + 1;
  if (od < 1 || oh < 1 || ow < 1) throw invalid_input("conv3d: kernel larger than padded input");
  Tensor out(input.n, ker.n, od, oh, ow);

  for (int nn = 0; nn < input.n; ++nn)
    for (int co = 0; co < ker.n; ++co) {
      double* dst = &out.data[out.index(nn, co, 0, 0, 0)];
      std::fill(dst, dst + static_cast<size_t>(od) * oh * ow, p.bias[co]);
    }

  for (int nn = 0; nn < input.n; ++nn)
    for (int co = 0; co < ker.n; ++co)
      for (int ci = 0; ci < input.c; ++ci)
        for (int dz = 0; dz < k; ++dz)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              double kv = ker.at(co, ci, dz, dy, dx);
              int z0 = std::max(0, pad - dz), z1 = std::min(od, input.d + pad - dz);
              int y0 = std::max(0, pad - dy), y1 = std::min(oh, input.h + pad - dy);
              int x0 = std::max(0, pad - dx), x1 = std::min(ow, input.w + pad - dx);
              for (int z = z0; z < z1; ++z)
                for (int y = y0; y < y1; ++y) {
                  const double* src = &input.data[input.index(nn, ci, z + dz - pad, y + dy - pad, x0 + dx - pad)];
                  double* dst = &out.data[out.index(nn, co, z, y, x0)];
                  for (int x = 0; x < x1 - x0; ++x) dst[x] += kv * src[x];
                }
            }
  if (cache) cache->input = input;
  return out;
}

Tensor conv3d_backward(const Tensor& gout, const Conv3dCache& cache, const ConvParams& p,
                       int padding, ConvParams* grad) {
  const Tensor& input = cache.input;
  const Tensor& ker = p.kernel;
  int k = ker.d, pad = padding;
  int od = input.d + 2 * pad - k + 1;
  int oh = input.h + 2 * pad - k + 1;
  int ow = input.w + 2 * pad - k + 1;
  if (gout.n != input.n || gout.c != ker.n || gout.d != od || gout.h != oh || gout.w != ow)
    throw invalid_input("conv3d_backward: gradient shape mismatch");
  Tensor gin(input.n, input.c, input.d, input.h, input.w);

  if (grad) {
    for (int nn = 0; nn < gout.n; ++nn)
      for (int co = 0; co < ker.n; ++co) {
        const double* g = &gout.data[gout.index(nn, co, 0, 0, 0)];
        double acc = 0.0;
        for (size_t i = 0; i < static_cast<size_t>(od) * oh * ow; ++i) acc += g[i];
        grad->bias[co] += acc;
      }
  }

  for (int nn = 0; nn < input.n; ++nn)
    for (int co = 0; co < ker.n; ++co)
      for (int ci = 0; ci < input.c; ++ci)
        for (int dz = 0; dz < k; ++dz)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              double kv = ker.at(co, ci, dz, dy, dx);
              double acc = 0.0;
              int z0 = std::max(0, pad - dz), z1 = std::min(od, input.d + pad - dz);
              int y0 = std::max(0, pad - dy), y1 = std::min(oh, input.h + pad - dy);
              int x0 = std::max(0, pad - dx), x1 = std::min(ow, input.w + pad - dx);
              for (int z = z0; z < z1; ++z)
                for (int y = y0; y < y1; ++y) {
                  size_t in_base = input.index(nn, ci, z + dz - pad, y + dy - pad, x0 + dx - pad);
                  const double* src = &input.data[in_base];
                  double* gi = &gin.data[in_base];
                  const double* g = &gout.data[gout.index(nn, co, z, y, x0)];
                  for (int x = 0; x < x1 - x0; ++x) {
                    acc += g[x] * src[x];
                    gi[x] += kv * g[x];
                  }
                }
              if (grad) grad->kernel.at(co, ci, dz, dy, dx) += acc;
            }
  return gin;
}

Tensor batchnorm3d(const Tensor& input, BnParams& p, bool train, BnCache* cache) {
  int C = input.c;
  if (static_cast<int>(p.scale.size()) != C || static_cast<int>(p.shift.size()) != C ||
      static_cast<int>(p.running_mean.size()) != C || static_cast<int>(p.running_var.size()) != C)
    throw invalid_input("batchnorm3d: channel mismatch");
  size_t spatial = static_cast<size_t>(input.d) * input.h * input.w;
  size_t m = static_cast<size_t>(input.n) * spatial;
  Tensor out(input.n, input.c, input.d, input.h, input.w);
  if (cache) {
    cache->xhat = Tensor(input.n, input.c, input.d, input.h, input.w);
    cache->invstd.assign(C, 0.0);
    cache->train = train;
  }
  for (int c = 0; c < C; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (int nn = 0; nn < input.n; ++nn) {
        const double* src = &input.data[input.index(nn, c, 0, 0, 0)];
        for (size_t i = 0; i < spatial; ++i) s += src[i];
      }
      mean = s / static_cast<double>(m);
      double q = 0.0;
      for (int nn = 0; nn < input.n; ++nn) {
        const double* src = &input.data[input.index(nn, c, 0, 0, 0)];
        for (size_t i = 0; i < spatial; ++i) {
          double d = src[i] - mean;
          q += d * d;
        }
      }
      var = q / static_cast<double>(m);
      double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      p.running_mean[c] = (1.0 - kBnMomentum) * p.running_mean[c] + kBnMomentum * mean;
      p.running_var[c] = (1.0 - kBnMomentum) * p.running_var[c] + kBnMomentum * unbiased;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    double inv = 1.0 / std::sqrt(var + kBnEps);
    if (cache) cache->invstd[c] = inv;
    double gamma = p.scale[c], beta = p.shift[c];
    for (int nn = 0; nn < input.n; ++nn) {
      size_t base = input.index(nn, c, 0, 0, 0);
      const double* src = &input.data[base];
      double* dst = &out.data[base];
      double* xh = cache ? &cache->xhat.data[base] : nullptr;
      for (size_t i = 0; i < spatial; ++i) {
        double v = (src[i] - mean) * inv;
        if (xh) xh[i] = v;
        dst[i] = gamma * v + beta;
      }
    }
  }
  return out;
}

Tensor batchnorm3d_backward(const Tensor& gout, const BnCache& cache, const BnParams& p,
                            BnParams* grad) {
  const Tensor& xh = cache.xhat;
  if (!gout.same_shape(xh)) throw invalid_input("batchnorm3d_backward: shape mismatch");
  int C = gout.c;
  size_t spatial = static_cast<size_t>(gout.d) * gout.h * gout.w;
  double m = static_cast<double>(static_cast<size_t>(gout.n) * spatial);
  Tensor gin(gout.n, gout.c, gout.d, gout.h, gout.w);
  for (int c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int nn = 0; nn < gout.n; ++nn) {
      size_t base = gout.index(nn, c, 0, 0, 0);
      const double* g = &gout.data[base];
      const double* x = &xh.data[base];
      for (size_t i = 0; i < spatial; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * x[i];
      }
    }
    if (grad) {
      grad->scale[c] += sum_gx;
      grad->shift[c] += sum_g;
    }
    double gamma = p.scale[c], inv = cache.invstd[c];
    for (int nn = 0; nn < gout.n; ++nn) {
      size_t base = gout.index(nn, c, 0, 0, 0);
      const double* g = &gout.data[base];
      const double* x = &xh.data[base];
      double* gi = &gin.data[base];
      if (cache.train) {
        double k = gamma * inv / m;
        for (size_t i = 0; i < spatial; ++i) gi[i] = k * (m * g[i] - sum_g - x[i] * sum_gx);
      } else {
        for (size_t i = 0; i < spatial; ++i) gi[i] = gamma * inv * g[i];
      }
    }
  }
  return gin;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& gout, const Tensor& input) {
  if (!gout.same_shape(input)) throw invalid_input("relu_backward: shape mismatch");
  Tensor gin = gout;
  for (size_t i = 0; i < gin.data.size(); ++i)
    if (input.data[i] <= 0.0) gin.data[i] = 0.0;
  return gin;
}

Tensor maxpool3d(const Tensor& input, MaxpoolCache* cache) {
  if (input.d % 2 || input.h % 2 || input.w % 2)
    throw invalid_input("maxpool3d: spatial dims must be even");
  Tensor out(input.n, input.c, input.d / 2, input.h / 2, input.w / 2);
  if (cache) {
    cache->argmax.assign(out.size(), 0);
    cache->in_d = input.d;
    cache->in_h = input.h;
    cache->in_w = input.w;
  }
  size_t o = 0;
  for (int nn = 0; nn < input.n; ++nn)
    for (int c = 0; c < input.c; ++c)
      for (int z = 0; z < out.d; ++z)
        for (int y = 0; y < out.h; ++y)
          for (int x = 0; x < out.w; ++x, ++o) {
            double best = -std::numeric_limits<double>::infinity();
            size_t best_idx = 0;
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  size_t idx = input.index(nn, c, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                  if (input.data[idx] > best) {
                    best = input.data[idx];
                    best_idx = idx;
                  }
                }
            out.data[o] = best;
            if (cache) cache->argmax[o] = best_idx;
          }
  return out;
}

Tensor maxpool3d_backward(const Tensor& gout, const MaxpoolCache& cache, int n, int c) {
  if (gout.size() != cache.argmax.size())
    throw invalid_input("maxpool3d_backward: gradient size mismatch");
  Tensor gin(n, c, cache.in_d, cache.in_h, cache.in_w);
  for (size_t i = 0; i < cache.argmax.size(); ++i) gin.data[cache.argmax[i]] += gout.data[i];
  return gin;
}

Tensor transposed_conv3d(const Tensor& input, const Tensor& kernel) {
  if (kernel.n != input.c) throw invalid_input("transposed_conv3d: channel mismatch");
  if (kernel.d != 2 || kernel.h != 2 || kernel.w != 2)
    throw invalid_input("transposed_conv3d: kernel must be 2x2x2");
  Tensor out(input.n, kernel.c, input.d * 2, input.h * 2, input.w * 2);
  for (int nn = 0; nn < input.n; ++nn)
    for (int ci = 0; ci < input.c; ++ci)
      for (int co = 0; co < kernel.c; ++co)
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              double kv = kernel.at(ci, co, dz, dy, dx);
              for (int z = 0; z < input.d; ++z)
                for (int y = 0; y < input.h; ++y) {
                  const double* src = &input.data[input.index(nn, ci, z, y, 0)];
                  double* dst = &out.data[out.index(nn, co, 2 * z + dz, 2 * y + dy, dx)];
                  for (int x = 0; x < input.w; ++x) dst[2 * x] += kv * src[x];
                }
            }
  return out;
}

Tensor transposed_conv3d_backward(const Tensor& gout, const Tensor& input, const Tensor& kernel,
                                  Tensor* grad_kernel) {
  if (gout.n != input.n || gout.c != kernel.c || gout.d != input.d * 2 ||
      gout.h != input.h * 2 || gout.w != input.w * 2)
    throw invalid_input("transposed_conv3d_backward: gradient shape mismatch");
  Tensor gin(input.n, input.c, input.d, input.h, input.w);
  for (int nn = 0; nn < input.n; ++nn)
    for (int ci = 0; ci < input.c; ++ci)
      for (int co = 0; co < kernel.c; ++co)
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              double kv = kernel.at(ci, co, dz, dy, dx);
              double acc = 0.0;
              for (int z = 0; z < input.d; ++z)
                for (int y = 0; y < input.h; ++y) {
                  size_t in_base = input.index(nn, ci, z, y, 0);
                  const double* src = &input.data[in_base];
                  double* gi = &gin.data[in_base];
                  const double* g = &gout.data[gout.index(nn, co, 2 * z + dz, 2 * y + dy, dx)];
                  for (int x = 0; x < input.w; ++x) {
                    acc += src[x] * g[2 * x];
                    gi[x] += kv * g[2 * x];
                  }
                }
              if (grad_kernel) grad_kernel->at(ci, co, dz, dy, dx) += acc;
            }
  return gin;
}

// ---------------------------------------------------------------------------
// network

namespace {

Tensor double_conv(const Tensor& input, DoubleConvParams& p, bool train, DoubleConvTape* tape) {
  Tensor t = conv3d(input, p.conv1, 1, tape ? &tape->c1 : nullptr);
  t = batchnorm3d(t, p.bn1, train, tape ? &tape->b1 : nullptr);
  if (tape) tape->relu1_in = t;
  t = relu(t);
  t = conv3d(t, p.conv2, 1, tape ? &tape->c2 : nullptr);
  t = batchnorm3d(t, p.bn2, train, tape ? &tape->b2 : nullptr);
  if (tape) tape->relu2_in = t;
  return relu(t);
}

Tensor double_conv_backward(const Tensor& gout, const DoubleConvTape& tape,
                            const DoubleConvParams& p, DoubleConvParams* grad) {
  Tensor g = relu_backward(gout, tape.relu2_in);
  g = batchnorm3d_backward(g, tape.b2, p.bn2, grad ? &grad->bn2 : nullptr);
  g = conv3d_backward(g, tape.c2, p.conv2, 1, grad ? &grad->conv2 : nullptr);
  g = relu_backward(g, tape.relu1_in);
  g = batchnorm3d_backward(g, tape.b1, p.bn1, grad ? &grad->bn1 : nullptr);
  return conv3d_backward(g, tape.c1, p.conv1, 1, grad ? &grad->conv1 : nullptr);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.n, a.c + b.c, a.d, a.h, a.w);
  size_t spatial = static_cast<size_t>(a.d) * a.h * a.w;
  for (int nn = 0; nn < a.n; ++nn) {
    std::copy_n(&a.data[a.index(nn, 0, 0, 0, 0)], spatial * a.c,
                &out.data[out.index(nn, 0, 0, 0, 0)]);
    std::copy_n(&b.data[b.index(nn, 0, 0, 0, 0)], spatial * b.c,
                &out.data[out.index(nn, a.c, 0, 0, 0)]);
  }
  return out;
}

void split_channels(const Tensor& g, int ca, Tensor* ga, Tensor* gb) {
  int cb = g.c - ca;
  *ga = Tensor(g.n, ca, g.d, g.h, g.w);
  *gb = Tensor(g.n, cb, g.d, g.h, g.w);
  size_t spatial = static_cast<size_t>(g.d) * g.h * g.w;
  for (int nn = 0; nn < g.n; ++nn) {
    std::copy_n(&g.data[g.index(nn, 0, 0, 0, 0)], spatial * ca,
                &ga->data[ga->index(nn, 0, 0, 0, 0)]);
    std::copy_n(&g.data[g.index(nn, ca, 0, 0, 0)], spatial * cb,
                &gb->data[gb->index(nn, 0, 0, 0, 0)]);
  }
}

}  // namespace

Tensor unet_forward(const Tensor& input, UNetParams& params, bool train, UNetTape* tape) {
  const UNetConfig& cfg = params.config;
  validate_config(cfg);
  if (input.c != cfg.in_channels) throw invalid_input("unet: input channel mismatch");
  if (input.d != input.h || input.d != input.w) throw invalid_input("unet: input must be cubic");
  int depth = static_cast<int>(cfg.channels.size());
  int div = 1 << (depth - 1);
  if (input.d < div || input.d % div != 0)
    throw invalid_input("unet: resolution not divisible by 2^(depth-1)");
  if (tape) {
    tape->enc.resize(depth - 1);
    tape->pool.resize(depth - 1);
    tape->up_in.resize(depth - 1);
    tape->dec.resize(depth - 1);
  }
  std::vector<Tensor> skips;
  Tensor x = input;
  for (int i = 0; i < depth - 1; ++i) {
    skips.push_back(double_conv(x, params.enc[i], train, tape ? &tape->enc[i] : nullptr));
    x = maxpool3d(skips.back(), tape ? &tape->pool[i] : nullptr);
  }
  x = double_conv(x, params.bottleneck, train, tape ? &tape->bottleneck : nullptr);
  for (int j = 0; j < depth - 1; ++j) {
    if (tape) tape->up_in[j] = x;
    Tensor up = transposed_conv3d(x, params.up[j]);
    x = double_conv(concat_channels(skips[depth - 2 - j], up), params.dec[j], train,
                    tape ? &tape->dec[j] : nullptr);
  }
  Tensor logits = conv3d(x, params.head, 0, tape ? &tape->head : nullptr);
  Tensor prob = std::move(logits);
  for (double& v : prob.data) v = 1.0 / (1.0 + std::exp(-v));
  if (tape) tape->prob = prob;
  return prob;
}

ScalarGrid unet_forward(const ScalarGrid& chi, UNetParams& params, bool train) {
  int r = chi.res;
  Tensor in(1, 1, r, r, r);
  std::copy(chi.data.begin(), chi.data.end(), in.data.begin());
  Tensor out = unet_forward(in, params, train, nullptr);
  ScalarGrid g(r);
  std::copy(out.data.begin(), out.data.end(), g.data.begin());
  return g;
}

Tensor unet_backward(const Tensor& grad_prob, const UNetTape& tape, const UNetParams& params,
                     UNetParams* grad) {
  if (!grad_prob.same_shape(tape.prob))
    throw invalid_input("unet_backward: gradient shape mismatch");
  int depth = static_cast<int>(params.config.channels.size());
  Tensor g = grad_prob;
  for (size_t i = 0; i < g.data.size(); ++i) {
    double s = tape.prob.data[i];
    g.data[i] *= s * (1.0 - s);
  }
  g = conv3d_backward(g, tape.head, params.head, 0, grad ? &grad->head : nullptr);
  std::vector<Tensor> skip_grads(depth - 1);
  for (int j = depth - 2; j >= 0; --j) {
    g = double_conv_backward(g, tape.dec[j], params.dec[j], grad ? &grad->dec[j] : nullptr);
    Tensor gskip, gup;
    split_channels(g, params.config.channels[depth - 2 - j], &gskip, &gup);
    skip_grads[depth - 2 - j] = std::move(gskip);
    g = transposed_conv3d_backward(gup, tape.up_in[j], params.up[j],
                                   grad ? &grad->up[j] : nullptr);
  }
  g = double_conv_backward(g, tape.bottleneck, params.bottleneck,
                           grad ? &grad->bottleneck : nullptr);
  for (int i = depth - 2; i >= 0; --i) {
    Tensor gpool =
        maxpool3d_backward(g, tape.pool[i], grad_prob.n, params.config.channels[i]);
    const Tensor& gs = skip_grads[i];
    for (size_t t = 0; t < gpool.data.size(); ++t) gpool.data[t] += gs.data[t];
    g = double_conv_backward(gpool, tape.enc[i], params.enc[i], grad ? &grad->enc[i] : nullptr);
  }
  return g;
}

// ---------------------------------------------------------------------------
// loss and training

double dice_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  if (!pred.same_shape(target)) throw invalid_input("dice_loss: shape mismatch");
  if (grad) *grad = Tensor(pred.n, pred.c, pred.d, pred.h, pred.w);
  size_t per = pred.size() / pred.n;
  double total = 0.0;
  for (int b = 0; b < pred.n; ++b) {
    const double* p = &pred.data[per * b];
    const double* t = &target.data[per * b];
    double pt = 0.0, pp = 0.0, tt = 0.0;
    for (size_t i = 0; i < per; ++i) {
      pt += p[i] * t[i];
      pp += p[i] * p[i];
      tt += t[i] * t[i];
    }
    double num = 2.0 * pt + 1.0;
    double den = tt + pp + 1.0;
    total += 1.0 - num / den;
    if (grad) {
      double* gp = &grad->data[per * b];
      double scale = 2.0 / (den * den * pred.n);
      for (size_t i = 0; i < per; ++i) gp[i] = scale * (num * p[i] - den * t[i]);
    }
  }
  return total / pred.n;
}

double dice_loss(const ScalarGrid& pred, const SurfaceMask& target, ScalarGrid* grad) {
  if (pred.res != target.res) throw invalid_input("dice_loss: resolution mismatch");
  for (double v : pred.data)
    if (!(v >= 0.0 && v <= 1.0)) throw invalid_input("dice_loss: pred outside [0,1]");
  Tensor p(1, 1, pred.res, pred.res, pred.res), t(1, 1, pred.res, pred.res, pred.res);
  std::copy(pred.data.begin(), pred.data.end(), p.data.begin());
  for (size_t i = 0; i < target.data.size(); ++i) t.data[i] = target.data[i] ? 1.0 : 0.0;
  Tensor g;
  double loss = dice_loss(p, t, grad ? &g : nullptr);
  if (grad) {
    *grad = ScalarGrid(pred.res);
    std::copy(g.data.begin(), g.data.end(), grad->data.begin());
  }
  return loss;
}

double dice_score(const SurfaceMask& a, const SurfaceMask& b) {
  if (a.res != b.res) throw invalid_input("dice_score: resolution mismatch");
  size_t inter = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    bool va = a.data[i] != 0, vb = b.data[i] != 0;
    inter += va && vb;
    na += va;
    nb += vb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<double> train_smpn(const std::vector<MaskExample>& dataset, const TrainConfig& cfg,
                               UNetParams& params) {
  if (dataset.empty()) throw invalid_input("train: empty dataset");
  if (cfg.learning_rate < 0.0 || !std::isfinite(cfg.learning_rate))
    throw invalid_input("train: bad learning rate");
  if (cfg.batch_size < 1) throw invalid_input("train: batch size must be positive");
  if (cfg.max_steps < 0) throw invalid_input("train: negative step count");
  int r = dataset[0].chi.res;
  for (const MaskExample& ex : dataset)
    if (ex.chi.res != r || ex.mask.res != r)
      throw invalid_input("train: examples must share one resolution");

  UNetParams grads = zero_like(params);
  UNetParams adam_m = zero_like(params);
  UNetParams adam_v = zero_like(params);
  std::vector<ParamRef> prefs = enumerate_params(params);
  std::vector<ParamRef> grefs = enumerate_params(grads);
  std::vector<ParamRef> mrefs = enumerate_params(adam_m);
  std::vector<ParamRef> vrefs = enumerate_params(adam_v);

  Rng rng(cfg.seed);
  std::vector<double> curve;
  curve.reserve(cfg.max_steps);
  size_t voxels = static_cast<size_t>(r) * r * r;
  int B = cfg.batch_size;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    Tensor in(B, 1, r, r, r), tgt(B, 1, r, r, r);
    for (int b = 0; b < B; ++b) {
      const MaskExample& ex = dataset[rng.below(dataset.size())];
      std::copy(ex.chi.data.begin(), ex.chi.data.end(), in.data.begin() + b * voxels);
      double* t = &tgt.data[b * voxels];
      for (size_t i = 0; i < voxels; ++i) t[i] = ex.mask.data[i] ? 1.0 : 0.0;
    }
    UNetTape tape;
    Tensor prob = unet_forward(in, params, true, &tape);
    Tensor gprob;
    double loss = dice_loss(prob, tgt, &gprob);
    if (!std::isfinite(loss)) throw training_failure("train: loss diverged");
    curve.push_back(loss);

    for (ParamRef& ref : grefs) std::fill(ref.data, ref.data + ref.count, 0.0);
    unet_backward(gprob, tape, params, &grads);

    double bc1 = 1.0 - std::pow(cfg.beta1, step);
    double bc2 = 1.0 - std::pow(cfg.beta2, step);
    for (size_t ri = 0; ri < prefs.size(); ++ri) {
      if (!prefs[ri].trainable) continue;
      double* p = prefs[ri].data;
      const double* g = grefs[ri].data;
      double* m = mrefs[ri].data;
      double* v = vrefs[ri].data;
      for (size_t i = 0; i < prefs[ri].count; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
      }
    }
  }
  return curve;
}

// ---------------------------------------------------------------------------
// weights io

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_params(const UNetParams& params, const std::string& path) {
  std::vector<ParamRef> refs = enumerate_params(const_cast<UNetParams&>(params));
  namespace fs = std::filesystem;
  fs::path manifest_path(path);
  fs::path blob_path = manifest_path;
  blob_path.replace_extension(".bin");
  if (blob_path == manifest_path) blob_path = fs::path(path + ".bin");

  nlohmann::json j;
  j["blob"] = blob_path.filename().string();
  j["config"] = {{"channels", params.config.channels},
                 {"in_channels", params.config.in_channels},
                 {"out_channels", params.config.out_channels},
                 {"res", params.config.res}};
  j["dtype"] = "f32";
  nlohmann::json tensors = nlohmann::json::array();
  for (const ParamRef& ref : refs) tensors.push_back({{"name", ref.name}, {"shape", ref.shape}});
  j["tensors"] = tensors;

  std::ofstream mf(path, std::ios::binary);
  if (!mf) throw invalid_input("cannot open file: " + path);
  mf << j.dump(2) << "\n";
  if (!mf.flush()) throw runtime_failure("weights write failed: " + path);

  FilePtr bf(std::fopen(blob_path.string().c_str(), "wb"));
  if (!bf) throw invalid_input("cannot open file: " + blob_path.string());
  std::vector<float> buf;
  for (const ParamRef& ref : refs) {
    buf.resize(ref.count);
    for (size_t i = 0; i < ref.count; ++i) buf[i] = static_cast<float>(ref.data[i]);
    if (std::fwrite(buf.data(), sizeof(float), buf.size(), bf.get()) != buf.size())
      throw runtime_failure("weights write failed: " + blob_path.string());
  }
}

UNetParams load_params(const std::string& path) {
  std::ifstream mf(path, std::ios::binary);
  if (!mf) throw invalid_input("cannot open file: " + path);
  nlohmann::json j;
  try {
    mf >> j;
  } catch (const nlohmann::json::exception&) {
    throw corrupt_weights("unparseable weight manifest: " + path);
  }

  UNetConfig cfg;
  try {
    const nlohmann::json& jc = j.at("config");
    cfg.channels = jc.at("channels").get<std::vector<int>>();
    cfg.in_channels = jc.at("in_channels").get<int>();
    cfg.out_channels = jc.at("out_channels").get<int>();
    cfg.res = jc.at("res").get<int>();
    if (j.at("dtype").get<std::string>() != "f32")
      throw corrupt_weights("unsupported weight dtype: " + path);
  } catch (const nlohmann::json::exception&) {
    throw corrupt_weights("incomplete weight manifest: " + path);
  }

  UNetParams params;
  try {
    params = make_shell(cfg);
  } catch (const invalid_input& e) {
    throw corrupt_weights(std::string("bad config in weight manifest: ") + e.what());
  }
  std::vector<ParamRef> refs = enumerate_params(params);

  nlohmann::json tensors;
  std::string blob_name;
  try {
    tensors = j.at("tensors");
    blob_name = j.at("blob").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw corrupt_weights("incomplete weight manifest: " + path);
  }
  if (!tensors.is_array() || tensors.size() != refs.size())
    throw corrupt_weights("weight manifest tensor list mismatch: " + path);
  size_t total = 0;
  for (size_t i = 0; i < refs.size(); ++i) {
    std::string name;
    std::vector<int> shape;
    try {
      name = tensors[i].at("name").get<std::string>();
      shape = tensors[i].at("shape").get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
      throw corrupt_weights("malformed tensor entry in weight manifest: " + path);
    }
    if (name != refs[i].name || shape != refs[i].shape)
      throw corrupt_weights("weight manifest does not match config: " + path + " (" + name + ")");
    total += refs[i].count;
  }

  namespace fs = std::filesystem;
  fs::path blob_path = fs::path(path).parent_path() / blob_name;
  FilePtr bf(std::fopen(blob_path.string().c_str(), "rb"));
  if (!bf) throw corrupt_weights("missing weight blob: " + blob_path.string());
  std::vector<float> buf(total);
  if (std::fread(buf.data(), sizeof(float), total, bf.get()) != total)
    throw corrupt_weights("truncated weight blob: " + blob_path.string());
  if (std::fgetc(bf.get()) != EOF)
    throw corrupt_weights("oversized weight blob: " + blob_path.string());

  size_t off = 0;
  for (ParamRef& ref : refs) {
    for (size_t i = 0; i < ref.count; ++i) ref.data[i] = static_cast<double>(buf[off + i]);
    off += ref.count;
  }
  for (const ParamRef& ref : refs)
    for (size_t i = 0; i < ref.count; ++i)
      if (!std::isfinite(ref.data[i]))
        throw corrupt_weights("non-finite value in weight blob: " + blob_path.string());
  return params;
}

SurfaceMask predict_mask(const ScalarGrid& chi, UNetParams& params, double threshold) {
  ScalarGrid prob = unet_forward(chi, params, false);
  SurfaceMask mask(chi.res);
  for (size_t i = 0; i < prob.data.size(); ++i) mask.data[i] = prob.data[i] > threshold ? 1 : 0;
  return mask;
}

}  // namespace recon
