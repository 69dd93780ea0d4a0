#include "recon/dpsr.hpp"

#include <cmath>
#include <complex>

#include "recon/fft.hpp"

namespace recon {

namespace {

constexpr double kCornerGuard = 1e-12;

void check_config(const SolverConfig& cfg) {
  if (cfg.res < 2) throw invalid_input("dpsr: resolution must be >= 2");
  if (cfg.res % 2 != 0) throw invalid_input("dpsr: resolution must be even");
  if (!(cfg.sigma >= 0.0)) throw invalid_input("dpsr: sigma must be >= 0");
  if (!(cfg.iso_scale > 0.0)) throw invalid_input("dpsr: iso_scale must be > 0");
}

// out = Re IFFT( sum_c M_c(u) * FFT(v_c) ), with purely imaginary multiplier
// M_c(u) = g(u) * i*u_c / (-2 pi |u|^2).
ScalarGrid apply_poisson(const VectorGrid& v, const SpectralWorkspace& ws) {
  int r = ws.res;
  size_t n = static_cast<size_t>(r) * r * r;
  std::vector<std::complex<double>> accum(n, 0.0);
  std::vector<std::complex<double>> chan(n);

  for (int c = 0; c < 3; ++c) {
    for (size_t lin = 0; lin < n; ++lin) chan[lin] = v.data[3 * lin + c];
    fft3_inplace(chan, r, false);
    size_t lin = 0;
    for (int k = 0; k < r; ++k) {
      for (int j = 0; j < r; ++j) {
        double gyz = ws.gauss[j] * ws.gauss[k];
        double n2yz = ws.freq[j] * ws.freq[j] + ws.freq[k] * ws.freq[k];
        double uc = c == 0 ? 0.0 : (c == 1 ? ws.dfreq[j] : ws.dfreq[k]);
        for (int i = 0; i < r; ++i, ++lin) {
          double norm2 = ws.freq[i] * ws.freq[i] + n2yz;
          if (norm2 == 0.0) continue;  // X~(0) := 0
          double u = c == 0 ? ws.dfreq[i] : uc;
          double m = ws.gauss[i] * gyz * u / (-2.0 * M_PI * norm2);
          accum[lin] += std::complex<double>(0.0, m) * chan[lin];
        }
      }
    }
  }

  fft3_inplace(accum, r, true);
  ScalarGrid out(r);
  double max_real = 0.0, max_imag = 0.0;
  for (size_t lin = 0; lin < n; ++lin) {
    out.data[lin] = accum[lin].real();
    max_real = std::max(max_real, std::abs(accum[lin].real()));
    max_imag = std::max(max_imag, std::abs(accum[lin].imag()));
  }
  if (max_imag > 1e-8 * std::max(max_real, 1e-300))
    throw runtime_failure("dpsr: spectral output lost real symmetry");
  return out;
}

}  // namespace

SpectralWorkspace make_workspace(const SolverConfig& cfg) {
  check_config(cfg);
  SpectralWorkspace ws;
  ws.res = cfg.res;
  ws.sigma = cfg.sigma;
  ws.freq.resize(cfg.res);
  ws.dfreq.resize(cfg.res);
  ws.gauss.resize(cfg.res);
  double r = cfg.res;
  for (int i = 0; i < cfg.res; ++i) {
    double f = i <= cfg.res / 2 ? i : i - cfg.res;
    ws.freq[i] = f;
    ws.dfreq[i] = (2 * i == cfg.res) ? 0.0 : f;
    ws.gauss[i] = std::exp(-2.0 * cfg.sigma * cfg.sigma * f * f / (r * r));
  }
  return ws;
}

ScalarGrid solve_unnormalized(const VectorGrid& v, const SolverConfig& cfg) {
  check_config(cfg);
  if (v.res != cfg.res) throw invalid_input("dpsr: field resolution does not match config");
  SpectralWorkspace ws = make_workspace(cfg);
  return apply_poisson(v, ws);
}

ScalarGrid normalize_chi(const ScalarGrid& chi_raw, const OrientedPointCloud& cloud,
                         const SolverConfig& cfg) {
  if (cloud.positions.empty()) throw invalid_input("normalize_chi: empty cloud");
  if (chi_raw.res != cfg.res) throw invalid_input("normalize_chi: resolution mismatch");
  double corner = trilinear_sample(chi_raw, Vec3(0.0, 0.0, 0.0));
  if (std::abs(corner) < kCornerGuard)
    throw degenerate_normalization("normalize_chi: |chi'(x=0)| below threshold");
  double mean = 0.0;
  for (const Vec3& p : cloud.positions) mean += trilinear_sample(chi_raw, p);
  mean /= static_cast<double>(cloud.positions.size());
  double scale = cfg.iso_scale / std::abs(corner);
  ScalarGrid chi(chi_raw.res);
  for (size_t i = 0; i < chi.data.size(); ++i) chi.data[i] = scale * (chi_raw.data[i] - mean);
  return chi;
}

ScalarGrid dpsr_forward(const OrientedPointCloud& cloud, const SolverConfig& cfg, DpsrTape* tape) {
  if (!cloud.has_normals()) throw invalid_input("dpsr_forward: cloud has no normals");
  VectorGrid v = rasterize_point_normals(cloud, cfg.res);
  ScalarGrid chi_raw = solve_unnormalized(v, cfg);
  ScalarGrid chi = normalize_chi(chi_raw, cloud, cfg);
  if (tape) {
    tape->cfg = cfg;
    tape->cloud = cloud;
    tape->corner_value = trilinear_sample(chi_raw, Vec3(0.0, 0.0, 0.0));
    double mean = 0.0;
    for (const Vec3& p : cloud.positions) mean += trilinear_sample(chi_raw, p);
    tape->mean_sample = mean / static_cast<double>(cloud.positions.size());
    tape->chi_raw = std::move(chi_raw);
  }
  return chi;
}

void dpsr_backward(const DpsrTape& tape, const ScalarGrid& upstream,
                   std::vector<Vec3>* grad_positions, std::vector<Vec3>* grad_normals) {
  if (upstream.res != tape.cfg.res) throw invalid_input("dpsr_backward: upstream resolution mismatch");
  if (tape.chi_raw.res != tape.cfg.res) throw invalid_input("dpsr_backward: stale tape");

  int r = tape.cfg.res;
  size_t n = static_cast<size_t>(r) * r * r;
  size_t npts = tape.cloud.size();
  double a = tape.corner_value;
  double s = tape.cfg.iso_scale / std::abs(a);

  // L = <w, chi>, chi = s * (chi' - bbar). Pieces of dL/dchi':
  //   direct:    s * w
  //   via bbar:  -(s * W / N) scattered at each c_i
  //   via |a|:   C * ds/da scattered at the corner stencil
  double w_total = 0.0;
  double contraction = 0.0;  // C = <w, chi' - bbar>
  for (size_t lin = 0; lin < n; ++lin) {
    w_total += upstream.data[lin];
    contraction += upstream.data[lin] * (tape.chi_raw.data[lin] - tape.mean_sample);
  }
  double ds_da = -tape.cfg.iso_scale * (a < 0 ? -1.0 : 1.0) / (a * a);

  ScalarGrid grad_chi_raw(r);
  for (size_t lin = 0; lin < n; ++lin) grad_chi_raw.data[lin] = s * upstream.data[lin];

  double coeff_mean = -s * w_total / static_cast<double>(npts);
  for (const Vec3& p : tape.cloud.positions) {
    TrilinearStencil st = trilinear_stencil(r, p);
    for (int c = 0; c < 8; ++c) {
      int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
      grad_chi_raw.at(st.ix[bx], st.iy[by], st.iz[bz]) +=
          coeff_mean * st.wx[bx] * st.wy[by] * st.wz[bz];
    }
  }

  TrilinearStencil corner = trilinear_stencil(r, Vec3(0.0, 0.0, 0.0));
  for (int c = 0; c < 8; ++c) {
    int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    grad_chi_raw.at(corner.ix[bx], corner.iy[by], corner.iz[bz]) +=
        contraction * ds_da * corner.wx[bx] * corner.wy[by] * corner.wz[bz];
  }

  // Adjoint of the spectral solve: the multiplier is purely imaginary, so the
  // adjoint flips its sign.
  SpectralWorkspace ws = make_workspace(tape.cfg);
  std::vector<std::complex<double>> ghat(n);
  for (size_t lin = 0; lin < n; ++lin) ghat[lin] = grad_chi_raw.data[lin];
  fft3_inplace(ghat, r, false);
  VectorGrid grad_v(r);
  {
    std::vector<std::complex<double>> chan(n);
    for (int c = 0; c < 3; ++c) {
      size_t lin = 0;
      for (int k = 0; k < r; ++k) {
        for (int j = 0; j < r; ++j) {
          double gyz = ws.gauss[j] * ws.gauss[k];
          double n2yz = ws.freq[j] * ws.freq[j] + ws.freq[k] * ws.freq[k];
          double uc = c == 0 ? 0.0 : (c == 1 ? ws.dfreq[j] : ws.dfreq[k]);
          for (int i = 0; i < r; ++i, ++lin) {
            double norm2 = ws.freq[i] * ws.freq[i] + n2yz;
            if (norm2 == 0.0) {
              chan[lin] = 0.0;
              continue;
            }
            double u = c == 0 ? ws.dfreq[i] : uc;
            double m = ws.gauss[i] * gyz * u / (-2.0 * M_PI * norm2);
            chan[lin] = std::complex<double>(0.0, -m) * ghat[lin];
          }
        }
      }
      fft3_inplace(chan, r, true);
      for (size_t l2 = 0; l2 < n; ++l2) grad_v.data[3 * l2 + c] = chan[l2].real();
    }
  }

  rasterize_vjp(tape.cloud, grad_v, grad_positions, grad_normals);

  // bbar also depends on the sample positions
  for (size_t i = 0; i < npts; ++i) {
    Vec3 dsample;
    trilinear_sample_grad(tape.chi_raw, tape.cloud.positions[i], nullptr, &dsample);
    (*grad_positions)[i] += coeff_mean * dsample;
  }
}

double mse_loss(const ScalarGrid& pred, const ScalarGrid& target, ScalarGrid* grad) {
  if (pred.res != target.res) throw invalid_input("mse_loss: resolution mismatch");
  size_t n = pred.data.size();
  double loss = 0.0;
  if (grad) *grad = ScalarGrid(pred.res);
  double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    double d = pred.data[i] - target.data[i];
    loss += d * d;
    if (grad) grad->data[i] = 2.0 * d * inv;
  }
  return loss * inv;
}

}  // namespace recon
