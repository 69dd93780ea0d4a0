#include "recon/fft.hpp"

#include <fftw3.h>

#include "recon/errors.hpp"

namespace recon {

void fft3_inplace(std::complex<double>* data, int res, bool inverse) {
  if (res < 2) throw invalid_input("fft3: resolution must be >= 2");
  fftw_complex* buf = reinterpret_cast<fftw_complex*>(data);
  // our layout is x-fastest, so x is FFTW's last (contiguous) dimension
  fftw_plan plan = fftw_plan_dft_3d(res, res, res, buf, buf,
                                    inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  if (!plan) throw runtime_failure("fft3: plan creation failed");
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  if (inverse) {
    double scale = 1.0 / (static_cast<double>(res) * res * res);
    size_t n = static_cast<size_t>(res) * res * res;
    for (size_t i = 0; i < n; ++i) data[i] *= scale;
  }
}

}  // namespace recon
