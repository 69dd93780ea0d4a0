#pragma once

#include <complex>
#include <vector>

namespace recon {

// In-place 3D complex DFT over an r^3 array laid out x-fastest. Forward is
// unnormalized (e^{-2*pi*i}); inverse applies the 1/r^3 factor. Plans use
// FFTW_ESTIMATE so results do not depend on planner measurements.
void fft3_inplace(std::complex<double>* data, int res, bool inverse);

inline void fft3_inplace(std::vector<std::complex<double>>& data, int res, bool inverse) {
  fft3_inplace(data.data(), res, inverse);
}

}  // namespace recon
