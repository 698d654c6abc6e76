#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace opmix::detail {

using Complex = std::complex<double>;

// (e^x - 1) / x, series for small |x| to dodge cancellation
inline Complex expm1_over(Complex x) {
  if (std::abs(x) < 1e-4)
    return 1.0 + x * (1.0 / 2.0 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)));
  return (std::exp(x) - 1.0) / x;
}

// (e^x - 1 - x) / x^2
inline Complex expm1m_over2(Complex x) {
  if (std::abs(x) < 1e-4)
    return 0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)));
  return (std::exp(x) - 1.0 - x) / (x * x);
}

// (1 - (1 - x) e^x) / x^2
inline Complex one_minus_back_over2(Complex x) {
  if (std::abs(x) < 1e-4)
    return 0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x / 144.0)));
  return (1.0 - (1.0 - x) * std::exp(x)) / (x * x);
}

// Assert the imaginary residual of a nominally real quantity is small
// relative to the computation scale, then return the real part. A large
// residual signals broken conjugate pairing in the spectral data.
inline double real_checked(Complex value, double scale, const char* what) {
  const double bound = 1e-8 * (std::max(std::abs(value), scale) + 1e-300);
  if (!(std::abs(value.imag()) <= bound))
    throw std::runtime_error(std::string(what) + ": imaginary residual " +
                             std::to_string(value.imag()) + " exceeds tolerance");
  return value.real();
}

}  // namespace opmix::detail
