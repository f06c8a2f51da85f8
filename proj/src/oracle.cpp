#include "nanochannel/oracle.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nanochannel {

double GuidedRateEstimate::total() const {
  double s = 0.0;
  for (const auto& [label, rate] : per_mode_rate) s += rate;
  return s;
}

double guided_rate(const GuidedMode& mode, const DipoleSource& source) {
  if (std::abs(mode.wavelength - source.wavelength) > 1e-9)
    throw std::invalid_argument("mode and source wavelengths differ");
  const Vec3 pos = source.position();
  const Vec3 d = source.direction();
  const double k0 = 2.0 * std::numbers::pi / source.wavelength;
  double sum = 0.0;
  for (int member : {+1, -1}) {
    if (member < 0 && mode.m == 0) break;
    const FieldVector f = mode.cartesian(pos[0], pos[1], member);
    // Forward and backward partners share e_t and flip e_z: |d . e|^2 is
    // the same unless the dipole mixes axial and transverse parts.
    const cplx fwd = d[0] * f[0] + d[1] * f[1] + d[2] * f[2];
    const cplx bwd = d[0] * f[0] + d[1] * f[1] - d[2] * f[2];
    sum += std::norm(fwd) + std::norm(bwd);
  }
  // Per direction: (omega^2 |p . e*|^2 / 16) / (omega^4 |p|^2 / 12 pi).
  return 0.75 * std::numbers::pi * sum / (k0 * k0);
}

GuidedRateEstimate guided_rates(const ModeSpectrum& spectrum, const DipoleSource& source) {
  GuidedRateEstimate est;
  for (const auto& mode : spectrum.modes) est.per_mode_rate.emplace_back(mode.label(), guided_rate(mode, source));
  return est;
}

double hybrid_eta(const GuidedRateEstimate& rates, double purcell) {
  if (!(purcell > 0.0)) throw std::invalid_argument("Purcell factor must be positive");
  return rates.total() / purcell;
}

}  // namespace nanochannel
