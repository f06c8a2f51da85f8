#pragma once

// Semi-analytic guided emission rates of a point dipole, from the exact mode
// fields at the dipole position. Independent of the FDTD flux monitors.

#include <string>
#include <utility>
#include <vector>

#include "nanochannel/modesolver.hpp"
#include "nanochannel/scene.hpp"

namespace nanochannel {

struct GuidedRateEstimate {
  /// Rate into each mode (both members, both directions) over the vacuum rate.
  std::vector<std::pair<std::string, double>> per_mode_rate;
  double total() const;
};

/// Gamma_m / Gamma_0 = (3 pi / 2) sum_members |d . e_m(r0)|^2 / k0^2 for
/// unit-power mode fields, counting both propagation directions.
double guided_rate(const GuidedMode& mode, const DipoleSource& source);
GuidedRateEstimate guided_rates(const ModeSpectrum& spectrum, const DipoleSource& source);

/// Sum of guided rates over the Purcell factor taken from FDTD.
double hybrid_eta(const GuidedRateEstimate& rates, double purcell);

}  // namespace nanochannel
