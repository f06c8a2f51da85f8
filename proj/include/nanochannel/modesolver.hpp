#pragma once

// Exact vectorial guided modes of step-index cylindrical waveguides with one
// or two layers inside a homogeneous background.
//
// Units: lengths in nm, c = epsilon0 = mu0 = 1, so omega = k0 = 2 pi / lambda
// and the vacuum impedance is 1. Fields carry exp(i(m phi + beta z - omega t)).

#include <array>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "nanochannel/scene.hpp"

namespace nanochannel {

struct NoGuidanceError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using cplx = std::complex<double>;

/// (e_r, e_phi, e_z, h_r, h_phi, h_z) or (Ex, Ey, Ez, Hx, Hy, Hz).
using FieldVector = std::array<cplx, 6>;

enum class ModeFamily { HE, EH, TE, TM };
std::string to_string(ModeFamily f);

/// Normalised frequency V = (pi d / lambda) sqrt(n_core^2 - n_clad^2).
double v_number(double diameter, double n_core, double n_clad, double wavelength);
/// Fibre size parameter k a = pi d / lambda.
double size_parameter(double diameter, double wavelength);

/// First zero of J0: the single-mode limit of a step-index fibre.
inline constexpr double kSingleModeCutoff = 2.404825557695773;

/// Radial solution inside one homogeneous layer: Ez = a F1 + b F2 and
/// Hz = i (c F1 + d F2), where (F1, F2) = (J_m, Y_m) when the layer is
/// propagating and (I_m, K_m) when it is evanescent.
struct LayerSolution {
  double inner_radius = 0.0;
  double outer_radius = 0.0;  // infinity for the background
  double eps = 1.0;
  double q2 = 0.0;            // k0^2 n^2 - beta^2
  std::array<double, 4> coef{};  // a, b, c, d
};

class GuidedMode {
 public:
  ModeFamily family = ModeFamily::HE;
  int m = 0;
  int radial_order = 1;
  double beta = 0.0;        // rad / nm
  double n_eff = 0.0;
  double wavelength = 0.0;
  double residual = 0.0;    // normalised dispersion determinant at the root
  bool near_degenerate = false;

  /// Field at (r, phi) for the forward-propagating mode, normalised to unit
  /// carried power. `member` selects exp(+i m phi) (+1) or exp(-i m phi) (-1)
  /// of a degenerate m >= 1 pair.
  FieldVector field(double r, double phi, int member = +1) const;
  /// Same field in Cartesian components at (x, y).
  FieldVector cartesian(double x, double y, int member = +1) const;
  /// Backward-propagating partner: e_t and h_z unchanged, e_z and h_t negated.
  static FieldVector reversed(const FieldVector& f);

  /// Radial profiles without the azimuthal factor: (e_r, e_phi, e_z, h_r,
  /// h_phi, h_z) where e_r, h_phi, h_z are multiplied by i in the field.
  std::array<double, 6> radial_profile(double r) const;

  /// Power carried through the infinite cross-section, 1/2 Re int (E x H*).z.
  double carried_power() const;
  /// Power normalisation constant that was divided out at construction.
  double normalization() const { return norm_; }

  /// Number of members in the degenerate set (2 for m >= 1, else 1).
  int multiplicity() const { return m == 0 ? 1 : 2; }
  std::string label() const;

  const std::vector<LayerSolution>& layers() const { return layers_; }

 private:
  friend class ModeBuilder;
  std::vector<LayerSolution> layers_;
  double k0_ = 0.0;
  double norm_ = 1.0;
};

struct ModeSpectrum {
  LayeredCylinderProfile profile;
  double wavelength = 0.0;
  std::vector<GuidedMode> modes;  // descending n_eff

  const GuidedMode* find(ModeFamily f, int m, int radial_order = 1) const;
  /// True when only the fundamental HE11 pair is guided.
  bool single_mode() const;
};

struct SolverOptions {
  int m_max = 3;
  int scan_points = 2000;
  /// Geometric refinement points packed against the lower (cutoff) edge.
  int cutoff_refinement_points = 120;
  double root_tolerance = 1e-12;
  double residual_limit = 1e-10;
};

ModeSpectrum solve_two_layer(const LayeredCylinderProfile& profile, double wavelength,
                             int m_max = 3);
ModeSpectrum solve_three_layer(const LayeredCylinderProfile& profile, double wavelength,
                               int m_max = 3);
/// Dispatches on the layer count.
ModeSpectrum solve_modes(const LayeredCylinderProfile& profile, double wavelength,
                         const SolverOptions& options = {});

FieldVector mode_field(const GuidedMode& mode, double r, double phi, int member = +1);

/// Normalised dispersion determinant for (m, family group) at n_eff; zero on a
/// guided mode. For m = 0 `transverse_electric` selects the TE (true) or TM
/// (false) sub-problem, ignored otherwise.
double dispersion_determinant(const LayeredCylinderProfile& profile, double wavelength, int m,
                              double n_eff, bool transverse_electric = false);

/// Cross-section overlap int (e1 x h2* + e2* x h1).z dA between the +member
/// fields of two modes; equals 4 for a unit-power mode with itself.
cplx mode_overlap(const GuidedMode& a, const GuidedMode& b);

}  // namespace nanochannel
