#pragma once

// Channeling efficiency of a dipole into the guided modes of a fibre:
// eta = (Pc_forward + Pc_backward) / P from one FDTD run plus a vacuum
// reference run for the Purcell factor.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nanochannel/fdtd.hpp"
#include "nanochannel/modesolver.hpp"
#include "nanochannel/scene.hpp"

namespace nanochannel {

enum class Tier { fast, accurate };
std::string to_string(Tier t);
Tier tier_from_string(const std::string& s);

/// Domain preset of a tier. `far_monitors` keeps the monitor planes at
/// +-4 um for the raw-flux estimator; otherwise they sit at +-1.5 um.
SimulationDomain tier_domain(Tier t, bool far_monitors = false);

struct ChannelingOptions {
  SimulationDomain domain = tier_domain(Tier::fast);
  CpmlParams cpml{};
  SolverOptions modes{};
  /// Vacuum-reference cache directory; empty falls back to
  /// NANOCHANNEL_CACHE_DIR, and to no persistent cache when that is unset.
  std::string cache_dir;
  /// Directory receiving binary field snapshots after the run; empty disables.
  std::string dump_fields_dir;
  /// Attaches the semi-analytic hybrid estimate.
  bool cross_check = false;
};

struct ModePower {
  std::string label;
  double forward = 0.0;
  double backward = 0.0;
};

struct ResultMetadata {
  std::uint64_t scene_hash = 0;
  double dx = 0.0;
  std::array<double, 3> extents{};
  int pml_cells = 0;
  std::vector<double> monitor_z;
  double n_silica = materials::kSilicaIndex;
  double n_water = materials::kWaterIndex;
  double n_vacuum = materials::kVacuumIndex;
  std::string estimator = "projection";
  std::string directions = "both";
  long steps = 0;
  bool converged = true;
  double runtime_s = 0.0;
  std::vector<std::string> warnings;
};

struct EfficiencyResult {
  double P = 0.0;
  double P0 = 0.0;
  double Pc_forward = 0.0;
  double Pc_backward = 0.0;
  double eta = 0.0;
  double purcell = 0.0;
  std::vector<ModePower> per_mode;
  /// Raw flux through a disk holding >= 99% of every guided mode, both planes.
  std::optional<double> eta_far;
  double far_aperture_radius = 0.0;
  std::optional<double> eta_hybrid;
  ResultMetadata metadata;
};

/// Plane geometry needed to place monitor samples in fibre coordinates.
struct PlaneFrame {
  double dx = 0.0;
  int center_x = 0;
  int center_y = 0;
  double x(double node) const { return (node - center_x) * dx; }
  double y(double node) const { return (node - center_y) * dx; }
};

struct ProjectionResult {
  std::vector<std::pair<std::string, double>> per_mode;  // W per mode family entry
  double total = 0.0;
  /// Largest fraction of any mode's power falling outside the plane.
  double truncation = 0.0;
  std::vector<std::string> warnings;
};

/// Power carried by each guided mode through a z-normal monitor. `direction`
/// +1 projects on forward modes, -1 on backward modes. Degenerate members
/// are summed. Mode norms are evaluated on the monitor's own sample lattice.
ProjectionResult project_guided(const FluxMonitor& monitor, const PlaneFrame& frame,
                                const ModeSpectrum& spectrum, int direction);

/// Smallest disk radius (multiple of dx) outside which every mode carries
/// less than `fraction` of its power, limited by the plane extent.
double guided_aperture_radius(const FluxMonitor& monitor, const PlaneFrame& frame,
                              const ModeSpectrum& spectrum, double fraction = 0.01);

double purcell_factor(double P, double P0);
double average_random_orientation(double eta_radial, double eta_azimuthal, double eta_axial);

/// Total power of the source in an empty grid of the same cell size, sub-cell
/// offset, Courant factor and pulse. Cached on disk by content hash.
double vacuum_reference_power(const DipoleSource& source, const SimulationDomain& domain,
                              const ChannelingOptions& options);

EfficiencyResult run_channeling(const LayeredCylinderProfile& profile, const DipoleSource& source,
                                const ChannelingOptions& options);

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);
/// Canonical text describing a scene; equal scenes give equal strings.
std::string scene_key(const LayeredCylinderProfile& profile, const DipoleSource& source,
                      const SimulationDomain& domain, const CpmlParams& cpml);

/// Radial position of a dipole sitting just outside a nanofibre surface.
inline constexpr double kSurfaceGap = 5.0;
double surface_position(const LayeredCylinderProfile& profile);

}  // namespace nanochannel
