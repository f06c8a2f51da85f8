#pragma once

// Scene description shared by the mode solver, the FDTD engine and the
// channeling pipeline. All lengths are in nanometres.

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace nanochannel {

struct GeometryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SourceError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Vec3 = std::array<double, 3>;

/// Lossless, non-dispersive dielectric at the design wavelength.
struct Material {
  std::string name;
  double n = 1.0;

  Material() = default;
  Material(std::string label, double index);

  double permittivity() const { return n * n; }
  bool operator==(const Material&) const = default;
};

namespace materials {
inline constexpr double kSilicaIndex = 1.4537;
inline constexpr double kWaterIndex = 1.3330;
inline constexpr double kVacuumIndex = 1.0;

Material silica();
Material water();
Material vacuum();
/// Looks up "silica", "water" or "vacuum" (case-sensitive).
Material by_name(const std::string& name);
}  // namespace materials

struct Layer {
  double outer_radius = 0.0;
  Material material;
  bool operator==(const Layer&) const = default;
};

/// Step-index cylinder along z, layers ordered innermost first, the
/// background extending to infinity.
class LayeredCylinderProfile {
 public:
  LayeredCylinderProfile(std::vector<Layer> layers, Material background);

  const std::vector<Layer>& layers() const { return layers_; }
  const Material& background() const { return background_; }
  std::size_t layer_count() const { return layers_.size(); }
  double outer_radius() const { return layers_.back().outer_radius; }
  double outer_diameter() const { return 2.0 * outer_radius(); }

  /// Refractive index at radial distance r (interfaces belong to the inner
  /// layer).
  double index_at(double r) const;
  double permittivity_at(double r) const { return index_at(r) * index_at(r); }
  double max_index() const;

  bool is_nanocapillary() const { return layers_.size() == 2; }

  bool operator==(const LayeredCylinderProfile&) const = default;

 private:
  std::vector<Layer> layers_;
  Material background_;
};

LayeredCylinderProfile make_onf(double diameter, const Material& clad);
LayeredCylinderProfile make_ncf(double d_in, double d_out, const Material& core,
                                const Material& background);

enum class Orientation { radial, azimuthal, axial };

std::string to_string(Orientation o);
Orientation orientation_from_string(const std::string& s);

/// Temporal envelope of the dipole current: Gaussian-windowed sine carrier
/// centred on the design frequency. `fractional_bandwidth` is the 1-sigma
/// width of the amplitude spectrum relative to the centre frequency.
struct PulseEnvelope {
  double wavelength = 620.0;
  double fractional_bandwidth = 0.1;

  double center_frequency() const { return 1.0 / wavelength; }  // c = 1
  double angular_frequency() const;
  double sigma_t() const;  // in units of c*t (nm)
  /// Peak time chosen so the envelope starts below 1e-8 of its peak.
  double peak_time() const;
  /// Time after which the envelope stays below 1e-8 of its peak.
  double end_time() const { return 2.0 * peak_time(); }
  double value(double t) const;
};

/// Point dipole resolved to Cartesian position and unit moment direction.
struct PointDipole {
  Vec3 position{};
  Vec3 direction{1.0, 0.0, 0.0};
  PulseEnvelope envelope{};
  double amplitude = 1.0;
};

struct DipoleSource {
  double r_in = 0.0;      // distance from the fibre axis
  double azimuth = 0.0;   // rad
  double z = 0.0;
  Orientation orientation = Orientation::radial;
  double wavelength = 620.0;
  PulseEnvelope envelope{};
  double amplitude = 1.0;

  Vec3 position() const;
  /// Unit Cartesian vector of the dipole moment at its position. For an
  /// on-axis dipole "radial" and "azimuthal" follow the azimuth parameter.
  Vec3 direction() const;
  PointDipole point() const;
  void validate() const;
};

/// Unit vectors of the three orientations at (r, azimuth).
Vec3 orientation_vector(Orientation o, double azimuth);

struct SimulationDomain {
  std::array<double, 3> extents{3000.0, 3000.0, 9000.0};  // interior, nm
  double dx = 20.0;
  int pml_cells = 10;
  double courant_factor = 0.5;
  std::vector<double> monitor_z_offsets{-4000.0, 4000.0};
  /// Distance of the closed power box faces from the source, in cells.
  int power_box_cells = 5;
  /// 0 selects the automatic budget (pulse length plus domain transit).
  long total_steps = 0;

  void validate() const;
  bool operator==(const SimulationDomain&) const = default;
};

/// Domain presets for the two resolution tiers.
SimulationDomain desk_domain(double dx);

}  // namespace nanochannel
