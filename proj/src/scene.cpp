#include "nanochannel/scene.hpp"

#include <cmath>
#include <numbers>

namespace nanochannel {

Material::Material(std::string label, double index) : name(std::move(label)), n(index) {
  if (!(n >= 1.0) || !std::isfinite(n))
    throw GeometryError("material '" + name + "': refractive index must be >= 1");
}

namespace materials {
Material silica() { return {"silica", kSilicaIndex}; }
Material water() { return {"water", kWaterIndex}; }
Material vacuum() { return {"vacuum", kVacuumIndex}; }

Material by_name(const std::string& name) {
  if (name == "silica") return silica();
  if (name == "water") return water();
  if (name == "vacuum") return vacuum();
  throw GeometryError("unknown material '" + name + "'");
}
}  // namespace materials

LayeredCylinderProfile::LayeredCylinderProfile(std::vector<Layer> layers, Material background)
    : layers_(std::move(layers)), background_(std::move(background)) {
  if (layers_.empty()) throw GeometryError("profile needs at least one layer");
  double prev = 0.0;
  for (const auto& l : layers_) {
    if (!(l.outer_radius > prev))
      throw GeometryError("layer radii must be positive and strictly increasing");
    prev = l.outer_radius;
  }
}

double LayeredCylinderProfile::index_at(double r) const {
  for (const auto& l : layers_)
    if (r <= l.outer_radius) return l.material.n;
  return background_.n;
}

double LayeredCylinderProfile::max_index() const {
  double n = background_.n;
  for (const auto& l : layers_) n = std::max(n, l.material.n);
  return n;
}

LayeredCylinderProfile make_onf(double diameter, const Material& clad) {
  if (!(diameter > 0.0)) throw GeometryError("nanofiber diameter must be positive");
  return LayeredCylinderProfile({{diameter / 2.0, materials::silica()}}, clad);
}

LayeredCylinderProfile make_ncf(double d_in, double d_out, const Material& core,
                                const Material& background) {
  if (!(d_in > 0.0)) throw GeometryError("capillary inner diameter must be positive");
  if (!(d_in < d_out)) throw GeometryError("capillary inner diameter must be below outer diameter");
  return LayeredCylinderProfile({{d_in / 2.0, core}, {d_out / 2.0, materials::silica()}},
                                background);
}

std::string to_string(Orientation o) {
  switch (o) {
    case Orientation::radial: return "radial";
    case Orientation::azimuthal: return "azimuthal";
    case Orientation::axial: return "axial";
  }
  return "?";
}

Orientation orientation_from_string(const std::string& s) {
  if (s == "radial") return Orientation::radial;
  if (s == "azimuthal") return Orientation::azimuthal;
  if (s == "axial") return Orientation::axial;
  throw SourceError("unknown orientation '" + s + "'");
}

double PulseEnvelope::angular_frequency() const {
  return 2.0 * std::numbers::pi * center_frequency();
}

double PulseEnvelope::sigma_t() const {
  return 1.0 / (2.0 * std::numbers::pi * fractional_bandwidth * center_frequency());
}

double PulseEnvelope::peak_time() const {
  // exp(-t^2 / 2 sigma^2) = 1e-8 at t = sqrt(2 ln 1e8) sigma ~ 6.07 sigma
  return std::sqrt(2.0 * std::log(1e8)) * sigma_t();
}

double PulseEnvelope::value(double t) const {
  const double s = sigma_t();
  const double tau = t - peak_time();
  // Odd about the peak, so the current carries no net charge.
  return std::exp(-tau * tau / (2.0 * s * s)) * std::sin(angular_frequency() * tau);
}

Vec3 orientation_vector(Orientation o, double azimuth) {
  const double c = std::cos(azimuth), s = std::sin(azimuth);
  switch (o) {
    case Orientation::radial: return {c, s, 0.0};
    case Orientation::azimuthal: return {-s, c, 0.0};
    case Orientation::axial: return {0.0, 0.0, 1.0};
  }
  return {0.0, 0.0, 0.0};
}

Vec3 DipoleSource::position() const {
  return {r_in * std::cos(azimuth), r_in * std::sin(azimuth), z};
}

Vec3 DipoleSource::direction() const { return orientation_vector(orientation, azimuth); }

PointDipole DipoleSource::point() const {
  validate();
  return {position(), direction(), envelope, amplitude};
}

void DipoleSource::validate() const {
  if (!(wavelength > 0.0)) throw SourceError("wavelength must be positive");
  if (!(r_in >= 0.0)) throw SourceError("radial offset must be non-negative");
  if (!(envelope.fractional_bandwidth > 0.0 && envelope.fractional_bandwidth < 1.0))
    throw SourceError("fractional bandwidth must lie in (0, 1)");
  if (std::abs(envelope.wavelength - wavelength) > 1e-9)
    throw SourceError("envelope wavelength differs from source wavelength");
}

void SimulationDomain::validate() const {
  if (!(dx > 0.0)) throw DomainError("cell size must be positive");
  for (double e : extents)
    if (!(e > 0.0)) throw DomainError("domain extents must be positive");
  if (pml_cells < 8) throw DomainError("PML must be at least 8 cells thick");
  if (!(courant_factor > 0.0) || courant_factor > 1.0 / std::sqrt(3.0) + 1e-12)
    throw DomainError("Courant factor must lie in (0, 1/sqrt(3)]");
  if (power_box_cells < 1) throw DomainError("power box must be at least one cell from the source");
  const double half_z = extents[2] / 2.0;
  for (double m : monitor_z_offsets) {
    if (m == 0.0) throw DomainError("monitor plane coincides with the source plane");
    if (std::abs(m) <= (power_box_cells + 1) * dx)
      throw DomainError("monitor plane lies inside the power box");
    if (std::abs(m) >= half_z - dx) throw DomainError("monitor plane touches the PML");
  }
}

SimulationDomain desk_domain(double dx) {
  SimulationDomain d;
  d.dx = dx;
  return d;
}

}  // namespace nanochannel
