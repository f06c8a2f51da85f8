#include "nanochannel/channeling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <unistd.h>

#include "nanochannel/oracle.hpp"

namespace nanochannel {

std::string to_string(Tier t) { return t == Tier::fast ? "fast" : "accurate"; }

Tier tier_from_string(const std::string& s) {
  if (s == "fast") return Tier::fast;
  if (s == "accurate") return Tier::accurate;
  throw std::invalid_argument("unknown tier '" + s + "' (expected fast or accurate)");
}

SimulationDomain tier_domain(Tier t, bool far_monitors) {
  SimulationDomain d;
  d.dx = t == Tier::fast ? 20.0 : 10.0;
  d.pml_cells = 10;
  d.extents = {2400.0, 2400.0, 3600.0};
  d.monitor_z_offsets = {-1500.0, 1500.0};
  if (far_monitors) {
    d.extents[2] = 8800.0;
    d.monitor_z_offsets = {-4000.0, 4000.0};
  }
  return d;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

void put(std::ostringstream& os, const char* key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << key << '=' << buf << ';';
}

void put_cpml(std::ostringstream& os, const CpmlParams& c) {
  put(os, "cpml.order", c.order);
  put(os, "cpml.kappa", c.kappa_max);
  put(os, "cpml.sigma", c.sigma_scale);
  put(os, "cpml.alpha", c.alpha_scale);
}

}  // namespace

std::string scene_key(const LayeredCylinderProfile& profile, const DipoleSource& source,
                      const SimulationDomain& domain, const CpmlParams& cpml) {
  std::ostringstream os;
  for (const auto& l : profile.layers()) {
    os << "layer=" << l.material.name << ';';
    put(os, "n", l.material.n);
    put(os, "r", l.outer_radius);
  }
  os << "background=" << profile.background().name << ';';
  put(os, "n", profile.background().n);
  os << "orientation=" << to_string(source.orientation) << ';';
  put(os, "r_in", source.r_in);
  put(os, "azimuth", source.azimuth);
  put(os, "z", source.z);
  put(os, "wavelength", source.wavelength);
  put(os, "bandwidth", source.envelope.fractional_bandwidth);
  put(os, "amplitude", source.amplitude);
  for (double e : domain.extents) put(os, "extent", e);
  put(os, "dx", domain.dx);
  put(os, "pml", domain.pml_cells);
  put(os, "courant", domain.courant_factor);
  for (double m : domain.monitor_z_offsets) put(os, "monitor", m);
  put(os, "box", domain.power_box_cells);
  put(os, "steps", static_cast<double>(domain.total_steps));
  put_cpml(os, cpml);
  return os.str();
}

double surface_position(const LayeredCylinderProfile& profile) {
  return profile.outer_radius() + kSurfaceGap;
}

double purcell_factor(double P, double P0) {
  if (!(P0 > 0.0)) throw std::invalid_argument("vacuum reference power must be positive");
  return P / P0;
}

double average_random_orientation(double eta_radial, double eta_azimuthal, double eta_axial) {
  for (double e : {eta_radial, eta_azimuthal, eta_axial})
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("efficiencies must lie in [0, 1]");
  return (eta_radial + eta_azimuthal + eta_axial) / 3.0;
}

namespace {

struct LatticePoint {
  double x, y, weight;
  std::size_t index;
  bool a_lattice;
};

std::vector<LatticePoint> lattice(const FluxMonitor& m, const PlaneFrame& f) {
  std::vector<LatticePoint> pts;
  pts.reserve(m.eu.size() + m.ev.size());
  for (int iv = 0; iv < m.a_rows(); ++iv) {
    const double w = (iv == 0 || iv == m.a_rows() - 1) ? 0.5 : 1.0;
    for (int iu = 0; iu < m.a_cols(); ++iu)
      pts.push_back({f.x(m.u0() + iu + 0.5), f.y(m.v0() + iv), w, m.a_index(iu, iv), true});
  }
  for (int iv = 0; iv < m.b_rows(); ++iv)
    for (int iu = 0; iu < m.b_cols(); ++iu) {
      const double w = (iu == 0 || iu == m.b_cols() - 1) ? 0.5 : 1.0;
      pts.push_back({f.x(m.u0() + iu), f.y(m.v0() + iv + 0.5), w, m.b_index(iu, iv), false});
    }
  return pts;
}

}  // namespace

ProjectionResult project_guided(const FluxMonitor& monitor, const PlaneFrame& frame,
                                const ModeSpectrum& spectrum, int direction) {
  if (monitor.normal() != Axis::z) throw std::invalid_argument("projection needs a z-normal plane");
  ProjectionResult out;
  const auto pts = lattice(monitor, frame);
  const double area = frame.dx * frame.dx;
  for (const auto& mode : spectrum.modes) {
    double power = 0.0;
    for (int member : {+1, -1}) {
      if (member < 0 && mode.m == 0) break;
      cplx overlap = 0.0;
      double norm = 0.0;
      for (const auto& p : pts) {
        FieldVector f = mode.cartesian(p.x, p.y, member);
        if (direction < 0) f = GuidedMode::reversed(f);
        if (p.a_lattice) {
          const cplx E = monitor.eu[p.index], H = monitor.hv[p.index];
          overlap += p.weight * (E * std::conj(f[4]) + std::conj(f[0]) * H);
          norm += p.weight * 2.0 * (f[0] * std::conj(f[4])).real();
        } else {
          const cplx E = monitor.ev[p.index], H = monitor.hu[p.index];
          overlap -= p.weight * (E * std::conj(f[3]) + std::conj(f[1]) * H);
          norm -= p.weight * 2.0 * (f[1] * std::conj(f[3])).real();
        }
      }
      overlap *= area;
      norm *= area;
      // A unit-power mode has norm 4 * direction over the infinite plane.
      out.truncation = std::max(out.truncation, 1.0 - std::abs(norm) / 4.0);
      if (std::abs(norm) > 0.0) power += std::norm(overlap) / (4.0 * std::abs(norm));
    }
    out.per_mode.emplace_back(mode.label(), power);
    out.total += power;
  }
  if (out.truncation > 0.01) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "truncated projection: %.2f%% of a mode lies outside the monitor",
                  100.0 * out.truncation);
    out.warnings.emplace_back(buf);
  }
  return out;
}

double guided_aperture_radius(const FluxMonitor& monitor, const PlaneFrame& frame,
                              const ModeSpectrum& spectrum, double fraction) {
  const auto pts = lattice(monitor, frame);
  const double half = 0.5 * frame.dx * std::min(monitor.u1() - monitor.u0(), monitor.v1() - monitor.v0());
  const int bins = static_cast<int>(std::ceil(half / frame.dx)) + 1;
  double radius = 0.0;
  for (const auto& mode : spectrum.modes) {
    std::vector<double> shell(bins + 1, 0.0);
    for (const auto& p : pts) {
      const FieldVector f = mode.cartesian(p.x, p.y, +1);
      const double s = p.a_lattice ? (f[0] * std::conj(f[4])).real() : -(f[1] * std::conj(f[3])).real();
      const int b = std::min(bins, static_cast<int>(std::ceil(std::hypot(p.x, p.y) / frame.dx)));
      shell[b] += 0.5 * p.weight * s * frame.dx * frame.dx;
    }
    double inside = 0.0;
    int b = 0;
    for (; b < bins; ++b) {
      inside += shell[b];
      if (1.0 - inside < fraction) break;
    }
    radius = std::max(radius, std::min(b * frame.dx, half));
  }
  return radius;
}

namespace {

std::string cache_directory(const ChannelingOptions& o) {
  if (!o.cache_dir.empty()) return o.cache_dir;
  if (const char* env = std::getenv("NANOCHANNEL_CACHE_DIR"); env && *env) return env;
  return {};
}

std::mutex& memo_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::uint64_t, double>& memo() {
  static std::map<std::uint64_t, double> m;
  return m;
}

}  // namespace

double vacuum_reference_power(const DipoleSource& source, const SimulationDomain& domain,
                              const ChannelingOptions& options) {
  PointDipole pd = source.point();
  for (int a = 0; a < 3; ++a) pd.position[a] -= domain.dx * std::round(pd.position[a] / domain.dx);
  GridConfig gc;
  const int half = domain.power_box_cells + 15;
  gc.interior = {2 * half, 2 * half, 2 * half};
  gc.dx = domain.dx;
  gc.pml_cells = domain.pml_cells;
  gc.courant = domain.courant_factor;

  std::ostringstream os;
  os << "vacuum-reference-v1;";
  put(os, "dx", gc.dx);
  put(os, "courant", gc.courant);
  put(os, "pml", gc.pml_cells);
  put(os, "interior", gc.interior[0]);
  put(os, "box", domain.power_box_cells);
  for (int a = 0; a < 3; ++a) put(os, "pos", pd.position[a]);
  for (int a = 0; a < 3; ++a) put(os, "dir", pd.direction[a]);
  put(os, "wavelength", pd.envelope.wavelength);
  put(os, "bandwidth", pd.envelope.fractional_bandwidth);
  put(os, "amplitude", pd.amplitude);
  put_cpml(os, options.cpml);
  const std::uint64_t key = fnv1a(os.str());

  {
    std::lock_guard<std::mutex> lock(memo_mutex());
    if (auto it = memo().find(key); it != memo().end()) return it->second;
  }
  const std::string dir = cache_directory(options);
  const std::filesystem::path file =
      dir.empty() ? std::filesystem::path{} : std::filesystem::path(dir) / ("p0-" + hex64(key) + ".txt");
  if (!dir.empty()) {
    std::ifstream in(file);
    double v = 0.0;
    if (in >> v && v > 0.0) {
      std::lock_guard<std::mutex> lock(memo_mutex());
      memo()[key] = v;
      return v;
    }
  }

  RunSettings rs;
  rs.cpml = options.cpml;
  rs.box_half_width = domain.power_box_cells;
  Simulation<float> sim(gc, nullptr, pd, rs);
  const double p0 = sim.run().box_power;
  if (!(p0 > 0.0)) throw std::runtime_error("vacuum reference run produced no power");

  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    const auto tmp = file.string() + ".tmp." + std::to_string(::getpid());
    {
      std::ofstream out(tmp);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g\n", p0);
      out << buf;
    }
    std::filesystem::rename(tmp, file);
  }
  std::lock_guard<std::mutex> lock(memo_mutex());
  memo()[key] = p0;
  return p0;
}

EfficiencyResult run_channeling(const LayeredCylinderProfile& profile, const DipoleSource& source,
                                const ChannelingOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const SimulationDomain& domain = options.domain;
  domain.validate();
  source.validate();
  if (profile.is_nanocapillary() && source.r_in > profile.layers().front().outer_radius)
    throw SourceError("dipole must sit inside the capillary hole");

  EfficiencyResult res;
  const ModeSpectrum spectrum = solve_modes(profile, source.wavelength, options.modes);

  RunSettings rs;
  rs.cpml = options.cpml;
  rs.total_steps = domain.total_steps;
  rs.box_half_width = domain.power_box_cells;
  rs.monitor_z = domain.monitor_z_offsets;
  Simulation<float> sim(GridConfig::from_domain(domain), &profile, source.point(), rs);
  const RunReport report = sim.run();
  res.P = report.box_power;

  const auto& grid = sim.grid();
  const PlaneFrame frame{grid.dx(), grid.center(Axis::x), grid.center(Axis::y)};
  std::map<std::string, ModePower> modes;
  for (const auto& mode : spectrum.modes) modes[mode.label()].label = mode.label();
  double far_flux = 0.0;
  if (!spectrum.modes.empty())
    res.far_aperture_radius = guided_aperture_radius(sim.planes().front(), frame, spectrum);
  for (const auto& plane : sim.planes()) {
    const int dir = plane.sign();
    const ProjectionResult proj = project_guided(plane, frame, spectrum, dir);
    for (const auto& [label, p] : proj.per_mode) (dir > 0 ? modes[label].forward : modes[label].backward) += p;
    (dir > 0 ? res.Pc_forward : res.Pc_backward) += proj.total;
    for (const auto& w : proj.warnings) res.metadata.warnings.push_back(w);
    if (!spectrum.modes.empty()) far_flux += measure_flux_within(plane, grid, res.far_aperture_radius);
  }
  for (const auto& mode : spectrum.modes) {
    auto it = modes.find(mode.label());
    if (it != modes.end()) {
      res.per_mode.push_back(it->second);
      modes.erase(it);
    }
  }

  res.P0 = vacuum_reference_power(source, domain, options);
  res.purcell = purcell_factor(res.P, res.P0);
  res.eta = (res.Pc_forward + res.Pc_backward) / res.P;
  if (!spectrum.modes.empty()) res.eta_far = far_flux / res.P;
  if (options.cross_check) res.eta_hybrid = hybrid_eta(guided_rates(spectrum, source), res.purcell);
  if (res.eta < 0.0 || res.eta > 1.0)
    res.metadata.warnings.push_back("efficiency outside [0, 1]; check resolution and domain size");

  if (!options.dump_fields_dir.empty()) {
    std::filesystem::create_directories(options.dump_fields_dir);
    const char* names[] = {"Ex", "Ey", "Ez", "Hx", "Hy", "Hz"};
    for (int c = 0; c < 6; ++c)
      dump_field(grid, static_cast<Component>(c),
                 (std::filesystem::path(options.dump_fields_dir) / (std::string(names[c]) + ".bin")).string());
  }

  auto& md = res.metadata;
  md.scene_hash = fnv1a(scene_key(profile, source, domain, options.cpml));
  md.dx = domain.dx;
  md.extents = domain.extents;
  md.pml_cells = domain.pml_cells;
  md.monitor_z = domain.monitor_z_offsets;
  md.steps = report.steps;
  md.converged = report.stationary;
  for (const auto& w : report.warnings) md.warnings.push_back(w);
  md.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace nanochannel
