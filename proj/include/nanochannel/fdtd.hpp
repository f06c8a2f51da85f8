#pragma once

// 3D Yee-grid FDTD with CPML boundaries, soft dipole sources and
// frequency-domain flux planes.
//
// Units: c = epsilon0 = mu0 = 1, lengths (and c*t) in nm. E-field nodes:
//   Ex (i+1/2, j, k)   Ey (i, j+1/2, k)   Ez (i, j, k+1/2)
//   Hx (i, j+1/2, k+1/2)   Hy (i+1/2, j, k+1/2)   Hz (i+1/2, j+1/2, k)
// Node index a sits at coordinate (a - n_a/2) dx, so the fibre axis and the
// source plane pass through the grid centre. Tangential E on the outer
// faces is pinned at zero (PEC backing behind the CPML).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanochannel/scene.hpp"

namespace nanochannel {

struct DivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Axis { x = 0, y = 1, z = 2 };
enum class Component { Ex = 0, Ey, Ez, Hx, Hy, Hz };

/// Discrete grid layout. `interior` counts cells inside the PML per axis and
/// must be even so that the centre lies on a node.
struct GridConfig {
  std::array<int, 3> interior{100, 100, 100};
  double dx = 20.0;
  int pml_cells = 10;
  double courant = 0.5;

  static GridConfig from_domain(const SimulationDomain& d);
  std::array<int, 3> cells() const {
    return {interior[0] + 2 * pml_cells, interior[1] + 2 * pml_cells, interior[2] + 2 * pml_cells};
  }
  double dt() const { return courant * dx; }
};

inline GridConfig GridConfig::from_domain(const SimulationDomain& d) {
  d.validate();
  GridConfig g;
  for (int a = 0; a < 3; ++a) {
    int n = static_cast<int>(std::lround(d.extents[a] / d.dx));
    g.interior[a] = n + (n % 2);
  }
  g.dx = d.dx;
  g.pml_cells = d.pml_cells;
  g.courant = d.courant_factor;
  return g;
}

template <class Real>
class YeeGrid {
 public:
  explicit YeeGrid(const GridConfig& config) : config_(config) {
    if (!(config.dx > 0.0)) throw DomainError("cell size must be positive");
    if (config.courant <= 0.0 || config.courant > 1.0 / std::sqrt(3.0) + 1e-12)
      throw DomainError("Courant factor must lie in (0, 1/sqrt(3)]");
    for (int a = 0; a < 3; ++a) {
      if (config.interior[a] <= 0 || config.interior[a] % 2 != 0)
        throw DomainError("interior cell counts must be positive and even");
    }
    n_ = config.cells();
    sj_ = n_[2] + 1;
    si_ = static_cast<std::ptrdiff_t>(n_[1] + 1) * sj_;
    const std::size_t total = static_cast<std::size_t>(n_[0] + 1) * si_;
    for (auto& f : fields_) f.assign(total, Real(0));
    const std::size_t plane = static_cast<std::size_t>(n_[0] + 1) * (n_[1] + 1);
    for (auto& e : eps_) e.assign(plane, 1.0);
    update_coefficients();
  }

  const GridConfig& config() const { return config_; }
  int n(Axis a) const { return n_[static_cast<int>(a)]; }
  int nx() const { return n_[0]; }
  int ny() const { return n_[1]; }
  int nz() const { return n_[2]; }
  double dx() const { return config_.dx; }
  double dt() const { return config_.dt(); }
  int pml() const { return config_.pml_cells; }
  int center(Axis a) const { return n(a) / 2; }
  std::size_t cell_count() const {
    return static_cast<std::size_t>(n_[0]) * n_[1] * n_[2];
  }

  /// Coordinate of node index `idx` along `a` (add 0.5 for half nodes).
  double coord(Axis a, double idx) const { return (idx - center(a)) * config_.dx; }
  /// First and last node index of the non-PML interior along `a`.
  int interior_lo(Axis) const { return pml(); }
  int interior_hi(Axis a) const { return n(a) - pml(); }

  std::ptrdiff_t stride_i() const { return si_; }
  std::ptrdiff_t stride_j() const { return sj_; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i * si_ + j * sj_ + k);
  }

  std::vector<Real>& field(Component c) { return fields_[static_cast<int>(c)]; }
  const std::vector<Real>& field(Component c) const { return fields_[static_cast<int>(c)]; }
  Real& at(Component c, int i, int j, int k) { return field(c)[index(i, j, k)]; }
  Real at(Component c, int i, int j, int k) const { return field(c)[index(i, j, k)]; }

  /// Relative permittivity seen by E-component `a` at transverse node (i, j);
  /// the structure is translation invariant along z.
  double eps(Axis a, int i, int j) const { return eps_[static_cast<int>(a)][plane_index(i, j)]; }
  void set_eps(Axis a, int i, int j, double value) {
    if (!(value >= 1.0)) throw DomainError("permittivity must be >= 1");
    eps_[static_cast<int>(a)][plane_index(i, j)] = value;
  }
  /// Recomputes dt / (eps dx) after permittivity edits.
  void update_coefficients() {
    for (int a = 0; a < 3; ++a) {
      ce_[a].resize(eps_[a].size());
      for (std::size_t p = 0; p < eps_[a].size(); ++p)
        ce_[a][p] = static_cast<Real>(dt() / (eps_[a][p] * dx()));
    }
  }
  Real e_coefficient(Axis a, int i, int j) const { return ce_[static_cast<int>(a)][plane_index(i, j)]; }
  const Real* e_coefficients(Axis a) const { return ce_[static_cast<int>(a)].data(); }
  std::size_t plane_index(int i, int j) const { return static_cast<std::size_t>(i) * (n_[1] + 1) + j; }

  void clear_fields() {
    for (auto& f : fields_) std::fill(f.begin(), f.end(), Real(0));
  }

  /// Largest |E| or |H| component anywhere (NaN propagates as infinity).
  double max_abs_field() const {
    double m = 0.0;
    for (const auto& f : fields_) {
      double local = 0.0;
#pragma omp parallel for reduction(max : local) schedule(static)
      for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(f.size()); ++p) {
        const double v = std::abs(static_cast<double>(f[p]));
        local = std::isfinite(v) ? std::max(local, v) : HUGE_VAL;
      }
      m = std::max(m, local);
    }
    return m;
  }

 private:
  GridConfig config_;
  std::array<int, 3> n_{};
  std::ptrdiff_t si_ = 0, sj_ = 0;
  std::array<std::vector<Real>, 6> fields_;
  std::array<std::vector<double>, 3> eps_;
  std::array<std::vector<Real>, 3> ce_;
};

// --------------------------------------------------------------------------
// Permittivity rasterisation

/// Exact area of the disk x^2 + y^2 <= R^2 intersected with a rectangle.
double disk_rectangle_area(double R, double x0, double x1, double y0, double y1);

/// Fills the per-component permittivity maps with the area average of
/// eps(r) over each component's Yee cell.
template <class Real>
YeeGrid<Real>& rasterize(const LayeredCylinderProfile& profile, YeeGrid<Real>& grid) {
  const double dx = grid.dx();
  const double half_x = (grid.interior_hi(Axis::x) - grid.center(Axis::x)) * dx;
  const double half_y = (grid.interior_hi(Axis::y) - grid.center(Axis::y)) * dx;
  if (profile.outer_radius() >= std::min(half_x, half_y))
    throw GeometryError("waveguide radius exceeds the simulation interior");

  const auto& layers = profile.layers();
  const double cell = dx * dx;
  // Half-node offsets of each E component in (x, y).
  const std::array<std::array<double, 2>, 3> offset{{{0.5, 0.0}, {0.0, 0.5}, {0.0, 0.0}}};
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i <= grid.nx(); ++i) {
      for (int j = 0; j <= grid.ny(); ++j) {
        const double xc = grid.coord(Axis::x, i + offset[a][0]);
        const double yc = grid.coord(Axis::y, j + offset[a][1]);
        const double x0 = xc - dx / 2, x1 = xc + dx / 2, y0 = yc - dx / 2, y1 = yc + dx / 2;
        // Cumulative disk fractions, innermost first; region weights are
        // their differences so fully covered cells get exactly one weight 1.
        double eps = 0.0, inner = 0.0;
        const double r_near = std::hypot(std::max({0.0, std::abs(xc) - dx / 2}),
                                         std::max({0.0, std::abs(yc) - dx / 2}));
        const double r_far = std::hypot(std::abs(xc) + dx / 2, std::abs(yc) + dx / 2);
        for (const auto& l : layers) {
          double frac;
          if (r_far <= l.outer_radius) frac = 1.0;
          else if (r_near >= l.outer_radius) frac = 0.0;
          else frac = std::clamp(disk_rectangle_area(l.outer_radius, x0, x1, y0, y1) / cell, 0.0, 1.0);
          frac = std::max(frac, inner);
          eps += (frac - inner) * l.material.permittivity();
          inner = frac;
        }
        eps += (1.0 - inner) * profile.background().permittivity();
        grid.set_eps(static_cast<Axis>(a), i, j, eps);
      }
    }
  }
  grid.update_coefficients();
  return grid;
}

// --------------------------------------------------------------------------
// CPML

struct CpmlParams {
  int order = 3;
  double kappa_max = 5.0;
  /// sigma_max as a multiple of the polynomial optimum 0.8 (order + 1) / dx.
  double sigma_scale = 1.0;
  /// alpha_max in units of the design angular frequency.
  double alpha_scale = 0.1;
  double wavelength = 620.0;
};

/// Per-node stretching coefficients along one axis (E nodes at integer
/// positions, H nodes at half positions).
struct CpmlProfile {
  std::vector<double> b_e, a_e, inv_kappa_e, b_h, a_h, inv_kappa_h;
};

CpmlProfile make_cpml_profile(int n, int pml, double dx, double dt, const CpmlParams& p);

template <class Real>
class Cpml {
 public:
  Cpml(const YeeGrid<Real>& grid, const CpmlParams& params) : params_(params) {
    pml_ = grid.pml();
    for (int a = 0; a < 3; ++a) {
      profile_[a] = make_cpml_profile(grid.n(static_cast<Axis>(a)), pml_, grid.dx(), grid.dt(), params);
      ike_[a].assign(profile_[a].inv_kappa_e.begin(), profile_[a].inv_kappa_e.end());
      ikh_[a].assign(profile_[a].inv_kappa_h.begin(), profile_[a].inv_kappa_h.end());
    }
    if (pml_ == 0) return;
    // psi storage: per axis, 2*pml slab planes across the full other two axes.
    const int nx = grid.nx(), ny = grid.ny(), nz = grid.nz();
    slab_size_[0] = static_cast<std::size_t>(2 * pml_) * ny * nz;
    slab_size_[1] = static_cast<std::size_t>(nx) * 2 * pml_ * nz;
    slab_size_[2] = static_cast<std::size_t>(nx) * ny * 2 * pml_;
    for (int a = 0; a < 3; ++a)
      for (auto& psi : psi_[a]) psi.assign(slab_size_[a], Real(0));
    for (int a = 0; a < 3; ++a) {
      const int n = grid.n(static_cast<Axis>(a));
      for (int s = 0; s < 2 * pml_; ++s) slab_node_[a].push_back(s < pml_ ? s : n - 2 * pml_ + s);
    }
    for (int k : slab_node_[2]) {
      be_z_.push_back(static_cast<Real>(profile_[2].b_e[k]));
      ae_z_.push_back(static_cast<Real>(profile_[2].a_e[k]));
      bh_z_.push_back(static_cast<Real>(profile_[2].b_h[k]));
      ah_z_.push_back(static_cast<Real>(profile_[2].a_h[k]));
    }
  }

  const Real* inv_kappa_e(Axis a) const { return ike_[static_cast<int>(a)].data(); }
  const Real* inv_kappa_h(Axis a) const { return ikh_[static_cast<int>(a)].data(); }
  const CpmlParams& params() const { return params_; }

  void apply_e(YeeGrid<Real>& g);
  void apply_h(YeeGrid<Real>& g);
  void reset() {
    for (auto& axis : psi_)
      for (auto& psi : axis) std::fill(psi.begin(), psi.end(), Real(0));
  }

 private:
  CpmlParams params_;
  int pml_ = 0;
  std::array<CpmlProfile, 3> profile_;
  std::array<std::vector<Real>, 3> ike_, ikh_;
  // psi_[axis][0..1] for E components, [2..3] for H components.
  std::array<std::array<std::vector<Real>, 4>, 3> psi_;
  std::array<std::size_t, 3> slab_size_{};
  std::array<std::vector<int>, 3> slab_node_;
  std::vector<Real> be_z_, ae_z_, bh_z_, ah_z_;
};

// --------------------------------------------------------------------------
// Leapfrog updates

template <class Real>
void update_h(YeeGrid<Real>& g, const Cpml<Real>& cpml) {
  const int nx = g.nx(), ny = g.ny(), nz = g.nz();
  const std::ptrdiff_t si = g.stride_i(), sj = g.stride_j();
  const Real ch = static_cast<Real>(g.dt() / g.dx());
  const Real* __restrict ex = g.field(Component::Ex).data();
  const Real* __restrict ey = g.field(Component::Ey).data();
  const Real* __restrict ez = g.field(Component::Ez).data();
  Real* __restrict hx = g.field(Component::Hx).data();
  Real* __restrict hy = g.field(Component::Hy).data();
  Real* __restrict hz = g.field(Component::Hz).data();
  const Real* __restrict ikx = cpml.inv_kappa_h(Axis::x);
  const Real* __restrict iky = cpml.inv_kappa_h(Axis::y);
  const Real* __restrict ikz = cpml.inv_kappa_h(Axis::z);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const std::ptrdiff_t row = i * si + j * sj;
      const Real kx = ikx[i], ky = iky[j];
      for (int k = 0; k < nz; ++k) {
        const std::ptrdiff_t p = row + k;
        hx[p] -= ch * ((ez[p + sj] - ez[p]) * ky - (ey[p + 1] - ey[p]) * ikz[k]);
      }
      for (int k = 0; k < nz; ++k) {
        const std::ptrdiff_t p = row + k;
        hy[p] -= ch * ((ex[p + 1] - ex[p]) * ikz[k] - (ez[p + si] - ez[p]) * kx);
      }
      for (int k = 0; k < nz; ++k) {
        const std::ptrdiff_t p = row + k;
        hz[p] -= ch * ((ey[p + si] - ey[p]) * kx - (ex[p + sj] - ex[p]) * ky);
      }
    }
  }
}

template <class Real>
void update_e(YeeGrid<Real>& g, const Cpml<Real>& cpml) {
  const int nx = g.nx(), ny = g.ny(), nz = g.nz();
  const std::ptrdiff_t si = g.stride_i(), sj = g.stride_j();
  Real* __restrict ex = g.field(Component::Ex).data();
  Real* __restrict ey = g.field(Component::Ey).data();
  Real* __restrict ez = g.field(Component::Ez).data();
  const Real* __restrict hx = g.field(Component::Hx).data();
  const Real* __restrict hy = g.field(Component::Hy).data();
  const Real* __restrict hz = g.field(Component::Hz).data();
  const Real* __restrict ikx = cpml.inv_kappa_e(Axis::x);
  const Real* __restrict iky = cpml.inv_kappa_e(Axis::y);
  const Real* __restrict ikz = cpml.inv_kappa_e(Axis::z);
  const Real* cex = g.e_coefficients(Axis::x);
  const Real* cey = g.e_coefficients(Axis::y);
  const Real* cez = g.e_coefficients(Axis::z);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const std::ptrdiff_t row = i * si + j * sj;
      const std::size_t pl = g.plane_index(i, j);
      const Real kx = ikx[i], ky = iky[j];
      if (j >= 1) {
        const Real c = cex[pl];
        for (int k = 1; k < nz; ++k) {
          const std::ptrdiff_t p = row + k;
          ex[p] += c * ((hz[p] - hz[p - sj]) * ky - (hy[p] - hy[p - 1]) * ikz[k]);
        }
      }
      if (i >= 1) {
        const Real c = cey[pl];
        for (int k = 1; k < nz; ++k) {
          const std::ptrdiff_t p = row + k;
          ey[p] += c * ((hx[p] - hx[p - 1]) * ikz[k] - (hz[p] - hz[p - si]) * kx);
        }
      }
      if (i >= 1 && j >= 1) {
        const Real c = cez[pl];
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = row + k;
          ez[p] += c * ((hy[p] - hy[p - si]) * kx - (hx[p] - hx[p - sj]) * ky);
        }
      }
    }
  }
}

template <class Real>
void Cpml<Real>::apply_h(YeeGrid<Real>& g) {
  if (pml_ == 0) return;
  const int nx = g.nx(), ny = g.ny(), nz = g.nz();
  const Real ch = static_cast<Real>(g.dt() / g.dx());
  const Real* __restrict ex = g.field(Component::Ex).data();
  const Real* __restrict ey = g.field(Component::Ey).data();
  const Real* __restrict ez = g.field(Component::Ez).data();
  Real* __restrict hx = g.field(Component::Hx).data();
  Real* __restrict hy = g.field(Component::Hy).data();
  Real* __restrict hz = g.field(Component::Hz).data();
  const std::ptrdiff_t si = g.stride_i(), sj = g.stride_j();
  const int w = 2 * pml_;

  // x slabs: Hy += ch psi(dEz/dx), Hz -= ch psi(dEy/dx)
  {
    const auto& pr = profile_[0];
    Real* __restrict p_hy = psi_[0][2].data();
    Real* __restrict p_hz = psi_[0][3].data();
#pragma omp parallel for schedule(static)
    for (int s = 0; s < w; ++s) {
      const int i = slab_node_[0][s];
      const Real b = static_cast<Real>(pr.b_h[i]), a = static_cast<Real>(pr.a_h[i]);
      if (a == Real(0)) continue;
      for (int j = 0; j < ny; ++j) {
        const std::ptrdiff_t p0 = g.index(i, j, 0);
        const std::ptrdiff_t q0 = (static_cast<std::ptrdiff_t>(s) * ny + j) * nz;
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_hy[q] = b * p_hy[q] + a * (ez[p + si] - ez[p]);
          hy[p] += ch * p_hy[q];
        }
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_hz[q] = b * p_hz[q] + a * (ey[p + si] - ey[p]);
          hz[p] -= ch * p_hz[q];
        }
      }
    }
  }
  // y slabs: Hx -= ch psi(dEz/dy), Hz += ch psi(dEx/dy)
  {
    const auto& pr = profile_[1];
    Real* __restrict p_hx = psi_[1][2].data();
    Real* __restrict p_hz = psi_[1][3].data();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nx; ++i) {
      for (int s = 0; s < w; ++s) {
        const int j = slab_node_[1][s];
        const Real b = static_cast<Real>(pr.b_h[j]), a = static_cast<Real>(pr.a_h[j]);
        if (a == Real(0)) continue;
        const std::ptrdiff_t p0 = g.index(i, j, 0);
        const std::ptrdiff_t q0 = (static_cast<std::ptrdiff_t>(i) * w + s) * nz;
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_hx[q] = b * p_hx[q] + a * (ez[p + sj] - ez[p]);
          hx[p] -= ch * p_hx[q];
        }
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_hz[q] = b * p_hz[q] + a * (ex[p + sj] - ex[p]);
          hz[p] += ch * p_hz[q];
        }
      }
    }
  }
  // z slabs: Hx += ch psi(dEy/dz), Hy -= ch psi(dEx/dz)
  {
    const Real* __restrict bz = bh_z_.data();
    const Real* __restrict az = ah_z_.data();
    Real* __restrict p_hx = psi_[2][2].data();
    Real* __restrict p_hy = psi_[2][3].data();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) {
        const std::ptrdiff_t q0 = (static_cast<std::ptrdiff_t>(i) * ny + j) * w;
        for (int half = 0; half < 2; ++half) {
          const int k0 = half == 0 ? 0 : nz - pml_;
          const std::ptrdiff_t p0 = g.index(i, j, k0);
          const std::ptrdiff_t qh = q0 + half * pml_;
          for (int s = 0; s < pml_; ++s) {
            const std::ptrdiff_t p = p0 + s, q = qh + s;
            p_hx[q] = bz[half * pml_ + s] * p_hx[q] + az[half * pml_ + s] * (ey[p + 1] - ey[p]);
            p_hy[q] = bz[half * pml_ + s] * p_hy[q] + az[half * pml_ + s] * (ex[p + 1] - ex[p]);
            hx[p] += ch * p_hx[q];
            hy[p] -= ch * p_hy[q];
          }
        }
      }
    }
  }
}

template <class Real>
void Cpml<Real>::apply_e(YeeGrid<Real>& g) {
  if (pml_ == 0) return;
  const int nx = g.nx(), ny = g.ny(), nz = g.nz();
  Real* __restrict ex = g.field(Component::Ex).data();
  Real* __restrict ey = g.field(Component::Ey).data();
  Real* __restrict ez = g.field(Component::Ez).data();
  const Real* __restrict hx = g.field(Component::Hx).data();
  const Real* __restrict hy = g.field(Component::Hy).data();
  const Real* __restrict hz = g.field(Component::Hz).data();
  const std::ptrdiff_t si = g.stride_i(), sj = g.stride_j();
  const int w = 2 * pml_;
  const Real* cex = g.e_coefficients(Axis::x);
  const Real* cey = g.e_coefficients(Axis::y);
  const Real* cez = g.e_coefficients(Axis::z);

  // x slabs: Ey -= c psi(dHz/dx), Ez += c psi(dHy/dx)
  {
    const auto& pr = profile_[0];
    Real* __restrict p_ey = psi_[0][0].data();
    Real* __restrict p_ez = psi_[0][1].data();
#pragma omp parallel for schedule(static)
    for (int s = 0; s < w; ++s) {
      const int i = slab_node_[0][s];
      if (i < 1) continue;
      const Real b = static_cast<Real>(pr.b_e[i]), a = static_cast<Real>(pr.a_e[i]);
      if (a == Real(0)) continue;
      for (int j = 0; j < ny; ++j) {
        const std::size_t pl = g.plane_index(i, j);
        const std::ptrdiff_t p0 = g.index(i, j, 0);
        const std::ptrdiff_t q0 = (static_cast<std::ptrdiff_t>(s) * ny + j) * nz;
        const Real cy = cey[pl], cz = cez[pl];
        for (int k = 1; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_ey[q] = b * p_ey[q] + a * (hz[p] - hz[p - si]);
          ey[p] -= cy * p_ey[q];
        }
        if (j < 1) continue;
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_ez[q] = b * p_ez[q] + a * (hy[p] - hy[p - si]);
          ez[p] += cz * p_ez[q];
        }
      }
    }
  }
  // y slabs: Ex += c psi(dHz/dy), Ez -= c psi(dHx/dy)
  {
    const auto& pr = profile_[1];
    Real* __restrict p_ex = psi_[1][0].data();
    Real* __restrict p_ez = psi_[1][1].data();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nx; ++i) {
      for (int s = 0; s < w; ++s) {
        const int j = slab_node_[1][s];
        if (j < 1) continue;
        const Real b = static_cast<Real>(pr.b_e[j]), a = static_cast<Real>(pr.a_e[j]);
        if (a == Real(0)) continue;
        const std::size_t pl = g.plane_index(i, j);
        const std::ptrdiff_t p0 = g.index(i, j, 0);
        const std::ptrdiff_t q0 = (static_cast<std::ptrdiff_t>(i) * w + s) * nz;
        const Real cx = cex[pl], cz = cez[pl];
        for (int k = 1; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_ex[q] = b * p_ex[q] + a * (hz[p] - hz[p - sj]);
          ex[p] += cx * p_ex[q];
        }
        if (i < 1) continue;
        for (int k = 0; k < nz; ++k) {
          const std::ptrdiff_t p = p0 + k, q = q0 + k;
          p_ez[q] = b * p_ez[q] + a * (hx[p] - hx[p - sj]);
          ez[p] -= cz * p_ez[q];
        }
      }
    }
  }
  // z slabs: Ex -= c psi(dHy/dz), Ey += c psi(dHx/dz)
  {
    const Real* __restrict bz = be_z_.data();
    const Real* __restrict az = ae_z_.data();
    Real* __restrict p_ex = psi_[2][0].data();
    Real* __restrict p_ey = psi_[2][1].data();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) {
        const std::size_t pl = g.plane_index(i, j);
        const Real cx = j >= 1 ? cex[pl] : Real(0);
        const Real cy = i >= 1 ? cey[pl] : Real(0);
        const std::ptrdiff_t q0 = (static_cast<std::ptrdiff_t>(i) * ny + j) * w;
        for (int half = 0; half < 2; ++half) {
          const int k0 = half == 0 ? 1 : nz - pml_;
          const int k1 = half == 0 ? pml_ : nz;
          for (int k = k0; k < k1; ++k) {
            const int s = half == 0 ? k : k - (nz - 2 * pml_);
            const std::ptrdiff_t p = g.index(i, j, k), q = q0 + s;
            p_ex[q] = bz[s] * p_ex[q] + az[s] * (hy[p] - hy[p - 1]);
            p_ey[q] = bz[s] * p_ey[q] + az[s] * (hx[p] - hx[p - 1]);
            ex[p] -= cx * p_ex[q];
            ey[p] += cy * p_ey[q];
          }
        }
      }
    }
  }
}

// --------------------------------------------------------------------------
// Dipole source

/// Current-density weights of a point dipole spread trilinearly over the
/// staggered nodes of each E component.
struct SourceTap {
  Component component;
  int i, j, k;
  double weight;  // direction cosine times trilinear weight
};

template <class Real>
class DipoleInjector {
 public:
  DipoleInjector(const PointDipole& source, const YeeGrid<Real>& grid) : source_(source) {
    const Vec3 pos = source.position;
    const Vec3 dir = source.direction;
    for (int a = 0; a < 3; ++a) {
      const double lo = grid.coord(static_cast<Axis>(a), grid.interior_lo(static_cast<Axis>(a)));
      const double hi = grid.coord(static_cast<Axis>(a), grid.interior_hi(static_cast<Axis>(a)));
      if (!(pos[a] > lo + grid.dx() && pos[a] < hi - grid.dx()))
        throw SourceError("dipole position lies in or next to the PML");
    }
    for (int c = 0; c < 3; ++c) {
      if (dir[c] == 0.0) continue;
      // Fractional node coordinates on this component's lattice.
      std::array<double, 3> f{};
      for (int a = 0; a < 3; ++a) {
        const double half = (a == c) ? 0.5 : 0.0;
        f[a] = pos[a] / grid.dx() + grid.center(static_cast<Axis>(a)) - half;
      }
      std::array<int, 3> base{};
      std::array<double, 3> t{};
      for (int a = 0; a < 3; ++a) {
        base[a] = static_cast<int>(std::floor(f[a]));
        t[a] = f[a] - base[a];
      }
      for (int corner = 0; corner < 8; ++corner) {
        double w = dir[c];
        std::array<int, 3> idx{};
        for (int a = 0; a < 3; ++a) {
          const int bit = (corner >> a) & 1;
          w *= bit ? t[a] : 1.0 - t[a];
          idx[a] = base[a] + bit;
        }
        if (w == 0.0) continue;
        taps_.push_back({static_cast<Component>(c), idx[0], idx[1], idx[2], w});
      }
    }
    scale_ = source.amplitude / (grid.dx() * grid.dx() * grid.dx());
  }

  const std::vector<SourceTap>& taps() const { return taps_; }
  const PointDipole& source() const { return source_; }
  /// Current density scale at unit envelope.
  double scale() const { return scale_; }

  /// Adds -dt/eps J(t) to the E nodes; `t` is the half-step time.
  void inject(YeeGrid<Real>& grid, double t) const {
    const double env = source_.envelope.value(t) * scale_;
    if (env == 0.0) return;
    for (const auto& tap : taps_) {
      const Axis a = static_cast<Axis>(static_cast<int>(tap.component));
      const double c = grid.e_coefficient(a, tap.i, tap.j) * grid.dx();
      grid.at(tap.component, tap.i, tap.j, tap.k) -= static_cast<Real>(c * env * tap.weight);
    }
  }

 private:
  PointDipole source_;
  std::vector<SourceTap> taps_;
  double scale_ = 1.0;
};

template <class Real>
void inject_dipole(const DipoleInjector<Real>& injector, YeeGrid<Real>& grid, double t) {
  injector.inject(grid, t);
}

// --------------------------------------------------------------------------
// Frequency-domain flux planes

using cplx = std::complex<double>;

/// Axis-aligned plane accumulating the running DFT of the tangential fields
/// at one frequency. With normal n and tangential axes (u, v) in cyclic
/// order, S_n = E_u H_v* - E_v H_u*. E_u and H_v live on the "A" lattice
/// (u half node, v node); E_v and H_u on the "B" lattice (u node, v half node).
class FluxMonitor {
 public:
  FluxMonitor() = default;
  /// `plane` is the node index along `normal`; [u0, u1] and [v0, v1] are
  /// node ranges along the tangential axes. `sign` orients the normal.
  FluxMonitor(Axis normal, int plane, int u0, int u1, int v0, int v1, double omega, int sign = +1);

  Axis normal() const { return normal_; }
  Axis u_axis() const { return static_cast<Axis>((static_cast<int>(normal_) + 1) % 3); }
  Axis v_axis() const { return static_cast<Axis>((static_cast<int>(normal_) + 2) % 3); }
  int plane() const { return plane_; }
  int u0() const { return u0_; }
  int u1() const { return u1_; }
  int v0() const { return v0_; }
  int v1() const { return v1_; }
  int sign() const { return sign_; }
  double omega() const { return omega_; }

  int a_cols() const { return u1_ - u0_; }        // half nodes along u
  int a_rows() const { return v1_ - v0_ + 1; }    // nodes along v
  int b_cols() const { return u1_ - u0_ + 1; }
  int b_rows() const { return v1_ - v0_; }
  std::size_t a_index(int iu, int iv) const { return static_cast<std::size_t>(iv) * a_cols() + iu; }
  std::size_t b_index(int iu, int iv) const { return static_cast<std::size_t>(iv) * b_cols() + iu; }

  // Accumulated DFTs (sum f(t) exp(i omega t) dt).
  std::vector<cplx> eu, hv, ev, hu;

  template <class Real>
  void accumulate(const YeeGrid<Real>& g, double t_e, double t_h);

  /// Scales every accumulated value (used by linearity checks).
  void scale(double factor);

 private:
  Axis normal_ = Axis::z;
  int plane_ = 0, u0_ = 0, u1_ = 0, v0_ = 0, v1_ = 0;
  double omega_ = 0.0;
  int sign_ = 1;
};

/// Time-averaged power 1/2 Re int (E x H*).n dA through the monitor, in the
/// monitor's orientation, with the trapezoid rule at the plane edges.
double measure_flux(const FluxMonitor& monitor, double dx);

/// Flux restricted to points within `radius` of the z axis (z-normal planes).
template <class Real>
double measure_flux_within(const FluxMonitor& monitor, const YeeGrid<Real>& grid, double radius);

template <class Real>
void FluxMonitor::accumulate(const YeeGrid<Real>& g, double t_e, double t_h) {
  const cplx pe = std::polar(1.0, omega_ * t_e) * g.dt();
  const cplx ph = std::polar(1.0, omega_ * t_h) * g.dt();
  const int n = static_cast<int>(normal_);
  const Axis ua = u_axis(), va = v_axis();
  const Component Eu = static_cast<Component>(static_cast<int>(ua));
  const Component Ev = static_cast<Component>(static_cast<int>(va));
  const Component Hu = static_cast<Component>(3 + static_cast<int>(ua));
  const Component Hv = static_cast<Component>(3 + static_cast<int>(va));
  auto node = [n](int p, int u, int v) {
    std::array<int, 3> idx{};
    idx[n] = p;
    idx[(n + 1) % 3] = u;
    idx[(n + 2) % 3] = v;
    return idx;
  };
  const auto& feu = g.field(Eu);
  const auto& fev = g.field(Ev);
  const auto& fhu = g.field(Hu);
  const auto& fhv = g.field(Hv);
  const int ac = a_cols(), ar = a_rows(), bc = b_cols(), br = b_rows();
#pragma omp parallel for schedule(static)
  for (int iv = 0; iv < std::max(ar, br); ++iv) {
    if (iv < ar) {
      for (int iu = 0; iu < ac; ++iu) {
        const auto c0 = node(plane_, u0_ + iu, v0_ + iv);
        const auto c1 = node(plane_ - 1, u0_ + iu, v0_ + iv);
        const std::size_t p0 = g.index(c0[0], c0[1], c0[2]);
        const std::size_t p1 = g.index(c1[0], c1[1], c1[2]);
        const std::size_t q = a_index(iu, iv);
        eu[q] += pe * static_cast<double>(feu[p0]);
        hv[q] += ph * (0.5 * (static_cast<double>(fhv[p0]) + static_cast<double>(fhv[p1])));
      }
    }
    if (iv < br) {
      for (int iu = 0; iu < bc; ++iu) {
        const auto c0 = node(plane_, u0_ + iu, v0_ + iv);
        const auto c1 = node(plane_ - 1, u0_ + iu, v0_ + iv);
        const std::size_t p0 = g.index(c0[0], c0[1], c0[2]);
        const std::size_t p1 = g.index(c1[0], c1[1], c1[2]);
        const std::size_t q = b_index(iu, iv);
        ev[q] += pe * static_cast<double>(fev[p0]);
        hu[q] += ph * (0.5 * (static_cast<double>(fhu[p0]) + static_cast<double>(fhu[p1])));
      }
    }
  }
}

template <class Real>
double measure_flux_within(const FluxMonitor& m, const YeeGrid<Real>& grid, double radius) {
  if (m.normal() != Axis::z) throw std::invalid_argument("aperture flux needs a z-normal plane");
  const double dx = grid.dx();
  double sum = 0.0;
  for (int iv = 0; iv < m.a_rows(); ++iv)
    for (int iu = 0; iu < m.a_cols(); ++iu) {
      const double x = grid.coord(Axis::x, m.u0() + iu + 0.5);
      const double y = grid.coord(Axis::y, m.v0() + iv);
      if (std::hypot(x, y) > radius) continue;
      const std::size_t q = m.a_index(iu, iv);
      sum += (m.eu[q] * std::conj(m.hv[q])).real();
    }
  for (int iv = 0; iv < m.b_rows(); ++iv)
    for (int iu = 0; iu < m.b_cols(); ++iu) {
      const double x = grid.coord(Axis::x, m.u0() + iu);
      const double y = grid.coord(Axis::y, m.v0() + iv + 0.5);
      if (std::hypot(x, y) > radius) continue;
      const std::size_t q = m.b_index(iu, iv);
      sum -= (m.ev[q] * std::conj(m.hu[q])).real();
    }
  return 0.5 * m.sign() * sum * dx * dx;
}

/// Six flux planes enclosing the node (ci, cj, ck) at `half_width` cells.
class PowerBox {
 public:
  PowerBox() = default;
  PowerBox(std::array<int, 3> center, int half_width, double omega);

  template <class Real>
  void accumulate(const YeeGrid<Real>& g, double t_e, double t_h) {
    for (auto& f : faces_) f.accumulate(g, t_e, t_h);
  }
  /// Net outward power, summed over faces in a fixed order.
  double power(double dx) const;
  const std::array<FluxMonitor, 6>& faces() const { return faces_; }
  std::array<FluxMonitor, 6>& faces() { return faces_; }
  int half_width() const { return half_width_; }
  std::array<int, 3> center() const { return center_; }

 private:
  std::array<FluxMonitor, 6> faces_;
  std::array<int, 3> center_{};
  int half_width_ = 0;
};

// --------------------------------------------------------------------------
// Field snapshots

/// Writes one component as: "NCFD" magic, uint32 version (1), uint32 nx, ny,
/// nz, float64 dx, uint32 component id (Ex..Hz = 0..5), then nx*ny*nz
/// little-endian float32 values with z fastest (row-major [i][j][k]).
template <class Real>
void dump_field(const YeeGrid<Real>& g, Component c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open snapshot file " + path);
  auto put_u32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_bytes = [&out](const void* p, std::size_t n) {
    // Host byte order is little-endian on every supported target.
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  out.write("NCFD", 4);
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(g.nx()));
  put_u32(static_cast<std::uint32_t>(g.ny()));
  put_u32(static_cast<std::uint32_t>(g.nz()));
  const double dx = g.dx();
  put_bytes(&dx, sizeof dx);
  put_u32(static_cast<std::uint32_t>(c));
  std::vector<float> row(g.nz());
  for (int i = 0; i < g.nx(); ++i)
    for (int j = 0; j < g.ny(); ++j) {
      for (int k = 0; k < g.nz(); ++k) row[k] = static_cast<float>(g.at(c, i, j, k));
      put_bytes(row.data(), row.size() * sizeof(float));
    }
}

// --------------------------------------------------------------------------
// Time stepping

/// One leapfrog step: H to n+1/2, E to n+1 with the source current at n+1/2.
template <class Real>
void step(YeeGrid<Real>& grid, Cpml<Real>& cpml, const DipoleInjector<Real>* source,
          double t_half) {
  update_h(grid, cpml);
  cpml.apply_h(grid);
  update_e(grid, cpml);
  cpml.apply_e(grid);
  if (source) source->inject(grid, t_half);
}

}  // namespace nanochannel

namespace nanochannel {

struct RunSettings {
  CpmlParams cpml{};
  /// 0 selects pulse length plus 1.5x the slowest light transit to the
  /// farthest monitor or box corner.
  long total_steps = 0;
  int box_half_width = 5;
  /// Monitor planes, as z offsets from the source plane.
  std::vector<double> monitor_z{};
  double stationarity_tolerance = 1e-3;
};

struct RunReport {
  long steps = 0;
  double box_power = 0.0;
  /// Relative change of the box and plane fluxes over the final check window.
  double final_change = 0.0;
  bool stationary = true;
  std::vector<std::string> warnings;
};

/// One FDTD run: grid, boundaries, source and monitors.
template <class Real>
class Simulation {
 public:
  Simulation(const GridConfig& config, const LayeredCylinderProfile* profile,
             const PointDipole& source, const RunSettings& settings)
      : settings_(settings), grid_(config), cpml_(grid_, with_wavelength(settings.cpml, source)),
        injector_(source, prepare(grid_, profile)),
        omega_(source.envelope.angular_frequency()) {
    const double dx = grid_.dx();
    const Vec3 pos = source.position;
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a)
      c[a] = grid_.center(static_cast<Axis>(a)) + static_cast<int>(std::lround(pos[a] / dx));
    const int hw = settings.box_half_width;
    for (int a = 0; a < 3; ++a) {
      const Axis ax = static_cast<Axis>(a);
      if (c[a] - hw <= grid_.interior_lo(ax) || c[a] + hw >= grid_.interior_hi(ax))
        throw DomainError("power box reaches the PML");
    }
    for (const auto& tap : injector_.taps()) {
      const std::array<int, 3> t{tap.i, tap.j, tap.k};
      for (int a = 0; a < 3; ++a)
        if (std::abs(t[a] - c[a]) >= hw) throw DomainError("power box does not enclose the dipole");
    }
    box_ = PowerBox(c, hw, omega_);
    const Axis x = Axis::x, y = Axis::y, z = Axis::z;
    for (double off : settings.monitor_z) {
      const int k = grid_.center(z) + static_cast<int>(std::lround((pos[2] + off) / dx));
      if (k <= grid_.interior_lo(z) || k >= grid_.interior_hi(z))
        throw DomainError("monitor plane lies in the PML");
      if (std::abs(k - c[2]) <= hw) throw DomainError("monitor plane cuts the power box");
      planes_.emplace_back(z, k, grid_.interior_lo(x), grid_.interior_hi(x), grid_.interior_lo(y),
                           grid_.interior_hi(y), omega_, off > 0 ? +1 : -1);
    }
    budget_ = settings.total_steps > 0 ? settings.total_steps : automatic_budget(profile, source);
    kick_ = source.amplitude * grid_.dt() / std::pow(dx, 3);
  }

  YeeGrid<Real>& grid() { return grid_; }
  const YeeGrid<Real>& grid() const { return grid_; }
  const PowerBox& box() const { return box_; }
  const std::vector<FluxMonitor>& planes() const { return planes_; }
  const DipoleInjector<Real>& injector() const { return injector_; }
  long budget() const { return budget_; }
  long steps_taken() const { return n_; }
  double omega() const { return omega_; }

  /// Advances one leapfrog step and accumulates the monitors.
  void advance() {
    const double dt = grid_.dt();
    step(grid_, cpml_, &injector_, (n_ + 0.5) * dt);
    box_.accumulate(grid_, (n_ + 1) * dt, (n_ + 0.5) * dt);
    for (auto& p : planes_) p.accumulate(grid_, (n_ + 1) * dt, (n_ + 0.5) * dt);
    ++n_;
    if (n_ % 128 == 0) check_divergence();
  }

  void check_divergence() const {
    const double m = grid_.max_abs_field();
    if (!std::isfinite(m) || m > 1e12 * kick_)
      throw DivergedError("field magnitude exceeded the stability bound at step " +
                          std::to_string(n_));
  }

  RunReport run() { return run_steps(budget_); }

  RunReport run_steps(long total) {
    RunReport report;
    const long window = std::max<long>(1, total / 20);
    double previous = 0.0;
    bool have_previous = false;
    while (n_ < total) {
      advance();
      if (n_ == total - window) {
        previous = flux_signature();
        have_previous = true;
      }
    }
    check_divergence();
    report.steps = n_;
    report.box_power = box_.power(grid_.dx());
    if (have_previous) {
      const double now = flux_signature();
      report.final_change = std::abs(now - previous) / std::max(std::abs(now), 1e-300);
      report.stationary = report.final_change <= settings_.stationarity_tolerance;
      if (!report.stationary)
        report.warnings.push_back("not converged: flux changed by " +
                                  std::to_string(report.final_change) + " over the last window");
    }
    return report;
  }

 private:
  static YeeGrid<Real>& prepare(YeeGrid<Real>& g, const LayeredCylinderProfile* profile) {
    return profile ? rasterize(*profile, g) : g;
  }

  static CpmlParams with_wavelength(CpmlParams p, const PointDipole& s) {
    p.wavelength = s.envelope.wavelength;
    return p;
  }

  double flux_signature() const {
    double s = std::abs(box_.power(grid_.dx()));
    for (const auto& p : planes_) s += std::abs(measure_flux(p, grid_.dx()));
    return s;
  }

  long automatic_budget(const LayeredCylinderProfile* profile, const PointDipole& source) const {
    const double n_max = profile ? profile->max_index() : 1.0;
    const Axis x = Axis::x, y = Axis::y, z = Axis::z;
    const double hx = (grid_.interior_hi(x) - grid_.center(x)) * grid_.dx();
    const double hy = (grid_.interior_hi(y) - grid_.center(y)) * grid_.dx();
    double reach = (grid_.interior_hi(z) - grid_.center(z)) * grid_.dx();
    for (double m : settings_.monitor_z) reach = std::max(reach, std::abs(m));
    const double transit = 1.5 * n_max * (reach + std::hypot(hx, hy));
    return static_cast<long>(std::ceil((source.envelope.end_time() + transit) / grid_.dt()));
  }

  RunSettings settings_;
  YeeGrid<Real> grid_;
  Cpml<Real> cpml_;
  DipoleInjector<Real> injector_;
  PowerBox box_;
  std::vector<FluxMonitor> planes_;
  double omega_ = 0.0;
  long budget_ = 0;
  long n_ = 0;
  double kick_ = 1.0;
};

}  // namespace nanochannel
