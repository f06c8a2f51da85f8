#include "nanochannel/fdtd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace nanochannel {

namespace {

// Antiderivative of sqrt(R^2 - x^2).
double chord_integral(double R, double x) {
  const double t = std::clamp(x / R, -1.0, 1.0);
  return 0.5 * (x * R * std::sqrt(std::max(0.0, 1.0 - t * t)) + R * R * std::asin(t));
}

}  // namespace

double disk_rectangle_area(double R, double x0, double x1, double y0, double y1) {
  const double a = std::max(x0, -R), b = std::min(x1, R);
  if (!(a < b) || !(y0 < y1)) return 0.0;
  std::vector<double> cuts{a, b};
  for (double y : {y0, y1}) {
    if (std::abs(y) < R) {
      const double xc = std::sqrt(R * R - y * y);
      for (double x : {-xc, xc})
        if (x > a && x < b) cuts.push_back(x);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  double area = 0.0;
  for (std::size_t n = 0; n + 1 < cuts.size(); ++n) {
    const double lo = cuts[n], hi = cuts[n + 1];
    if (!(hi > lo)) continue;
    const double mid = 0.5 * (lo + hi);
    const double s = std::sqrt(std::max(0.0, R * R - mid * mid));
    const bool top_is_chord = s < y1;
    const bool bottom_is_chord = -s > y0;
    const double top = top_is_chord ? s : y1;
    const double bottom = bottom_is_chord ? -s : y0;
    if (!(top > bottom)) continue;
    const double chord = chord_integral(R, hi) - chord_integral(R, lo);
    const double width = hi - lo;
    area += (top_is_chord ? chord : y1 * width) - (bottom_is_chord ? -chord : y0 * width);
  }
  return area;
}

CpmlProfile make_cpml_profile(int n, int pml, double dx, double dt, const CpmlParams& p) {
  CpmlProfile out;
  out.b_e.assign(n + 1, 1.0);
  out.a_e.assign(n + 1, 0.0);
  out.inv_kappa_e.assign(n + 1, 1.0);
  out.b_h = out.b_e;
  out.a_h = out.a_e;
  out.inv_kappa_h = out.inv_kappa_e;
  if (pml <= 0) return out;
  const double d = pml * dx;
  const double sigma_max = p.sigma_scale * 0.8 * (p.order + 1) / dx;
  const double alpha_max = p.alpha_scale * 2.0 * std::numbers::pi / p.wavelength;
  auto fill = [&](double depth, double& b, double& a, double& ik) {
    if (depth <= 0.0) return;
    const double rho = std::min(depth / d, 1.0);
    const double grade = std::pow(rho, p.order);
    const double sigma = sigma_max * grade;
    const double kappa = 1.0 + (p.kappa_max - 1.0) * grade;
    const double alpha = alpha_max * (1.0 - rho);
    b = std::exp(-(sigma / kappa + alpha) * dt);
    a = sigma > 0.0 ? sigma * (b - 1.0) / (sigma * kappa + kappa * kappa * alpha) : 0.0;
    ik = 1.0 / kappa;
  };
  for (int i = 0; i <= n; ++i) {
    const double e_depth = std::max(pml - i, i - (n - pml)) * dx;
    const double h_depth = std::max(pml - i - 0.5, i + 0.5 - (n - pml)) * dx;
    fill(e_depth, out.b_e[i], out.a_e[i], out.inv_kappa_e[i]);
    if (i < n) fill(h_depth, out.b_h[i], out.a_h[i], out.inv_kappa_h[i]);
  }
  return out;
}

FluxMonitor::FluxMonitor(Axis normal, int plane, int u0, int u1, int v0, int v1, double omega,
                         int sign)
    : normal_(normal), plane_(plane), u0_(u0), u1_(u1), v0_(v0), v1_(v1), omega_(omega),
      sign_(sign >= 0 ? 1 : -1) {
  if (u1 <= u0 || v1 <= v0) throw DomainError("flux plane needs a non-empty extent");
  const std::size_t na = static_cast<std::size_t>(a_cols()) * a_rows();
  const std::size_t nb = static_cast<std::size_t>(b_cols()) * b_rows();
  eu.assign(na, 0.0);
  hv.assign(na, 0.0);
  ev.assign(nb, 0.0);
  hu.assign(nb, 0.0);
}

void FluxMonitor::scale(double factor) {
  for (auto* v : {&eu, &hv, &ev, &hu})
    for (auto& x : *v) x *= factor;
}

double measure_flux(const FluxMonitor& m, double dx) {
  double sum = 0.0;
  for (int iv = 0; iv < m.a_rows(); ++iv) {
    const double w = (iv == 0 || iv == m.a_rows() - 1) ? 0.5 : 1.0;
    for (int iu = 0; iu < m.a_cols(); ++iu) {
      const std::size_t q = m.a_index(iu, iv);
      sum += w * (m.eu[q] * std::conj(m.hv[q])).real();
    }
  }
  for (int iv = 0; iv < m.b_rows(); ++iv) {
    for (int iu = 0; iu < m.b_cols(); ++iu) {
      const double w = (iu == 0 || iu == m.b_cols() - 1) ? 0.5 : 1.0;
      const std::size_t q = m.b_index(iu, iv);
      sum -= w * (m.ev[q] * std::conj(m.hu[q])).real();
    }
  }
  return 0.5 * m.sign() * sum * dx * dx;
}

PowerBox::PowerBox(std::array<int, 3> center, int half_width, double omega)
    : center_(center), half_width_(half_width) {
  if (half_width < 1) throw DomainError("power box half width must be at least one cell");
  for (int n = 0; n < 3; ++n) {
    const int u = (n + 1) % 3, v = (n + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      const int sign = side == 0 ? -1 : +1;
      faces_[2 * n + side] =
          FluxMonitor(static_cast<Axis>(n), center[n] + sign * half_width, center[u] - half_width,
                      center[u] + half_width, center[v] - half_width, center[v] + half_width,
                      omega, sign);
    }
  }
}

double PowerBox::power(double dx) const {
  double p = 0.0;
  for (const auto& f : faces_) p += measure_flux(f, dx);
  return p;
}

}  // namespace nanochannel
