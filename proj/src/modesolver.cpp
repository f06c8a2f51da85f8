#include "nanochannel/modesolver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <limits>
#include <numbers>

namespace nanochannel {

namespace {

constexpr double kPi = std::numbers::pi;

// Sub-problem of the dispersion relation: m >= 1 couples Ez and Hz (4x4),
// m = 0 splits into TM (ez, h_phi) and TE (hz, e_phi) 2x2 blocks.
enum class Block { hybrid, tm, te };

struct Basis {
  double value1, deriv1, value2, deriv2;
};

struct Pair {
  double value, deriv;  // d/dx
};

// F1 = J_m(s r)/s^m or I_m(s r)/s^m, continuous through q2 = 0; F2 = Y_m or K_m.
Basis radial_basis(int m, double q2, double r, bool need_first, bool need_second) {
  namespace bm = boost::math;
  const double s = std::sqrt(std::abs(q2));
  const double x = s * r;
  const double sm = std::pow(s, m);
  Basis b{};
  Pair p1{0.0, 0.0}, p2{0.0, 0.0};
  if (q2 > 0.0) {
    if (need_first) {
      const double jm = bm::cyl_bessel_j(m, x);
      const double jm1 = m == 0 ? -bm::cyl_bessel_j(1, x) : bm::cyl_bessel_j(m - 1, x) - m / x * jm;
      p1 = {jm, jm1};
    }
    if (need_second) {
      const double ym = bm::cyl_neumann(m, x);
      const double ym1 = m == 0 ? -bm::cyl_neumann(1, x) : bm::cyl_neumann(m - 1, x) - m / x * ym;
      p2 = {ym, ym1};
    }
  } else {
    if (need_first) {
      const double im = bm::cyl_bessel_i(m, x);
      const double im1 = m == 0 ? bm::cyl_bessel_i(1, x) : bm::cyl_bessel_i(m - 1, x) - m / x * im;
      p1 = {im, im1};
    }
    if (need_second) {
      const double km = bm::cyl_bessel_k(m, x);
      const double km1 = m == 0 ? -bm::cyl_bessel_k(1, x) : -bm::cyl_bessel_k(m - 1, x) - m / x * km;
      p2 = {km, km1};
    }
  }
  b.value1 = p1.value / sm;
  b.deriv1 = p1.deriv * s / sm;
  b.value2 = p2.value;
  b.deriv2 = p2.deriv * s;
  return b;
}

struct Problem {
  const LayeredCylinderProfile* profile;
  double k0;
  int m;
  Block block;

  int dim() const { return block == Block::hybrid ? 4 : 2; }

  double eps_of(std::size_t layer) const {
    const auto& ls = profile->layers();
    return layer < ls.size() ? ls[layer].material.permittivity()
                             : profile->background().permittivity();
  }

  // Physical tangential state (ez, hz, e_phi, h_phi), restricted to the block,
  // for unit coefficient on basis function F1 (second = false) or F2.
  // Columns: hybrid [Ez F1, Ez F2, Hz F1, Hz F2]; tm [Ez F1, Ez F2]; te [Hz F1, Hz F2].
  Eigen::MatrixXd layer_matrix(double beta, double eps, double r) const {
    const double q2 = k0 * k0 * eps - beta * beta;
    const Basis b = radial_basis(m, q2, r, true, true);
    const double w = k0;
    auto ez_col = [&](double f, double fp) {
      return Eigen::Vector4d(f, 0.0, -beta * m * f / (q2 * r), w * eps * fp / q2);
    };
    auto hz_col = [&](double f, double fp) {
      return Eigen::Vector4d(0.0, f, w * fp / q2, -beta * m * f / (q2 * r));
    };
    if (block == Block::hybrid) {
      Eigen::MatrixXd M(4, 4);
      M.col(0) = ez_col(b.value1, b.deriv1);
      M.col(1) = ez_col(b.value2, b.deriv2);
      M.col(2) = hz_col(b.value1, b.deriv1);
      M.col(3) = hz_col(b.value2, b.deriv2);
      return M;
    }
    Eigen::MatrixXd M(2, 2);
    if (block == Block::tm) {
      M << b.value1, b.value2, w * eps * b.deriv1 / q2, w * eps * b.deriv2 / q2;
    } else {
      M << b.value1, b.value2, w * b.deriv1 / q2, w * b.deriv2 / q2;
    }
    return M;
  }

  // Columns used in the matching determinant: physical columns, multiplied by
  // q2 for m >= 1 so that they stay continuous where q2 changes sign.
  double column_scale(double q2) const { return block == Block::hybrid ? q2 : 1.0; }

  struct Assembly {
    Eigen::MatrixXd matrix;        // [S | B], scaled (not normalised)
    Eigen::VectorXd column_norms;  // of matrix columns
  };

  Assembly assemble(double beta) const {
    const auto& ls = profile->layers();
    const int d = dim();
    const int h = d / 2;
    const std::vector<int> first = block == Block::hybrid ? std::vector<int>{0, 2} : std::vector<int>{0};
    const std::vector<int> second = block == Block::hybrid ? std::vector<int>{1, 3} : std::vector<int>{1};

    const double r1 = ls.front().outer_radius;
    const double eps_core = eps_of(0);
    const double q2_core = k0 * k0 * eps_core - beta * beta;
    Eigen::MatrixXd core = layer_matrix(beta, eps_core, r1);
    Eigen::MatrixXd S(d, h);
    for (int c = 0; c < h; ++c) S.col(c) = core.col(first[c]) * column_scale(q2_core);

    for (std::size_t j = 1; j < ls.size(); ++j) {
      const double eps = eps_of(j);
      Eigen::MatrixXd inner = layer_matrix(beta, eps, ls[j - 1].outer_radius);
      Eigen::MatrixXd outer = layer_matrix(beta, eps, ls[j].outer_radius);
      S = outer * inner.partialPivLu().solve(S);
    }

    const double rn = ls.back().outer_radius;
    const double eps_bg = eps_of(ls.size());
    const double q2_bg = k0 * k0 * eps_bg - beta * beta;
    Eigen::MatrixXd bg = layer_matrix(beta, eps_bg, rn);
    Assembly a{Eigen::MatrixXd(d, d), Eigen::VectorXd(d)};
    for (int c = 0; c < h; ++c) {
      a.matrix.col(c) = S.col(c);
      a.matrix.col(h + c) = bg.col(second[c]) * column_scale(q2_bg);
    }
    for (int c = 0; c < d; ++c) a.column_norms(c) = a.matrix.col(c).norm();
    return a;
  }

  double determinant(double n_eff) const {
    const Assembly a = assemble(n_eff * k0);
    Eigen::MatrixXd A = a.matrix;
    for (int c = 0; c < A.cols(); ++c) {
      if (!(a.column_norms(c) > 0.0) || !std::isfinite(a.column_norms(c)))
        return std::numeric_limits<double>::quiet_NaN();
      A.col(c) /= a.column_norms(c);
    }
    return A.determinant();
  }
};

Block block_for(int m, bool te) {
  if (m > 0) return Block::hybrid;
  return te ? Block::te : Block::tm;
}

}  // namespace

class ModeBuilder {
 public:
  static GuidedMode build(const Problem& p, double n_eff, double wavelength, double residual);
  static ModeFamily classify(const GuidedMode& mode, Block block);
};

std::string to_string(ModeFamily f) {
  switch (f) {
    case ModeFamily::HE: return "HE";
    case ModeFamily::EH: return "EH";
    case ModeFamily::TE: return "TE";
    case ModeFamily::TM: return "TM";
  }
  return "?";
}

double v_number(double diameter, double n_core, double n_clad, double wavelength) {
  if (!(n_core > n_clad)) throw NoGuidanceError("core index must exceed cladding index");
  if (!(diameter >= 0.0) || !(wavelength > 0.0))
    throw GeometryError("diameter must be non-negative and wavelength positive");
  return kPi * diameter / wavelength * std::sqrt(n_core * n_core - n_clad * n_clad);
}

double size_parameter(double diameter, double wavelength) {
  return kPi * diameter / wavelength;
}

GuidedMode ModeBuilder::build(const Problem& p, double n_eff, double wavelength,
                              double residual) {
  const auto& ls = p.profile->layers();
  const double beta = n_eff * p.k0;
  const int d = p.dim();
  const int h = d / 2;
  const std::vector<int> first = d == 4 ? std::vector<int>{0, 2} : std::vector<int>{0};
  const std::vector<int> second = d == 4 ? std::vector<int>{1, 3} : std::vector<int>{1};

  const Problem::Assembly a = p.assemble(beta);
  Eigen::MatrixXd A = a.matrix;
  for (int c = 0; c < d; ++c) A.col(c) /= a.column_norms(c);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  Eigen::VectorXd x = svd.matrixV().col(d - 1);
  for (int c = 0; c < d; ++c) x(c) /= a.column_norms(c);

  GuidedMode mode;
  mode.m = p.m;
  mode.beta = beta;
  mode.n_eff = n_eff;
  mode.wavelength = wavelength;
  mode.residual = residual;
  mode.k0_ = p.k0;

  auto to_coef = [&](const Eigen::VectorXd& cols) {
    std::array<double, 4> coef{};
    if (d == 4) {
      coef = {cols(0), cols(1), cols(2), cols(3)};
    } else if (p.block == Block::tm) {
      coef = {cols(0), cols(1), 0.0, 0.0};
    } else {
      coef = {0.0, 0.0, cols(0), cols(1)};
    }
    return coef;
  };

  // Core: only F1 terms; column scale folded back into the coefficient.
  const double eps_core = p.eps_of(0);
  const double q2_core = p.k0 * p.k0 * eps_core - beta * beta;
  Eigen::VectorXd core_cols = Eigen::VectorXd::Zero(d);
  for (int c = 0; c < h; ++c) core_cols(first[c]) = x(c) * p.column_scale(q2_core);
  mode.layers_.push_back({0.0, ls.front().outer_radius, eps_core, q2_core, to_coef(core_cols)});

  Eigen::VectorXd state = p.layer_matrix(beta, eps_core, ls.front().outer_radius) * core_cols;
  for (std::size_t j = 1; j < ls.size(); ++j) {
    const double eps = p.eps_of(j);
    const double q2 = p.k0 * p.k0 * eps - beta * beta;
    Eigen::VectorXd cols =
        p.layer_matrix(beta, eps, ls[j - 1].outer_radius).partialPivLu().solve(state);
    mode.layers_.push_back({ls[j - 1].outer_radius, ls[j].outer_radius, eps, q2, to_coef(cols)});
    state = p.layer_matrix(beta, eps, ls[j].outer_radius) * cols;
  }

  const double eps_bg = p.eps_of(ls.size());
  const double q2_bg = p.k0 * p.k0 * eps_bg - beta * beta;
  Eigen::VectorXd bg_cols = Eigen::VectorXd::Zero(d);
  for (int c = 0; c < h; ++c) bg_cols(second[c]) = -x(h + c) * p.column_scale(q2_bg);
  mode.layers_.push_back({ls.back().outer_radius, std::numeric_limits<double>::infinity(),
                          eps_bg, q2_bg, to_coef(bg_cols)});

  const double power = mode.carried_power();
  // A forward mode carries positive power; flip the overall sign otherwise.
  const double scale = (power < 0.0 ? -1.0 : 1.0) / std::sqrt(std::abs(power));
  for (auto& l : mode.layers_)
    for (auto& c : l.coef) c *= scale;
  mode.norm_ = std::abs(power);
  mode.family = classify(mode, p.block);
  return mode;
}

ModeFamily ModeBuilder::classify(const GuidedMode& mode, Block block) {
  if (block == Block::te) return ModeFamily::TE;
  if (block == Block::tm) return ModeFamily::TM;
  // Circular decomposition of the transverse field: HE modes are dominated by
  // E_r - i E_phi (e_r - e_phi in the real profiles), EH by E_r + i E_phi.
  double minus = 0.0, plus = 0.0;
  const double r_end = mode.layers().back().inner_radius +
                       8.0 / std::sqrt(std::abs(mode.layers().back().q2));
  const int samples = 400;
  for (int i = 0; i < samples; ++i) {
    const double r = (i + 0.5) * r_end / samples;
    const auto p = mode.radial_profile(r);
    minus += (p[0] - p[1]) * (p[0] - p[1]) * r;
    plus += (p[0] + p[1]) * (p[0] + p[1]) * r;
  }
  return minus >= plus ? ModeFamily::HE : ModeFamily::EH;
}

std::array<double, 6> GuidedMode::radial_profile(double r) const {
  r = std::max(r, 1e-9);
  std::size_t idx = 0;
  while (idx + 1 < layers_.size() && r > layers_[idx].outer_radius) ++idx;
  const LayerSolution& L = layers_[idx];
  // The core carries only the regular solution, the background only the
  // decaying one.
  const bool first = std::isfinite(L.outer_radius);
  const bool second = idx > 0;
  const Basis b = radial_basis(m, L.q2, r, first, second);
  const auto& c = L.coef;
  const double ez = (first ? c[0] * b.value1 : 0.0) + (second ? c[1] * b.value2 : 0.0);
  const double ezp = (first ? c[0] * b.deriv1 : 0.0) + (second ? c[1] * b.deriv2 : 0.0);
  const double hz = (first ? c[2] * b.value1 : 0.0) + (second ? c[3] * b.value2 : 0.0);
  const double hzp = (first ? c[2] * b.deriv1 : 0.0) + (second ? c[3] * b.deriv2 : 0.0);
  const double w = k0_;
  const double q2 = L.q2;
  const double er = (beta * ezp - w * m * hz / r) / q2;
  const double ephi = (w * hzp - beta * m * ez / r) / q2;
  const double hr = (w * L.eps * m * ez / r - beta * hzp) / q2;
  const double hphi = (w * L.eps * ezp - beta * m * hz / r) / q2;
  return {er, ephi, ez, hr, hphi, hz};
}

FieldVector GuidedMode::field(double r, double phi, int member) const {
  const auto p = radial_profile(r);
  const cplx I(0.0, 1.0);
  const double s = member >= 0 ? 1.0 : -1.0;
  const cplx phase = std::polar(1.0, s * m * phi);
  return {I * p[0] * phase, s * p[1] * phase,     p[2] * phase,
          s * p[3] * phase, I * p[4] * phase, s * I * p[5] * phase};
}

FieldVector GuidedMode::cartesian(double x, double y, int member) const {
  const double r = std::hypot(x, y);
  const double phi = std::atan2(y, x);
  const auto f = field(r, phi, member);
  const double c = std::cos(phi), s = std::sin(phi);
  return {f[0] * c - f[1] * s, f[0] * s + f[1] * c, f[2],
          f[3] * c - f[4] * s, f[3] * s + f[4] * c, f[5]};
}

FieldVector GuidedMode::reversed(const FieldVector& f) {
  return {f[0], f[1], -f[2], -f[3], -f[4], f[5]};
}

namespace {
template <class F>
double integrate_layers(const GuidedMode& mode, F&& integrand) {
  using boost::math::quadrature::gauss_kronrod;
  double total = 0.0;
  for (const auto& L : mode.layers()) {
    if (std::isinf(L.outer_radius)) {
      total += gauss_kronrod<double, 61>::integrate(integrand, L.inner_radius,
                                                    std::numeric_limits<double>::infinity(), 15,
                                                    1e-12);
    } else {
      total += gauss_kronrod<double, 61>::integrate(integrand, L.inner_radius, L.outer_radius,
                                                    15, 1e-12);
    }
  }
  return total;
}
}  // namespace

double GuidedMode::carried_power() const {
  return kPi * integrate_layers(*this, [this](double r) {
           const auto p = radial_profile(r);
           return (p[0] * p[4] - p[1] * p[3]) * r;
         });
}

std::string GuidedMode::label() const {
  return to_string(family) + std::to_string(m) + std::to_string(radial_order);
}

const GuidedMode* ModeSpectrum::find(ModeFamily f, int m, int radial_order) const {
  for (const auto& mode : modes)
    if (mode.family == f && mode.m == m && mode.radial_order == radial_order) return &mode;
  return nullptr;
}

bool ModeSpectrum::single_mode() const {
  return modes.size() == 1 && modes.front().family == ModeFamily::HE && modes.front().m == 1;
}

double dispersion_determinant(const LayeredCylinderProfile& profile, double wavelength, int m,
                              double n_eff, bool transverse_electric) {
  Problem p{&profile, 2.0 * kPi / wavelength, m, block_for(m, transverse_electric)};
  return p.determinant(n_eff);
}

ModeSpectrum solve_modes(const LayeredCylinderProfile& profile, double wavelength,
                         const SolverOptions& options) {
  if (!(wavelength > 0.0)) throw GeometryError("wavelength must be positive");
  ModeSpectrum spectrum{profile, wavelength, {}};
  const double n_lo = profile.background().n;
  const double n_hi = profile.max_index();
  if (!(n_hi > n_lo)) return spectrum;

  // Uniform scan plus geometric refinement against both ends of the window,
  // where modes sit close to cutoff or close to the core index.
  std::vector<double> grid;
  const double span = n_hi - n_lo;
  const double step = span / (options.scan_points + 1);
  for (int i = 1; i <= options.scan_points; ++i) grid.push_back(n_lo + i * step);
  for (int i = 0; i < options.cutoff_refinement_points; ++i) {
    const double t = static_cast<double>(i) / options.cutoff_refinement_points;
    const double offset = step * std::pow(10.0, -8.0 * (1.0 - t));
    grid.push_back(n_lo + offset);
    grid.push_back(n_hi - offset);
    // A core index inside the window is a zero of the scaled determinant;
    // keep it on a grid node so it never shares a bracket with a real root.
    for (const auto& l : profile.layers()) {
      const double n = l.material.n;
      if (n <= n_lo || n >= n_hi) continue;
      grid.push_back(n - offset);
      grid.push_back(n + offset);
    }
  }
  for (const auto& l : profile.layers())
    if (l.material.n > n_lo && l.material.n < n_hi) grid.push_back(l.material.n);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const double k0 = 2.0 * kPi / wavelength;
  std::vector<GuidedMode> found;
  for (int m = 0; m <= options.m_max; ++m) {
    const std::vector<Block> blocks =
        m == 0 ? std::vector<Block>{Block::te, Block::tm} : std::vector<Block>{Block::hybrid};
    for (Block block : blocks) {
      Problem p{&profile, k0, m, block};
      std::vector<double> values(grid.size());
      for (std::size_t i = 0; i < grid.size(); ++i) values[i] = p.determinant(grid[i]);
      for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        double a = grid[i], b = grid[i + 1];
        double fa = values[i], fb = values[i + 1];
        if (!std::isfinite(fa) || !std::isfinite(fb)) continue;
        if (fa == 0.0) fb = fa;  // exact hit handled below
        if ((fa > 0.0) == (fb > 0.0) && fa != 0.0) continue;
        double root = a;
        if (fa != 0.0) {
          // Bisection down to the floating-point resolution of n_eff.
          for (int it = 0; it < 200 && (b - a) > options.root_tolerance * 1e-3; ++it) {
            const double mid = 0.5 * (a + b);
            if (mid <= a || mid >= b) break;
            const double fm = p.determinant(mid);
            if (!std::isfinite(fm)) break;
            if ((fm > 0.0) == (fa > 0.0)) {
              a = mid;
              fa = fm;
            } else {
              b = mid;
            }
          }
          const double fa2 = p.determinant(a), fb2 = p.determinant(b);
          root = std::abs(fa2) <= std::abs(fb2) ? a : b;
        }
        // The scaled determinant also vanishes where some layer has q2 = 0
        // (degenerate Bessel basis); those are not modes.
        bool degenerate = std::abs(root - n_lo) < 1e-10;
        for (const auto& l : profile.layers())
          degenerate = degenerate || std::abs(root - l.material.n) < 1e-10;
        if (degenerate) continue;
        const double residual = std::abs(p.determinant(root));
        // Sign flips across a discontinuity leave a large residual.
        if (!(residual < options.residual_limit)) continue;
        found.push_back(ModeBuilder::build(p, root, wavelength, residual));
      }
    }
  }

  std::sort(found.begin(), found.end(),
            [](const GuidedMode& x, const GuidedMode& y) { return x.n_eff > y.n_eff; });
  for (std::size_t i = 0; i < found.size(); ++i) {
    for (std::size_t j = 0; j < found.size(); ++j)
      if (i != j && std::abs(found[i].n_eff - found[j].n_eff) <= 1e-9)
        found[i].near_degenerate = true;
    int order = 1;
    for (std::size_t j = 0; j < i; ++j)
      if (found[j].family == found[i].family && found[j].m == found[i].m) ++order;
    found[i].radial_order = order;
  }
  spectrum.modes = std::move(found);
  return spectrum;
}

ModeSpectrum solve_two_layer(const LayeredCylinderProfile& profile, double wavelength,
                             int m_max) {
  if (profile.layer_count() != 1)
    throw GeometryError("two-layer solver expects a single cylinder in a background");
  SolverOptions opt;
  opt.m_max = m_max;
  return solve_modes(profile, wavelength, opt);
}

ModeSpectrum solve_three_layer(const LayeredCylinderProfile& profile, double wavelength,
                               int m_max) {
  if (profile.layer_count() != 2)
    throw GeometryError("three-layer solver expects a core and one annulus in a background");
  SolverOptions opt;
  opt.m_max = m_max;
  return solve_modes(profile, wavelength, opt);
}

FieldVector mode_field(const GuidedMode& mode, double r, double phi, int member) {
  return mode.field(r, phi, member);
}

cplx mode_overlap(const GuidedMode& a, const GuidedMode& b) {
  if (a.m != b.m) return {0.0, 0.0};
  // With both members at +m the azimuthal integral is 2 pi.
  using boost::math::quadrature::gauss_kronrod;
  std::vector<double> radii{0.0};
  for (const auto& L : a.layers())
    if (std::isfinite(L.outer_radius)) radii.push_back(L.outer_radius);
  for (const auto& L : b.layers())
    if (std::isfinite(L.outer_radius)) radii.push_back(L.outer_radius);
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
  radii.push_back(std::numeric_limits<double>::infinity());
  auto integrand = [&](double r) {
    const auto p = a.radial_profile(r);
    const auto q = b.radial_profile(r);
    return ((p[0] * q[4] - p[1] * q[3]) + (q[0] * p[4] - q[1] * p[3])) * r;
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < radii.size(); ++i)
    total += gauss_kronrod<double, 61>::integrate(integrand, radii[i], radii[i + 1], 15, 1e-14);
  return {2.0 * kPi * total, 0.0};
}

}  // namespace nanochannel
