#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "nanochannel/channeling.hpp"

using namespace nanochannel;

namespace {

constexpr double kLambda = 620.0;

struct SyntheticPlane {
  FluxMonitor monitor;
  PlaneFrame frame;
};

/// Square z-normal plane of n x n cells centred on the fibre axis.
SyntheticPlane make_plane(int n, double dx) {
  const double omega = 2 * std::numbers::pi / kLambda;
  return {FluxMonitor(Axis::z, 0, 0, n, 0, n, omega, +1), PlaneFrame{dx, n / 2, n / 2}};
}

/// Adds `field(x, y)` (Cartesian 6-vector) sampled on the monitor lattices.
template <class F>
void add_field(SyntheticPlane& s, F field, cplx amplitude = 1.0) {
  auto& m = s.monitor;
  for (int iv = 0; iv < m.a_rows(); ++iv)
    for (int iu = 0; iu < m.a_cols(); ++iu) {
      const FieldVector f = field(s.frame.x(m.u0() + iu + 0.5), s.frame.y(m.v0() + iv));
      m.eu[m.a_index(iu, iv)] += amplitude * f[0];
      m.hv[m.a_index(iu, iv)] += amplitude * f[4];
    }
  for (int iv = 0; iv < m.b_rows(); ++iv)
    for (int iu = 0; iu < m.b_cols(); ++iu) {
      const FieldVector f = field(s.frame.x(m.u0() + iu), s.frame.y(m.v0() + iv + 0.5));
      m.ev[m.b_index(iu, iv)] += amplitude * f[1];
      m.hu[m.b_index(iu, iv)] += amplitude * f[3];
    }
}

double mode_power(const ProjectionResult& r, const std::string& label) {
  for (const auto& [l, p] : r.per_mode)
    if (l == label) return p;
  return -1.0;
}

/// Field of a z-directed point dipole p at (0, 0, -depth), exp(-i omega t).
FieldVector axial_dipole_field(double x, double y, double depth, double p) {
  const double k = 2 * std::numbers::pi / kLambda;
  const double z = depth;
  const double R = std::sqrt(x * x + y * y + z * z);
  const double n[3] = {x / R, y / R, z / R};
  const cplx ph = std::exp(cplx(0.0, k * R));
  const double pz = p;
  // n x p and (n x p) x n for p along z.
  const double nxp[3] = {n[1] * pz, -n[0] * pz, 0.0};
  const double nxpxn[3] = {nxp[1] * n[2] - nxp[2] * n[1], nxp[2] * n[0] - nxp[0] * n[2],
                           nxp[0] * n[1] - nxp[1] * n[0]};
  const double npz = n[2] * pz;
  const double near[3] = {3 * n[0] * npz, 3 * n[1] * npz, 3 * n[2] * npz - pz};
  const cplx radial = (1.0 / (R * R * R) - cplx(0.0, k) / (R * R)) * ph;
  FieldVector f;
  for (int c = 0; c < 3; ++c)
    f[c] = (k * k * nxpxn[c] * ph / R + near[c] * radial) / (4 * std::numbers::pi);
  const cplx hfac = k * k / (4 * std::numbers::pi) * ph / R * (1.0 - 1.0 / cplx(0.0, k * R));
  for (int c = 0; c < 3; ++c) f[3 + c] = nxp[c] * hfac;
  return f;
}

double plane_flux(const SyntheticPlane& s) { return measure_flux(s.monitor, s.frame.dx); }

ChannelingOptions small_options(const std::filesystem::path& cache) {
  ChannelingOptions o;
  o.domain.dx = 20.0;
  o.domain.extents = {800.0, 800.0, 1600.0};
  o.domain.monitor_z_offsets = {-500.0, 500.0};
  o.domain.pml_cells = 10;
  o.cache_dir = cache.string();
  return o;
}

}  // namespace

TEST(Projection, SyntheticFundamentalModeHasUnitPower) {
  const auto sp = solve_modes(make_onf(1000, materials::vacuum()), kLambda);
  ASSERT_GT(sp.modes.size(), 5u);
  auto plane = make_plane(200, 10.0);  // 2 um square
  const auto& he = sp.modes[0];
  add_field(plane, [&](double x, double y) { return he.cartesian(x, y, +1); });
  const auto r = project_guided(plane.monitor, plane.frame, sp, +1);
  EXPECT_NEAR(mode_power(r, "HE11"), 1.0, 1e-3);
  for (const auto& [label, p] : r.per_mode)
    if (label != "HE11") EXPECT_LT(p, 1e-6) << label;
  EXPECT_TRUE(r.warnings.empty());
  // Backward projection sees nothing of a forward mode.
  const auto back = project_guided(plane.monitor, plane.frame, sp, -1);
  EXPECT_LT(back.total, 1e-8);
  // The plane flux of the sampled mode is the same lattice quantity.
  EXPECT_NEAR(mode_power(r, "HE11"), plane_flux(plane), 1e-12);
}

TEST(Projection, ForwardAndBackwardSeparate) {
  const auto sp = solve_modes(make_ncf(100, 360, materials::water(), materials::vacuum()), kLambda);
  auto plane = make_plane(160, 10.0);
  const auto& he = sp.modes[0];
  add_field(plane, [&](double x, double y) { return he.cartesian(x, y, +1); }, {0.6, 0.2});
  add_field(plane, [&](double x, double y) { return GuidedMode::reversed(he.cartesian(x, y, -1)); },
            {-0.3, 0.5});
  const auto fwd = project_guided(plane.monitor, plane.frame, sp, +1);
  const auto bwd = project_guided(plane.monitor, plane.frame, sp, -1);
  EXPECT_NEAR(fwd.total / (0.36 + 0.04), 1.0, 1e-3);
  EXPECT_NEAR(bwd.total / (0.09 + 0.25), 1.0, 1e-3);
}

// An on-axis axial dipole radiates an m = 0 wave, which the HE11 pair cannot
// absorb; mixing it in at equal plane flux leaves the HE11 power alone.
TEST(Projection, RadiativeAdmixtureDoesNotLeakIntoHe11) {
  const auto sp = solve_modes(make_onf(280, materials::vacuum()), kLambda);
  const auto& he = sp.modes[0];
  auto pure = make_plane(200, 10.0);
  add_field(pure, [&](double x, double y) { return he.cartesian(x, y, +1); });
  const double he_power = project_guided(pure.monitor, pure.frame, sp, +1).total;

  auto wave = make_plane(200, 10.0);
  add_field(wave, [&](double x, double y) { return axial_dipole_field(x, y, 800.0, 1.0); });
  const double wave_flux = plane_flux(wave);
  ASSERT_GT(wave_flux, 0.0);

  auto mix = make_plane(200, 10.0);
  add_field(mix, [&](double x, double y) { return he.cartesian(x, y, +1); });
  add_field(mix, [&](double x, double y) { return axial_dipole_field(x, y, 800.0, 1.0); },
            std::sqrt(plane_flux(pure) / wave_flux));
  EXPECT_NEAR(plane_flux(mix), 2.0 * plane_flux(pure), 0.2 * plane_flux(pure));
  const double mixed_power = project_guided(mix.monitor, mix.frame, sp, +1).total;
  EXPECT_NEAR(mixed_power / he_power, 1.0, 1e-3);
}

TEST(Projection, SmallPlaneWarnsAboutTruncation) {
  const auto sp = solve_modes(make_onf(280, materials::vacuum()), kLambda);
  auto plane = make_plane(30, 10.0);  // 300 nm square around a 280 nm fibre
  add_field(plane, [&](double x, double y) { return sp.modes[0].cartesian(x, y, +1); });
  const auto r = project_guided(plane.monitor, plane.frame, sp, +1);
  EXPECT_GT(r.truncation, 0.01);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Averaging, RandomOrientation) {
  EXPECT_NEAR(average_random_orientation(0.52, 0.52, 0.01), 0.35, 1e-15);
  EXPECT_NEAR(average_random_orientation(0.08, 0.07, 0.01), 0.053, 0.001);
  for (double x : {0.0, 0.123, 0.5, 1.0}) EXPECT_DOUBLE_EQ(average_random_orientation(x, x, x), x);
  EXPECT_THROW(average_random_orientation(1.2, 0.1, 0.1), std::invalid_argument);
  EXPECT_THROW(average_random_orientation(0.2, -0.1, 0.1), std::invalid_argument);
}

TEST(Purcell, RatioAndMissingReference) {
  EXPECT_DOUBLE_EQ(purcell_factor(3.0, 2.0), 1.5);
  EXPECT_THROW(purcell_factor(1.0, 0.0), std::invalid_argument);
}

TEST(Hashing, SceneKeyIsCanonical) {
  DipoleSource s;
  s.r_in = 145;
  const auto p = make_onf(280, materials::vacuum());
  const auto d = tier_domain(Tier::fast);
  const CpmlParams c;
  EXPECT_EQ(scene_key(p, s, d, c), scene_key(make_onf(280, materials::vacuum()), s, d, c));
  DipoleSource t = s;
  t.orientation = Orientation::axial;
  EXPECT_NE(fnv1a(scene_key(p, s, d, c)), fnv1a(scene_key(p, t, d, c)));
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(hex64(255), "00000000000000ff");
}

TEST(Tiers, Presets) {
  EXPECT_EQ(tier_domain(Tier::fast).dx, 20.0);
  EXPECT_EQ(tier_domain(Tier::accurate).dx, 10.0);
  EXPECT_EQ(tier_from_string("accurate"), Tier::accurate);
  EXPECT_THROW(tier_from_string("medium"), std::invalid_argument);
  EXPECT_NO_THROW(tier_domain(Tier::accurate, true).validate());
}

// End-to-end runs on a reduced domain.
class SmallRuns : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cache_ = std::filesystem::temp_directory_path() / "nanochannel_test_cache";
    std::filesystem::remove_all(cache_);
  }
  static void TearDownTestSuite() { std::filesystem::remove_all(cache_); }
  static std::filesystem::path cache_;
};
std::filesystem::path SmallRuns::cache_;

TEST_F(SmallRuns, EmptyStructureHasUnitPurcellAndNoGuidance) {
  const LayeredCylinderProfile none({{140.0, materials::vacuum()}}, materials::vacuum());
  DipoleSource s;
  s.r_in = 145.0;
  const auto r = run_channeling(none, s, small_options(cache_));
  EXPECT_NEAR(r.purcell, 1.0, 0.01);
  EXPECT_EQ(r.eta, 0.0);
  EXPECT_TRUE(r.per_mode.empty());
  // The reference is now cached on disk under its content hash.
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(cache_))
    files += e.path().filename().string().rfind("p0-", 0) == 0;
  EXPECT_EQ(files, 1);
}

TEST_F(SmallRuns, NanofibreSurfaceDipole) {
  const auto onf = make_onf(280, materials::vacuum());
  DipoleSource s;
  s.r_in = surface_position(onf);
  auto opt = small_options(cache_);
  opt.cross_check = true;
  const auto r = run_channeling(onf, s, opt);
  EXPECT_GT(r.purcell, 1.0);
  EXPECT_GE(r.eta, 0.0);
  EXPECT_LE(r.eta, 1.0);
  EXPECT_LE(r.Pc_forward + r.Pc_backward, 1.03 * r.P);
  EXPECT_NEAR(r.Pc_forward / r.Pc_backward, 1.0, 0.02);
  ASSERT_EQ(r.per_mode.size(), 1u);
  EXPECT_EQ(r.per_mode[0].label, "HE11");
  EXPECT_GE(r.per_mode[0].forward, 0.0);
  ASSERT_TRUE(r.eta_hybrid.has_value());
  ASSERT_TRUE(r.eta_far.has_value());
  EXPECT_EQ(r.metadata.estimator, "projection");
  EXPECT_EQ(r.metadata.directions, "both");
  EXPECT_EQ(r.metadata.n_silica, 1.4537);
  EXPECT_GT(r.metadata.steps, 0);

  // Doubling the amplitude scales P and P0 alike. Production runs are single
  // precision, where underflow in the leading tails breaks exact scaling.
  s.amplitude = 2.0;
  const auto r2 = run_channeling(onf, s, opt);
  EXPECT_NEAR(r2.purcell / r.purcell, 1.0, 1e-7);
  EXPECT_NEAR(r2.eta / r.eta, 1.0, 1e-7);
  EXPECT_NEAR(r2.P / r.P, 4.0, 4e-7);
}

TEST_F(SmallRuns, CapillaryDipoleMustSitInTheHole) {
  DipoleSource s;
  s.r_in = 60.0;
  EXPECT_THROW(run_channeling(make_ncf(100, 360, materials::water(), materials::vacuum()), s,
                              small_options(cache_)),
               SourceError);
}
