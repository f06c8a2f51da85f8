#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nanochannel/scene.hpp"

using namespace nanochannel;

TEST(Scene, OnfVacuum280) {
  const auto p = make_onf(280.0, materials::vacuum());
  ASSERT_EQ(p.layer_count(), 1u);
  EXPECT_DOUBLE_EQ(p.outer_radius(), 140.0);
  EXPECT_DOUBLE_EQ(p.background().n, 1.0);
  EXPECT_DOUBLE_EQ(p.layers()[0].material.n, 1.4537);
  EXPECT_FALSE(p.is_nanocapillary());
}

TEST(Scene, OnfWater430) {
  const auto p = make_onf(430.0, materials::water());
  EXPECT_DOUBLE_EQ(p.outer_radius(), 215.0);
  EXPECT_DOUBLE_EQ(p.background().n, 1.333);
}

TEST(Scene, OnfRejectsDegenerateDiameter) {
  EXPECT_THROW(make_onf(0.0, materials::vacuum()), GeometryError);
  EXPECT_THROW(make_onf(-5.0, materials::vacuum()), GeometryError);
  EXPECT_THROW(make_onf(std::nan(""), materials::vacuum()), GeometryError);
}

TEST(Scene, NcfRadiiAndIndices) {
  const auto p = make_ncf(100.0, 360.0, materials::water(), materials::vacuum());
  ASSERT_EQ(p.layer_count(), 2u);
  EXPECT_DOUBLE_EQ(p.layers()[0].outer_radius, 50.0);
  EXPECT_DOUBLE_EQ(p.layers()[1].outer_radius, 180.0);
  EXPECT_DOUBLE_EQ(p.index_at(0.0), 1.333);
  EXPECT_DOUBLE_EQ(p.index_at(100.0), 1.4537);
  EXPECT_DOUBLE_EQ(p.index_at(200.0), 1.0);
  EXPECT_TRUE(p.is_nanocapillary());

  const auto q = make_ncf(250.0, 380.0, materials::water(), materials::vacuum());
  EXPECT_DOUBLE_EQ(q.layers()[0].outer_radius, 125.0);
  EXPECT_DOUBLE_EQ(q.layers()[1].outer_radius, 190.0);
}

TEST(Scene, NcfRejectsZeroThicknessAnnulus) {
  EXPECT_THROW(make_ncf(360.0, 360.0, materials::water(), materials::vacuum()), GeometryError);
  EXPECT_THROW(make_ncf(400.0, 360.0, materials::water(), materials::vacuum()), GeometryError);
  EXPECT_THROW(make_ncf(0.0, 360.0, materials::water(), materials::vacuum()), GeometryError);
}

TEST(Scene, MaterialIndexBelowOneRejected) {
  EXPECT_THROW(Material("air?", 0.9), GeometryError);
  EXPECT_THROW(materials::by_name("diamond"), GeometryError);
  EXPECT_EQ(materials::by_name("water"), materials::water());
}

TEST(Scene, RadiiMustIncrease) {
  EXPECT_THROW(LayeredCylinderProfile({}, materials::vacuum()), GeometryError);
  EXPECT_THROW(LayeredCylinderProfile({{50.0, materials::water()}, {50.0, materials::silica()}},
                                      materials::vacuum()),
               GeometryError);
}

TEST(SceneProperty, DiameterRadiusRoundTripIsExact) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1.0, 2000.0);
  for (int n = 0; n < 1000; ++n) {
    const double d = u(rng);
    EXPECT_EQ(make_onf(d, materials::vacuum()).outer_diameter(), d);
    const double din = d * 0.5;
    const auto ncf = make_ncf(din, d, materials::water(), materials::vacuum());
    EXPECT_EQ(2.0 * ncf.layers()[0].outer_radius, din);
    EXPECT_EQ(ncf.outer_diameter(), d);
  }
}

TEST(SceneProperty, VanishingCoreMatchesNanofiberPointwise) {
  const double d_out = 360.0;
  const auto onf = make_onf(d_out, materials::vacuum());
  for (double d_in : {1e-3, 1e-6, 1e-9}) {
    const auto ncf = make_ncf(d_in, d_out, materials::water(), materials::vacuum());
    for (int i = 0; i <= 4000; ++i) {
      const double r = 0.1 * i;
      if (r <= d_in / 2.0) continue;  // the shrinking core itself
      EXPECT_EQ(ncf.permittivity_at(r), onf.permittivity_at(r)) << "r = " << r;
    }
  }
}

TEST(SceneProperty, OrientationVectorsOrthonormal) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> phi(-10.0, 10.0);
  for (int n = 0; n < 500; ++n) {
    const double a = phi(rng);
    const Vec3 v[3] = {orientation_vector(Orientation::radial, a),
                       orientation_vector(Orientation::azimuthal, a),
                       orientation_vector(Orientation::axial, a)};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double dot = v[i][0] * v[j][0] + v[i][1] * v[j][1] + v[i][2] * v[j][2];
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-15);
      }
  }
}

TEST(Scene, DipoleSourceResolvesPositionAndDirection) {
  DipoleSource s;
  s.r_in = 145.0;
  s.azimuth = std::numbers::pi / 2;
  s.orientation = Orientation::radial;
  const auto p = s.point();
  EXPECT_NEAR(p.position[0], 0.0, 1e-12);
  EXPECT_NEAR(p.position[1], 145.0, 1e-12);
  EXPECT_NEAR(p.direction[1], 1.0, 1e-15);
  s.wavelength = -1.0;
  EXPECT_THROW(s.validate(), SourceError);
  EXPECT_THROW(orientation_from_string("diagonal"), SourceError);
}

TEST(Scene, PulseEnvelopeStartsAndEndsQuiet) {
  PulseEnvelope e;
  const double peak = e.peak_time();
  EXPECT_NEAR(e.sigma_t(), 620.0 / (2.0 * std::numbers::pi * 0.1), 1e-9);
  // Gaussian factor at start and end sits exactly at 1e-8 of the peak.
  EXPECT_LE(std::abs(e.value(0.0)), 1.0000001e-8);
  EXPECT_LE(std::abs(e.value(e.end_time())), 1.0000001e-8);
  double m = 0.0;
  for (int i = -100; i <= 100; ++i) m = std::max(m, std::abs(e.value(peak + i * 5.0)));
  // The carrier's first crest sits a quarter period from the Gaussian peak.
  EXPECT_GT(m, 0.98);
}

TEST(Scene, DomainValidation) {
  SimulationDomain d;
  EXPECT_NO_THROW(d.validate());
  d.pml_cells = 6;
  EXPECT_THROW(d.validate(), DomainError);
  d = SimulationDomain{};
  d.courant_factor = 0.6;
  EXPECT_THROW(d.validate(), DomainError);
  d = SimulationDomain{};
  d.monitor_z_offsets = {50.0};
  EXPECT_THROW(d.validate(), DomainError);
  d = SimulationDomain{};
  d.monitor_z_offsets = {4500.0};
  EXPECT_THROW(d.validate(), DomainError);
  d = SimulationDomain{};
  d.dx = 0.0;
  EXPECT_THROW(d.validate(), DomainError);
}
