// nanochannel: command-line front end for modes, single runs, sweeps,
// figure reproduction and plotting.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "nanochannel/sweep.hpp"

using namespace nanochannel;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string tier;
  std::string out = ".";
  int threads = 0;
  int workers = 1;
  bool cross_check = false;
  double step = 0.0;
  bool dump_fields = false;
};

std::optional<double> step_of(const Common& c) {
  return c.step > 0 ? std::optional<double>(c.step) : std::nullopt;
}

void apply_tier(const Common& c, SceneConfig& s) {
  if (!c.tier.empty()) s.tier = tier_from_string(c.tier);
}

int cmd_modes(const Common& c) {
  const SceneConfig s = scene_from_config(Config::load(c.config));
  const auto profile = s.profile();
  const auto spectrum = solve_modes(profile, s.wavelength);
  const double n_core = profile.layers().back().material.n;
  const double V = v_number(profile.outer_diameter(), n_core, profile.background().n, s.wavelength);
  std::string csv = "family,m,radial_order,n_eff,beta_rad_per_nm,V\n";
  char buf[160];
  for (const auto& m : spectrum.modes) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.12f,%.12e,%.6f\n", to_string(m.family).c_str(), m.m,
                  m.radial_order, m.n_eff, m.beta, V);
    csv += buf;
  }
  if (c.out == "-" || c.out == ".") {
    std::cout << csv;
  } else {
    write_atomic((fs::path(c.out) / "modes.csv").string(), csv);
    std::cerr << "wrote " << (fs::path(c.out) / "modes.csv").string() << "\n";
  }
  return 0;
}

int cmd_run(const Common& c) {
  SweepSpec spec;
  spec.base = scene_from_config(Config::load(c.config));
  apply_tier(c, spec.base);
  spec.param = SweepParam::r_in;
  spec.values = {format_number(spec.base.position())};
  spec.name = "run";
  spec.out_dir = c.out;
  spec.cross_check = c.cross_check;
  spec.threads = c.threads;
  if (c.dump_fields) spec.dump_fields_dir = (fs::path(c.out) / "fields").string();
  const auto records = run_sweep(spec);
  const auto& r = records.front();
  if (!r.ok) {
    std::cerr << "run failed: " << r.diagnostic << "\n";
    return 1;
  }
  const auto& e = r.result;
  std::printf("eta %.4f  purcell %.4f  P %.6g  P0 %.6g  Pc_fwd %.6g  Pc_bwd %.6g\n", e.eta, e.purcell, e.P,
              e.P0, e.Pc_forward, e.Pc_backward);
  for (const auto& m : e.per_mode) std::printf("  %s  fwd %.4f  bwd %.4f\n", m.label.c_str(), m.forward, m.backward);
  if (e.eta_hybrid) std::printf("eta_hybrid %.4f\n", *e.eta_hybrid);
  if (e.eta_far) std::printf("eta_far %.4f\n", *e.eta_far);
  for (const auto& w : e.metadata.warnings) std::printf("warning: %s\n", w.c_str());
  std::printf("wrote %s\n", (fs::path(c.out) / "run.csv").string().c_str());
  return 0;
}

int cmd_sweep(const Common& c) {
  SweepSpec spec = sweep_from_config(Config::load(c.config), step_of(c));
  apply_tier(c, spec.base);
  spec.out_dir = c.out;
  spec.cross_check = spec.cross_check || c.cross_check;
  spec.threads = c.threads;
  spec.workers = c.workers;
  if (c.dump_fields) spec.dump_fields_dir = (fs::path(c.out) / "fields").string();
  const auto records = run_sweep(spec);
  int failed = 0;
  for (const auto& r : records) failed += r.ok ? 0 : 1;
  std::printf("%zu points, %d failed; wrote %s\n", records.size(), failed,
              (fs::path(c.out) / (spec.name + ".csv")).string().c_str());
  return failed ? 1 : 0;
}

int cmd_figure(const Common& c, const std::string& id) {
  const Tier tier = c.tier.empty() ? Tier::fast : tier_from_string(c.tier);
  FigureSpec fig = figure_spec(id, tier, step_of(c));
  for (auto& s : fig.curves) {
    s.cross_check = c.cross_check;
    s.threads = c.threads;
    s.workers = c.workers;
  }
  const auto out = reproduce_figure(fig, c.out);
  std::printf("wrote %s and %s (%d failed points)\n", out.csv_path.c_str(), out.svg_path.c_str(), out.failures);
  return out.failures ? 1 : 0;
}

int cmd_plot(const Common& c, const std::string& csv, const std::string& svg) {
  const auto table = load_csv(csv);
  std::string target = svg;
  if (target.empty()) target = (fs::path(c.out) / fs::path(csv).filename().replace_extension(".svg")).string();
  write_atomic(target, plot_svg(table));
  std::printf("wrote %s\n", target.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dipole channeling efficiency into nanofibre and nanocapillary guided modes"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config, "Run configuration file");
  app.add_option("--tier", c.tier, "Resolution tier")->check(CLI::IsMember({"fast", "accurate"}));
  app.add_option("--out", c.out, "Output directory");
  app.add_option("--threads", c.threads, "OpenMP threads per simulation")->check(CLI::NonNegativeNumber);
  app.add_option("--workers", c.workers, "Sweep points run concurrently")->check(CLI::PositiveNumber);
  app.add_flag("--cross-check", c.cross_check, "Add the semi-analytic eta_hybrid column");
  app.add_option("--step", c.step, "Override the sweep step (nm)")->check(CLI::PositiveNumber);
  app.add_flag("--dump-fields", c.dump_fields, "Write binary field snapshots under <out>/fields");

  auto* modes = app.add_subcommand("modes", "Guided modes of the configured fibre as CSV");
  auto* run = app.add_subcommand("run", "One channeling simulation");
  auto* sweep = app.add_subcommand("sweep", "Parameter sweep from the [sweep] section");
  std::string figure_id;
  auto* figure = app.add_subcommand("reproduce-figure", "Regenerate a figure as CSV and SVG");
  std::string ids;
  for (const auto& f : figure_ids()) ids += (ids.empty() ? "" : ", ") + f;
  figure->add_option("id", figure_id, "Figure id: " + ids)->required();
  std::string csv_in, svg_out;
  auto* plot = app.add_subcommand("plot", "Render a sweep CSV as SVG");
  plot->add_option("csv", csv_in, "Sweep CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("svg", svg_out, "Output SVG (default <out>/<csv name>.svg)");

  CLI11_PARSE(app, argc, argv);
  try {
    if ((*modes || *run || *sweep) && c.config.empty()) {
      std::cerr << "error: --config is required\n";
      return 2;
    }
    if (*modes) return cmd_modes(c);
    if (*run) return cmd_run(c);
    if (*sweep) return cmd_sweep(c);
    if (*figure) return cmd_figure(c, figure_id);
    if (*plot) return cmd_plot(c, csv_in, svg_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
