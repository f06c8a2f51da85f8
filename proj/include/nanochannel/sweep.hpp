#pragma once

// Declarative sweeps over scene parameters, figure reproduction, CSV results
// and SVG plots.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanochannel/channeling.hpp"

namespace nanochannel {

inline constexpr const char* kSolverVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat view of a `key = value` file with `[section]` headers. Keys are
/// stored as "section.key"; `#` starts a comment.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::string get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  double number(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// Sorted `section.key = value` lines; equal configs give equal text.
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a(canonical()); }

 private:
  std::map<std::string, std::string> entries_;
};

/// Everything that determines one channeling run.
struct SceneConfig {
  std::string kind = "onf";  // onf | ncf
  double diameter = 280.0;   // onf
  double d_in = 100.0;       // ncf
  double d_out = 360.0;      // ncf
  std::string core = "water";
  std::string background = "vacuum";
  Orientation orientation = Orientation::radial;
  /// Unset: on the surface of a nanofibre, on the axis of a capillary.
  std::optional<double> r_in;
  double wavelength = 620.0;
  double n_silica = materials::kSilicaIndex;
  double n_water = materials::kWaterIndex;

  Tier tier = Tier::fast;
  bool far_monitors = false;
  std::optional<double> dx;
  std::optional<std::array<double, 3>> extents;  // nm
  std::optional<int> pml_cells;
  std::optional<double> monitor_z;  // nm, planes at +-monitor_z

  LayeredCylinderProfile profile() const;
  DipoleSource source() const;
  SimulationDomain domain() const;
  /// Medium surrounding the emitter: the cladding of a nanofibre, the core
  /// of a capillary.
  std::string medium() const { return kind == "ncf" ? core : background; }
  double inner_diameter() const { return kind == "ncf" ? d_in : 0.0; }
  double outer_diameter() const { return kind == "ncf" ? d_out : diameter; }
  double position() const;

  void validate() const;
  Config to_config() const;
};

SceneConfig scene_from_config(const Config& c);
Material material_named(const std::string& name, const SceneConfig& s);

enum class SweepParam { diameter, d_in, d_out, r_in, orientation, medium };
std::string to_string(SweepParam p);
SweepParam sweep_param_from_string(const std::string& s);
bool is_numeric(SweepParam p);

/// "300:1000:20" (inclusive range), or a comma separated list.
std::vector<std::string> parse_values(const std::string& text, std::optional<double> step = {});
std::string format_number(double v);

struct SweepSpec {
  SceneConfig base;
  SweepParam param = SweepParam::diameter;
  std::vector<std::string> values;
  std::string name = "sweep";
  std::string out_dir = ".";
  bool cross_check = false;
  std::string dump_fields_dir;
  int workers = 1;
  /// OpenMP threads per point; 0 leaves the runtime default.
  int threads = 0;

  SceneConfig scene_for(const std::string& value) const;
  void validate() const;
  /// Canonical text of everything that affects the results.
  std::string canonical() const;
  std::uint64_t config_hash() const { return fnv1a(canonical()); }
};

SweepSpec sweep_from_config(const Config& c, std::optional<double> step = {});

struct SweepRecord {
  std::string swept_param;
  std::string value;
  SceneConfig scene;
  EfficiencyResult result;
  double wall_s = 0.0;
  std::string solver_version = kSolverVersion;
  std::uint64_t config_hash = 0;
  bool ok = true;
  std::string diagnostic;
};

using PointRunner = std::function<EfficiencyResult(const LayeredCylinderProfile&,
                                                   const DipoleSource&, const ChannelingOptions&)>;

/// Runs every value not already completed in the sweep journal, then writes
/// `<name>.csv` sorted by swept value and `<name>.meta.txt`.
std::vector<SweepRecord> run_sweep(const SweepSpec& spec, const PointRunner& runner = run_channeling);

std::vector<std::string> csv_columns(bool with_hybrid);
std::string csv_row(const SweepRecord& r, bool with_hybrid);
std::string csv_header(bool with_hybrid);

/// Parsed sweep CSV: header names and string cells. Throws ParseError.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 when absent
};
CsvTable read_csv(const std::string& text);
CsvTable load_csv(const std::string& path);

struct PlotOptions {
  std::string title;
  std::string x_label;  // empty: derived from swept_param
  std::string y_label = "\xCE\xB7";
};

/// One series per (medium, orientation); failed rows are skipped.
std::string plot_svg(const CsvTable& table, const PlotOptions& options = {});

struct FigureSpec {
  std::string id;
  std::string title;
  std::string x_label;
  std::vector<SweepSpec> curves;
};

const std::vector<std::string>& figure_ids();
FigureSpec figure_spec(const std::string& id, Tier tier, std::optional<double> step = {});

struct FigureOutput {
  std::string csv_path;
  std::string svg_path;
  int failures = 0;
};

/// Runs every curve of a figure and merges them into fig<id>.csv/.svg.
FigureOutput reproduce_figure(const FigureSpec& figure, const std::string& out_dir,
                              const PointRunner& runner = run_channeling);

/// Writes `text` to `path` through a temporary file and a rename.
void write_atomic(const std::string& path, const std::string& text);

}  // namespace nanochannel
