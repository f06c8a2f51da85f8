#include "nanochannel/sweep.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace nanochannel {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double to_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(what + ": '" + s + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(v)) throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

bool to_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError(what + ": '" + s + "' is not a boolean");
}

std::string file_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "schema_version",       "geometry.kind",       "geometry.diameter_nm",
      "geometry.d_in_nm",     "geometry.d_out_nm",   "geometry.core",
      "geometry.background",  "source.orientation",  "source.r_in_nm",
      "source.wavelength_nm", "domain.tier",         "domain.dx_nm",
      "domain.extents_um",    "domain.pml_cells",    "domain.monitor_z_um",
      "domain.far_monitors",  "materials.n_silica",  "materials.n_water",
      "sweep.param",          "sweep.values",        "sweep.name",
      "run.cross_check"};
  return keys;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line, section;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!known_keys().count(full)) throw ConfigError(where + ": unknown key '" + full + "'");
    if (c.entries_.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    c.entries_[full] = trim(line.substr(eq + 1));
  }
  if (!c.has("schema_version")) throw ConfigError("missing schema_version");
  if (c.get("schema_version") != std::to_string(kSchemaVersion))
    throw ConfigError("unsupported schema_version " + c.get("schema_version") + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  return c;
}

Config Config::load(const std::string& path) {
  try {
    return parse(file_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string Config::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

std::optional<std::string> Config::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double Config::number(const std::string& key) const { return to_number(get(key), key); }

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Scenes

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Material material_named(const std::string& name, const SceneConfig& s) {
  if (name == "water") return Material("water", s.n_water);
  if (name == "silica") return Material("silica", s.n_silica);
  if (name == "vacuum") return materials::vacuum();
  throw ConfigError("unknown material '" + name + "' (expected vacuum, water or silica)");
}

LayeredCylinderProfile SceneConfig::profile() const {
  const Material silica("silica", n_silica);
  const Material bg = material_named(background, *this);
  if (kind == "onf") return LayeredCylinderProfile({{0.5 * diameter, silica}}, bg);
  if (d_in >= d_out) throw GeometryError("inner diameter must be below the outer diameter");
  return LayeredCylinderProfile({{0.5 * d_in, material_named(core, *this)}, {0.5 * d_out, silica}}, bg);
}

double SceneConfig::position() const {
  if (r_in) return *r_in;
  return kind == "ncf" ? 0.0 : surface_position(profile());
}

DipoleSource SceneConfig::source() const {
  DipoleSource s;
  s.r_in = position();
  s.orientation = orientation;
  s.wavelength = wavelength;
  s.envelope.wavelength = wavelength;
  return s;
}

SimulationDomain SceneConfig::domain() const {
  SimulationDomain d = tier_domain(tier, far_monitors);
  if (dx) d.dx = *dx;
  if (extents) d.extents = *extents;
  if (pml_cells) d.pml_cells = *pml_cells;
  if (monitor_z) d.monitor_z_offsets = {-*monitor_z, *monitor_z};
  return d;
}

void SceneConfig::validate() const {
  if (kind != "onf" && kind != "ncf") throw ConfigError("geometry.kind must be onf or ncf");
  if (!(wavelength > 0)) throw ConfigError("wavelength must be positive");
  if (!(n_silica >= 1.0) || !(n_water >= 1.0)) throw ConfigError("refractive indices must be >= 1");
  material_named(background, *this);
  if (kind == "ncf") material_named(core, *this);
  const auto p = profile();
  if (r_in && *r_in < 0) throw SourceError("r_in must be non-negative");
  if (kind == "ncf" && position() > 0.5 * d_in)
    throw SourceError("the dipole must sit inside the capillary hole");
  if (kind == "onf" && position() <= 0.5 * diameter)
    throw SourceError("the dipole must sit outside the nanofibre");
  domain().validate();
  if (2.0 * p.outer_radius() + 2 * domain().dx >= std::min(domain().extents[0], domain().extents[1]))
    throw GeometryError("the fibre does not fit inside the domain");
}

Config SceneConfig::to_config() const {
  Config c;
  c.set("schema_version", std::to_string(kSchemaVersion));
  c.set("geometry.kind", kind);
  if (kind == "onf") {
    c.set("geometry.diameter_nm", format_number(diameter));
  } else {
    c.set("geometry.d_in_nm", format_number(d_in));
    c.set("geometry.d_out_nm", format_number(d_out));
    c.set("geometry.core", core);
  }
  c.set("geometry.background", background);
  c.set("source.orientation", to_string(orientation));
  if (r_in) c.set("source.r_in_nm", format_number(*r_in));
  c.set("source.wavelength_nm", format_number(wavelength));
  c.set("materials.n_silica", format_number(n_silica));
  c.set("materials.n_water", format_number(n_water));
  c.set("domain.tier", to_string(tier));
  c.set("domain.far_monitors", far_monitors ? "true" : "false");
  if (dx) c.set("domain.dx_nm", format_number(*dx));
  if (extents)
    c.set("domain.extents_um", format_number((*extents)[0] / 1000) + ", " +
                                   format_number((*extents)[1] / 1000) + ", " +
                                   format_number((*extents)[2] / 1000));
  if (pml_cells) c.set("domain.pml_cells", std::to_string(*pml_cells));
  if (monitor_z) c.set("domain.monitor_z_um", format_number(*monitor_z / 1000));
  return c;
}

SceneConfig scene_from_config(const Config& c) {
  SceneConfig s;
  auto num = [&](const char* key, double& out) {
    if (auto v = c.find(key)) out = to_number(*v, key);
  };
  if (auto v = c.find("geometry.kind")) s.kind = *v;
  num("geometry.diameter_nm", s.diameter);
  num("geometry.d_in_nm", s.d_in);
  num("geometry.d_out_nm", s.d_out);
  if (auto v = c.find("geometry.core")) s.core = *v;
  if (auto v = c.find("geometry.background")) s.background = *v;
  if (auto v = c.find("source.orientation")) {
    try {
      s.orientation = orientation_from_string(*v);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("source.orientation: ") + e.what());
    }
  }
  if (auto v = c.find("source.r_in_nm")) s.r_in = to_number(*v, "source.r_in_nm");
  num("source.wavelength_nm", s.wavelength);
  num("materials.n_silica", s.n_silica);
  num("materials.n_water", s.n_water);
  if (auto v = c.find("domain.tier")) {
    try {
      s.tier = tier_from_string(*v);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("domain.tier: ") + e.what());
    }
  }
  if (auto v = c.find("domain.far_monitors")) s.far_monitors = to_bool(*v, "domain.far_monitors");
  if (auto v = c.find("domain.dx_nm")) s.dx = to_number(*v, "domain.dx_nm");
  if (auto v = c.find("domain.extents_um")) {
    const auto parts = split(*v, ',');
    if (parts.size() != 3) throw ConfigError("domain.extents_um needs three values");
    std::array<double, 3> e{};
    for (int a = 0; a < 3; ++a) e[a] = 1000.0 * to_number(parts[a], "domain.extents_um");
    s.extents = e;
  }
  if (auto v = c.find("domain.pml_cells"))
    s.pml_cells = static_cast<int>(to_number(*v, "domain.pml_cells"));
  if (auto v = c.find("domain.monitor_z_um")) s.monitor_z = 1000.0 * to_number(*v, "domain.monitor_z_um");
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Sweep specification

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::diameter: return "diameter";
    case SweepParam::d_in: return "d_in";
    case SweepParam::d_out: return "d_out";
    case SweepParam::r_in: return "r_in";
    case SweepParam::orientation: return "orientation";
    case SweepParam::medium: return "medium";
  }
  return "?";
}

SweepParam sweep_param_from_string(const std::string& s) {
  for (SweepParam p : {SweepParam::diameter, SweepParam::d_in, SweepParam::d_out, SweepParam::r_in,
                       SweepParam::orientation, SweepParam::medium})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown sweep parameter '" + s +
                    "' (expected diameter, d_in, d_out, r_in, orientation or medium)");
}

bool is_numeric(SweepParam p) { return p != SweepParam::orientation && p != SweepParam::medium; }

std::vector<std::string> parse_values(const std::string& text, std::optional<double> step) {
  std::vector<std::string> out;
  if (text.find(':') != std::string::npos) {
    const auto parts = split(text, ':');
    if (parts.size() != 3) throw ConfigError("range values need start:stop:step");
    const double a = to_number(parts[0], "sweep start"), b = to_number(parts[1], "sweep stop");
    const double s = step ? *step : to_number(parts[2], "sweep step");
    if (!(s > 0) || b < a) throw ConfigError("range needs start <= stop and a positive step");
    const long n = static_cast<long>(std::floor((b - a) / s + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(format_number(a + i * s));
    return out;
  }
  for (const auto& v : split(text, ','))
    if (!v.empty()) out.push_back(v);
  return out;
}

SceneConfig SweepSpec::scene_for(const std::string& value) const {
  SceneConfig s = base;
  switch (param) {
    case SweepParam::diameter:
      if (s.kind == "ncf")
        s.d_out = to_number(value, "diameter");
      else
        s.diameter = to_number(value, "diameter");
      break;
    case SweepParam::d_in:
      if (s.kind != "ncf") throw ConfigError("d_in sweeps need a capillary");
      s.d_in = to_number(value, "d_in");
      break;
    case SweepParam::d_out:
      if (s.kind != "ncf") throw ConfigError("d_out sweeps need a capillary");
      s.d_out = to_number(value, "d_out");
      break;
    case SweepParam::r_in: s.r_in = to_number(value, "r_in"); break;
    case SweepParam::orientation:
      try {
        s.orientation = orientation_from_string(value);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
      break;
    case SweepParam::medium:
      (s.kind == "ncf" ? s.core : s.background) = value;
      break;
  }
  return s;
}

void SweepSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep value list is empty");
  if (is_numeric(param)) {
    std::vector<double> v;
    for (const auto& s : values) v.push_back(to_number(s, to_string(param)));
    bool up = true, down = true;
    for (std::size_t i = 1; i < v.size(); ++i) {
      up = up && v[i] > v[i - 1];
      down = down && v[i] < v[i - 1];
    }
    if (!up && !down) throw ConfigError("numeric sweep values must be strictly monotone");
  } else {
    if (std::set<std::string>(values.begin(), values.end()).size() != values.size())
      throw ConfigError("sweep values must be distinct");
  }
  for (const auto& v : values) {
    try {
      scene_for(v).validate();
    } catch (const std::exception& e) {
      throw ConfigError(to_string(param) + " = " + v + ": " + e.what());
    }
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

std::string SweepSpec::canonical() const {
  std::string out = base.to_config().canonical();
  out += "sweep.param = " + to_string(param) + "\n";
  out += "sweep.values =";
  for (const auto& v : values) out += " " + v;
  out += "\nrun.cross_check = " + std::string(cross_check ? "true" : "false") + "\n";
  out += "solver_version = " + std::string(kSolverVersion) + "\n";
  return out;
}

SweepSpec sweep_from_config(const Config& c, std::optional<double> step) {
  SweepSpec s;
  s.base = scene_from_config(c);
  s.param = sweep_param_from_string(c.get("sweep.param"));
  s.values = parse_values(c.get("sweep.values"), step);
  if (auto v = c.find("sweep.name")) s.name = *v;
  if (auto v = c.find("run.cross_check")) s.cross_check = to_bool(*v, "run.cross_check");
  return s;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::string> csv_columns(bool with_hybrid) {
  std::vector<std::string> c = {"swept_param", "swept_value", "medium",   "orientation", "d_in_nm",
                                "d_out_nm",    "r_in_nm",     "eta",      "P_W",         "P0_W",
                                "Pc_fwd_W",    "Pc_bwd_W",    "purcell",  "dx_nm",       "estimator"};
  if (with_hybrid) c.push_back("eta_hybrid");
  c.push_back("runtime_s");
  c.push_back("status");
  return c;
}

std::string csv_header(bool with_hybrid) {
  std::string out;
  for (const auto& c : csv_columns(with_hybrid)) out += (out.empty() ? "" : ",") + c;
  return out;
}

namespace {

std::string csv_field(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, int no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      if (!cur.empty() || was_quoted) throw ParseError("line " + std::to_string(no) + ": stray quote");
      quoted = was_quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
      was_quoted = false;
    } else {
      if (was_quoted) throw ParseError("line " + std::to_string(no) + ": text after closing quote");
      cur += ch;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(no) + ": unterminated quote");
  out.push_back(cur);
  return out;
}

}  // namespace

std::string csv_row(const SweepRecord& r, bool with_hybrid) {
  const auto& s = r.scene;
  std::vector<std::string> f = {r.swept_param,
                                r.value,
                                s.medium(),
                                to_string(s.orientation),
                                format_number(s.inner_diameter()),
                                format_number(s.outer_diameter()),
                                format_number(s.position())};
  const auto& e = r.result;
  if (r.ok) {
    for (double v : {e.eta, e.P, e.P0, e.Pc_forward, e.Pc_backward, e.purcell, e.metadata.dx})
      f.push_back(format_number(v));
    f.push_back(e.metadata.estimator);
    if (with_hybrid) f.push_back(e.eta_hybrid ? format_number(*e.eta_hybrid) : "");
  } else {
    for (int i = 0; i < 6; ++i) f.push_back("");
    f.push_back(format_number(s.domain().dx));
    f.push_back("projection");
    if (with_hybrid) f.push_back("");
  }
  char rt[32];
  std::snprintf(rt, sizeof rt, "%.1f", e.metadata.runtime_s);
  f.push_back(rt);
  f.push_back(r.ok ? "ok" : "failed: " + r.diagnostic);
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + csv_field(f[i]);
  return out;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable read_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line, no);
    if (t.header.empty()) {
      t.header = std::move(fields);
      for (const char* need : {"swept_param", "swept_value", "medium", "orientation", "eta", "status"})
        if (t.column(need) < 0)
          throw ParseError("line " + std::to_string(no) + ": missing column '" + need + "'");
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError("line " + std::to_string(no) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    const std::string& status = fields[t.column("status")];
    if (status == "ok") {
      const std::string& eta = fields[t.column("eta")];
      char* end = nullptr;
      const double v = std::strtod(eta.c_str(), &end);
      if (eta.empty() || *end != '\0' || !std::isfinite(v))
        throw ParseError("line " + std::to_string(no) + ": eta '" + eta + "' is not a number");
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw ParseError("line 1: missing header");
  return t;
}

CsvTable load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return read_csv(os.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_atomic(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

// ---------------------------------------------------------------------------
// Sweep execution

namespace {

/// Rebuilds a record from one journal row.
SweepRecord record_from_row(const SweepSpec& spec, const std::vector<std::string>& f,
                            const std::vector<std::string>& cols) {
  auto at = [&](const char* name) -> const std::string& {
    const auto it = std::find(cols.begin(), cols.end(), name);
    return f.at(static_cast<std::size_t>(it - cols.begin()));
  };
  SweepRecord r;
  r.swept_param = to_string(spec.param);
  r.value = at("swept_value");
  r.scene = spec.scene_for(r.value);
  r.config_hash = spec.config_hash();
  const std::string status = at("status");
  r.ok = status == "ok";
  if (!r.ok) r.diagnostic = status.rfind("failed: ", 0) == 0 ? status.substr(8) : status;
  auto& e = r.result;
  auto num = [&](const char* name) { return std::stod(at(name)); };
  if (r.ok) {
    e.eta = num("eta");
    e.P = num("P_W");
    e.P0 = num("P0_W");
    e.Pc_forward = num("Pc_fwd_W");
    e.Pc_backward = num("Pc_bwd_W");
    e.purcell = num("purcell");
    e.metadata.dx = num("dx_nm");
    e.metadata.estimator = at("estimator");
    if (spec.cross_check && !at("eta_hybrid").empty()) e.eta_hybrid = num("eta_hybrid");
  }
  e.metadata.runtime_s = num("runtime_s");
  r.wall_s = e.metadata.runtime_s;
  return r;
}

std::string journal_header(const SweepSpec& spec) { return "# journal " + hex64(spec.config_hash()); }

/// Complete rows of an existing journal for the same spec, by swept value.
std::map<std::string, std::string> read_journal(const fs::path& path, const SweepSpec& spec) {
  std::map<std::string, std::string> rows;
  std::ifstream in(path, std::ios::binary);
  if (!in) return rows;
  std::ostringstream os;
  os << in.rdbuf();
  const std::string text = os.str();
  std::size_t pos = 0;
  bool first = true;
  const auto cols = csv_columns(spec.cross_check);
  const int value_col = 1, status_col = static_cast<int>(cols.size()) - 1;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final line
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (first) {
      if (line != journal_header(spec)) return {};
      first = false;
      continue;
    }
    std::vector<std::string> f;
    try {
      f = split_csv_line(line, 0);
    } catch (const ParseError&) {
      continue;
    }
    if (f.size() != cols.size()) continue;
    if (f[status_col] != "ok") continue;  // failed points are retried
    rows[f[value_col]] = line;
  }
  return rows;
}

}  // namespace

std::vector<SweepRecord> run_sweep(const SweepSpec& spec, const PointRunner& runner) {
  spec.validate();
  fs::create_directories(spec.out_dir);
  const fs::path journal = fs::path(spec.out_dir) / (spec.name + ".journal");
  const auto cols = csv_columns(spec.cross_check);

  auto done = read_journal(journal, spec);
  // Rewrite the journal with only the surviving rows so it stays clean.
  {
    std::string text = journal_header(spec) + "\n";
    for (const auto& v : spec.values)
      if (done.count(v)) text += done[v] + "\n";
    write_atomic(journal.string(), text);
  }

  std::vector<SweepRecord> records(spec.values.size());
  std::vector<std::string> rows(spec.values.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    const auto it = done.find(spec.values[i]);
    if (it == done.end()) {
      todo.push_back(i);
      continue;
    }
    rows[i] = it->second;
    records[i] = record_from_row(spec, split_csv_line(it->second, 0), cols);
  }

  std::mutex mu;
  std::ofstream jout(journal, std::ios::binary | std::ios::app);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    if (spec.threads > 0) omp_set_num_threads(spec.threads);
    for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
      const std::size_t i = todo[k];
      SweepRecord r;
      r.swept_param = to_string(spec.param);
      r.value = spec.values[i];
      r.scene = spec.scene_for(r.value);
      r.config_hash = spec.config_hash();
      const auto t0 = std::chrono::steady_clock::now();
      try {
        ChannelingOptions o;
        o.domain = r.scene.domain();
        o.cross_check = spec.cross_check;
        if (!spec.dump_fields_dir.empty())
          o.dump_fields_dir = (fs::path(spec.dump_fields_dir) / (spec.name + "_" + r.value)).string();
        r.result = runner(r.scene.profile(), r.scene.source(), o);
      } catch (const std::exception& e) {
        r.ok = false;
        r.diagnostic = e.what();
      }
      r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!r.ok) r.result.metadata.runtime_s = r.wall_s;
      const std::string row = csv_row(r, spec.cross_check);
      std::lock_guard<std::mutex> lock(mu);
      jout << row << '\n';
      jout.flush();
      rows[i] = row;
      records[i] = std::move(r);
    }
  };
  const int n = std::min<int>(spec.workers, static_cast<int>(todo.size()));
  if (n <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  jout.close();

  // Output order: ascending swept value for numbers, list order otherwise.
  std::vector<std::size_t> order(spec.values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (is_numeric(spec.param))
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::stod(spec.values[a]) < std::stod(spec.values[b]);
    });
  std::string csv = csv_header(spec.cross_check) + "\n";
  std::vector<SweepRecord> sorted;
  for (std::size_t i : order) {
    csv += rows[i] + "\n";
    sorted.push_back(std::move(records[i]));
  }
  write_atomic((fs::path(spec.out_dir) / (spec.name + ".csv")).string(), csv);

  std::string meta = spec.canonical();
  meta += "config_hash = " + hex64(spec.config_hash()) + "\n";
  meta += "units = nm, c = eps0 = mu0 = 1; powers in simulation units\n";
  meta += "n_vacuum = " + format_number(materials::kVacuumIndex) + "\n";
  write_atomic((fs::path(spec.out_dir) / (spec.name + ".meta.txt")).string(), meta);
  return sorted;
}

// ---------------------------------------------------------------------------
// Plotting

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '&') out += "&amp;";
    else if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '"') out += "&quot;";
    else out += ch;
  }
  return out;
}

std::string fx(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) return m * mag;
  return 10 * mag;
}

std::string tick_label(double v, double step) {
  char buf[32];
  const int digits = step >= 1 ? 0 : static_cast<int>(std::ceil(-std::log10(step) - 1e-9));
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string default_x_label(const std::string& param) {
  if (param == "diameter") return "D (nm)";
  if (param == "d_in") return "d_in (nm)";
  if (param == "d_out") return "d_out (nm)";
  if (param == "r_in") return "r_in (nm)";
  return param;
}

struct Style {
  const char* color;
  const char* marker;
};

Style series_style(const std::string& medium, const std::string& orientation) {
  const bool water = medium == "water";
  if (orientation == "radial") return {water ? "#000000" : "#d62728", "square"};
  if (orientation == "azimuthal") return {water ? "#7b3294" : "#ff7f0e", "circle"};
  return {water ? "#1f3fbf" : "#2ca02c", "triangle"};
}

std::string marker(const std::string& kind, double x, double y, const char* color) {
  if (kind == "square")
    return "<rect x=\"" + fx(x - 3.5) + "\" y=\"" + fx(y - 3.5) +
           "\" width=\"7.00\" height=\"7.00\" fill=\"" + color + "\"/>\n";
  if (kind == "circle")
    return "<circle cx=\"" + fx(x) + "\" cy=\"" + fx(y) + "\" r=\"4.00\" fill=\"" + color + "\"/>\n";
  return "<polygon points=\"" + fx(x) + "," + fx(y - 4.5) + " " + fx(x - 4.5) + "," + fx(y + 3.5) + " " +
         fx(x + 4.5) + "," + fx(y + 3.5) + "\" fill=\"" + color + "\"/>\n";
}

}  // namespace

std::string plot_svg(const CsvTable& t, const PlotOptions& options) {
  const int c_param = t.column("swept_param"), c_val = t.column("swept_value");
  const int c_med = t.column("medium"), c_or = t.column("orientation");
  const int c_eta = t.column("eta"), c_st = t.column("status");

  // Series keyed by (medium, orientation) in a fixed order.
  const std::vector<std::string> orient_order = {"radial", "azimuthal", "axial"};
  auto rank = [&](const std::string& o) {
    const auto it = std::find(orient_order.begin(), orient_order.end(), o);
    return static_cast<int>(it - orient_order.begin());
  };
  using Key = std::tuple<std::string, int, std::string>;
  std::map<Key, std::vector<std::pair<double, double>>> series;
  std::vector<std::string> categories;
  std::string param;
  for (const auto& row : t.rows) {
    if (row[c_st] != "ok") continue;
    param = row[c_param];
    char* end = nullptr;
    double x = std::strtod(row[c_val].c_str(), &end);
    if (row[c_val].empty() || *end != '\0') {
      auto it = std::find(categories.begin(), categories.end(), row[c_val]);
      if (it == categories.end()) categories.push_back(row[c_val]), it = categories.end() - 1;
      x = static_cast<double>(it - categories.begin());
    }
    series[{row[c_med], rank(row[c_or]), row[c_or]}].emplace_back(x, std::stod(row[c_eta]));
  }
  for (auto& [k, pts] : series) std::sort(pts.begin(), pts.end());

  double xmin = 0, xmax = 1, ymax = 0;
  bool any = false;
  for (const auto& [k, pts] : series)
    for (auto [x, y] : pts) {
      if (!any) xmin = xmax = x;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymax = std::max(ymax, y);
      any = true;
    }
  if (!any || xmax == xmin) {
    xmin = any ? xmin - 1 : 0;
    xmax = any ? xmax + 1 : 1;
  }
  const double xstep = nice_step(xmax - xmin, 6);
  const double x0 = std::floor(xmin / xstep) * xstep, x1 = std::ceil(xmax / xstep) * xstep;
  const double ytop = std::max(0.1, ymax * 1.1);
  const double ystep = nice_step(ytop, 5);
  const double y1 = std::ceil(ytop / ystep) * ystep;

  const double W = 720, H = 480, L = 80, R = 190, T = 50, B = 70;
  const double pw = W - L - R, ph = H - T - B;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return T + ph - y / y1 * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"480\" viewBox=\"0 0 720 480\" "
       "font-family=\"sans-serif\" font-size=\"13\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"720\" height=\"480\" fill=\"#ffffff\"/>\n";
  if (!options.title.empty())
    s += "<text x=\"" + fx(L + pw / 2) + "\" y=\"28.00\" text-anchor=\"middle\" font-size=\"15\">" +
         xml_escape(options.title) + "</text>\n";
  s += "<rect x=\"" + fx(L) + "\" y=\"" + fx(T) + "\" width=\"" + fx(pw) + "\" height=\"" + fx(ph) +
       "\" fill=\"none\" stroke=\"#000000\"/>\n";
  for (double x = x0; x <= x1 + 1e-9 * xstep; x += xstep) {
    s += "<line x1=\"" + fx(sx(x)) + "\" y1=\"" + fx(T + ph) + "\" x2=\"" + fx(sx(x)) + "\" y2=\"" +
         fx(T + ph + 5) + "\" stroke=\"#000000\"/>\n";
    std::string label = tick_label(x, xstep);
    if (!categories.empty()) {
      const long idx = std::lround(x);
      label = (std::abs(x - idx) < 1e-9 && idx >= 0 && idx < static_cast<long>(categories.size()))
                  ? categories[idx]
                  : "";
    }
    s += "<text x=\"" + fx(sx(x)) + "\" y=\"" + fx(T + ph + 20) + "\" text-anchor=\"middle\">" +
         xml_escape(label) + "</text>\n";
  }
  for (double y = 0; y <= y1 + 1e-9 * ystep; y += ystep) {
    s += "<line x1=\"" + fx(L - 5) + "\" y1=\"" + fx(sy(y)) + "\" x2=\"" + fx(L) + "\" y2=\"" + fx(sy(y)) +
         "\" stroke=\"#000000\"/>\n";
    s += "<text x=\"" + fx(L - 8) + "\" y=\"" + fx(sy(y) + 4) + "\" text-anchor=\"end\">" +
         tick_label(y, ystep) + "</text>\n";
  }
  const std::string xl = options.x_label.empty() ? default_x_label(param) : options.x_label;
  s += "<text x=\"" + fx(L + pw / 2) + "\" y=\"" + fx(H - 22) + "\" text-anchor=\"middle\">" +
       xml_escape(xl) + "</text>\n";
  s += "<text x=\"22.00\" y=\"" + fx(T + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 22.00 " +
       fx(T + ph / 2) + ")\">" + xml_escape(options.y_label) + "</text>\n";

  int legend = 0;
  for (const auto& [key, pts] : series) {
    const auto& [medium, r, orientation] = key;
    const Style st = series_style(medium, orientation);
    if (pts.size() > 1) {
      s += "<polyline fill=\"none\" stroke=\"" + std::string(st.color) + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i)
        s += (i ? " " : "") + fx(sx(pts[i].first)) + "," + fx(sy(pts[i].second));
      s += "\"/>\n";
    }
    for (auto [x, y] : pts) s += marker(st.marker, sx(x), sy(y), st.color);
    const double ly = T + 12 + 22 * legend++;
    s += marker(st.marker, W - R + 20, ly, st.color);
    s += "<text x=\"" + fx(W - R + 32) + "\" y=\"" + fx(ly + 4) + "\">" + xml_escape(medium + ", " + orientation) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

// ---------------------------------------------------------------------------
// Figures

const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids = {"3a", "3b", "4a", "4b", "5a", "5b"};
  return ids;
}

FigureSpec figure_spec(const std::string& id, Tier tier, std::optional<double> step) {
  if (std::find(figure_ids().begin(), figure_ids().end(), id) == figure_ids().end()) {
    std::string list;
    for (const auto& f : figure_ids()) list += (list.empty() ? "" : ", ") + f;
    throw std::invalid_argument("unknown figure '" + id + "' (valid: " + list + ")");
  }
  FigureSpec fig;
  fig.id = id;
  SceneConfig base;
  base.tier = tier;
  std::vector<std::string> media;
  std::vector<Orientation> orientations;
  SweepParam param = SweepParam::d_out;
  std::string range;
  if (id == "3a" || id == "3b") {
    base.kind = "onf";
    base.background = id == "3a" ? "vacuum" : "water";
    media = {base.background};
    orientations = {Orientation::radial, Orientation::azimuthal, Orientation::axial};
    param = SweepParam::diameter;
    range = id == "3a" ? "200:600:20" : "300:700:20";
    fig.x_label = id == "3a" ? "D_v (nm)" : "D_l (nm)";
    fig.title = std::string("Nanofibre in ") + base.background;
  } else {
    base.kind = "ncf";
    base.background = "vacuum";
    media = {"water", "vacuum"};
    orientations = {Orientation::radial, Orientation::axial};
    if (id == "4a") {
      base.d_out = 360;
      param = SweepParam::d_in;
      range = "10:300:10";
      fig.x_label = "d_in (nm)";
      fig.title = "Capillary, d_out = 360 nm";
    } else if (id == "4b" || id == "5a") {
      base.d_in = id == "4b" ? 100 : 250;
      param = SweepParam::d_out;
      range = "300:1000:20";
      fig.x_label = "d_out (nm)";
      fig.title = "Capillary, d_in = " + format_number(base.d_in) + " nm";
    } else {
      base.d_in = 100;
      base.d_out = 360;
      orientations = {Orientation::radial, Orientation::azimuthal, Orientation::axial};
      param = SweepParam::r_in;
      range = "0:50:10";
      fig.x_label = "r_in (nm)";
      fig.title = "Capillary 100/360 nm, dipole position";
    }
  }
  for (const auto& m : media)
    for (Orientation o : orientations) {
      SweepSpec s;
      s.base = base;
      (base.kind == "ncf" ? s.base.core : s.base.background) = m;
      s.base.orientation = o;
      s.param = param;
      s.values = parse_values(range, step);
      s.name = "fig" + id + "_" + m + "_" + to_string(o);
      fig.curves.push_back(std::move(s));
    }
  return fig;
}

FigureOutput reproduce_figure(const FigureSpec& figure, const std::string& out_dir,
                              const PointRunner& runner) {
  FigureOutput out;
  const bool hybrid = !figure.curves.empty() && figure.curves.front().cross_check;
  std::vector<std::string> rows;
  for (SweepSpec s : figure.curves) {
    s.out_dir = (fs::path(out_dir) / ("fig" + figure.id + "_curves")).string();
    for (const auto& r : run_sweep(s, runner)) out.failures += r.ok ? 0 : 1;
    std::ifstream in(fs::path(s.out_dir) / (s.name + ".csv"), std::ios::binary);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) rows.push_back(line);
  }
  // Curves are already in (medium, orientation) order; values ascend within each.
  std::string csv = csv_header(hybrid) + "\n";
  for (const auto& r : rows) csv += r + "\n";
  out.csv_path = (fs::path(out_dir) / ("fig" + figure.id + ".csv")).string();
  out.svg_path = (fs::path(out_dir) / ("fig" + figure.id + ".svg")).string();
  write_atomic(out.csv_path, csv);
  PlotOptions po;
  po.title = figure.title;
  po.x_label = figure.x_label;
  write_atomic(out.svg_path, plot_svg(read_csv(csv), po));
  return out;
}

}  // namespace nanochannel
