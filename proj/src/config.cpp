#include "latentfilter/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace latentfilter {

std::string to_string(SystemKind k) {
  switch (k) {
    case SystemKind::Lorenz63: return "lorenz63";
    case SystemKind::Lorenz96: return "lorenz96";
  }
  return "?";
}

std::string to_string(FilterKind k) {
  switch (k) {
    case FilterKind::Enppca: return "enppca";
    case FilterKind::Enfa: return "enfa";
    case FilterKind::Enkf: return "enkf";
  }
  return "?";
}

std::string to_string(MeasKind k) {
  switch (k) {
    case MeasKind::L63Range: return "l63_range";
    case MeasKind::L96Linear: return "l96_linear";
    case MeasKind::L96Nl1: return "l96_nl1";
    case MeasKind::L96Nl2: return "l96_nl2";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

SystemKind parse_system(const std::string& s) {
  if (s == "lorenz63") return SystemKind::Lorenz63;
  if (s == "lorenz96") return SystemKind::Lorenz96;
  fail("unknown system '" + s + "'");
}

FilterKind parse_filter(const std::string& s) {
  if (s == "enppca") return FilterKind::Enppca;
  if (s == "enfa") return FilterKind::Enfa;
  if (s == "enkf") return FilterKind::Enkf;
  fail("unknown filter '" + s + "'");
}

MeasKind parse_meas(const std::string& s) {
  if (s == "l63_range") return MeasKind::L63Range;
  if (s == "l96_linear") return MeasKind::L96Linear;
  if (s == "l96_nl1") return MeasKind::L96Nl1;
  if (s == "l96_nl2") return MeasKind::L96Nl2;
  fail("unknown measurement '" + s + "'");
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail("key '" + key + "': cannot parse number '" + s + "'");
  }
}

long long parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail("key '" + key + "': cannot parse integer '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail("key '" + key + "': cannot parse seed '" + s + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail("key '" + key + "': cannot parse boolean '" + s + "'");
}

const std::set<std::string> known_keys = {
    "system",     "filter",     "measurement", "truth_forcing", "model_forcing",
    "n_ensemble", "m_latent",   "n_trials",    "n_cycles",      "dt_model",
    "dt_obs",     "master_seed", "em_tol",     "em_max_iter",   "warm_start"};

using KeyValues = std::map<std::string, std::string>;

void apply_system_defaults(BenchConfig& cfg) {
  if (cfg.system == SystemKind::Lorenz63) {
    cfg.measurement = MeasKind::L63Range;
    cfg.m_latent = 2;
    cfg.n_cycles = 10;
    cfg.dt_model = 0.1;
    cfg.dt_obs = 0.4;
  } else {
    cfg.measurement = MeasKind::L96Linear;
    cfg.m_latent = 5;
    cfg.n_cycles = 100;
    cfg.dt_model = 0.001;
    cfg.dt_obs = 0.1;
  }
}

// Expand one section (with the defaults already merged in) into configs.
std::vector<BenchConfig> expand_section(const std::string& name, const KeyValues& kv) {
  auto get = [&](const char* key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  BenchConfig base;
  if (const auto* s = get("system")) base.system = parse_system(*s);
  apply_system_defaults(base);

  if (const auto* s = get("model_forcing")) base.model_forcing = parse_double("model_forcing", *s);
  if (const auto* s = get("n_ensemble")) base.n_ensemble = static_cast<int>(parse_int("n_ensemble", *s));
  if (const auto* s = get("m_latent")) base.m_latent = static_cast<int>(parse_int("m_latent", *s));
  if (const auto* s = get("n_trials")) base.n_trials = static_cast<int>(parse_int("n_trials", *s));
  if (const auto* s = get("n_cycles")) base.n_cycles = static_cast<int>(parse_int("n_cycles", *s));
  if (const auto* s = get("dt_model")) base.dt_model = parse_double("dt_model", *s);
  if (const auto* s = get("dt_obs")) base.dt_obs = parse_double("dt_obs", *s);
  if (const auto* s = get("master_seed")) base.master_seed = parse_u64("master_seed", *s);
  if (const auto* s = get("em_tol")) base.em_tol = parse_double("em_tol", *s);
  if (const auto* s = get("em_max_iter")) base.em_max_iter = static_cast<int>(parse_int("em_max_iter", *s));
  if (const auto* s = get("warm_start")) base.warm_start = parse_bool("warm_start", *s);

  std::vector<std::string> meas_list = {to_string(base.measurement)};
  if (const auto* s = get("measurement")) meas_list = split_list(*s);
  std::vector<std::string> forcing_list = {};
  if (const auto* s = get("truth_forcing")) forcing_list = split_list(*s);
  if (forcing_list.empty()) forcing_list = {""};
  std::vector<std::string> filter_list = {to_string(base.filter)};
  if (const auto* s = get("filter")) filter_list = split_list(*s);

  std::vector<BenchConfig> out;
  for (const auto& meas : meas_list) {
    for (const auto& forcing : forcing_list) {
      for (const auto& filter : filter_list) {
        BenchConfig cfg = base;
        cfg.measurement = parse_meas(meas);
        if (!forcing.empty()) cfg.truth_forcing = parse_double("truth_forcing", forcing);
        cfg.filter = parse_filter(filter);

        cfg.scenario = name;
        if (meas_list.size() > 1) cfg.scenario += "." + meas;
        if (forcing_list.size() > 1) {
          std::ostringstream f;
          f << "F" << cfg.truth_forcing;
          cfg.scenario += "." + f.str();
        }
        out.push_back(std::move(cfg));
      }
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

int steps_per_cycle(const BenchConfig& cfg) {
  const double ratio = cfg.dt_obs / cfg.dt_model;
  const int n = static_cast<int>(std::lround(ratio));
  if (n < 1 || std::abs(ratio - n) > 1e-9 * ratio)
    fail("dt_obs must be an integer multiple of dt_model");
  return n;
}

void validate(const BenchConfig& cfg) {
  if (cfg.n_ensemble < 2) fail("n_ensemble must be >= 2");
  if (cfg.m_latent < 1 || cfg.m_latent >= cfg.n_ensemble)
    fail("m_latent must satisfy 1 <= m_latent < n_ensemble");
  if (cfg.n_trials < 1) fail("n_trials must be >= 1");
  if (cfg.n_cycles < 1) fail("n_cycles must be >= 1");
  if (!(cfg.dt_model > 0) || !(cfg.dt_obs > 0)) fail("time steps must be positive");
  steps_per_cycle(cfg);
  const bool l63_meas = cfg.measurement == MeasKind::L63Range;
  if ((cfg.system == SystemKind::Lorenz63) != l63_meas)
    fail("measurement model does not match the system");
  if (cfg.em_tol <= 0) fail("em_tol must be positive");
  if (cfg.em_max_iter < 1) fail("em_max_iter must be >= 1");
}

std::vector<BenchConfig> parse_config_text(const std::string& text) {
  KeyValues defaults;
  std::vector<std::pair<std::string, KeyValues>> sections;
  bool in_section = false;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail("line " + std::to_string(lineno) + ": unterminated section");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) fail("line " + std::to_string(lineno) + ": empty section name");
      sections.emplace_back(name, defaults);
      in_section = true;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!known_keys.count(key)) fail("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (in_section)
      sections.back().second[key] = value;
    else
      defaults[key] = value;
  }

  if (sections.empty()) sections.emplace_back("default", defaults);

  std::vector<BenchConfig> out;
  std::set<std::pair<std::string, FilterKind>> seen;
  for (const auto& [name, kv] : sections) {
    for (auto& cfg : expand_section(name, kv)) {
      if (!seen.emplace(cfg.scenario, cfg.filter).second)
        fail("duplicate scenario/filter pair '" + cfg.scenario + "/" + to_string(cfg.filter) + "'");
      validate(cfg);
      out.push_back(std::move(cfg));
    }
  }
  return out;
}

std::vector<BenchConfig> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_configs(const std::vector<BenchConfig>& cfgs) {
  std::ostringstream out;
  bool first = true;
  for (const auto& cfg : cfgs) {
    if (!first) out << "\n";
    first = false;
    out << "[" << cfg.scenario << "]\n";
    out << "system = " << to_string(cfg.system) << "\n";
    out << "filter = " << to_string(cfg.filter) << "\n";
    out << "measurement = " << to_string(cfg.measurement) << "\n";
    out << "truth_forcing = " << format_double(cfg.truth_forcing) << "\n";
    out << "model_forcing = " << format_double(cfg.model_forcing) << "\n";
    out << "n_ensemble = " << cfg.n_ensemble << "\n";
    out << "m_latent = " << cfg.m_latent << "\n";
    out << "n_trials = " << cfg.n_trials << "\n";
    out << "n_cycles = " << cfg.n_cycles << "\n";
    out << "dt_model = " << format_double(cfg.dt_model) << "\n";
    out << "dt_obs = " << format_double(cfg.dt_obs) << "\n";
    out << "master_seed = " << cfg.master_seed << "\n";
    out << "em_tol = " << format_double(cfg.em_tol) << "\n";
    out << "em_max_iter = " << cfg.em_max_iter << "\n";
    out << "warm_start = " << (cfg.warm_start ? "true" : "false") << "\n";
  }
  return out.str();
}

}  // namespace latentfilter
