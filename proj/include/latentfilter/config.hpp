#pragma once

/*
 * Benchmark configuration: flat INI-style files with one section per
 * scenario. Keys before the first section act as defaults for every
 * section, and the keys `filter`, `measurement` and `truth_forcing`
 * accept comma-separated lists that expand a section into a scenario grid.
 */

#include <cstdint>
#include <string>
#include <vector>

namespace latentfilter {

enum class SystemKind { Lorenz63, Lorenz96 };
enum class FilterKind { Enppca, Enfa, Enkf };
enum class MeasKind { L63Range, L96Linear, L96Nl1, L96Nl2 };

std::string to_string(SystemKind k);
std::string to_string(FilterKind k);
std::string to_string(MeasKind k);

struct BenchConfig {
  std::string scenario;
  SystemKind system = SystemKind::Lorenz96;
  FilterKind filter = FilterKind::Enppca;
  MeasKind measurement = MeasKind::L96Linear;
  double truth_forcing = 8.0;  // forcing of the data-generation model
  double model_forcing = 8.0;  // forcing used by the filter
  int n_ensemble = 30;
  int m_latent = 5;
  int n_trials = 20;
  int n_cycles = 100;
  double dt_model = 0.001;
  double dt_obs = 0.1;
  std::uint64_t master_seed = 0;
  double em_tol = 1e-8;
  int em_max_iter = 500;
  bool warm_start = false;

  bool operator==(const BenchConfig&) const = default;
};

// Steps of the integrator per assimilation interval; throws unless dt_obs
// is an integer multiple of dt_model.
int steps_per_cycle(const BenchConfig& cfg);

// Throws std::invalid_argument describing the first violated invariant.
void validate(const BenchConfig& cfg);

// Parse a config file / text into the expanded list of scenarios.
std::vector<BenchConfig> parse_config_text(const std::string& text);
std::vector<BenchConfig> parse_config_file(const std::string& path);

// Inverse of parsing: one fully explicit section per config. Parsing the
// result reproduces the same list.
std::string serialize_configs(const std::vector<BenchConfig>& cfgs);

}  // namespace latentfilter
