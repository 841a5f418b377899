#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rvsl/net.hpp"
#include "rvsl/toyvehicle.hpp"
#include "rvsl/trainer.hpp"

namespace rvsl {

struct EvalConfig {
  std::vector<std::size_t> ranks{1, 5, 10};
  bool include_ranking = false;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

/// Everything a run needs. net.num_classes is not configurable: it is set
/// from the training identities when models are built.
struct RunConfig {
  data::DataConfig data;
  std::uint64_t data_seed = 0;
  net::NetConfig net;
  train::TrainConfig train;
  EvalConfig eval;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses a JSON document merged over defaults. Unknown keys, type
/// mismatches and constraint violations throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const RunConfig& cfg);

}  // namespace rvsl
