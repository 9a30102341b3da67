#pragma once

#include "adarelu/metrics.hpp"
#include "adarelu/training.hpp"

#include <string>
#include <vector>

namespace adarelu {

/// Everything a command needs, read from a key=value text file. Lines starting with '#'
/// and blank lines are ignored; unknown keys, repeated keys and unparsable values throw.
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t data_seed = 0;
  Index data_count = 512;  // per domain
  std::string data_dir;
  std::string out_dir;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Every key, one per line; parse(dump()) reproduces this config exactly.
  std::string dump() const;

  static std::vector<std::string> keys();
  void validate() const;

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.dump() == b.dump(); }
};

}  // namespace adarelu
