// Command-line run configuration: a `key = value` file plus flag overrides.
#pragma once

#include "tssg/decomposition.hpp"
#include "tssg/pipeline.hpp"
#include "tssg/segnet.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace tssg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  TrainConfig train;
  NetworkConfig network = NetworkConfig::miniature();
  DecompositionConfig decomposition;
  /// Single thread and manifest-ordered inference. Results are bitwise equal
  /// either way; the flag makes the scheduling itself reproducible.
  bool deterministic = false;
  int threads = 0;  // 0: all hardware threads
  std::string manifest, checkpoint_dir, output_dir;

  struct KeyInfo {
    std::string name;
    std::string doc;
  };
  /// Every accepted key in echo order, with its meaning.
  static std::vector<KeyInfo> keys();

  /// Throws ConfigError for an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// `key = value` lines; `#` starts a comment. Duplicate keys are rejected.
  static RunConfig parse(std::istream& in, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// Every key with its effective value; parse(echo()) reproduces *this.
  std::string echo() const;
  void write_echo(const std::filesystem::path& path) const;

  void validate() const;
  int effective_threads() const;
};

}  // namespace tssg
