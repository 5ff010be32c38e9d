#pragma once

// Flat key=value run configuration and its digest.

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "rfp/data.hpp"
#include "rfp/segnet.hpp"

namespace rfp::config {

/// Raised for malformed or out-of-range configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  net::NetworkConfig net;
  std::size_t total_epochs = 400;
  double base_lr = 1e-3;
  double weight_decay = 3e-4;
  std::size_t batch_size = 2;
  std::uint64_t seed = 1;
  edge::EdgeMode edge_mode = edge::EdgeMode::canny;
  data::AugmentParams augment;
  std::size_t checkpoint_every = 25;
  std::size_t val_every = 5;

  // Synthetic corpus settings used by gen-data.
  double contrast_delta = 20.0;
  double noise_sigma = 20.0;
  bool adjacency = true;
  Spacing spacing{1.0, 1.0, 1.0};

  // Locations; not part of the digest.
  std::string train_manifest;
  std::string val_manifest;
  std::string output_dir;

  void validate() const;
  data::SyntheticSpec synthetic_spec() const;
};

/// Keys that locate files rather than describe the run.
bool is_path_key(const std::string& key);

/// Every field as key -> canonical value text, sorted by key.
std::map<std::string, std::string> to_map(const RunConfig& cfg);

/// Starts from defaults and applies `kv`; unknown keys and unparsable values
/// throw ConfigError naming the key.
RunConfig from_map(const std::map<std::string, std::string>& kv);

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
std::map<std::string, std::string> parse_kv(const std::string& text);

/// key=value lines in key order.
std::string format_kv(const std::map<std::string, std::string>& kv);

/// Canonical text of the non-path fields; input of the digest.
std::string canonical_text(const RunConfig& cfg);

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 of canonical_text(cfg).
Digest config_digest(const RunConfig& cfg);
std::string digest_hex(const Digest& d);

}  // namespace rfp::config
