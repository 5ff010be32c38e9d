#pragma once

// Subcommand bodies of the rfpseg tool. Each returns the process exit code
// for the non-throwing outcomes; errors propagate as exceptions and are
// mapped by exit_code_for().

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rfp/config.hpp"
#include "rfp/rfp_head.hpp"
#include "rfp/trainer.hpp"

namespace rfp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;

/// 2 for NumericalError, 1 for everything else.
int exit_code_for(const std::exception& e);

/// Defaults, then the file at `config_path` (if any), then each "key=value"
/// override in order. Validates the result.
config::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides);

/// Reads a manifest; relative paths resolve against the manifest's folder.
std::vector<data::VolumeSample> read_dataset(const std::filesystem::path& manifest);

struct GenDataOptions {
  std::filesystem::path out_dir;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  bool force = false;
};

/// Writes images/<id>.rfpv, labels/<id>.rfpv and manifest.txt.
int cmd_gen_data(const config::RunConfig& cfg, const GenDataOptions& opts, std::ostream& out);

struct TrainOptions {
  std::string resume;  // checkpoint path
  std::optional<std::size_t> max_epochs;
  bool ignore_digest = false;
};

/// Trains on cfg.train_manifest, validates on cfg.val_manifest (optional)
/// and writes checkpoints plus train.log into cfg.output_dir.
int cmd_train(const config::RunConfig& cfg, const TrainOptions& opts, std::ostream& out);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path records;  // empty: no record file
  /// Config the caller expects the checkpoint to match; empty: trust the
  /// config stored in the checkpoint.
  std::optional<config::RunConfig> expected;
  bool ignore_digest = false;
};

int cmd_eval(const EvalOptions& opts, std::ostream& out);

struct BenchOptions {
  std::optional<Triple> extent;          // default: the deepest encoder extent
  std::optional<std::size_t> channels;   // default: the deepest stage width
  std::size_t repeats = 5;
};

struct ScanTiming {
  std::size_t directions = 0;
  double seconds = 0;  // best of the repeats
};

struct BenchResult {
  Triple extent{};
  std::size_t channels = 0;
  head::CostReport slice_wise;
  head::CostReport volumetric;
  double ratio = 0;  // slice-wise / volumetric cell updates
  std::uint64_t visits_four = 0, visits_eight = 0;  // slice-wise, 4 directions
  std::vector<ScanTiming> timings;                  // directions 1 and 4
};

BenchResult run_bench(const config::RunConfig& cfg, const BenchOptions& opts);
int cmd_bench(const config::RunConfig& cfg, const BenchOptions& opts, std::ostream& out);

struct GradcheckOptions {
  std::string scope = "op";
  std::string only;
  std::uint64_t seed = 1;
  std::size_t network_entries = 4;
  std::string mutation = "none";
};

/// One line per case; exit 2 if any case fails.
int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out);

}  // namespace rfp::cli
