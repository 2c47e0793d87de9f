#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "voltrack/config.hpp"
#include "voltrack/tracker.hpp"

namespace voltrack {

/// Command implementations behind the CLI. Each takes a config already
/// merged against its schema (see KeyValueConfig::for_command), throws
/// voltrack errors, and prints its human-readable summary to `os`.

/// Generates a scene and writes the JSON + feature sidecar to `out`.
void cmd_simulate(const KeyValueConfig& cfg, const std::filesystem::path& out, std::ostream& os);

/// Trains on the given scene files; writes the checkpoint to `out` and the
/// per-step loss CSV next to it (extension swapped to .csv). On divergence
/// the last good checkpoint and log are still written before rethrowing.
void cmd_train(const KeyValueConfig& cfg, const std::vector<std::filesystem::path>& scene_paths,
               const std::filesystem::path& out, int threads, std::ostream& os);

/// Tracks a scene with a trained checkpoint; writes trajectory JSON to
/// `out` plus a CSV sibling, and optionally the attention sidecar.
void cmd_track(const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& scene_path, const KeyValueConfig& cfg,
               const std::filesystem::path& out, int threads,
               const std::optional<std::filesystem::path>& dump_attention, std::ostream& os);

/// Scores a trajectory file against a scene; prints the metric table and
/// writes the JSON report to `out`.
void cmd_eval(const std::filesystem::path& pred_path, const std::filesystem::path& scene_path,
              const KeyValueConfig& cfg, const std::filesystem::path& out, std::ostream& os);

/// One (variant, scene seed) measurement from an ablation suite.
struct AblationRun {
  std::string variant;
  uint64_t scene_seed = 0;
  double apd = 0.0;       // percent
  double aj3d = 0.0;
  double mean_err = 0.0;  // world units, valid predictions only
};

/// Variant row averaged over scene seeds, in first-appearance order.
struct AblationRow {
  std::string variant;
  double apd = 0.0;
  double aj3d = 0.0;
  double mean_err = 0.0;
};

/// Trains and scores every variant of one suite (cameras | grid |
/// attention | losses) on freshly generated benchmark scenes.
std::vector<AblationRun> run_ablation_suite(const std::string& suite, const KeyValueConfig& cfg,
                                            int threads);
std::vector<AblationRow> aggregate_ablation(const std::vector<AblationRun>& runs);

void cmd_ablate(const std::string& suite, const KeyValueConfig& cfg,
                const std::filesystem::path& out, int threads, std::ostream& os);

/// FLOP table over the grid/view sweep plus wall-clock chunk timings.
void cmd_bench(const KeyValueConfig& cfg, const std::filesystem::path& out, int threads,
               std::ostream& os);

/// Binary sidecar with the first frame's combined attention matrices
/// (magic VTATTN01, JSON header, float32 little-endian blob — the same
/// layout family as the scene feature sidecar).
void write_attention_dump(const AttentionDump& dump, const std::filesystem::path& path);

}  // namespace voltrack
