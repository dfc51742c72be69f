#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ckgan/metrics.hpp"
#include "ckgan/trainer.hpp"

namespace ckgan {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RunConfig {
  TrainConfig train;
  std::string out_dir = ".";
};

/// Parses a flat JSON document. Unknown keys are rejected; missing keys take
/// the documented defaults.
RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// The fully-resolved configuration (every key present) as JSON text.
std::string resolved_config_json(const RunConfig& cfg);

/// Applies "key=value" overrides (same keys as the config file).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// ---- checkpoints ----
// Binary layout: magic "CKGN", u32 version, length-prefixed resolved-config
// JSON, u64 iteration, 3 doubles (loss_d, loss_g, train_seconds), a table of
// named tensors (u32 name len, bytes, u32 rank, u64 extents, f64 payload), and
// a table of named rng states. Round-trips bitwise.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                     const TrainState& state);

struct LoadedCheckpoint {
  RunConfig config;
  TrainState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---- CSV ----
/// Formats with 12 significant digits, period decimal separator, LF endings.
std::string csv_number(double v);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);

/// Writes an [n x 2] tensor as "x,y" rows.
void write_points_csv(const std::filesystem::path& path, const Tensor& points);
Tensor read_points_csv(const std::filesystem::path& path);

}  // namespace ckgan
