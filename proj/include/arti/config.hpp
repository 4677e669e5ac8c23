#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "arti/scan.hpp"
#include "arti/trainer.hpp"

namespace arti {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RigChoice {
  std::string preset = "biped-mini";
  std::string file;  // when set, overrides the preset
};

struct DataConfig {
  int frames = 10;
  int test_frames = 5;
  int points = 4096;
  int gt_resolution = 256;  // ground-truth meshes, finer than the animate grid
  std::uint64_t seed = 1;
  PoseAmplitudes amp;
};

struct MeshingConfig {
  int resolution = 192;  // cells along the longest extent; must resolve finger radii
  double level = 0.5;
  double pad = 0.1;
};

struct EvalConfig {
  int samples = 20000;
  int iou_resolution = 64;
  std::uint64_t seed = 7;
};

// Every tunable of every command, one flat registry of dotted keys.
struct RunConfig {
  RigChoice rig;
  NetConfig nets;
  std::uint64_t net_seed = 42;
  TrainConfig train;
  int checkpoint_every = 100;
  DataConfig data;
  MeshingConfig meshing;
  EvalConfig eval;
  int threads = 0;  // 0 means all available cores
};

// Applies a TOML file ([section] + key maps to "section.key"); unknown keys
// and type mismatches throw ConfigError naming the key.
void apply_config_file(RunConfig* cfg, const std::string& path);
void apply_config_text(RunConfig* cfg, std::string_view text);

// Applies one "key=value" command-line override.
void apply_override(RunConfig* cfg, const std::string& assignment);

// Range checks after all sources are merged.
void validate_config(const RunConfig& cfg);

// Canonical TOML echo of every key; reparsing it reproduces the config.
std::string config_echo(const RunConfig& cfg);

// (key, value) pairs in registry order, for --help and echo.
std::vector<std::pair<std::string, std::string>> config_keys(const RunConfig& cfg);

// FNV-1a over the canonical echo, as fixed-width hex.
std::string config_hash(const RunConfig& cfg);

}  // namespace arti
