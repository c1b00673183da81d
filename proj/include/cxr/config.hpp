#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/backends.hpp"
#include "cxr/detection.hpp"
#include "cxr/labels.hpp"
#include "cxr/preprocess.hpp"

namespace cxr {

/// Environment variables starting with this prefix override file keys:
/// CXR_DETECTION_NMS_THRESHOLD sets detection.nms_threshold.
inline constexpr std::string_view kEnvPrefix = "CXR_";

struct PipelineConfig {
  BackendDescriptor backend;
  ResolutionSet resolutions;
  double decision_threshold = 0.5;
  DetectionConfig detection;
  std::vector<PathologyLabel> critical_set;
  /// Fraction of the box side added on every side of a detection crop.
  double crop_margin = 0.1;
  /// Crops are resampled to crop_side x crop_side before segmentation.
  int crop_side = 32;
  std::uint64_t segmentation_seed = 1;
  std::string anonymize_salt = "cxr";

  PipelineConfig();
  void validate() const;
};

struct ServiceConfig {
  std::filesystem::path store_dir = "cxr-store";
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = 2;
  std::size_t max_upload_bytes = 64u << 20;
  /// Attempts per study when a backend reports itself unavailable.
  int backend_attempts = 3;
  /// Events appended between snapshot compactions; 0 disables them.
  std::size_t snapshot_every = 1000;

  void validate() const;
};

struct Config {
  PipelineConfig pipeline;
  ServiceConfig service;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown keys and
/// malformed values throw Config.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Applies CXR_* entries from `env` ("NAME=value" strings) over `kv`.
void apply_env_overrides(std::map<std::string, std::string>& kv, const std::vector<std::string>& env);

Config config_from_key_values(const std::map<std::string, std::string>& kv);

/// File (optional, empty path skips it) then the process environment.
Config load_config(const std::filesystem::path& file);

/// The keys config_from_key_values accepts, with their defaults rendered
/// as text.
std::map<std::string, std::string> default_key_values();

}  // namespace cxr
