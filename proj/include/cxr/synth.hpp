#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cxr/backends.hpp"
#include "cxr/ingest.hpp"
#include "cxr/metrics.hpp"
#include "cxr/preprocess.hpp"

namespace cxr {

/// Synthetic studies with matching fixture records and reference labels.
struct SynthOptions {
  std::size_t count = 20;
  std::uint64_t seed = 1;
  int width = 128;
  int height = 128;
  double p_not_xray = 0.05;
  double p_not_chest = 0.05;
  double p_abnormal = 0.4;
  /// Reference agrees with the fixture decision with this probability.
  double p_reference_agrees = 0.9;
  double max_rotation_degrees = 10.0;
  /// Fixed tilt for every study instead of a random one.
  std::optional<double> rotation_degrees;
  ResolutionSet resolutions;
};

struct SynthStudy {
  std::vector<std::uint8_t> dicom;
  std::string study_id;  // study_id_for(dicom)
  StudyMetadata metadata;
  /// Angle the upright image was rotated by (apply_rotation convention).
  double rotation_degrees = 0.0;
  /// Keypoints on the rotated image.
  KeypointSet keypoints;
  std::vector<FixtureRecord> fixtures;
  ReferenceRecord reference;
};

std::vector<SynthStudy> synthesize(const SynthOptions& opts);

/// Upright keypoints used for a width x height synthetic chest.
KeypointSet upright_keypoints(int width, int height);

/// Writes studies/NNNNN.dcm, fixtures.ndjson and references.ndjson under dir.
std::vector<SynthStudy> write_synthetic_corpus(const std::filesystem::path& dir, const SynthOptions& opts);

}  // namespace cxr
