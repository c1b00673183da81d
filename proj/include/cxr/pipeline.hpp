#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/backends.hpp"
#include "cxr/config.hpp"
#include "cxr/error.hpp"
#include "cxr/detection.hpp"
#include "cxr/ingest.hpp"
#include "cxr/segmentation.hpp"

namespace cxr {

enum class StudyStatus { Received, Rejected, Classified, Detected, AwaitingReview, Reviewed };
enum class Triage { Routine, Critical };

std::string_view to_string(StudyStatus s);
std::string_view to_string(Triage t);
std::optional<StudyStatus> study_status_from_string(std::string_view s);
std::optional<Triage> triage_from_string(std::string_view s);

/// Received -> Rejected | Classified -> Detected -> AwaitingReview -> Reviewed.
bool can_transition(StudyStatus from, StudyStatus to);
/// Throws Conflict for an illegal transition.
void check_transition(StudyStatus from, StudyStatus to);

// Machine-readable rejection reasons.
inline constexpr std::string_view kReasonNotXray = "not_xray";
inline constexpr std::string_view kReasonNotChest = "not_chest";
inline constexpr std::string_view kReasonBackendUnavailable = "backend_unavailable";
inline constexpr std::string_view kReasonKeypointsNotFound = "keypoints_not_found";
inline constexpr std::string_view kReasonDegenerateKeypoints = "degenerate_keypoints";
inline constexpr std::string_view kReasonInvalidDicom = "invalid_dicom";
inline constexpr std::string_view kReasonRotationOutOfRange = "rotation_out_of_range";
inline constexpr std::string_view kReasonInternal = "internal_error";

/// Reason code for an error escaping a stage.
std::string_view reject_reason(Errc code);

inline constexpr std::string_view kClassificationFinding = "classification";
/// "detection:<index>" for the index-th detection of a prediction set.
std::string detection_finding(std::size_t index);

/// Binary segmentation of one detection crop. `crop` is the integer pixel
/// region of the corrected image the mask covers; the mask grid is
/// width x height and maps onto it by scaling.
struct MaskRecord {
  std::string ref;
  std::size_t detection = 0;
  PathologyLabel label;
  std::array<int, 4> crop{};
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> rle;
};

struct PredictionSet {
  std::string image_digest;
  SanityVerdict sanity;
  /// Angle passed to apply_rotation to level the image.
  double rotation_applied = 0.0;
  bool rotation_low_confidence = false;
  std::array<ProbabilityVector, 3> per_resolution;
  ProbabilityVector ensemble;
  Decision decision = Decision::Normal;
  std::vector<Detection> detections;
  std::vector<MaskRecord> masks;
};

struct PipelineResult {
  std::string study_id;
  StudyStatus status = StudyStatus::Received;
  std::string reason;
  /// The failure may succeed on another attempt (backend unavailable).
  bool retryable = false;
  StudyMetadata metadata;
  Triage triage = Triage::Routine;
  /// Every status the study passed through, starting at Received.
  std::vector<StudyStatus> transitions;
  std::optional<PredictionSet> prediction;
};

/// Content digest of the uploaded bytes; study ids are derived from it.
std::string study_id_for(std::span<const std::uint8_t> bytes);

Triage triage_for(std::span<const Detection> detections, std::span<const PathologyLabel> critical_set);

/// Expands `box` by `margin` of its size per side and clips it to the image.
/// Returns nullopt when nothing is left.
std::optional<std::array<int, 4>> crop_region(const BBox& box, double margin, int width, int height);

/// Bilinear resample of a region to side x side (aspect not preserved).
Image8 resample_region(const Image8& img, const std::array<int, 4>& region, int side);

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::shared_ptr<const ModelBackend> backend);
  ~Pipeline();

  const PipelineConfig& config() const { return cfg_; }

  /// Runs every stage for one upload. Stage failures become a Rejected
  /// result; only a configuration bug throws.
  PipelineResult run(std::span<const std::uint8_t> bytes) const;

 private:
  PipelineConfig cfg_;
  std::shared_ptr<const ModelBackend> backend_;
  std::vector<UNetModel> segmenters_;
};

/// The prediction NDJSON line (no trailing newline). Rejected results carry
/// only identity, status, reason and subgroup attributes.
nlohmann::ordered_json prediction_json(const PipelineResult& r);
std::string prediction_line(const PipelineResult& r);
/// Inverse of prediction_json for the fields it writes.
PipelineResult parse_prediction_json(const nlohmann::json& j);

/// Canonical JSON of one mask, excluding its ref; the ref is its digest.
std::string mask_blob(const MaskRecord& m);

struct RunSummary {
  std::size_t studies = 0;
  std::size_t rejected = 0;
  std::size_t abnormal = 0;
};

/// Processes every *.dcm file under `input` in lexicographic path order and
/// writes one prediction line per study to `out`.
RunSummary run_directory(const std::filesystem::path& input, const PipelineConfig& cfg,
                         const std::filesystem::path& out);

}  // namespace cxr
