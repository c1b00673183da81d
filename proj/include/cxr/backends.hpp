#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/detection.hpp"
#include "cxr/image.hpp"
#include "cxr/preprocess.hpp"

namespace cxr {

/// Class probabilities; for the normal/abnormal head the order is
/// [normal, abnormal].
struct ProbabilityVector {
  std::vector<double> probs;

  /// Throws InvalidProbability unless every entry is in [0,1] and the sum is
  /// 1 +- 1e-6.
  void validate() const;
  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;
};

inline constexpr std::size_t kNormalIndex = 0;
inline constexpr std::size_t kAbnormalIndex = 1;

enum class Decision { Normal, Abnormal };
enum class View { PA, AP };

std::string_view to_string(Decision d);
std::string_view to_string(View v);
std::optional<Decision> decision_from_string(std::string_view s);

struct BinaryScore {
  bool positive = false;
  double score = 0.0;
};

struct ViewScore {
  View view = View::PA;
  double score = 0.0;  // probability of the reported view, >= 0.5
};

/// Reported view from P(AP): AP only when strictly above 0.5, so an exact
/// tie reports PA.
ViewScore view_from_ap_probability(double p_ap);

struct SanityVerdict {
  BinaryScore is_xray;
  BinaryScore is_chest;
  ViewScore view;
};

/// What a backend stage sees: the pixels plus the digest fixtures are keyed
/// on. The pipeline passes the native-image digest to every stage so the
/// key survives rotation and resizing.
struct StageInput {
  const Image8& image;
  std::string digest;

  static StageInput of(const Image8& img) { return {img, image_digest(img)}; }
};

/// Contract shared by every learned stage. Implementations are immutable
/// after construction and safe to call concurrently.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::string_view name() const = 0;
  virtual BinaryScore verify_xray(const StageInput& in) const = 0;
  virtual BinaryScore identify_chest(const StageInput& in) const = 0;
  virtual ViewScore classify_view(const StageInput& in) const = 0;
  virtual KeypointSet detect_keypoints(const StageInput& in) const = 0;
  /// Two-class [normal, abnormal] output for one resolution of the set.
  virtual ProbabilityVector classify_normal_abnormal(const StageInput& in, int resolution) const = 0;
  /// Raw scored proposals in image coordinates; NMS and top-k are applied
  /// by the caller.
  virtual std::vector<Detection> detect_pathologies(const StageInput& in) const = 0;
};

enum class BackendKind { TinyReference, Fixture };

struct BackendDescriptor {
  std::string name = "tiny-reference";
  BackendKind kind = BackendKind::TinyReference;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> fixture_path;

  /// Kind-specific fields must be present exactly for their kind.
  void validate() const;
};

std::unique_ptr<ModelBackend> make_backend(const BackendDescriptor& desc, const ResolutionSet& resolutions = {});

/// Forward-only toy networks with seeded weights: a patch-embedding
/// transformer (one self-attention block) per resolution and per sanity
/// head, a keypoint regressor, and an anchor-scoring detection head.
class TinyReferenceBackend final : public ModelBackend {
 public:
  explicit TinyReferenceBackend(std::uint64_t seed, ResolutionSet resolutions = {});
  ~TinyReferenceBackend() override;

  std::string_view name() const override { return "tiny-reference"; }
  BinaryScore verify_xray(const StageInput& in) const override;
  BinaryScore identify_chest(const StageInput& in) const override;
  ViewScore classify_view(const StageInput& in) const override;
  KeypointSet detect_keypoints(const StageInput& in) const override;
  ProbabilityVector classify_normal_abnormal(const StageInput& in, int resolution) const override;
  std::vector<Detection> detect_pathologies(const StageInput& in) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

inline constexpr std::string_view kStageVerifyXray = "verify_xray";
inline constexpr std::string_view kStageIdentifyChest = "identify_chest";
inline constexpr std::string_view kStageClassifyView = "classify_view";
inline constexpr std::string_view kStageDetectKeypoints = "detect_keypoints";
inline constexpr std::string_view kStageNormalAbnormal = "classify_normal_abnormal";
inline constexpr std::string_view kStageDetectPathologies = "detect_pathologies";

/// One line of a fixture file:
///   {"image_digest": hex, "stage": name, "resolution": int (normal/abnormal
///    stage only), "output": {...}}
struct FixtureRecord {
  std::string image_digest;
  std::string stage;
  std::optional<int> resolution;
  nlohmann::json output;
};

std::string fixture_line(const FixtureRecord& rec);
FixtureRecord parse_fixture_line(std::string_view line);

// Output payload builders, one per stage.
nlohmann::json fixture_score(double score);
nlohmann::json fixture_view(View view, double score);
nlohmann::json fixture_keypoints(const KeypointSet& kp);
nlohmann::json fixture_probs(const ProbabilityVector& p);
nlohmann::json fixture_detections(std::span<const Detection> dets);

/// Replays recorded outputs keyed by (image digest, stage, resolution).
/// A missing entry raises BackendUnavailable (KeypointsNotFound for the
/// keypoint stage).
class FixtureBackend final : public ModelBackend {
 public:
  explicit FixtureBackend(std::vector<FixtureRecord> records, ResolutionSet resolutions = {});
  static FixtureBackend load(const std::filesystem::path& path, ResolutionSet resolutions = {});

  std::string_view name() const override { return "fixture"; }
  BinaryScore verify_xray(const StageInput& in) const override;
  BinaryScore identify_chest(const StageInput& in) const override;
  ViewScore classify_view(const StageInput& in) const override;
  KeypointSet detect_keypoints(const StageInput& in) const override;
  ProbabilityVector classify_normal_abnormal(const StageInput& in, int resolution) const override;
  std::vector<Detection> detect_pathologies(const StageInput& in) const override;

  std::size_t size() const { return entries_.size(); }

 private:
  using Key = std::tuple<std::string, std::string, int>;
  const nlohmann::json* find(const std::string& digest, std::string_view stage, int resolution = 0) const;

  std::map<Key, nlohmann::json> entries_;
  ResolutionSet resolutions_;
};

/// Elementwise mean of exactly three vectors, correctly rounded per entry so
/// the result is independent of input order.
ProbabilityVector ensemble_average(std::span<const ProbabilityVector> per_resolution);

/// Abnormal iff p[abnormal] >= threshold.
Decision decide(const ProbabilityVector& p, double threshold = 0.5);

}  // namespace cxr
