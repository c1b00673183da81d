#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/config.hpp"
#include "cxr/metrics.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/store.hpp"

namespace cxr {

enum class Verdict { Accepted, Rejected };

std::string_view to_string(Verdict v);
std::optional<Verdict> verdict_from_string(std::string_view s);

struct FeedbackEvent {
  std::string event_id;
  std::string study_id;
  std::string finding_ref;
  Verdict verdict = Verdict::Accepted;
  std::string reviewer_id;
  std::string timestamp;
  std::uint64_t seq = 0;
};

struct SubmitResult {
  std::string study_id;
  bool created = false;
};

struct FeedbackAck {
  FeedbackEvent event;
  StudyStatus status = StudyStatus::AwaitingReview;
  /// The event_id was already recorded; nothing was appended.
  bool duplicate = false;
};

/// Worklist filter keys: status, triage, age_band, sex, manufacturer,
/// machine_type. Unknown keys or values throw BadRequest.
using WorklistFilter = std::map<std::string, std::string>;

/// Per-label agreement from reviewed studies: Accepted counts as agreement.
struct AgreementRow {
  PathologyLabel label;
  std::size_t accepted = 0;
  std::size_t total = 0;
};

struct LiveReport {
  std::vector<AgreementRow> agreement;
  MetricReport report;
  std::size_t reviewed_studies = 0;
};

/// Study lifecycle, worklist and feedback on top of a blob store and an
/// event log. State is rebuilt from the log on construction; studies left
/// in Received are queued again.
class StudyService {
 public:
  StudyService(Config cfg, std::shared_ptr<const ModelBackend> backend);
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  /// BadRequest for an empty body or a missing DICOM preamble,
  /// PayloadTooLarge above the configured cap.
  SubmitResult submit(std::string_view bytes);

  /// NotFound for an unknown id.
  nlohmann::json study(const std::string& id) const;
  nlohmann::json worklist(const WorklistFilter& filter) const;
  /// The prediction line. NotFound for an unknown id, Conflict while the
  /// study is still Received.
  nlohmann::json predictions(const std::string& id) const;

  /// Body: {"event_id"?, "finding_ref", "verdict", "timestamp"?}. NotFound
  /// for an unknown study or finding, Conflict outside AwaitingReview and
  /// Reviewed or for a reused event_id with different content, BadRequest
  /// for a malformed body or missing reviewer.
  FeedbackAck record_feedback(const std::string& study_id, const nlohmann::json& body, const std::string& reviewer_id);

  LiveReport live_report() const;
  SubgroupTable subgroup_report(SubgroupDimension dim) const;
  /// One record per (reviewed study, reviewer): the reviewer's latest
  /// classification verdict makes the reference.
  std::vector<EvalRecord> reviewed_records() const;

  /// Every current verdict as labeled examples, one JSON line each.
  std::string export_feedback_dataset() const;

  std::optional<std::string> blob(std::string_view digest) const;

  /// Blocks until no study is queued or in progress.
  void wait_idle();
  std::vector<FeedbackEvent> feedback_events() const;

  const Config& config() const { return cfg_; }

 private:
  struct Study;

  void worker_loop();
  void process(const std::string& id);
  void apply(const nlohmann::json& event);
  void apply_processed(Study& s, const nlohmann::json& event);
  void apply_feedback(Study& s, const FeedbackEvent& ev);
  std::uint64_t append(nlohmann::json event);
  void maybe_compact();
  nlohmann::json state_json() const;
  void load_state(const nlohmann::json& state);
  nlohmann::json study_json(const Study& s) const;
  const Study& find(const std::string& id) const;
  Study& find(const std::string& id);
  std::vector<std::string> findings_of(const Study& s) const;

  Config cfg_;
  Pipeline pipeline_;
  BlobStore blobs_;
  EventLog log_;

  mutable std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, std::unique_ptr<Study>> studies_;
  std::map<std::string, FeedbackEvent> feedback_by_id_;
  std::deque<std::string> queue_;
  std::size_t in_progress_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace cxr
