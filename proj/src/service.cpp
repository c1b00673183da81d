#include "cxr/service.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <random>

#include <fmt/format.h>

#include "cxr/digest.hpp"
#include "cxr/error.hpp"

namespace cxr {

using json = nlohmann::json;

std::string_view to_string(Verdict v) { return v == Verdict::Accepted ? "Accepted" : "Rejected"; }

std::optional<Verdict> verdict_from_string(std::string_view s) {
  if (s == "Accepted") return Verdict::Accepted;
  if (s == "Rejected") return Verdict::Rejected;
  return std::nullopt;
}

namespace {

constexpr std::string_view kEventReceived = "received";
constexpr std::string_view kEventProcessed = "processed";
constexpr std::string_view kEventFeedback = "feedback";

json feedback_json(const FeedbackEvent& e) {
  return json{{"event_id", e.event_id},       {"study_id", e.study_id},
              {"finding_ref", e.finding_ref}, {"verdict", std::string(to_string(e.verdict))},
              {"reviewer_id", e.reviewer_id}, {"timestamp", e.timestamp}};
}

FeedbackEvent feedback_from(const json& j) {
  FeedbackEvent e;
  e.event_id = j.at("event_id").get<std::string>();
  e.study_id = j.at("study_id").get<std::string>();
  e.finding_ref = j.at("finding_ref").get<std::string>();
  e.verdict = verdict_from_string(j.at("verdict").get<std::string>()).value();
  e.reviewer_id = j.at("reviewer_id").get<std::string>();
  e.timestamp = j.value("timestamp", "");
  e.seq = j.value("seq", std::uint64_t{0});
  return e;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string random_event_id() {
  std::random_device rd;
  return fmt::format("srv-{:08x}{:08x}{:08x}{:08x}", rd(), rd(), rd(), rd());
}

bool has_dicom_preamble(std::string_view bytes) { return bytes.size() >= 132 && bytes.substr(128, 4) == "DICM"; }

}  // namespace

struct StudyService::Study {
  std::string id;
  std::uint64_t received_seq = 0;
  StudyStatus status = StudyStatus::Received;
  std::vector<StudyStatus> transitions{StudyStatus::Received};
  std::string prediction_ref;
  std::optional<PipelineResult> result;
  std::vector<FeedbackEvent> feedback;
};

StudyService::StudyService(Config cfg, std::shared_ptr<const ModelBackend> backend)
    : cfg_(std::move(cfg)),
      pipeline_(cfg_.pipeline, std::move(backend)),
      blobs_(cfg_.service.store_dir / "blobs"),
      log_(cfg_.service.store_dir) {
  cfg_.service.validate();
  const EventLog::Replay replay = log_.replay();
  if (replay.snapshot) load_state(*replay.snapshot);
  for (const json& e : replay.events) apply(e);
  std::vector<std::pair<std::uint64_t, std::string>> pending;
  for (const auto& [id, s] : studies_) {
    if (s->status == StudyStatus::Received) pending.emplace_back(s->received_seq, id);
  }
  std::sort(pending.begin(), pending.end());
  for (auto& p : pending) queue_.push_back(p.second);
  for (int i = 0; i < cfg_.service.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

StudyService::~StudyService() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (std::thread& t : workers_) t.join();
}

std::uint64_t StudyService::append(json event) {
  const std::uint64_t seq = log_.append(event);
  return seq;
}

void StudyService::maybe_compact() {
  if (cfg_.service.snapshot_every > 0 && log_.appended_since_snapshot() >= cfg_.service.snapshot_every) {
    log_.compact(state_json());
  }
}

SubmitResult StudyService::submit(std::string_view bytes) {
  if (bytes.empty()) throw Error(Errc::BadRequest, "empty upload");
  if (bytes.size() > cfg_.service.max_upload_bytes) {
    throw Error(Errc::PayloadTooLarge, fmt::format("upload of {} bytes exceeds {}", bytes.size(), cfg_.service.max_upload_bytes));
  }
  if (!has_dicom_preamble(bytes)) throw Error(Errc::BadRequest, "missing DICOM preamble");
  const std::string id = sha256_hex(bytes);
  {
    std::lock_guard lock(mu_);
    if (studies_.contains(id)) return {id, false};
  }
  blobs_.put(bytes);
  std::lock_guard lock(mu_);
  if (studies_.contains(id)) return {id, false};
  json ev{{"event_id", fmt::format("{}:{}", kEventReceived, id)}, {"type", kEventReceived}, {"study_id", id}};
  ev["seq"] = append(ev);
  apply(ev);
  queue_.push_back(id);
  maybe_compact();
  work_cv_.notify_one();
  return {id, true};
}

void StudyService::worker_loop() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      ++in_progress_;
    }
    try {
      process(id);
    } catch (const std::exception&) {
      // Left in Received; a restart queues it again.
    }
    {
      std::lock_guard lock(mu_);
      --in_progress_;
    }
    idle_cv_.notify_all();
  }
}

void StudyService::process(const std::string& id) {
  const auto bytes = blobs_.get(id);
  if (!bytes) throw Error(Errc::Io, "upload blob missing for " + id);
  const std::span<const std::uint8_t> data(reinterpret_cast<const std::uint8_t*>(bytes->data()), bytes->size());
  PipelineResult r = pipeline_.run(data);
  for (int attempt = 1; attempt < cfg_.service.backend_attempts && r.retryable; ++attempt) r = pipeline_.run(data);

  json ev{{"event_id", fmt::format("{}:{}", kEventProcessed, id)}, {"type", kEventProcessed}, {"study_id", id}};
  json transitions = json::array();
  for (StudyStatus s : r.transitions) transitions.push_back(std::string(to_string(s)));
  ev["transitions"] = transitions;
  const std::string line = prediction_line(r);
  if (r.status == StudyStatus::Rejected) {
    // No stage artifact is stored for a rejected study.
    ev["line"] = json::parse(line);
  } else {
    for (const MaskRecord& m : r.prediction->masks) blobs_.put(mask_blob(m));
    ev["prediction_ref"] = blobs_.put(line);
  }
  std::lock_guard lock(mu_);
  ev["seq"] = append(ev);
  apply(ev);
  maybe_compact();
}

void StudyService::apply(const json& event) {
  const std::string type = event.at("type").get<std::string>();
  const std::string id = event.at("study_id").get<std::string>();
  if (type == kEventReceived) {
    if (studies_.contains(id)) return;
    auto s = std::make_unique<Study>();
    s->id = id;
    s->received_seq = event.at("seq").get<std::uint64_t>();
    studies_.emplace(id, std::move(s));
  } else if (type == kEventProcessed) {
    apply_processed(find(id), event);
  } else if (type == kEventFeedback) {
    const FeedbackEvent fe = feedback_from(event);
    apply_feedback(find(id), fe);
  } else {
    throw Error(Errc::Io, "unknown event type " + type);
  }
}

void StudyService::apply_processed(Study& s, const json& event) {
  const json& transitions = event.at("transitions");
  for (std::size_t i = 1; i < transitions.size(); ++i) {
    const auto to = study_status_from_string(transitions[i].get<std::string>());
    if (!to) throw Error(Errc::Io, "unknown status in log");
    check_transition(s.status, *to);
    s.status = *to;
    s.transitions.push_back(*to);
  }
  if (event.contains("prediction_ref")) {
    s.prediction_ref = event["prediction_ref"].get<std::string>();
    const auto line = blobs_.get(s.prediction_ref);
    if (!line) throw Error(Errc::Io, "prediction blob missing for " + s.id);
    s.result = parse_prediction_json(json::parse(*line));
  } else {
    s.result = parse_prediction_json(event.at("line"));
  }
}

std::vector<std::string> StudyService::findings_of(const Study& s) const {
  std::vector<std::string> out;
  if (!s.result || !s.result->prediction) return out;
  out.emplace_back(kClassificationFinding);
  for (std::size_t i = 0; i < s.result->prediction->detections.size(); ++i) out.push_back(detection_finding(i));
  return out;
}

void StudyService::apply_feedback(Study& s, const FeedbackEvent& ev) {
  s.feedback.push_back(ev);
  feedback_by_id_[ev.event_id] = ev;
  if (s.status != StudyStatus::AwaitingReview) return;
  for (const std::string& f : findings_of(s)) {
    const bool covered = std::any_of(s.feedback.begin(), s.feedback.end(), [&](const FeedbackEvent& e) { return e.finding_ref == f; });
    if (!covered) return;
  }
  check_transition(s.status, StudyStatus::Reviewed);
  s.status = StudyStatus::Reviewed;
  s.transitions.push_back(StudyStatus::Reviewed);
}

const StudyService::Study& StudyService::find(const std::string& id) const {
  auto it = studies_.find(id);
  if (it == studies_.end()) throw Error(Errc::NotFound, "unknown study " + id);
  return *it->second;
}

StudyService::Study& StudyService::find(const std::string& id) {
  auto it = studies_.find(id);
  if (it == studies_.end()) throw Error(Errc::NotFound, "unknown study " + id);
  return *it->second;
}

json StudyService::study_json(const Study& s) const {
  json j;
  j["study_id"] = s.id;
  j["status"] = std::string(to_string(s.status));
  j["received_seq"] = s.received_seq;
  if (s.result) {
    const PipelineResult& r = *s.result;
    if (r.status == StudyStatus::Rejected) j["reason"] = r.reason;
    j["triage"] = std::string(to_string(r.triage));
    const StudyMetadata& m = r.metadata;
    j["age_band"] = m.patient_age_years ? json(std::string(to_string(age_band(*m.patient_age_years)))) : json(nullptr);
    j["sex"] = std::string(to_string(m.sex));
    j["manufacturer"] = std::string(to_string(m.manufacturer));
    j["machine_type"] = std::string(to_string(m.machine_type));
    if (r.prediction) {
      j["decision"] = std::string(to_string(r.prediction->decision));
      j["score"] = r.prediction->ensemble[kAbnormalIndex];
      j["prediction_set_ref"] = s.prediction_ref;
    }
  } else {
    j["triage"] = std::string(to_string(Triage::Routine));
  }
  json findings = json::array();
  for (const std::string& f : findings_of(s)) {
    json verdicts = json::object();
    for (const FeedbackEvent& e : s.feedback) {
      if (e.finding_ref == f) verdicts[e.reviewer_id] = std::string(to_string(e.verdict));
    }
    json fj{{"finding_ref", f}, {"verdicts", verdicts}};
    if (f != kClassificationFinding) {
      const std::size_t idx = std::stoul(f.substr(f.find(':') + 1));
      fj["label"] = std::string(s.result->prediction->detections[idx].label.name());
    }
    findings.push_back(fj);
  }
  j["findings"] = findings;
  json transitions = json::array();
  for (StudyStatus t : s.transitions) transitions.push_back(std::string(to_string(t)));
  j["transitions"] = transitions;
  return j;
}

json StudyService::study(const std::string& id) const {
  std::lock_guard lock(mu_);
  return study_json(find(id));
}

json StudyService::worklist(const WorklistFilter& filter) const {
  std::optional<StudyStatus> status;
  std::optional<Triage> triage;
  std::optional<AgeBand> band;
  std::optional<Sex> sex;
  std::optional<Manufacturer> manufacturer;
  std::optional<MachineType> machine;
  auto need = [](auto parsed, const std::string& key, const std::string& value) {
    if (!parsed) throw Error(Errc::BadRequest, fmt::format("invalid value '{}' for {}", value, key));
    return *parsed;
  };
  for (const auto& [key, value] : filter) {
    if (key == "status") status = need(study_status_from_string(value), key, value);
    else if (key == "triage") triage = need(triage_from_string(value), key, value);
    else if (key == "age_band") band = need(age_band_from_string(value), key, value);
    else if (key == "sex") sex = need(sex_from_string(value), key, value);
    else if (key == "manufacturer") manufacturer = need(manufacturer_from_string(value), key, value);
    else if (key == "machine_type") machine = need(machine_type_from_string(value), key, value);
    else throw Error(Errc::BadRequest, "unknown filter key " + key);
  }

  std::lock_guard lock(mu_);
  std::vector<const Study*> rows;
  for (const auto& [id, s] : studies_) {
    const Triage t = s->result ? s->result->triage : Triage::Routine;
    if (status && s->status != *status) continue;
    if (triage && t != *triage) continue;
    const bool needs_meta = band || sex || manufacturer || machine;
    if (needs_meta) {
      if (!s->result) continue;
      const StudyMetadata& m = s->result->metadata;
      if (band && !(m.patient_age_years && age_band(*m.patient_age_years) == *band)) continue;
      if (sex && m.sex != *sex) continue;
      if (manufacturer && m.manufacturer != *manufacturer) continue;
      if (machine && m.machine_type != *machine) continue;
    }
    rows.push_back(s.get());
  }
  std::sort(rows.begin(), rows.end(), [](const Study* a, const Study* b) {
    const bool ca = a->result && a->result->triage == Triage::Critical;
    const bool cb = b->result && b->result->triage == Triage::Critical;
    if (ca != cb) return ca;
    return a->received_seq < b->received_seq;
  });
  json out = json::array();
  for (const Study* s : rows) out.push_back(study_json(*s));
  return out;
}

json StudyService::predictions(const std::string& id) const {
  std::lock_guard lock(mu_);
  const Study& s = find(id);
  if (!s.result) throw Error(Errc::Conflict, "study " + id + " is still being processed");
  json j = prediction_json(*s.result);
  j["status"] = std::string(to_string(s.status));
  return j;
}

FeedbackAck StudyService::record_feedback(const std::string& study_id, const json& body, const std::string& reviewer_id) {
  if (reviewer_id.empty()) throw Error(Errc::BadRequest, "missing reviewer id");
  if (!body.is_object()) throw Error(Errc::BadRequest, "feedback body must be an object");
  FeedbackEvent ev;
  try {
    ev.event_id = body.contains("event_id") ? body["event_id"].get<std::string>() : random_event_id();
    ev.finding_ref = body.at("finding_ref").get<std::string>();
    const auto v = verdict_from_string(body.at("verdict").get<std::string>());
    if (!v) throw Error(Errc::BadRequest, "verdict must be Accepted or Rejected");
    ev.verdict = *v;
    ev.timestamp = body.contains("timestamp") ? body["timestamp"].get<std::string>() : utc_now();
  } catch (const json::exception& e) {
    throw Error(Errc::BadRequest, std::string("feedback body: ") + e.what());
  }
  if (ev.event_id.empty()) throw Error(Errc::BadRequest, "empty event_id");
  ev.study_id = study_id;
  ev.reviewer_id = reviewer_id;

  std::lock_guard lock(mu_);
  Study& s = find(study_id);
  if (auto it = feedback_by_id_.find(ev.event_id); it != feedback_by_id_.end()) {
    const FeedbackEvent& prior = it->second;
    if (prior.study_id != ev.study_id || prior.finding_ref != ev.finding_ref || prior.verdict != ev.verdict ||
        prior.reviewer_id != ev.reviewer_id) {
      throw Error(Errc::Conflict, "event_id " + ev.event_id + " already used for different feedback");
    }
    return {prior, find(prior.study_id).status, true};
  }
  const auto findings = findings_of(s);
  if (s.status != StudyStatus::AwaitingReview && s.status != StudyStatus::Reviewed) {
    throw Error(Errc::Conflict, fmt::format("study is {}", to_string(s.status)));
  }
  if (std::find(findings.begin(), findings.end(), ev.finding_ref) == findings.end()) {
    throw Error(Errc::NotFound, "unknown finding " + ev.finding_ref);
  }
  json j = feedback_json(ev);
  j["type"] = kEventFeedback;
  ev.seq = append(j);
  apply_feedback(s, ev);
  maybe_compact();
  return {ev, s.status, false};
}

std::vector<FeedbackEvent> StudyService::feedback_events() const {
  std::lock_guard lock(mu_);
  std::vector<FeedbackEvent> out;
  for (const auto& [id, e] : feedback_by_id_) out.push_back(e);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  return out;
}

namespace {

/// Latest verdict per (finding, reviewer).
std::map<std::pair<std::string, std::string>, Verdict> current_verdicts(const std::vector<FeedbackEvent>& events) {
  std::map<std::pair<std::string, std::string>, Verdict> out;
  std::vector<const FeedbackEvent*> ordered;
  for (const FeedbackEvent& e : events) ordered.push_back(&e);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->seq < b->seq; });
  for (const FeedbackEvent* e : ordered) out[{e->finding_ref, e->reviewer_id}] = e->verdict;
  return out;
}

}  // namespace

std::vector<EvalRecord> StudyService::reviewed_records() const {
  std::lock_guard lock(mu_);
  std::vector<const Study*> reviewed;
  for (const auto& [id, s] : studies_) {
    if (s->status == StudyStatus::Reviewed) reviewed.push_back(s.get());
  }
  std::sort(reviewed.begin(), reviewed.end(), [](auto* a, auto* b) { return a->received_seq < b->received_seq; });
  std::vector<EvalRecord> out;
  for (const Study* s : reviewed) {
    const PipelineResult& r = *s->result;
    const PredictionSet& p = *r.prediction;
    for (const auto& [key, verdict] : current_verdicts(s->feedback)) {
      if (key.first != kClassificationFinding) continue;
      EvalRecord rec;
      rec.study_id = s->id;
      rec.predicted = p.decision;
      rec.score = p.ensemble[kAbnormalIndex];
      const bool agree = verdict == Verdict::Accepted;
      const Decision other = p.decision == Decision::Abnormal ? Decision::Normal : Decision::Abnormal;
      rec.reference = agree ? p.decision : other;
      rec.predicted_detections = p.detections;
      if (r.metadata.patient_age_years) rec.age_band = age_band(*r.metadata.patient_age_years);
      rec.sex = r.metadata.sex;
      rec.manufacturer = r.metadata.manufacturer;
      rec.machine_type = r.metadata.machine_type;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

LiveReport StudyService::live_report() const {
  LiveReport out;
  std::array<AgreementRow, kPathologyCount> rows{};
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : studies_) {
      if (s->status != StudyStatus::Reviewed) continue;
      ++out.reviewed_studies;
      const auto& dets = s->result->prediction->detections;
      for (const auto& [key, verdict] : current_verdicts(s->feedback)) {
        if (key.first == kClassificationFinding) continue;
        const std::size_t idx = std::stoul(key.first.substr(key.first.find(':') + 1));
        AgreementRow& row = rows[dets[idx].label.index()];
        ++row.total;
        if (verdict == Verdict::Accepted) ++row.accepted;
      }
    }
  }
  for (std::size_t i = 0; i < kPathologyCount; ++i) {
    if (rows[i].total == 0) continue;
    rows[i].label = PathologyLabel::from_index(i);
    out.agreement.push_back(rows[i]);
    out.report.rows.push_back({rows[i].label, std::nullopt, 100.0 * static_cast<double>(rows[i].accepted) / rows[i].total,
                               std::nullopt});
  }
  const std::vector<EvalRecord> records = reviewed_records();
  if (!records.empty()) out.report.classification = classify_summary(records);
  return out;
}

SubgroupTable StudyService::subgroup_report(SubgroupDimension dim) const {
  const std::vector<EvalRecord> records = reviewed_records();
  return cxr::subgroup_report(records, dim);
}

std::string StudyService::export_feedback_dataset() const {
  std::lock_guard lock(mu_);
  std::vector<const Study*> ordered;
  for (const auto& [id, s] : studies_) ordered.push_back(s.get());
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->received_seq < b->received_seq; });
  std::string out;
  for (const Study* s : ordered) {
    if (!s->result || !s->result->prediction) continue;
    const PredictionSet& p = *s->result->prediction;
    for (const auto& [key, verdict] : current_verdicts(s->feedback)) {
      nlohmann::ordered_json j;
      j["study_id"] = s->id;
      j["image_digest"] = p.image_digest;
      j["finding_ref"] = key.first;
      j["reviewer_id"] = key.second;
      j["verdict"] = std::string(to_string(verdict));
      if (key.first == kClassificationFinding) {
        j["decision"] = std::string(to_string(p.decision));
      } else {
        const Detection& d = p.detections[std::stoul(key.first.substr(key.first.find(':') + 1))];
        j["label"] = std::string(d.label.name());
        j["box"] = {d.bbox.x1(), d.bbox.y1(), d.bbox.x2(), d.bbox.y2()};
      }
      out += j.dump() + "\n";
    }
  }
  return out;
}

std::optional<std::string> StudyService::blob(std::string_view digest) const { return blobs_.get(digest); }

void StudyService::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && in_progress_ == 0; });
}

json StudyService::state_json() const {
  json studies = json::array();
  for (const auto& [id, s] : studies_) {
    json j{{"study_id", s->id}, {"received_seq", s->received_seq}};
    json transitions = json::array();
    for (StudyStatus t : s->transitions) transitions.push_back(std::string(to_string(t)));
    j["transitions"] = transitions;
    if (s->result) {
      if (!s->prediction_ref.empty()) j["prediction_ref"] = s->prediction_ref;
      else j["line"] = prediction_json(*s->result);
    }
    json fb = json::array();
    for (const FeedbackEvent& e : s->feedback) {
      json f = feedback_json(e);
      f["seq"] = e.seq;
      fb.push_back(f);
    }
    j["feedback"] = fb;
    studies.push_back(j);
  }
  return json{{"studies", studies}};
}

void StudyService::load_state(const json& state) {
  for (const json& j : state.at("studies")) {
    auto s = std::make_unique<Study>();
    s->id = j.at("study_id").get<std::string>();
    s->received_seq = j.at("received_seq").get<std::uint64_t>();
    Study& ref = *s;
    studies_.emplace(s->id, std::move(s));
    const json& transitions = j.at("transitions");
    // Reviewed is re-derived from the feedback below.
    json upto = json::array();
    for (const json& t : transitions) {
      if (t.get<std::string>() != to_string(StudyStatus::Reviewed)) upto.push_back(t);
    }
    if (upto.size() > 1) {
      json ev{{"transitions", upto}};
      if (j.contains("prediction_ref")) ev["prediction_ref"] = j["prediction_ref"];
      else ev["line"] = j.at("line");
      apply_processed(ref, ev);
    }
    for (const json& f : j.at("feedback")) apply_feedback(ref, feedback_from(f));
  }
}

}  // namespace cxr
