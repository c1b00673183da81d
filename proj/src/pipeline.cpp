#include "cxr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cxr/digest.hpp"
#include "cxr/error.hpp"
#include "cxr/preprocess.hpp"

namespace cxr {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

std::string_view to_string(StudyStatus s) {
  switch (s) {
    case StudyStatus::Received: return "Received";
    case StudyStatus::Rejected: return "Rejected";
    case StudyStatus::Classified: return "Classified";
    case StudyStatus::Detected: return "Detected";
    case StudyStatus::AwaitingReview: return "AwaitingReview";
    case StudyStatus::Reviewed: return "Reviewed";
  }
  return "Received";
}

std::string_view to_string(Triage t) { return t == Triage::Critical ? "Critical" : "Routine"; }

std::optional<StudyStatus> study_status_from_string(std::string_view s) {
  for (StudyStatus v : {StudyStatus::Received, StudyStatus::Rejected, StudyStatus::Classified, StudyStatus::Detected,
                        StudyStatus::AwaitingReview, StudyStatus::Reviewed}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::optional<Triage> triage_from_string(std::string_view s) {
  if (s == "Routine") return Triage::Routine;
  if (s == "Critical") return Triage::Critical;
  return std::nullopt;
}

bool can_transition(StudyStatus from, StudyStatus to) {
  switch (from) {
    case StudyStatus::Received: return to == StudyStatus::Rejected || to == StudyStatus::Classified;
    case StudyStatus::Classified: return to == StudyStatus::Detected;
    case StudyStatus::Detected: return to == StudyStatus::AwaitingReview;
    case StudyStatus::AwaitingReview: return to == StudyStatus::Reviewed;
    case StudyStatus::Rejected:
    case StudyStatus::Reviewed: return false;
  }
  return false;
}

void check_transition(StudyStatus from, StudyStatus to) {
  if (!can_transition(from, to)) {
    throw Error(Errc::Conflict, fmt::format("illegal transition {} -> {}", to_string(from), to_string(to)));
  }
}

std::string_view reject_reason(Errc code) {
  switch (code) {
    case Errc::MissingMagic:
    case Errc::UnsupportedTransferSyntax:
    case Errc::MissingPixelData:
    case Errc::MalformedElement:
    case Errc::UnsupportedPixelFormat:
    case Errc::EmptyImage:
    case Errc::NegativeAge: return kReasonInvalidDicom;
    case Errc::BackendUnavailable: return kReasonBackendUnavailable;
    case Errc::KeypointsNotFound: return kReasonKeypointsNotFound;
    case Errc::DegenerateKeypoints: return kReasonDegenerateKeypoints;
    default: return kReasonInternal;
  }
}

std::string detection_finding(std::size_t index) { return fmt::format("detection:{}", index); }

std::string study_id_for(std::span<const std::uint8_t> bytes) { return sha256_hex(bytes); }

Triage triage_for(std::span<const Detection> detections, std::span<const PathologyLabel> critical_set) {
  for (const Detection& d : detections) {
    if (std::find(critical_set.begin(), critical_set.end(), d.label) != critical_set.end()) return Triage::Critical;
  }
  return Triage::Routine;
}

std::optional<std::array<int, 4>> crop_region(const BBox& box, double margin, int width, int height) {
  const double mx = box.width() * margin;
  const double my = box.height() * margin;
  const int x1 = std::max(0, static_cast<int>(std::floor(box.x1() - mx)));
  const int y1 = std::max(0, static_cast<int>(std::floor(box.y1() - my)));
  const int x2 = std::min(width, static_cast<int>(std::ceil(box.x2() + mx)));
  const int y2 = std::min(height, static_cast<int>(std::ceil(box.y2() + my)));
  if (x2 <= x1 || y2 <= y1) return std::nullopt;
  return std::array<int, 4>{x1, y1, x2, y2};
}

Image8 resample_region(const Image8& img, const std::array<int, 4>& region, int side) {
  const auto [x1, y1, x2, y2] = region;
  const int w = x2 - x1, h = y2 - y1;
  Image8 out(side, side);
  // Align-corners mapping, as in resize().
  const double sx = side > 1 ? static_cast<double>(w - 1) / (side - 1) : 0.0;
  const double sy = side > 1 ? static_cast<double>(h - 1) / (side - 1) : 0.0;
  for (int oy = 0; oy < side; ++oy) {
    const double fy = oy * sy;
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1n = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int ox = 0; ox < side; ++ox) {
      const double fx = ox * sx;
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1n = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = img.at(x1 + x0, y1 + y0) * (1 - tx) + img.at(x1 + x1n, y1 + y0) * tx;
      const double bottom = img.at(x1 + x0, y1 + y1n) * (1 - tx) + img.at(x1 + x1n, y1 + y1n) * tx;
      out.at(ox, oy) = static_cast<std::uint8_t>(std::lround(top * (1 - ty) + bottom * ty));
    }
  }
  return out;
}

Pipeline::Pipeline(PipelineConfig cfg, std::shared_ptr<const ModelBackend> backend)
    : cfg_(std::move(cfg)), backend_(std::move(backend)) {
  cfg_.validate();
  if (!backend_) throw Error(Errc::Config, "pipeline needs a backend");
  for (UNetVariant v : kAllUNetVariants) {
    segmenters_.emplace_back(SegmentationConfig::toy(v), cfg_.segmentation_seed + static_cast<std::uint64_t>(v));
  }
}

Pipeline::~Pipeline() = default;

PipelineResult Pipeline::run(std::span<const std::uint8_t> bytes) const {
  PipelineResult r;
  r.study_id = study_id_for(bytes);
  r.transitions = {StudyStatus::Received};
  r.status = StudyStatus::Received;

  auto advance = [&](StudyStatus to) {
    check_transition(r.status, to);
    r.status = to;
    r.transitions.push_back(to);
  };
  auto reject = [&](std::string_view reason, bool retryable) {
    advance(StudyStatus::Rejected);
    r.reason = std::string(reason);
    r.retryable = retryable;
    r.prediction.reset();
    r.triage = Triage::Routine;
    return r;
  };

  Image8 native;
  try {
    const ParsedStudy parsed = parse_dicom(bytes);
    r.metadata = anonymize(parsed.metadata, cfg_.anonymize_salt);
    native = to_eight_bit(parsed.image);
  } catch (const Error& e) {
    return reject(kReasonInvalidDicom, false);
  }

  PredictionSet p;
  p.image_digest = image_digest(native);
  try {
    const StageInput in{native, p.image_digest};
    p.sanity.is_xray = backend_->verify_xray(in);
    if (!p.sanity.is_xray.positive) return reject(kReasonNotXray, false);
    p.sanity.is_chest = backend_->identify_chest(in);
    if (!p.sanity.is_chest.positive) return reject(kReasonNotChest, false);
    p.sanity.view = backend_->classify_view(in);

    const RotationEstimate est = estimate_rotation(backend_->detect_keypoints(in));
    if (!(std::abs(est.angle_degrees) < 90.0)) return reject(kReasonRotationOutOfRange, false);
    p.rotation_applied = est.angle_degrees;
    p.rotation_low_confidence = est.low_confidence;
    const Image8 corrected = apply_rotation(native, est.angle_degrees);

    const auto scaled = multi_resolution(corrected, cfg_.resolutions);
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      p.per_resolution[i] =
          backend_->classify_normal_abnormal(StageInput{scaled[i], p.image_digest}, cfg_.resolutions.sides[i]);
    }
    p.ensemble = ensemble_average(p.per_resolution);
    p.decision = decide(p.ensemble, cfg_.decision_threshold);
    advance(StudyStatus::Classified);

    if (p.decision == Decision::Abnormal) {
      const auto raw = backend_->detect_pathologies(StageInput{corrected, p.image_digest});
      const auto kept = nms(raw, cfg_.detection.nms_threshold);
      for (const Detection& d : select_top_proposals(kept, ProposalMode::Infer, cfg_.detection)) {
        if (d.score >= cfg_.detection.score_threshold) p.detections.push_back(d);
      }
      for (std::size_t i = 0; i < p.detections.size(); ++i) {
        const Detection& d = p.detections[i];
        const auto region = crop_region(d.bbox, cfg_.crop_margin, corrected.width, corrected.height);
        if (!region) continue;
        const Image8 crop = resample_region(corrected, *region, cfg_.crop_side);
        std::vector<Mask> outputs;
        for (const UNetModel& m : segmenters_) outputs.push_back(m.forward(crop, d.label));
        Mask averaged = average_masks(outputs);
        averaged.label = d.label;
        MaskRecord rec;
        rec.detection = i;
        rec.label = d.label;
        rec.crop = *region;
        rec.width = cfg_.crop_side;
        rec.height = cfg_.crop_side;
        rec.rle = rle_encode(binarize_mask(averaged, segmenters_.front().config().mask_threshold));
        rec.ref = sha256_hex(mask_blob(rec));
        p.masks.push_back(std::move(rec));
      }
    }
    advance(StudyStatus::Detected);
    advance(StudyStatus::AwaitingReview);
  } catch (const Error& e) {
    return reject(reject_reason(e.code()), e.code() == Errc::BackendUnavailable);
  }
  r.triage = triage_for(p.detections, cfg_.critical_set);
  r.prediction = std::move(p);
  return r;
}

namespace {

ojson detection_json(const Detection& d, std::size_t index) {
  return ojson{{"finding_id", detection_finding(index)},
               {"label", std::string(d.label.name())},
               {"x1", d.bbox.x1()},
               {"y1", d.bbox.y1()},
               {"x2", d.bbox.x2()},
               {"y2", d.bbox.y2()},
               {"score", d.score}};
}

ojson mask_fields(const MaskRecord& m) {
  return ojson{{"detection", m.detection},
               {"label", std::string(m.label.name())},
               {"crop", m.crop},
               {"width", m.width},
               {"height", m.height},
               {"rle", m.rle}};
}

ojson binary_json(const BinaryScore& b) { return ojson{{"positive", b.positive}, {"score", b.score}}; }

BinaryScore binary_from(const json& j) { return {j.at("positive").get<bool>(), j.at("score").get<double>()}; }

}  // namespace

std::string mask_blob(const MaskRecord& m) { return mask_fields(m).dump(); }

ojson prediction_json(const PipelineResult& r) {
  ojson j;
  j["study_id"] = r.study_id;
  j["status"] = std::string(to_string(r.status));
  if (r.status == StudyStatus::Rejected) {
    j["reason"] = r.reason;
    j["retryable"] = r.retryable;
  } else {
    j["triage"] = std::string(to_string(r.triage));
  }
  const StudyMetadata& m = r.metadata;
  j["age_band"] = m.patient_age_years ? ojson(std::string(to_string(age_band(*m.patient_age_years)))) : ojson(nullptr);
  j["sex"] = std::string(to_string(m.sex));
  j["manufacturer"] = std::string(to_string(m.manufacturer));
  j["machine_type"] = std::string(to_string(m.machine_type));
  j["anonymized_uid"] = m.study_id;
  if (!r.prediction) return j;

  const PredictionSet& p = *r.prediction;
  j["image_digest"] = p.image_digest;
  j["sanity"] = ojson{{"is_xray", binary_json(p.sanity.is_xray)},
                      {"is_chest", binary_json(p.sanity.is_chest)},
                      {"view", ojson{{"view", std::string(to_string(p.sanity.view.view))}, {"score", p.sanity.view.score}}}};
  j["rotation_applied"] = p.rotation_applied;
  j["rotation_low_confidence"] = p.rotation_low_confidence;
  ojson per = ojson::array();
  for (const ProbabilityVector& v : p.per_resolution) per.push_back(v.probs);
  j["per_resolution"] = per;
  j["ensemble"] = p.ensemble.probs;
  j["decision"] = std::string(to_string(p.decision));
  j["score"] = p.ensemble[kAbnormalIndex];
  ojson dets = ojson::array();
  for (std::size_t i = 0; i < p.detections.size(); ++i) dets.push_back(detection_json(p.detections[i], i));
  j["detections"] = dets;
  ojson masks = ojson::array();
  for (const MaskRecord& mk : p.masks) {
    ojson o{{"ref", mk.ref}};
    const ojson fields = mask_fields(mk);
    for (const auto& [k, v] : fields.items()) o[k] = v;
    masks.push_back(o);
  }
  j["masks"] = masks;
  return j;
}

std::string prediction_line(const PipelineResult& r) { return prediction_json(r).dump(); }

PipelineResult parse_prediction_json(const json& j) {
  try {
    PipelineResult r;
    r.study_id = j.at("study_id").get<std::string>();
    const auto status = study_status_from_string(j.at("status").get<std::string>());
    if (!status) throw Error(Errc::BadRequest, "unknown status");
    r.status = *status;
    r.reason = j.value("reason", "");
    r.retryable = j.value("retryable", false);
    r.triage = triage_from_string(j.value("triage", "Routine")).value_or(Triage::Routine);
    if (j.contains("age_band") && !j["age_band"].is_null()) {
      // Age bands are stored, not ages; keep a representative age inside the band.
      const auto band = age_band_from_string(j["age_band"].get<std::string>());
      if (!band) throw Error(Errc::BadRequest, "unknown age_band");
      static constexpr int kRepresentative[] = {10, 30, 50, 70, 80};
      r.metadata.patient_age_years = kRepresentative[static_cast<int>(*band)];
    }
    r.metadata.sex = sex_from_string(j.value("sex", "Unknown")).value_or(Sex::Unknown);
    r.metadata.manufacturer =
        manufacturer_from_string(j.value("manufacturer", "Other Manufacturers")).value_or(Manufacturer::Other);
    r.metadata.machine_type = machine_type_from_string(j.value("machine_type", "Unknown")).value_or(MachineType::Unknown);
    r.metadata.study_id = j.value("anonymized_uid", "");
    r.metadata.identity_removed = true;
    if (!j.contains("decision")) return r;

    PredictionSet p;
    p.image_digest = j.at("image_digest").get<std::string>();
    const json& s = j.at("sanity");
    p.sanity.is_xray = binary_from(s.at("is_xray"));
    p.sanity.is_chest = binary_from(s.at("is_chest"));
    p.sanity.view.view = s.at("view").at("view").get<std::string>() == "AP" ? View::AP : View::PA;
    p.sanity.view.score = s.at("view").at("score").get<double>();
    p.rotation_applied = j.at("rotation_applied").get<double>();
    p.rotation_low_confidence = j.at("rotation_low_confidence").get<bool>();
    const json& per = j.at("per_resolution");
    if (per.size() != 3) throw Error(Errc::BadRequest, "per_resolution must hold three vectors");
    for (std::size_t i = 0; i < 3; ++i) p.per_resolution[i].probs = per[i].get<std::vector<double>>();
    p.ensemble.probs = j.at("ensemble").get<std::vector<double>>();
    const auto decision = decision_from_string(j.at("decision").get<std::string>());
    if (!decision) throw Error(Errc::BadRequest, "unknown decision");
    p.decision = *decision;
    for (const json& d : j.at("detections")) {
      p.detections.push_back({BBox(d.at("x1").get<double>(), d.at("y1").get<double>(), d.at("x2").get<double>(),
                                   d.at("y2").get<double>()),
                              PathologyLabel::parse(d.at("label").get<std::string>()), d.at("score").get<double>()});
    }
    for (const json& m : j.at("masks")) {
      MaskRecord mk;
      mk.ref = m.at("ref").get<std::string>();
      mk.detection = m.at("detection").get<std::size_t>();
      mk.label = PathologyLabel::parse(m.at("label").get<std::string>());
      mk.crop = m.at("crop").get<std::array<int, 4>>();
      mk.width = m.at("width").get<int>();
      mk.height = m.at("height").get<int>();
      mk.rle = m.at("rle").get<std::vector<std::uint32_t>>();
      p.masks.push_back(std::move(mk));
    }
    r.prediction = std::move(p);
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::BadRequest, std::string("prediction record: ") + e.what());
  }
}

RunSummary run_directory(const std::filesystem::path& input, const PipelineConfig& cfg,
                         const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(input)) throw Error(Errc::Io, "input is not a directory: " + input.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(input)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dcm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  const Pipeline pipeline(cfg, make_backend(cfg.backend, cfg.resolutions));
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::Io, "cannot write " + out.string());
  RunSummary summary;
  for (const fs::path& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const PipelineResult r = pipeline.run(bytes);
    ++summary.studies;
    if (r.status == StudyStatus::Rejected) ++summary.rejected;
    if (r.prediction && r.prediction->decision == Decision::Abnormal) ++summary.abnormal;
    os << prediction_line(r) << '\n';
  }
  os.flush();
  if (!os) throw Error(Errc::Io, "write failed for " + out.string());
  return summary;
}

}  // namespace cxr
