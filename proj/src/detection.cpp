#include "cxr/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cxr/error.hpp"

namespace cxr {

BBox::BBox(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
  if (!(x1 < x2) || !(y1 < y2)) {
    throw Error(Errc::InvalidBox, "box must satisfy x1 < x2 and y1 < y2");
  }
}

void DetectionConfig::validate() const {
  if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) throw Error(Errc::InvalidArgument, "nms_threshold not in (0,1]");
  if (top_proposals_train == 0 || top_proposals_infer == 0) throw Error(Errc::InvalidArgument, "top-k must be > 0");
  if (!(delta_weights.x > 0 && delta_weights.y > 0 && delta_weights.w > 0 && delta_weights.h > 0)) {
    throw Error(Errc::InvalidArgument, "delta weights must be positive");
  }
  if (!(smooth_l1_beta > 0.0)) throw Error(Errc::InvalidArgument, "beta must be positive");
  for (double s : anchor_sizes) {
    if (!(s > 0.0)) throw Error(Errc::InvalidArgument, "anchor sizes must be positive");
  }
  for (double r : aspect_ratios) {
    if (!(r > 0.0)) throw Error(Errc::InvalidArgument, "aspect ratios must be positive");
  }
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return std::clamp(inter / (a.area() + b.area() - inter), 0.0, 1.0);
}

std::vector<Anchor> generate_anchors(int grid_w, int grid_h, double stride, const DetectionConfig& cfg) {
  if (grid_w <= 0 || grid_h <= 0 || !(stride > 0.0)) {
    throw Error(Errc::InvalidArgument, "grid dimensions and stride must be positive");
  }
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(grid_w) * grid_h * cfg.anchor_sizes.size() * cfg.aspect_ratios.size());
  for (int j = 0; j < grid_h; ++j) {
    for (int i = 0; i < grid_w; ++i) {
      const double cx = (i + 0.5) * stride;
      const double cy = (j + 0.5) * stride;
      for (double size : cfg.anchor_sizes) {
        for (double ratio : cfg.aspect_ratios) {
          const double root = std::sqrt(ratio);
          const double w = size / root;
          const double h = size * root;
          anchors.push_back({BBox(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h), size, ratio});
        }
      }
    }
  }
  return anchors;
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> dets, double threshold) {
  const auto order = score_order(dets);
  std::array<std::vector<std::size_t>, kPathologyCount> kept_by_label;
  std::vector<Detection> out;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    auto& kept = kept_by_label[d.label.index()];
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](std::size_t k) { return iou(dets[k].bbox, d.bbox) > threshold; });
    if (suppressed) continue;
    kept.push_back(idx);
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> select_top_proposals(std::span<const Detection> dets, ProposalMode mode,
                                            const DetectionConfig& cfg) {
  const std::size_t k = mode == ProposalMode::Train ? cfg.top_proposals_train : cfg.top_proposals_infer;
  const auto order = score_order(dets);
  std::vector<Detection> out;
  out.reserve(std::min(k, dets.size()));
  for (std::size_t i = 0; i < order.size() && i < k; ++i) out.push_back(dets[order[i]]);
  return out;
}

BoxDeltas encode_deltas(const BBox& gt, const BBox& anchor, const DeltaWeights& weights) {
  BoxDeltas t;
  t.tx = ((gt.center_x() - anchor.center_x()) / anchor.width()) / weights.x;
  t.ty = ((gt.center_y() - anchor.center_y()) / anchor.height()) / weights.y;
  t.tw = std::log(gt.width() / anchor.width()) / weights.w;
  t.th = std::log(gt.height() / anchor.height()) / weights.h;
  return t;
}

BBox decode_deltas(const BoxDeltas& t, const BBox& anchor, const DeltaWeights& weights,
                   std::optional<ImageBounds> bounds) {
  const double cx = anchor.center_x() + t.tx * weights.x * anchor.width();
  const double cy = anchor.center_y() + t.ty * weights.y * anchor.height();
  const double w = anchor.width() * std::exp(t.tw * weights.w);
  const double h = anchor.height() * std::exp(t.th * weights.h);
  double x1 = cx - 0.5 * w, y1 = cy - 0.5 * h, x2 = cx + 0.5 * w, y2 = cy + 0.5 * h;
  if (bounds) {
    x1 = std::clamp(x1, 0.0, bounds->width);
    x2 = std::clamp(x2, 0.0, bounds->width);
    y1 = std::clamp(y1, 0.0, bounds->height);
    y2 = std::clamp(y2, 0.0, bounds->height);
  }
  if (!std::isfinite(x1) || !std::isfinite(x2) || !std::isfinite(y1) || !std::isfinite(y2) || !(x1 < x2) ||
      !(y1 < y2)) {
    throw Error(Errc::DegenerateResult, "decoded box has no area");
  }
  return BBox(x1, y1, x2, y2);
}

namespace smooth_l1_branch {

// Written as 0.5 * x * (x / beta) so that at |x| == beta both branches
// evaluate to exactly 0.5 * beta.
double quadratic(double x, double beta) { return 0.5 * x * (x / beta); }

double linear(double x, double beta) { return std::abs(x) - 0.5 * beta; }

}  // namespace smooth_l1_branch

double smooth_l1(double x, double beta) {
  if (!(beta > 0.0)) throw Error(Errc::InvalidArgument, "beta must be positive");
  return std::abs(x) < beta ? smooth_l1_branch::quadratic(x, beta) : smooth_l1_branch::linear(x, beta);
}

double smooth_l1_grad(double x, double beta) {
  if (!(beta > 0.0)) throw Error(Errc::InvalidArgument, "beta must be positive");
  if (std::abs(x) < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

double box_regression_loss(const BoxDeltas& p, const BoxDeltas& t, double beta) {
  return smooth_l1(p.tx - t.tx, beta) + smooth_l1(p.ty - t.ty, beta) + smooth_l1(p.tw - t.tw, beta) +
         smooth_l1(p.th - t.th, beta);
}

BoxDeltas box_regression_grad(const BoxDeltas& p, const BoxDeltas& t, double beta) {
  return {smooth_l1_grad(p.tx - t.tx, beta), smooth_l1_grad(p.ty - t.ty, beta), smooth_l1_grad(p.tw - t.tw, beta),
          smooth_l1_grad(p.th - t.th, beta)};
}

std::string detection_record(const std::string& study_id, const Detection& d) {
  nlohmann::ordered_json j;
  j["study_id"] = study_id;
  j["label"] = d.label.name();
  j["x1"] = d.bbox.x1();
  j["y1"] = d.bbox.y1();
  j["x2"] = d.bbox.x2();
  j["y2"] = d.bbox.y2();
  j["score"] = d.score;
  return j.dump();
}

Detection parse_detection_record(const std::string& line, std::string* study_id) {
  try {
    const nlohmann::json j = nlohmann::json::parse(line);
    if (study_id != nullptr) *study_id = j.value("study_id", "");
    return Detection{BBox(j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(),
                          j.at("y2").get<double>()),
                     PathologyLabel::parse(j.at("label").get<std::string>()), j.at("score").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadRequest, std::string("detection record: ") + e.what());
  }
}

}  // namespace cxr
