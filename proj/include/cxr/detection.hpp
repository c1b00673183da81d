#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxr/labels.hpp"

namespace cxr {

/// Axis-aligned box in pixel coordinates. Zero or negative extent is
/// rejected at construction.
class BBox {
 public:
  BBox(double x1, double y1, double x2, double y2);

  double x1() const { return x1_; }
  double y1() const { return y1_; }
  double x2() const { return x2_; }
  double y2() const { return y2_; }
  double width() const { return x2_ - x1_; }
  double height() const { return y2_ - y1_; }
  double area() const { return width() * height(); }
  double center_x() const { return x1_ + 0.5 * width(); }
  double center_y() const { return y1_ + 0.5 * height(); }

  friend bool operator==(const BBox&, const BBox&) = default;

 private:
  double x1_, y1_, x2_, y2_;
};

/// Bounding-box regression normalisers: targets are divided by these.
struct DeltaWeights {
  double x = 0.1;
  double y = 0.1;
  double w = 0.2;
  double h = 0.2;
};

struct DetectionConfig {
  std::array<double, 3> anchor_sizes{128.0, 256.0, 512.0};
  /// height / width; "2:1" is 2.0.
  std::array<double, 3> aspect_ratios{1.0, 2.0, 0.5};
  double nms_threshold = 0.7;
  std::size_t top_proposals_train = 2000;
  std::size_t top_proposals_infer = 300;
  DeltaWeights delta_weights{};
  double smooth_l1_beta = 1.0;
  /// Minimum score for a final detection to be emitted.
  double score_threshold = 0.5;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

struct Detection {
  BBox bbox;
  PathologyLabel label;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Anchor {
  BBox box;
  double size;
  double ratio;
};

double iou(const BBox& a, const BBox& b);

/// Nine anchors per cell (sizes x ratios), cell-major, centered at
/// ((i + 0.5) * stride, (j + 0.5) * stride). Area equals size^2 for every
/// ratio.
std::vector<Anchor> generate_anchors(int grid_w, int grid_h, double stride, const DetectionConfig& cfg = {});

/// Class-wise greedy NMS. Processing order is (score desc, input index asc);
/// a box is dropped when its IoU with an already-kept box of the same label
/// is strictly greater than `threshold`. Output keeps processing order.
std::vector<Detection> nms(std::span<const Detection> dets, double threshold);

enum class ProposalMode { Train, Infer };

std::vector<Detection> select_top_proposals(std::span<const Detection> dets, ProposalMode mode,
                                            const DetectionConfig& cfg = {});

struct BoxDeltas {
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
};

struct ImageBounds {
  double width;
  double height;
};

BoxDeltas encode_deltas(const BBox& gt, const BBox& anchor, const DeltaWeights& weights = {});

/// Inverse of encode_deltas, optionally clipped to [0,width] x [0,height].
/// Throws DegenerateResult when the decoded box has no area or is not
/// finite.
BBox decode_deltas(const BoxDeltas& t, const BBox& anchor, const DeltaWeights& weights = {},
                   std::optional<ImageBounds> bounds = std::nullopt);

double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);

/// The two pieces of smooth_l1, exposed so the kink can be audited.
namespace smooth_l1_branch {
double quadratic(double x, double beta);
double linear(double x, double beta);
}  // namespace smooth_l1_branch

/// Sum of smooth-L1 over the four regression coordinates.
double box_regression_loss(const BoxDeltas& predicted, const BoxDeltas& target, double beta = 1.0);
/// d(loss)/d(predicted), per coordinate.
BoxDeltas box_regression_grad(const BoxDeltas& predicted, const BoxDeltas& target, double beta = 1.0);

/// Line-delimited detection record {study_id,label,x1,y1,x2,y2,score}.
std::string detection_record(const std::string& study_id, const Detection& d);
Detection parse_detection_record(const std::string& line, std::string* study_id = nullptr);

}  // namespace cxr
