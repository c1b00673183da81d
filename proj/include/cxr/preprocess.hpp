#pragma once

#include <array>
#include <vector>

#include "cxr/image.hpp"

namespace cxr {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Anatomical landmarks driving rotation correction, in pixel coordinates.
struct KeypointSet {
  Point left_clavicle;
  Point right_clavicle;
  std::vector<Point> spinous_process;  // ordered top to bottom, >= 2 points
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

struct ResolutionSet {
  std::array<int, 3> sides{224, 320, 512};

  bool contains(int side) const;
  friend bool operator==(const ResolutionSet&, const ResolutionSet&) = default;
};

/// Letterboxed square resize: content scaled to fit `side`, centered, with
/// zero bands. Bilinear sampling uses the align-corners mapping so image
/// corners land exactly on output corners.
Image8 resize(const Image8& img, int side);

/// Clavicle-line tilt. Positive angle means the image is tilted clockwise
/// (the line descends to the right in y-down coordinates); correction
/// applies the negated angle.
struct RotationEstimate {
  double angle_degrees = 0.0;
  /// Spine axis disagrees with the clavicle-line normal by >= 10 degrees.
  bool low_confidence = false;
  double spine_disagreement_degrees = 0.0;
};

inline constexpr double kSpineConsistencyLimitDegrees = 10.0;

RotationEstimate estimate_rotation(const KeypointSet& kp);

/// Rotates about the image center by -angle_degrees, bilinear, zero fill,
/// same dimensions.
Image8 apply_rotation(const Image8& img, double angle_degrees);

/// Where apply_rotation(img, angle_degrees) moves a point of a
/// width x height image.
Point rotate_point(Point p, double angle_degrees, int width, int height);
KeypointSet rotate_keypoints(const KeypointSet& kp, double angle_degrees, int width, int height);

std::array<Image8, 3> multi_resolution(const Image8& img, const ResolutionSet& rs = {});

KeypointSet flip_horizontal(const KeypointSet& kp, int width);

/// Debug overlay: crosses at every landmark, written over a copy of img.
Image8 draw_keypoints(const Image8& img, const KeypointSet& kp);

}  // namespace cxr
