#include "cxr/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cxr/error.hpp"

namespace cxr {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kEdgeSlack = 1e-9;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

/// Bilinear sample at real coordinates already known to lie inside the grid.
double bilinear(const Image8& img, double sx, double sy) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0;
  const double fy = sy - y0;
  const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
  const double bottom = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

double source_coord(int dst, int dst_extent, int src_extent) {
  if (dst_extent == 1) return (src_extent - 1) / 2.0;
  return static_cast<double>(dst) * (src_extent - 1) / (dst_extent - 1);
}

double fold_line_angle(double degrees) {
  while (degrees > 90.0) degrees -= 180.0;
  while (degrees <= -90.0) degrees += 180.0;
  return degrees;
}

}  // namespace

bool ResolutionSet::contains(int side) const { return std::find(sides.begin(), sides.end(), side) != sides.end(); }

Image8 resize(const Image8& img, int side) {
  if (img.empty() || img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error(Errc::EmptyImage, "resize of empty image");
  }
  if (side < 1) throw Error(Errc::InvalidArgument, "side must be >= 1");

  const double scale = static_cast<double>(side) / std::max(img.width, img.height);
  const int content_w = std::clamp(static_cast<int>(std::lround(img.width * scale)), 1, side);
  const int content_h = std::clamp(static_cast<int>(std::lround(img.height * scale)), 1, side);
  const int off_x = (side - content_w) / 2;
  const int off_y = (side - content_h) / 2;

  Image8 out(side, side, 0);
  for (int y = 0; y < content_h; ++y) {
    const double sy = source_coord(y, content_h, img.height);
    for (int x = 0; x < content_w; ++x) {
      const double sx = source_coord(x, content_w, img.width);
      out.at(off_x + x, off_y + y) = to_byte(bilinear(img, sx, sy));
    }
  }
  return out;
}

RotationEstimate estimate_rotation(const KeypointSet& kp) {
  const double dx = kp.right_clavicle.x - kp.left_clavicle.x;
  const double dy = kp.right_clavicle.y - kp.left_clavicle.y;
  if (dx == 0.0 && dy == 0.0) throw Error(Errc::DegenerateKeypoints, "coincident clavicle points");

  RotationEstimate est;
  est.angle_degrees = fold_line_angle(std::atan2(dy, dx) / kDegToRad);

  const auto& spine = kp.spinous_process;
  if (spine.size() < 2) {
    est.low_confidence = true;
    est.spine_disagreement_degrees = 90.0;
    return est;
  }
  double mx = 0.0, my = 0.0;
  for (const Point& p : spine) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(spine.size());
  my /= static_cast<double>(spine.size());
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const Point& p : spine) {
    sxx += (p.x - mx) * (p.x - mx);
    syy += (p.y - my) * (p.y - my);
    sxy += (p.x - mx) * (p.y - my);
  }
  if (sxx + syy == 0.0) {
    est.low_confidence = true;
    est.spine_disagreement_degrees = 90.0;
    return est;
  }
  const double spine_axis = 0.5 * std::atan2(2.0 * sxy, sxx - syy) / kDegToRad;
  const double disagreement = std::abs(fold_line_angle(spine_axis - (est.angle_degrees + 90.0)));
  est.spine_disagreement_degrees = disagreement;
  est.low_confidence = disagreement >= kSpineConsistencyLimitDegrees;
  return est;
}

Point rotate_point(Point p, double angle_degrees, int width, int height) {
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double c = std::cos(angle_degrees * kDegToRad);
  const double s = std::sin(angle_degrees * kDegToRad);
  const double dx = p.x - cx;
  const double dy = p.y - cy;
  return {c * dx + s * dy + cx, -s * dx + c * dy + cy};
}

KeypointSet rotate_keypoints(const KeypointSet& kp, double angle_degrees, int width, int height) {
  KeypointSet out;
  out.left_clavicle = rotate_point(kp.left_clavicle, angle_degrees, width, height);
  out.right_clavicle = rotate_point(kp.right_clavicle, angle_degrees, width, height);
  for (const Point& p : kp.spinous_process) out.spinous_process.push_back(rotate_point(p, angle_degrees, width, height));
  return out;
}

Image8 apply_rotation(const Image8& img, double angle_degrees) {
  if (img.empty()) throw Error(Errc::EmptyImage, "rotation of empty image");
  if (!(std::abs(angle_degrees) < 90.0)) throw Error(Errc::InvalidArgument, "rotation angle must be in (-90, 90)");
  if (angle_degrees == 0.0) return img;

  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  const double c = std::cos(angle_degrees * kDegToRad);
  const double s = std::sin(angle_degrees * kDegToRad);
  const double max_x = img.width - 1 + kEdgeSlack;
  const double max_y = img.height - 1 + kEdgeSlack;

  Image8 out(img.width, img.height, 0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Inverse map: source = R(angle) * (dst - center) + center.
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = c * dx - s * dy + cx;
      const double sy = s * dx + c * dy + cy;
      if (sx < -kEdgeSlack || sy < -kEdgeSlack || sx > max_x || sy > max_y) continue;
      out.at(x, y) = to_byte(bilinear(img, sx, sy));
    }
  }
  return out;
}

std::array<Image8, 3> multi_resolution(const Image8& img, const ResolutionSet& rs) {
  return {resize(img, rs.sides[0]), resize(img, rs.sides[1]), resize(img, rs.sides[2])};
}

KeypointSet flip_horizontal(const KeypointSet& kp, int width) {
  auto mirror = [width](Point p) { return Point{(width - 1) - p.x, p.y}; };
  KeypointSet out;
  out.left_clavicle = mirror(kp.right_clavicle);
  out.right_clavicle = mirror(kp.left_clavicle);
  for (const Point& p : kp.spinous_process) out.spinous_process.push_back(mirror(p));
  return out;
}

Image8 draw_keypoints(const Image8& img, const KeypointSet& kp) {
  Image8 out = img;
  auto cross = [&out](Point p) {
    const int px = static_cast<int>(std::lround(p.x));
    const int py = static_cast<int>(std::lround(p.y));
    for (int d = -4; d <= 4; ++d) {
      if (px + d >= 0 && px + d < out.width && py >= 0 && py < out.height) out.at(px + d, py) = 255;
      if (py + d >= 0 && py + d < out.height && px >= 0 && px < out.width) out.at(px, py + d) = 255;
    }
  };
  cross(kp.left_clavicle);
  cross(kp.right_clavicle);
  for (const Point& p : kp.spinous_process) cross(p);
  return out;
}

}  // namespace cxr
