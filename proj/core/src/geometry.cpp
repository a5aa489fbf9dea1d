#include "pct/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace pct::geom {

Mat3 Mat3::transposed() const {
  Mat3 t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
  return t;
}

double Mat3::determinant() const {
  const auto& a = m;
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out(r, c) = a(r, 0) * b(0, c) + a(r, 1) * b(1, c) + a(r, 2) * b(2, c);
  return out;
}

Vec3 operator*(const Mat3& a, const Vec3& v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, const Vec3& v) { return {s * v.x, s * v.y, s * v.z}; }

Mat3 rotation_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
  return r;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0))
    throw InvalidArgument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw InvalidArgument("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw InvalidArgument("intrinsics: principal point outside image");
}

void CameraExtrinsics::validate() const {
  constexpr double tol = 1e-6;
  const Mat3 rtr = rotation.transposed() * rotation;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (std::abs(rtr(r, c) - (r == c ? 1.0 : 0.0)) > tol)
        throw InvalidExtrinsics("extrinsics: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > tol)
    throw InvalidExtrinsics("extrinsics: rotation determinant is not +1");
  if (!std::isfinite(translation.x) || !std::isfinite(translation.y) ||
      !std::isfinite(translation.z))
    throw InvalidExtrinsics("extrinsics: non-finite translation");
}

void CameraRig::validate() const {
  if (cameras.size() < 2) throw InvalidArgument("rig: at least two cameras required");
  for (const auto& cam : cameras) {
    cam.intrinsics.validate();
    cam.extrinsics.validate();
  }
}

void BevGridSpec::validate() const {
  constexpr double tol = 1e-9;
  if (h <= 0 || w <= 0 || num_classes <= 0 || !(resolution > 0))
    throw InvalidArgument("grid: non-positive dimensions");
  if (std::abs(h * resolution - (x_max - x_min)) > tol ||
      std::abs(w * resolution - (y_max - y_min)) > tol)
    throw InvalidArgument("grid: cell counts disagree with extent/resolution");
  if (!contains(0.0, 0.0)) throw InvalidArgument("grid: ego origin outside extent");
}

std::optional<PixelHit> project_ego_to_image(const Vec3& point,
                                             const CameraIntrinsics& intr,
                                             const CameraExtrinsics& extr) {
  extr.validate();
  const Vec3 p = extr.rotation.transposed() * (point - extr.translation);
  if (!(p.z > kMinDepth)) return std::nullopt;
  const double u = intr.fx * p.x / p.z + intr.cx;
  const double v = intr.fy * p.y / p.z + intr.cy;
  if (!(u >= 0 && u < intr.width && v >= 0 && v < intr.height)) return std::nullopt;
  return PixelHit{u, v, p.z};
}

CellCenter cell_center(const BevGridSpec& grid, int i, int j) {
  if (i < 0 || i >= grid.h || j < 0 || j >= grid.w)
    throw IndexError("cell_center: index (" + std::to_string(i) + ", " +
                     std::to_string(j) + ") out of range");
  return {grid.x_min + (i + 0.5) * grid.resolution,
          grid.y_min + (j + 0.5) * grid.resolution};
}

std::optional<std::pair<int, int>> cell_of(const BevGridSpec& grid, double x, double y) {
  if (!grid.contains(x, y)) return std::nullopt;
  const int i = std::min(grid.h - 1, static_cast<int>(std::floor((x - grid.x_min) / grid.resolution)));
  const int j = std::min(grid.w - 1, static_cast<int>(std::floor((y - grid.y_min) / grid.resolution)));
  return std::pair{i, j};
}

BoolGrid visibility_mask(const BevGridSpec& grid, const Camera& cam) {
  cam.intrinsics.validate();
  cam.extrinsics.validate();
  BoolGrid mask(grid.h, grid.w, 0);
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      const auto c = cell_center(grid, i, j);
      mask.at(i, j) =
          project_ego_to_image({c.x, c.y, 0.0}, cam.intrinsics, cam.extrinsics) ? 1 : 0;
    }
  }
  return mask;
}

BoolGrid exclusive_visibility_mask(const BevGridSpec& grid, const CameraRig& rig,
                                   const DroppedSet& dropped) {
  const int n = rig.size();
  for (int d : dropped)
    if (d < 0 || d >= n)
      throw InvalidArgument("exclusive_visibility_mask: camera index " + std::to_string(d) +
                            " out of range");
  if (static_cast<int>(dropped.size()) >= n)
    throw InvalidArgument("exclusive_visibility_mask: cannot drop every camera");

  BoolGrid seen_by_dropped(grid.h, grid.w, 0);
  BoolGrid seen_by_kept(grid.h, grid.w, 0);
  if (dropped.empty()) return seen_by_dropped;
  for (int k = 0; k < n; ++k) {
    auto& target = dropped.contains(k) ? seen_by_dropped : seen_by_kept;
    const BoolGrid vis = visibility_mask(grid, rig[k]);
    for (size_t idx = 0; idx < vis.size(); ++idx) target.data[idx] |= vis.data[idx];
  }
  for (size_t idx = 0; idx < seen_by_dropped.size(); ++idx)
    seen_by_dropped.data[idx] = seen_by_dropped.data[idx] && !seen_by_kept.data[idx];
  return seen_by_dropped;
}

Camera make_camera(double yaw_deg, double pitch_deg, double height_m, double hfov_deg,
                   int image_width, int image_height, Vec3 offset) {
  constexpr double deg = std::numbers::pi / 180.0;
  Camera cam;
  const double f = 0.5 * image_width / std::tan(0.5 * hfov_deg * deg);
  cam.intrinsics = {f, f, 0.5 * image_width, 0.5 * image_height, image_width, image_height};

  // Camera axes expressed in ego frame at zero yaw/pitch: right = -y,
  // down = -z, forward = +x.
  Mat3 base;
  base.m = {0, 0, 1, -1, 0, 0, 0, -1, 0};
  const double c = std::cos(pitch_deg * deg), s = std::sin(pitch_deg * deg);
  Mat3 pitch;
  pitch.m = {1, 0, 0, 0, c, s, 0, -s, c};
  cam.extrinsics.rotation = rotation_z(yaw_deg * deg) * base * pitch;
  cam.extrinsics.translation = offset + Vec3{0, 0, height_m};
  return cam;
}

CameraRig make_default_rig(int image_height, int image_width) {
  CameraRig rig;
  for (double yaw : {0.0, 90.0, 180.0, 270.0})
    rig.cameras.push_back(make_camera(yaw, 12.0, 1.6, 100.0, image_width, image_height));
  return rig;
}

BevGridSpec default_grid() { return {}; }

}  // namespace pct::geom
