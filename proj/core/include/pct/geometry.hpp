#pragma once

// Pinhole cameras, the BEV grid layout and per-cell camera visibility.
//
// Conventions:
//  * Ego frame: x forward, y left, z up, meters. The ground is z = 0.
//  * Camera frame follows OpenCV: x right, y down, z forward.
//  * Extrinsics map camera-frame vectors into the ego frame
//    (p_ego = R * p_cam + t). Projection applies the inverse.
//  * Image coordinates are continuous; pixel (row r, col c) covers
//    [c, c+1) x [r, r+1), so its center is (c + 0.5, r + 0.5).
//  * BEV grid row i runs along ego x, column j along ego y. Cell (0, 0) is
//    the minimum-x, minimum-y corner.

#include <array>
#include <optional>
#include <set>
#include <vector>

#include "pct/common.hpp"

namespace pct::geom {

struct Vec3 {
  double x = 0;
  double y = 0;
  double z = 0;
  bool operator==(const Vec3&) const = default;
};

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }
  bool operator==(const Mat3&) const = default;

  static Mat3 identity() { return {}; }
  Mat3 transposed() const;
  double determinant() const;
};

Mat3 operator*(const Mat3& a, const Mat3& b);
Vec3 operator*(const Mat3& a, const Vec3& v);
Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(double s, const Vec3& v);

/// Rotation about the ego z axis by `rad` (counter-clockwise seen from above).
Mat3 rotation_z(double rad);

struct CameraIntrinsics {
  double fx = 0;
  double fy = 0;
  double cx = 0;
  double cy = 0;
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument when fx/fy are non-positive or the principal
  /// point lies outside the image.
  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

struct CameraExtrinsics {
  Mat3 rotation;     // camera -> ego
  Vec3 translation;  // camera center in ego frame

  /// Throws InvalidExtrinsics unless the rotation is orthonormal with
  /// determinant +1 (tolerance 1e-6).
  void validate() const;
  bool operator==(const CameraExtrinsics&) const = default;
};

struct Camera {
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  bool operator==(const Camera&) const = default;
};

struct CameraRig {
  std::vector<Camera> cameras;

  int size() const { return static_cast<int>(cameras.size()); }
  const Camera& operator[](int i) const { return cameras.at(i); }
  Camera& operator[](int i) { return cameras.at(i); }
  void validate() const;
  bool operator==(const CameraRig&) const = default;
};

struct BevGridSpec {
  int h = 64;
  int w = 64;
  int num_classes = 4;
  double x_min = -16;
  double x_max = 16;
  double y_min = -16;
  double y_max = 16;
  double resolution = 0.5;

  void validate() const;
  bool contains(double x, double y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  bool operator==(const BevGridSpec&) const = default;
};

using DroppedSet = std::set<int>;

struct PixelHit {
  double u = 0;
  double v = 0;
  double depth = 0;
};

inline constexpr double kMinDepth = 1e-6;

/// Projects an ego-frame point into the image. Returns a hit iff the point
/// is in front of the camera (depth > 1e-6 m) and lands inside
/// [0, width) x [0, height).
std::optional<PixelHit> project_ego_to_image(const Vec3& point,
                                             const CameraIntrinsics& intr,
                                             const CameraExtrinsics& extr);

struct CellCenter {
  double x = 0;
  double y = 0;
};

CellCenter cell_center(const BevGridSpec& grid, int i, int j);

/// Cell containing an ego-frame ground point, if inside the extent.
std::optional<std::pair<int, int>> cell_of(const BevGridSpec& grid, double x,
                                           double y);

/// True at cells whose center (z = 0) projects into the camera image.
BoolGrid visibility_mask(const BevGridSpec& grid, const Camera& cam);

/// Cells seen by at least one dropped camera and by no kept camera.
BoolGrid exclusive_visibility_mask(const BevGridSpec& grid,
                                   const CameraRig& rig,
                                   const DroppedSet& dropped);

/// Pinhole camera from yaw about ego z, downward pitch, mounting height and
/// horizontal field of view. Square pixels, principal point at image center.
Camera make_camera(double yaw_deg, double pitch_deg, double height_m,
                   double hfov_deg, int image_width, int image_height,
                   Vec3 offset = {});

/// Default desk-scale rig: four cameras at 1.6 m, yaws 0/90/180/270 deg,
/// 100 deg HFOV, 96x192 images.
CameraRig make_default_rig(int image_height = 96, int image_width = 192);

/// Default 64x64 grid over [-16, 16]^2 m at 0.5 m and four classes.
BevGridSpec default_grid();

}  // namespace pct::geom
