#pragma once

// Pinhole camera math and the depth <-> flow <-> E-flow conversion kernel.
//
// Conventions
//   * Extrinsics map world to camera: X_cam = R * X_world + T.
//   * Pixel coordinates are continuous with integer values at pixel centers.
//   * E-flow is the signed displacement of the source match along the
//     epipolar line, oriented so that it increases with inverse depth.
//
// Every function is a pure function of its arguments.

#include <Eigen/Core>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "epiflow/error.hpp"

namespace epiflow {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kEpsilonZ = 1e-6;
inline constexpr double kEpsilonBaseline = 1e-9;
inline constexpr double kEpsilonDenomPerPixel = 1e-8;

struct Pixel {
  double x = 0.0;
  double y = 0.0;

  Vec2 vec() const { return {x, y}; }
  Vec3 homogeneous() const { return {x, y, 1.0}; }
  static Pixel from(const Vec2& v) { return {v.x(), v.y()}; }
  bool operator==(const Pixel&) const = default;
};

struct CameraView {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();
  double depth_min = 0.0;
  double depth_max = 0.0;
  int width = 0;
  int height = 0;

  Vec3 center() const { return -R.transpose() * T; }

  // Throws kInvalidInput describing the first violated invariant.
  void validate(double rotation_tolerance = 1e-9) const {
    std::ostringstream why;
    if (!K.allFinite() || !R.allFinite() || !T.allFinite()) {
      why << "non-finite camera parameters";
    } else if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
      why << "intrinsic matrix is not upper-triangular";
    } else if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) {
      why << "focal lengths must be positive";
    } else if (K(2, 2) != 1.0) {
      why << "K[2][2] must be 1";
    } else if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > rotation_tolerance) {
      why << "rotation is not orthonormal";
    } else if (std::abs(R.determinant() - 1.0) > rotation_tolerance) {
      why << "rotation determinant is not +1";
    } else if (!(depth_min > 0.0) || !(depth_min < depth_max) || !std::isfinite(depth_max)) {
      why << "depth range must satisfy 0 < depth_min < depth_max";
    } else if (width < 0 || height < 0) {
      why << "negative image size";
    } else {
      return;
    }
    throw Error(ErrorCode::kInvalidInput, why.str());
  }

  // Camera for a raster downsampled by `factor`, where stage pixel i covers
  // full-resolution pixels [factor*i, factor*(i+1)).
  CameraView scaled(int factor) const {
    CameraView out = *this;
    const double s = factor;
    Mat3 S = Mat3::Identity();
    S(0, 0) = S(1, 1) = 1.0 / s;
    S(0, 2) = S(1, 2) = -(s - 1.0) / (2.0 * s);
    out.K = S * K;
    out.K(1, 0) = out.K(2, 0) = out.K(2, 1) = 0.0;
    out.K(2, 2) = 1.0;
    out.width = (width + factor - 1) / factor;
    out.height = (height + factor - 1) / factor;
    return out;
  }

  CameraView with_range(double dmin, double dmax) const {
    CameraView out = *this;
    out.depth_min = dmin;
    out.depth_max = dmax;
    return out;
  }

  // Mean ground-space size of one pixel at the given depth.
  double footprint(double depth) const { return depth * 2.0 / (K(0, 0) + K(1, 1)); }
};

// Depth range widened by factor x: (d_min / x, d_max * x).
inline CameraView widen_range(const CameraView& cam, double x) {
  return cam.with_range(cam.depth_min / x, cam.depth_max * x);
}

struct Projection {
  Pixel pixel;
  double depth = 0.0;
};

// World point seen at pixel p with the given depth. For a camera with
// identity pose this is depth * K^-1 * p~.
inline Vec3 reproject(const Pixel& p, double depth, const CameraView& cam) {
  require(std::isfinite(depth) && std::isfinite(p.x) && std::isfinite(p.y),
          ErrorCode::kInvalidInput, "reproject needs finite pixel and depth");
  const Vec3 ray = cam.K.triangularView<Eigen::Upper>().solve(p.homogeneous());
  return cam.R.transpose() * (depth * ray - cam.T);
}

inline Result<Projection> try_project(const Vec3& point, const CameraView& cam) {
  const Vec3 local = cam.R * point + cam.T;
  if (!(local.z() > kEpsilonZ)) return Result<Projection>::failure(ErrorCode::kBehindCamera);
  const Vec3 h = cam.K * local;
  return Projection{{h.x() / h.z(), h.y() / h.z()}, local.z()};
}

inline Projection project(const Vec3& point, const CameraView& cam) {
  return try_project(point, cam).value();
}

inline Vec2 flow_of_pair(const Pixel& p_ref, const Pixel& p_src) {
  return p_src.vec() - p_ref.vec();
}

inline double normalize_depth(double depth, double depth_min, double depth_max) {
  require(depth > 0.0 && std::isfinite(depth), ErrorCode::kInvalidInput,
          "normalize_depth needs a positive depth");
  const double inv_max = 1.0 / depth_max;
  return (1.0 / depth - inv_max) / (1.0 / depth_min - inv_max);
}

// Unit direction of the epipolar line in the source image plus the point on
// that line where E-flow is zero (the foot of the reference pixel on it).
struct EpipolarFrame {
  Vec2 direction = Vec2::UnitX();
  Pixel anchor;
  Pixel origin;

  Vec2 offset() const { return anchor.vec() - origin.vec(); }
  Pixel point_at(double eflow) const {
    const Vec2 off = offset();
    return Pixel::from(anchor.vec() + direction * (eflow - direction.dot(off)));
  }
};

inline double flow_to_eflow(const Vec2& flow, const EpipolarFrame& frame) {
  return frame.direction.dot(flow);
}

// Flow whose end point lies on the epipolar line at the given E-flow. When the
// reference pixel is on the line (anchor == origin) this is direction * eflow.
inline Vec2 eflow_to_flow(double eflow, const EpipolarFrame& frame) {
  return frame.point_at(eflow).vec() - frame.origin.vec();
}

enum class Branch { kX, kY };

struct Triangulation {
  double depth = 0.0;
  double depth_x = std::numeric_limits<double>::quiet_NaN();
  double depth_y = std::numeric_limits<double>::quiet_NaN();
  Branch branch = Branch::kX;
};

// Geometry of one (reference, source) pair expressed in the reference frame.
class StereoPair {
 public:
  StereoPair(const CameraView& ref, const CameraView& src)
      : ref_K_inv_(ref.K.inverse()),
        src_K_(src.K),
        src_K_inv_(src.K.inverse()),
        R_(src.R * ref.R.transpose()),
        T_(src.T - src.R * ref.R.transpose() * ref.T),
        eps_denom_(kEpsilonDenomPerPixel * std::max(1, std::max(src.width, src.height))) {
    infinity_map_ = src_K_ * R_ * ref_K_inv_;
    baseline_image_ = src_K_ * T_;
  }

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return T_; }
  double baseline() const { return T_.norm(); }
  double epsilon_denominator() const { return eps_denom_; }

  Result<Projection> project_depth(const Pixel& p, double depth) const {
    if (!(depth > 0.0) || !std::isfinite(depth)) return Result<Projection>::failure(ErrorCode::kInvalidInput);
    const Vec3 h = depth * (infinity_map_ * p.homogeneous()) + baseline_image_;
    // h = K_s * X_s, and K_s has unit last row, so h.z() is the source depth.
    if (!(h.z() > kEpsilonZ)) return Result<Projection>::failure(ErrorCode::kBehindCamera);
    return Projection{{h.x() / h.z(), h.y() / h.z()}, h.z()};
  }

  Result<Vec2> depth_to_flow(const Pixel& p, double depth) const {
    const auto proj = project_depth(p, depth);
    if (!proj) return Result<Vec2>::failure(proj.code());
    return flow_of_pair(p, proj->pixel);
  }

  // Closed-form depth from a matched source position. Solving
  //   d_s * b = d * R * a + T,  a = K_r^-1 p~_r,  b = K_s^-1 p~_s  (b_z = 1)
  // for d with the x or the y row gives
  //   d_x = (t_x - t_z b_x) / (u_z b_x - u_x),  d_y = (t_y - t_z b_y) / (u_z b_y - u_y)
  // with u = R a. The row of the larger flow component is used; ties go to x.
  Result<Triangulation> flow_to_depth(const Pixel& p, const Vec2& flow) const {
    if (!flow.allFinite()) return Result<Triangulation>::failure(ErrorCode::kInvalidInput);
    const Vec3 u = R_ * (ref_K_inv_ * p.homogeneous());
    const Vec3 b = src_K_inv_ * Vec3(p.x + flow.x(), p.y + flow.y(), 1.0);
    const double bx = b.x() / b.z();
    const double by = b.y() / b.z();
    const double den_x = u.z() * bx - u.x();
    const double den_y = u.z() * by - u.y();
    Triangulation tri;
    if (std::abs(den_x) > eps_denom_) tri.depth_x = (T_.x() - T_.z() * bx) / den_x;
    if (std::abs(den_y) > eps_denom_) tri.depth_y = (T_.y() - T_.z() * by) / den_y;
    tri.branch = std::abs(flow.x()) >= std::abs(flow.y()) ? Branch::kX : Branch::kY;
    tri.depth = tri.branch == Branch::kX ? tri.depth_x : tri.depth_y;
    if (std::isnan(tri.depth)) return Result<Triangulation>::failure(ErrorCode::kDegenerateTriangulation);
    if (!(tri.depth > 0.0)) return Result<Triangulation>::failure(ErrorCode::kNegativeDepth);
    return tri;
  }

  // The source image of the reference ray is p(rho) ~ A + rho * B with
  // rho = 1/depth, A = K_s R K_r^-1 p~ and B = K_s T, so
  // dp/drho = (B_xy A_z - A_xy B_z) / h_z^2: a fixed direction for every
  // visible depth.
  Result<EpipolarFrame> epipolar_frame(const Pixel& p) const {
    if (!(baseline() > kEpsilonBaseline)) return Result<EpipolarFrame>::failure(ErrorCode::kNoEpipolarGeometry);
    const Vec3 a = infinity_map_ * p.homogeneous();
    const Vec3& bt = baseline_image_;
    const Vec2 n(bt.x() * a.z() - a.x() * bt.z(), bt.y() * a.z() - a.y() * bt.z());
    const double scale = a.norm() * bt.norm();
    if (!(n.norm() > 1e-12 * scale)) return Result<EpipolarFrame>::failure(ErrorCode::kDegenerateTriangulation);
    EpipolarFrame frame;
    frame.direction = n.normalized();
    frame.origin = p;
    const Vec3 line = a.cross(bt);
    const double nn = line.x() * line.x() + line.y() * line.y();
    const double dist = line.dot(p.homogeneous()) / nn;
    frame.anchor = {p.x - dist * line.x(), p.y - dist * line.y()};
    return frame;
  }

  Result<double> depth_to_eflow(const Pixel& p, double depth) const {
    const auto frame = epipolar_frame(p);
    if (!frame) return Result<double>::failure(frame.code());
    return depth_to_eflow(*frame, depth);
  }

  Result<double> depth_to_eflow(const EpipolarFrame& frame, double depth) const {
    const auto flow = depth_to_flow(frame.origin, depth);
    if (!flow) return Result<double>::failure(flow.code());
    return flow_to_eflow(*flow, frame);
  }

  Result<double> eflow_to_depth(const Pixel& p, double eflow) const {
    const auto frame = epipolar_frame(p);
    if (!frame) return Result<double>::failure(frame.code());
    return eflow_to_depth(*frame, eflow);
  }

  Result<double> eflow_to_depth(const EpipolarFrame& frame, double eflow) const {
    if (!std::isfinite(eflow)) return Result<double>::failure(ErrorCode::kInvalidInput);
    const auto tri = flow_to_depth(frame.origin, eflow_to_flow(eflow, frame));
    if (!tri) return Result<double>::failure(tri.code());
    return tri->depth;
  }

 private:
  Mat3 ref_K_inv_;
  Mat3 src_K_;
  Mat3 src_K_inv_;
  Mat3 R_;
  Vec3 T_;
  Mat3 infinity_map_;
  Vec3 baseline_image_;
  double eps_denom_;
};

inline Vec2 depth_to_flow(const Pixel& p_ref, double depth, const CameraView& ref, const CameraView& src) {
  return StereoPair(ref, src).depth_to_flow(p_ref, depth).value();
}

inline Triangulation flow_to_depth(const Pixel& p_ref, const Vec2& flow, const CameraView& ref,
                                   const CameraView& src) {
  return StereoPair(ref, src).flow_to_depth(p_ref, flow).value();
}

inline EpipolarFrame epipolar_frame(const Pixel& p_ref, const CameraView& ref, const CameraView& src) {
  return StereoPair(ref, src).epipolar_frame(p_ref).value();
}

inline double depth_to_eflow(const Pixel& p_ref, double depth, const CameraView& ref, const CameraView& src) {
  return StereoPair(ref, src).depth_to_eflow(p_ref, depth).value();
}

inline double eflow_to_depth(const Pixel& p_ref, double eflow, const CameraView& ref, const CameraView& src) {
  return StereoPair(ref, src).eflow_to_depth(p_ref, eflow).value();
}

// Rotation that orients a camera at `eye` to look at `target` with image y
// pointing along `down`.
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& down = Vec3::UnitY()) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  return R;
}

}  // namespace epiflow
