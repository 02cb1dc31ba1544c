#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "followme/errors.hpp"

namespace followme::tracking {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

using PointCloud3 = std::vector<Vec3>;

// Maps any angle into (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::fmod(a + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  if (w <= -kPi) w = kPi;
  return w;
}

// Camera frame: x forward, y left, z up. The heading of a point is the
// angle from the forward axis, positive to the left.
inline double bearing(const Vec3& p_cam) {
  return wrap_angle(std::atan2(p_cam.y(), p_cam.x()));
}

inline std::optional<Vec3> centroid(const PointCloud3& cloud) {
  if (cloud.empty()) return std::nullopt;
  Vec3 sum = Vec3::Zero();
  for (const auto& p : cloud) {
    if (!p.allFinite()) {
      throw InvalidInputError("centroid: non-finite point coordinate");
    }
    sum += p;
  }
  return sum / static_cast<double>(cloud.size());
}

// ---------------------------------------------------------------------------
// Rigid transform

// Rigid camera-to-map transform as a validated 4x4 homogeneous matrix.
class Transform3 {
 public:
  Transform3() : m_(Eigen::Matrix4d::Identity()) {}

  explicit Transform3(const Eigen::Matrix4d& m) : m_(m) {
    const Mat3 r = m_.topLeftCorner<3, 3>();
    constexpr double tol = 1e-9;
    if (!m_.allFinite()) {
      throw InvalidInputError("Transform3: non-finite matrix");
    }
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) {
      throw InvalidInputError("Transform3: rotation block not orthonormal");
    }
    if (std::abs(r.determinant() - 1.0) > tol) {
      throw InvalidInputError("Transform3: rotation determinant must be +1");
    }
    const Eigen::RowVector4d last = m_.row(3);
    if (std::abs(last(0)) > tol || std::abs(last(1)) > tol ||
        std::abs(last(2)) > tol || std::abs(last(3) - 1.0) > tol) {
      throw InvalidInputError("Transform3: last row must be (0,0,0,1)");
    }
  }

  // Pose on the ground plane: translation (x, y, 0) and rotation yaw about z.
  static Transform3 planar(double x, double y, double yaw) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    m(0, 0) = c;
    m(0, 1) = -s;
    m(1, 0) = s;
    m(1, 1) = c;
    m(0, 3) = x;
    m(1, 3) = y;
    return Transform3(m);
  }

  Transform3 inverse() const {
    Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
    const Mat3 rt = m_.topLeftCorner<3, 3>().transpose();
    inv.topLeftCorner<3, 3>() = rt;
    inv.topRightCorner<3, 1>() = -rt * m_.topRightCorner<3, 1>();
    return Transform3(inv);
  }

  Vec3 apply(const Vec3& p) const {
    return m_.topLeftCorner<3, 3>() * p + m_.topRightCorner<3, 1>();
  }

  const Eigen::Matrix4d& matrix() const { return m_; }

 private:
  Eigen::Matrix4d m_;
};

// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
inline Transform3 compose(const Transform3& a, const Transform3& b) {
  return Transform3(a.matrix() * b.matrix());
}

// ---------------------------------------------------------------------------
// Constant-velocity Kalman filter

struct KalmanParams {
  double q = 0.5;   // process noise intensity (white-noise acceleration)
  double r = 0.05;  // position measurement noise std, meters
  double t_exp = 3.0;
  double initial_velocity_std = 1.0;
};

// Position+velocity state in the camera frame. Expires when no measurement
// arrived for t_exp seconds.
struct TrackState {
  Vec6 state = Vec6::Zero();  // px, py, pz, vx, vy, vz
  Mat6 covariance = Mat6::Identity();
  double last_update = 0.0;
  double t_exp = 3.0;

  Vec3 position() const { return state.head<3>(); }
  Vec3 velocity() const { return state.tail<3>(); }
  bool valid(double now) const { return now - last_update <= t_exp; }
};

inline bool is_valid_covariance(const Mat6& p, double tol = 1e-9) {
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > tol) return false;
  Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (p + p.transpose()));
  return es.eigenvalues().minCoeff() >= -tol;
}

inline TrackState kf_init(const Vec3& z, double now,
                          const KalmanParams& params) {
  if (!z.allFinite()) {
    throw InvalidInputError("kf_init: non-finite measurement");
  }
  TrackState t;
  t.state.head<3>() = z;
  t.state.tail<3>().setZero();
  t.covariance = Mat6::Zero();
  const double pos_var = params.r * params.r;
  const double vel_var = params.initial_velocity_std *
                         params.initial_velocity_std;
  t.covariance.topLeftCorner<3, 3>() = pos_var * Mat3::Identity();
  t.covariance.bottomRightCorner<3, 3>() = vel_var * Mat3::Identity();
  t.last_update = now;
  t.t_exp = params.t_exp;
  return t;
}

inline TrackState kf_predict(const TrackState& t, double dt,
                             const KalmanParams& params) {
  if (!(dt >= 0.0)) {
    throw InvalidInputError("kf_predict: dt must be non-negative");
  }
  Mat6 f = Mat6::Identity();
  f.topRightCorner<3, 3>() = dt * Mat3::Identity();
  Mat6 qm = Mat6::Zero();
  const double dt2 = dt * dt;
  const double dt3 = dt2 * dt;
  qm.topLeftCorner<3, 3>() = (params.q * dt3 / 3.0) * Mat3::Identity();
  qm.topRightCorner<3, 3>() = (params.q * dt2 / 2.0) * Mat3::Identity();
  qm.bottomLeftCorner<3, 3>() = qm.topRightCorner<3, 3>();
  qm.bottomRightCorner<3, 3>() = (params.q * dt) * Mat3::Identity();

  TrackState out = t;
  out.state = f * t.state;
  Mat6 p = f * t.covariance * f.transpose() + qm;
  out.covariance = 0.5 * (p + p.transpose());
  return out;
}

// Rigidly re-expresses the state in a new frame (ego-motion compensation):
// position is transformed, velocity rotated, covariance congruence-mapped.
// Needed whenever the camera itself moved between filter steps.
inline TrackState kf_rebase(const TrackState& t,
                            const Transform3& old_to_new) {
  const Mat3 rot = old_to_new.matrix().topLeftCorner<3, 3>();
  TrackState out = t;
  out.state.head<3>() = old_to_new.apply(t.position());
  out.state.tail<3>() = rot * t.velocity();
  Mat6 g = Mat6::Zero();
  g.topLeftCorner<3, 3>() = rot;
  g.bottomRightCorner<3, 3>() = rot;
  const Mat6 p = g * t.covariance * g.transpose();
  out.covariance = 0.5 * (p + p.transpose());
  return out;
}

// Position-only measurement update in Joseph form; a non-finite measurement
// is dropped and the state passes through unchanged.
inline TrackState kf_update(const TrackState& t, const Vec3& z, double now,
                            const KalmanParams& params) {
  if (!z.allFinite()) return t;
  Eigen::Matrix<double, 3, 6> h = Eigen::Matrix<double, 3, 6>::Zero();
  h.leftCols<3>() = Mat3::Identity();
  const Mat3 rm = (params.r * params.r) * Mat3::Identity();

  const Vec3 innovation = z - h * t.state;
  const Mat3 s = h * t.covariance * h.transpose() + rm;
  const Eigen::Matrix<double, 6, 3> k =
      t.covariance * h.transpose() * s.inverse();

  TrackState out = t;
  out.state = t.state + k * innovation;
  const Mat6 ikh = Mat6::Identity() - k * h;
  Mat6 p = ikh * t.covariance * ikh.transpose() + k * rm * k.transpose();
  out.covariance = 0.5 * (p + p.transpose());
  out.last_update = now;
  return out;
}

// ---------------------------------------------------------------------------
// Map-frame goal

struct MapPose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // (-pi, pi]
};

struct GoalPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // (-pi, pi]
};

inline Vec3 to_map(const Vec3& p_cam, const Transform3& camera_to_map) {
  return camera_to_map.apply(p_cam);
}

inline Vec3 to_map(const TrackState& t, const Transform3& camera_to_map) {
  return camera_to_map.apply(t.position());
}

// Projects the map-frame position onto the ground plane and derives the
// heading from where the target sits in the camera frame. A target on the
// camera's vertical axis has no defined heading, so no goal is produced.
inline std::optional<GoalPose> make_goal(const Vec3& p_map,
                                         const Vec3& p_cam) {
  if (!p_map.allFinite() || !p_cam.allFinite()) {
    throw InvalidInputError("make_goal: non-finite input");
  }
  constexpr double eps = 1e-9;
  if (p_cam.x() * p_cam.x() + p_cam.y() * p_cam.y() < eps * eps) {
    return std::nullopt;
  }
  GoalPose g;
  g.x = p_map.x();
  g.y = p_map.y();
  g.heading = bearing(p_cam);
  return g;
}

// ---------------------------------------------------------------------------
// Tracker

// Owns the filter lifecycle for the single followed person: initialization on
// first sight, prediction between frames, and a fresh start (zero velocity,
// inflated covariance) when a measurement arrives after the track expired.
class TargetTracker {
 public:
  explicit TargetTracker(const KalmanParams& params = {}) : params_(params) {
    if (!(params.q >= 0.0) || !(params.r > 0.0) || !(params.t_exp > 0.0) ||
        !(params.initial_velocity_std >= 0.0)) {
      throw InvalidInputError("TargetTracker: invalid filter parameters");
    }
  }

  // Prediction-only advance for frames without a target measurement.
  void advance(double now) {
    if (!track_) return;
    if (now < propagated_to_) {
      throw InvalidInputError("TargetTracker: time moved backwards");
    }
    *track_ = kf_predict(*track_, now - propagated_to_, params_);
    propagated_to_ = now;
  }

  // Advances to `now`, then folds in a camera-frame position measurement.
  void observe(const Vec3& z_cam, double now) {
    if (!z_cam.allFinite()) {
      throw InvalidInputError("TargetTracker: non-finite measurement");
    }
    if (!track_ || !track_->valid(now)) {
      track_ = kf_init(z_cam, now, params_);
      propagated_to_ = now;
      return;
    }
    advance(now);
    *track_ = kf_update(*track_, z_cam, now, params_);
  }

  // Re-expresses the filter in a new camera frame after the camera moved.
  void rebase(const Transform3& old_to_new) {
    if (!track_) return;
    *track_ = kf_rebase(*track_, old_to_new);
  }

  bool initialized() const { return track_.has_value(); }

  bool valid(double now) const { return track_ && track_->valid(now); }

  // Filtered camera-frame position while the track is alive.
  std::optional<Vec3> position(double now) const {
    if (!valid(now)) return std::nullopt;
    return track_->position();
  }

  const TrackState* track() const { return track_ ? &*track_ : nullptr; }
  const KalmanParams& params() const { return params_; }

 private:
  KalmanParams params_;
  std::optional<TrackState> track_;
  double propagated_to_ = 0.0;
};

}  // namespace followme::tracking
