#pragma once

#include "glteleop/commands.hpp"

#include <array>
#include <string>

namespace glteleop {

/// Encoder slots of the six-encoder exoskeleton.
///
/// Thumb: base rotation plus two flexion hinges. Index: two flexion hinges
/// plus one spare (abduction) encoder that the default retarget law ignores.
enum ExoEncoder : int {
  kThumbRotation = 0,
  kThumbFlex1 = 1,
  kThumbFlex2 = 2,
  kIndexFlex1 = 3,
  kIndexFlex2 = 4,
  kIndexSpare = 5,
  kExoEncoderCount = 6,
};

struct ExoskeletonReading {
  std::array<double, kExoEncoderCount> encoders{};  // rad
};

struct EncoderRange {
  double open = 0.0;    // rad
  double closed = 0.0;  // rad
};

struct OutputRange {
  double min = 0.0;
  double max = 1.0;
};

/// Per-user endpoints and finger geometry. Endpoint angles are recorded with
/// the hand fully open and fully closed.
struct HandCalibration {
  std::array<EncoderRange, kExoEncoderCount> encoders{};
  std::array<OutputRange, HandTarget::kChannels> outputs{};
  std::array<double, 2> index_links{0.045, 0.025};  // m, proximal then distal
  std::array<double, 2> thumb_links{0.035, 0.030};  // m
  double thumb_tilt = 60.0 * 3.14159265358979323846 / 180.0;  // rad

  /// Throws ConfigError when any encoder has open == closed (or a
  /// non-finite endpoint), a link length is not positive, or an output range
  /// leaves [0, 1].
  void validate() const;

  static HandCalibration from_json_text(const std::string& text);
  static HandCalibration load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;

  bool operator==(const HandCalibration&) const = default;
};

inline bool operator==(const EncoderRange& a, const EncoderRange& b) {
  return a.open == b.open && a.closed == b.closed;
}
inline bool operator==(const OutputRange& a, const OutputRange& b) {
  return a.min == b.min && a.max == b.max;
}

struct PlaneAngle {
  double angle = 0.0;  // rad
  /// Fingertip coincides with the finger base; the angle is undefined and
  /// reported as 0.
  bool degenerate = false;
};

/// Angle between the base-to-fingertip segment of a planar two-hinge finger
/// and the metacarpal plane (the finger's zero direction).
PlaneAngle fingertip_plane_angle(double joint1, double joint2, const std::array<double, 2>& links);

/// Virtual-finger retargeting: the thumb drives the two thumb channels and
/// the index finger drives index, middle, ring and pinky identically. Each
/// channel is an affine map of its calibrated angle range onto the output
/// range, clamped. Throws ConfigError on an invalid calibration and
/// InputError on non-finite readings.
HandTarget retarget(const ExoskeletonReading& reading, const HandCalibration& calib);

/// Thumb fingertip angle including the fixed mount tilt.
double thumb_plane_angle(double joint1, double joint2, const HandCalibration& calib);

}  // namespace glteleop
