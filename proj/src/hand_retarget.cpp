#include "glteleop/hand_retarget.hpp"

#include "glteleop/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace glteleop {

using nlohmann::json;

namespace {

double clamp_encoder(double value, const EncoderRange& r) {
  return std::clamp(value, std::min(r.open, r.closed), std::max(r.open, r.closed));
}

double affine(double angle, double open_angle, double closed_angle, const OutputRange& out) {
  const double u = std::clamp((angle - open_angle) / (closed_angle - open_angle), 0.0, 1.0);
  return out.min + u * (out.max - out.min);
}

void require_range(double open_angle, double closed_angle, const char* channel) {
  if (!(open_angle != closed_angle)) {
    throw ConfigError(std::string("hand calibration: ") + channel +
                      " open and closed poses give the same fingertip angle");
  }
}

}  // namespace

void HandCalibration::validate() const {
  for (int i = 0; i < kExoEncoderCount; ++i) {
    const EncoderRange& r = encoders[i];
    if (!std::isfinite(r.open) || !std::isfinite(r.closed)) {
      throw ConfigError("hand calibration: encoder " + std::to_string(i) + " endpoint is not finite");
    }
    // The spare encoder is not retargeted, so it may stay uncalibrated.
    if (i != kIndexSpare && r.open == r.closed) {
      throw ConfigError("hand calibration: encoder " + std::to_string(i) +
                        " has identical open and closed endpoints");
    }
  }
  for (double l : index_links) {
    if (!(l > 0.0)) throw ConfigError("hand calibration: index link lengths must be positive");
  }
  for (double l : thumb_links) {
    if (!(l > 0.0)) throw ConfigError("hand calibration: thumb link lengths must be positive");
  }
  for (const OutputRange& o : outputs) {
    if (!(o.min >= 0.0 && o.max <= 1.0 && o.min < o.max)) {
      throw ConfigError("hand calibration: output ranges must satisfy 0 <= min < max <= 1");
    }
  }
  for (int ch : {HandTarget::kMiddle, HandTarget::kRing, HandTarget::kPinky}) {
    if (!(outputs[ch] == outputs[HandTarget::kIndex])) {
      throw ConfigError("hand calibration: middle, ring and pinky must share the index output range");
    }
  }
  if (!std::isfinite(thumb_tilt)) throw ConfigError("hand calibration: thumb tilt is not finite");
}

HandCalibration HandCalibration::from_json_text(const std::string& text) {
  HandCalibration c;
  try {
    const json doc = json::parse(text);
    if (doc.value("calibration_version", 0) != 1) {
      throw ConfigError("hand calibration: calibration_version must be 1");
    }
    const json& enc = doc.at("encoders");
    if (!enc.is_array() || enc.size() != kExoEncoderCount) {
      throw ConfigError("hand calibration: expected 6 encoder entries");
    }
    for (int i = 0; i < kExoEncoderCount; ++i) {
      c.encoders[i] = {enc[i].at("open").get<double>(), enc[i].at("closed").get<double>()};
    }
    if (doc.contains("outputs")) {
      const json& out = doc.at("outputs");
      if (!out.is_array() || out.size() != HandTarget::kChannels) {
        throw ConfigError("hand calibration: expected 6 output ranges");
      }
      for (int i = 0; i < HandTarget::kChannels; ++i) {
        c.outputs[i] = {out[i].at("min").get<double>(), out[i].at("max").get<double>()};
      }
    }
    if (doc.contains("index_links")) c.index_links = doc.at("index_links").get<std::array<double, 2>>();
    if (doc.contains("thumb_links")) c.thumb_links = doc.at("thumb_links").get<std::array<double, 2>>();
    if (doc.contains("thumb_tilt")) c.thumb_tilt = doc.at("thumb_tilt").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("hand calibration: ") + e.what());
  }
  c.validate();
  return c;
}

HandCalibration HandCalibration::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open hand calibration '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string HandCalibration::to_json_text() const {
  json j;
  j["calibration_version"] = 1;
  j["encoders"] = json::array();
  for (const auto& e : encoders) j["encoders"].push_back({{"open", e.open}, {"closed", e.closed}});
  j["outputs"] = json::array();
  for (const auto& o : outputs) j["outputs"].push_back({{"min", o.min}, {"max", o.max}});
  j["index_links"] = index_links;
  j["thumb_links"] = thumb_links;
  j["thumb_tilt"] = thumb_tilt;
  return j.dump(2);
}

void HandCalibration::save(const std::string& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write hand calibration '" + path + "'");
  out << to_json_text() << '\n';
}

PlaneAngle fingertip_plane_angle(double joint1, double joint2, const std::array<double, 2>& links) {
  const double x = links[0] * std::cos(joint1) + links[1] * std::cos(joint1 + joint2);
  const double y = links[0] * std::sin(joint1) + links[1] * std::sin(joint1 + joint2);
  if (std::hypot(x, y) < 1e-12 * (links[0] + links[1])) {
    return {0.0, true};
  }
  return {std::atan2(y, x), false};
}

double thumb_plane_angle(double joint1, double joint2, const HandCalibration& calib) {
  // The thumb hinge plane is mounted tilted against the metacarpal plane;
  // rotate the fingertip direction by the tilt before measuring.
  const auto& l = calib.thumb_links;
  const double a1 = joint1 + calib.thumb_tilt;
  const double x = l[0] * std::cos(a1) + l[1] * std::cos(a1 + joint2);
  const double y = l[0] * std::sin(a1) + l[1] * std::sin(a1 + joint2);
  return std::atan2(y, x);
}

HandTarget retarget(const ExoskeletonReading& reading, const HandCalibration& calib) {
  calib.validate();
  for (double v : reading.encoders) {
    if (!std::isfinite(v)) throw InputError("exoskeleton reading is not finite");
  }
  std::array<double, kExoEncoderCount> e{};
  for (int i = 0; i < kExoEncoderCount; ++i) e[i] = clamp_encoder(reading.encoders[i], calib.encoders[i]);
  const auto& enc = calib.encoders;

  HandTarget out;

  const double thumb_open = thumb_plane_angle(enc[kThumbFlex1].open, enc[kThumbFlex2].open, calib);
  const double thumb_closed = thumb_plane_angle(enc[kThumbFlex1].closed, enc[kThumbFlex2].closed, calib);
  require_range(thumb_open, thumb_closed, "thumb");
  out.values[HandTarget::kThumbBend] =
      affine(thumb_plane_angle(e[kThumbFlex1], e[kThumbFlex2], calib), thumb_open, thumb_closed,
             calib.outputs[HandTarget::kThumbBend]);
  out.values[HandTarget::kThumbRotation] =
      affine(e[kThumbRotation], enc[kThumbRotation].open, enc[kThumbRotation].closed,
             calib.outputs[HandTarget::kThumbRotation]);

  const double index_open =
      fingertip_plane_angle(enc[kIndexFlex1].open, enc[kIndexFlex2].open, calib.index_links).angle;
  const double index_closed =
      fingertip_plane_angle(enc[kIndexFlex1].closed, enc[kIndexFlex2].closed, calib.index_links).angle;
  require_range(index_open, index_closed, "index");
  const double index_angle =
      fingertip_plane_angle(e[kIndexFlex1], e[kIndexFlex2], calib.index_links).angle;
  // Virtual finger: one index reading drives all four fingers.
  const double finger = affine(index_angle, index_open, index_closed, calib.outputs[HandTarget::kIndex]);
  for (int ch : {HandTarget::kIndex, HandTarget::kMiddle, HandTarget::kRing, HandTarget::kPinky}) {
    out.values[ch] = finger;
  }
  return out;
}

}  // namespace glteleop
