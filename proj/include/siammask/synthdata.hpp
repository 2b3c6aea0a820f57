#pragma once

// Deterministic moving-shape scenes with exact masks.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammask/dataset.hpp"

namespace siammask {

enum class Shape { rectangle, ellipse, diamond, blob };

std::string to_string(Shape s);
Shape shape_from_string(const std::string& s);

struct ObjectSpec {
  Shape shape = Shape::rectangle;
  double width = 40.0;
  double height = 24.0;
  Point2 start{80.0, 60.0};
  Point2 velocity{0.0, 0.0};  // px / frame
  double angle = 0.0;          // radians at frame 0
  double rotation_rate = 0.0;  // radians / frame
  std::array<std::uint8_t, 3> color{200, 60, 40};  // BGR
  std::string class_tag;
  /// Motion is reflected inside this region. Defaults to the canvas.
  AxisBox region{0, 0, 0, 0};
  std::uint64_t shape_seed = 0;  // vertices of blob shapes
};

struct SceneSpec {
  int height = 240;
  int width = 320;
  int frames = 30;
  std::vector<ObjectSpec> objects;
  double texture_noise = 10.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

struct RandomSceneOptions {
  int height = 240;
  int width = 320;
  int frames = 30;
  int objects = 1;
  std::vector<Shape> shapes{Shape::rectangle, Shape::ellipse, Shape::diamond, Shape::blob};
  double min_size = 36.0;
  double max_size = 64.0;
  double max_speed = 2.0;
  /// Rotation rate is drawn from [-max, max]; zero disables rotation.
  double max_rotation_rate = 0.04;
  /// Lower bound on the rotation speed magnitude.
  double min_rotation_rate = 0.0;
  /// Width over height of each object is at least this (1 leaves sizes independent).
  double min_aspect = 1.0;
  /// Objects move in disjoint vertical bands so their masks never touch.
  bool well_separated = true;
};

SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& options);

/// Renders a scene. Throws ConfigError when an object cannot fit its region.
Sequence generate(const SceneSpec& spec, const std::string& name = "synthetic");

Point2 object_center(const ObjectSpec& object, int frame, int canvas_height, int canvas_width);
/// Object outline (convex, counter-clockwise) at a given frame.
Polygon object_outline(const ObjectSpec& object, int frame, int canvas_height, int canvas_width);

}  // namespace siammask
