#include "siammask/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "siammask/errors.hpp"

namespace siammask {

std::string to_string(Shape s) {
  switch (s) {
    case Shape::rectangle: return "rectangle";
    case Shape::ellipse: return "ellipse";
    case Shape::diamond: return "diamond";
    case Shape::blob: return "blob";
  }
  return "?";
}

Shape shape_from_string(const std::string& s) {
  for (Shape k : {Shape::rectangle, Shape::ellipse, Shape::diamond, Shape::blob}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown shape '" + s + "'");
}

namespace {

Polygon local_outline(const ObjectSpec& o) {
  const double a = o.width / 2, b = o.height / 2;
  Polygon p;
  switch (o.shape) {
    case Shape::rectangle:
      p = {{-a, -b}, {a, -b}, {a, b}, {-a, b}};
      break;
    case Shape::diamond:
      p = {{-a, 0}, {0, -b}, {a, 0}, {0, b}};
      break;
    case Shape::ellipse:
      for (int i = 0; i < 48; ++i) {
        const double t = 2 * std::numbers::pi * i / 48;
        p.push_back({a * std::cos(t), b * std::sin(t)});
      }
      break;
    case Shape::blob: {
      // Points on an ellipse are always in convex position.
      std::mt19937_64 rng(o.shape_seed);
      const int n = std::uniform_int_distribution<int>(8, 16)(rng);
      std::uniform_real_distribution<double> u(0.0, 2 * std::numbers::pi);
      std::vector<double> t(n);
      for (auto& v : t) v = u(rng);
      std::sort(t.begin(), t.end());
      for (double v : t) p.push_back({a * std::cos(v), b * std::sin(v)});
      break;
    }
  }
  return p;
}

double bounding_radius(const Polygon& p) {
  double r = 0.0;
  for (const auto& q : p) r = std::max(r, std::hypot(q.x, q.y));
  return r;
}

AxisBox region_of(const ObjectSpec& o, int height, int width) {
  if (o.region.area() > 0) return o.region;
  return {0, 0, double(width), double(height)};
}

double reflect(double p, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double m = std::fmod(p - lo, 2 * span);
  if (m < 0) m += 2 * span;
  return lo + (m > span ? 2 * span - m : m);
}

}  // namespace

Point2 object_center(const ObjectSpec& o, int frame, int canvas_height, int canvas_width) {
  const double r = bounding_radius(local_outline(o));
  const AxisBox reg = region_of(o, canvas_height, canvas_width);
  return {reflect(o.start.x + o.velocity.x * frame, reg.x_min + r, reg.x_max - r),
          reflect(o.start.y + o.velocity.y * frame, reg.y_min + r, reg.y_max - r)};
}

Polygon object_outline(const ObjectSpec& o, int frame, int canvas_height, int canvas_width) {
  const Point2 c = object_center(o, frame, canvas_height, canvas_width);
  const double t = o.angle + o.rotation_rate * frame;
  const double cs = std::cos(t), sn = std::sin(t);
  std::vector<Point2> pts;
  for (const auto& q : local_outline(o)) pts.push_back({c.x + q.x * cs - q.y * sn, c.y + q.x * sn + q.y * cs});
  return convex_hull(std::move(pts));
}

Sequence generate(const SceneSpec& spec, const std::string& name) {
  if (spec.height < 8 || spec.width < 8 || spec.frames < 1) throw ConfigError("scene: canvas or frame count too small");
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    if (o.width <= 0 || o.height <= 0) throw ConfigError("scene: object " + std::to_string(i) + " has no extent");
    const AxisBox reg = region_of(o, spec.height, spec.width);
    const double r = bounding_radius(local_outline(o));
    if (2 * r > reg.width() || 2 * r > reg.height()) {
      throw ConfigError("scene: object " + std::to_string(i) + " (radius " + std::to_string(r) +
                        ") does not fit its region");
    }
  }

  Sequence seq;
  seq.name = name;
  const int n = static_cast<int>(spec.objects.size());
  seq.objects.resize(n);
  for (int i = 0; i < n; ++i) {
    seq.objects[i].id = i + 1;
    seq.objects[i].class_tag =
        spec.objects[i].class_tag.empty() ? to_string(spec.objects[i].shape) : spec.objects[i].class_tag;
  }

  std::mt19937_64 scene_rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  std::array<double, 6> phi{};
  for (auto& p : phi) p = phase(scene_rng);

  for (int f = 0; f < spec.frames; ++f) {
    cv::Mat ids(spec.height, spec.width, CV_8UC1, cv::Scalar(0));
    for (int i = 0; i < n; ++i) {
      const BinaryMask m = rasterize(object_outline(spec.objects[i], f, spec.height, spec.width), spec.height, spec.width);
      const auto v = m.values();
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k]) ids.data[k] = static_cast<std::uint8_t>(i + 1);
      }
    }
    std::mt19937_64 rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(f));
    std::uniform_real_distribution<double> noise(-spec.texture_noise, spec.texture_noise);
    cv::Mat img(spec.height, spec.width, CV_8UC3);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const int id = ids.at<std::uint8_t>(y, x);
        auto* px = img.ptr<std::uint8_t>(y) + 3 * x;
        for (int ch = 0; ch < 3; ++ch) {
          double v;
          if (id == 0) {
            v = 115 + 35 * std::sin(x / 23.0 + phi[ch]) * std::cos(y / 31.0 + phi[ch + 3]);
          } else {
            v = spec.objects[id - 1].color[ch];
          }
          px[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v + noise(rng)), 0L, 255L));
        }
      }
    }
    seq.frames.push_back(img);
    for (int i = 0; i < n; ++i) seq.objects[i].masks.push_back(mask_from_ids(ids, i + 1));
  }
  for (auto& o : seq.objects) derive_boxes(o);
  return seq;
}

SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& opt) {
  if (opt.objects < 1 || opt.shapes.empty()) throw ConfigError("random scene: need at least one object and shape");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSpec s;
  s.height = opt.height;
  s.width = opt.width;
  s.frames = opt.frames;
  s.seed = seed;
  static constexpr std::array<std::array<std::uint8_t, 3>, 6> palette{
      {{40, 40, 220}, {220, 80, 30}, {40, 200, 60}, {200, 40, 200}, {30, 210, 230}, {240, 240, 240}}};
  const int first_color = static_cast<int>(u(rng) * palette.size());
  const double band = double(opt.width) / opt.objects;
  for (int i = 0; i < opt.objects; ++i) {
    ObjectSpec o;
    o.shape = opt.shapes[static_cast<std::size_t>(u(rng) * opt.shapes.size()) % opt.shapes.size()];
    o.width = opt.min_size + u(rng) * (opt.max_size - opt.min_size);
    o.height = opt.min_size + u(rng) * (opt.max_size - opt.min_size);
    if (opt.min_aspect > 1 && o.width < opt.min_aspect * o.height) {
      o.width = std::max(o.width, o.height);
      o.height = o.width / opt.min_aspect;
    }
    o.region = opt.well_separated ? AxisBox{i * band, 0, (i + 1) * band, double(opt.height)}
                                  : AxisBox{0, 0, double(opt.width), double(opt.height)};
    o.shape_seed = seed * 7919 + i;
    // Shrink until the object fits its band with a 2 px margin.
    const double limit = std::min(o.region.width(), o.region.height()) / 2 - 2;
    const double r = bounding_radius(local_outline(o));
    if (r > limit) {
      o.width *= limit / r;
      o.height *= limit / r;
    }
    const double rr = bounding_radius(local_outline(o));
    o.start = {o.region.x_min + rr + u(rng) * (o.region.width() - 2 * rr),
               o.region.y_min + rr + u(rng) * (o.region.height() - 2 * rr)};
    const double heading = u(rng) * 2 * std::numbers::pi;
    const double speed = opt.max_speed * (0.25 + 0.75 * u(rng));
    o.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
    o.angle = u(rng) * std::numbers::pi / 2;
    const double spin = 2 * u(rng) - 1;
    o.rotation_rate = std::copysign(opt.min_rotation_rate + std::abs(spin) * (opt.max_rotation_rate - opt.min_rotation_rate), spin);
    o.color = palette[(first_color + i) % palette.size()];
    s.objects.push_back(o);
  }
  return s;
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json{{"height", s.height}, {"width", s.width}, {"frames", s.frames},
                     {"texture_noise", s.texture_noise}, {"seed", s.seed}, {"objects", nlohmann::json::array()}};
  for (const auto& o : s.objects) {
    j["objects"].push_back({{"shape", to_string(o.shape)},
                            {"width", o.width},
                            {"height", o.height},
                            {"start", {o.start.x, o.start.y}},
                            {"velocity", {o.velocity.x, o.velocity.y}},
                            {"angle", o.angle},
                            {"rotation_rate", o.rotation_rate},
                            {"color", o.color},
                            {"class_tag", o.class_tag},
                            {"region", {o.region.x_min, o.region.y_min, o.region.x_max, o.region.y_max}},
                            {"shape_seed", o.shape_seed}});
  }
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s = SceneSpec{};
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("frames").get_to(s.frames);
  j.at("texture_noise").get_to(s.texture_noise);
  j.at("seed").get_to(s.seed);
  for (const auto& jo : j.at("objects")) {
    ObjectSpec o;
    o.shape = shape_from_string(jo.at("shape").get<std::string>());
    jo.at("width").get_to(o.width);
    jo.at("height").get_to(o.height);
    o.start = {jo.at("start")[0].get<double>(), jo.at("start")[1].get<double>()};
    o.velocity = {jo.at("velocity")[0].get<double>(), jo.at("velocity")[1].get<double>()};
    jo.at("angle").get_to(o.angle);
    jo.at("rotation_rate").get_to(o.rotation_rate);
    jo.at("color").get_to(o.color);
    jo.at("class_tag").get_to(o.class_tag);
    const auto& r = jo.at("region");
    o.region = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()};
    jo.at("shape_seed").get_to(o.shape_seed);
    s.objects.push_back(o);
  }
}

}  // namespace siammask
