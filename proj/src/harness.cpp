#include "siammask/harness.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "siammask/errors.hpp"

namespace siammask {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const json& defaults, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError(section + ": unknown key '" + it.key() + "'");
  }
}

json scene_json(const RandomSceneOptions& o) {
  std::vector<std::string> shapes;
  for (Shape s : o.shapes) shapes.push_back(to_string(s));
  return json{{"height", o.height},       {"width", o.width},
              {"frames", o.frames},       {"objects", o.objects},
              {"shapes", shapes},         {"min_size", o.min_size},
              {"max_size", o.max_size},   {"max_speed", o.max_speed},
              {"max_rotation_rate", o.max_rotation_rate}, {"min_rotation_rate", o.min_rotation_rate},
              {"min_aspect", o.min_aspect},   {"well_separated", o.well_separated}};
}

RandomSceneOptions scene_from_json(const json& j) {
  const json defaults = scene_json({});
  reject_unknown(j, defaults, "data.scene");
  json m = defaults;
  m.update(j);
  RandomSceneOptions o;
  m.at("height").get_to(o.height);
  m.at("width").get_to(o.width);
  m.at("frames").get_to(o.frames);
  m.at("objects").get_to(o.objects);
  o.shapes.clear();
  for (const auto& s : m.at("shapes")) o.shapes.push_back(shape_from_string(s.get<std::string>()));
  m.at("min_size").get_to(o.min_size);
  m.at("max_size").get_to(o.max_size);
  m.at("max_speed").get_to(o.max_speed);
  m.at("max_rotation_rate").get_to(o.max_rotation_rate);
  m.at("min_rotation_rate").get_to(o.min_rotation_rate);
  m.at("min_aspect").get_to(o.min_aspect);
  m.at("well_separated").get_to(o.well_separated);
  if (o.shapes.empty() || o.objects < 1 || o.frames < 1 || o.min_size <= 0 || o.max_size < o.min_size ||
      o.min_rotation_rate < 0 || o.min_rotation_rate > o.max_rotation_rate || o.min_aspect < 1) {
    throw ConfigError("data.scene: invalid scene options");
  }
  return o;
}

template <class T, class Fn>
T merged(const json& root, const char* key, const T& fallback, Fn parse) {
  return root.contains(key) ? parse(root.at(key)) : fallback;
}

std::string frame_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d.png", t);
  return buf;
}

}  // namespace

bool operator==(const RunConfig& a, const RunConfig& b) { return json(a) == json(b); }

void to_json(json& j, const RunConfig& c) {
  j = json{{"version", c.version},
           {"seed", c.seed},
           {"variant", to_string(c.variant)},
           {"model", c.model},
           {"train", c.train},
           {"track", c.track},
           {"mot", c.mot},
           {"detector", {{"dropout", c.detector.dropout}, {"erosion", c.detector.erosion}, {"seed", c.detector.seed}}},
           {"eval",
            {{"thresholds", c.eval.thresholds},
             {"reinit_gap", c.eval.reset.reinit_gap},
             {"burn_in", c.eval.reset.burn_in}}},
           {"data", {{"sequences", c.data.sequences}, {"unseen_every", c.data.unseen_every}, {"scene", scene_json(c.data.scene)}}},
           {"paths", {{"dataset", c.paths.dataset}, {"output", c.paths.output}, {"checkpoint", c.paths.checkpoint}}}};
}

void from_json(const json& j, RunConfig& out) {
  const RunConfig d;
  const json defaults = d;
  reject_unknown(j, defaults, "config");
  if (!j.contains("version")) throw ConfigError("config: missing 'version'");
  if (j.at("version") != kConfigVersion) {
    throw ConfigError("config: version " + j.at("version").dump() + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  RunConfig c;
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.model = merged(j, "model", d.model, [](const json& v) { return v.get<ModelConfig>(); });
  c.train = merged(j, "train", d.train, [](const json& v) { return v.get<TrainConfig>(); });
  c.track = merged(j, "track", d.track, [](const json& v) { return v.get<TrackerOptions>(); });
  c.mot = merged(j, "mot", d.mot, [](const json& v) { return v.get<MotOptions>(); });
  if (j.contains("detector")) {
    reject_unknown(j.at("detector"), defaults.at("detector"), "detector");
    json m = defaults.at("detector");
    m.update(j.at("detector"));
    m.at("dropout").get_to(c.detector.dropout);
    m.at("erosion").get_to(c.detector.erosion);
    m.at("seed").get_to(c.detector.seed);
    if (c.detector.dropout < 0 || c.detector.dropout > 1 || c.detector.erosion < 0) {
      throw ConfigError("detector: dropout must be in [0, 1] and erosion non-negative");
    }
  }
  if (j.contains("eval")) {
    reject_unknown(j.at("eval"), defaults.at("eval"), "eval");
    json m = defaults.at("eval");
    m.update(j.at("eval"));
    m.at("thresholds").get_to(c.eval.thresholds);
    m.at("reinit_gap").get_to(c.eval.reset.reinit_gap);
    m.at("burn_in").get_to(c.eval.reset.burn_in);
    if (c.eval.reset.reinit_gap < 1 || c.eval.reset.burn_in < 0) throw ConfigError("eval: invalid reset options");
  }
  if (j.contains("data")) {
    reject_unknown(j.at("data"), defaults.at("data"), "data");
    const json& dj = j.at("data");
    if (dj.contains("sequences")) dj.at("sequences").get_to(c.data.sequences);
    if (dj.contains("unseen_every")) dj.at("unseen_every").get_to(c.data.unseen_every);
    if (dj.contains("scene")) c.data.scene = scene_from_json(dj.at("scene"));
    if (c.data.sequences < 1 || c.data.unseen_every < 0) throw ConfigError("data: invalid sequence counts");
  }
  if (j.contains("paths")) {
    reject_unknown(j.at("paths"), defaults.at("paths"), "paths");
    const json& p = j.at("paths");
    if (p.contains("dataset")) p.at("dataset").get_to(c.paths.dataset);
    if (p.contains("output")) p.at("output").get_to(c.paths.output);
    if (p.contains("checkpoint")) p.at("checkpoint").get_to(c.paths.checkpoint);
  }
  c.model.validate();
  c.train.validate(c.model);
  out = c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void save_run_config(const fs::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << json(c).dump(2) << "\n";
}

std::string config_hash(const RunConfig& c) {
  // 64-bit FNV-1a over the compact dump; nlohmann sorts object keys, so it is canonical.
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_environment(RunConfig& c) {
  if (const char* v = std::getenv("SIAMMASK_DATASET")) c.paths.dataset = v;
  if (const char* v = std::getenv("SIAMMASK_OUTPUT")) c.paths.output = v;
  if (const char* v = std::getenv("SIAMMASK_CHECKPOINT")) c.paths.checkpoint = v;
}

// ---------------------------------------------------------------------------

DatasetError::DatasetError(std::vector<std::string> problems)
    : std::runtime_error([&] {
        std::string s = "dataset has " + std::to_string(problems.size()) + " problem(s)";
        for (const auto& p : problems) s += "\n  " + p;
        return s;
      }()),
      problems_(std::move(problems)) {}

void write_dataset(const fs::path& dir, const std::vector<Sequence>& sequences) {
  json manifest{{"version", kManifestVersion}, {"sequences", json::array()}};
  for (const Sequence& seq : sequences) {
    if (seq.objects.size() > 255) throw ConfigError("write_dataset: more than 255 objects in " + seq.name);
    const fs::path root = dir / seq.name;
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    for (int t = 0; t < seq.frame_count(); ++t) {
      if (!cv::imwrite((root / "images" / frame_name(t)).string(), seq.frames[t]) ||
          !cv::imwrite((root / "masks" / frame_name(t)).string(), instance_image(seq, t))) {
        throw ConfigError("write_dataset: cannot write frame " + std::to_string(t) + " of " + seq.name);
      }
    }
    json objects = json::array();
    for (const auto& o : seq.objects) objects.push_back({{"id", o.id}, {"class_tag", o.class_tag}});
    manifest["sequences"].push_back({{"name", seq.name},
                                     {"frames", seq.frame_count()},
                                     {"height", seq.height()},
                                     {"width", seq.width()},
                                     {"seen", seq.seen},
                                     {"objects", objects}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("write_dataset: cannot write manifest");
  out << manifest.dump(2) << "\n";
}

std::vector<Sequence> load_dataset(const fs::path& dir) {
  std::vector<std::string> problems;
  const fs::path mpath = dir / "manifest.json";
  json manifest;
  {
    std::ifstream in(mpath);
    if (!in) throw DatasetError({"missing " + mpath.string()});
    try {
      manifest = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DatasetError({mpath.string() + ": " + e.what()});
    }
  }
  if (!manifest.is_object() || manifest.value("version", -1) != kManifestVersion || !manifest.contains("sequences") ||
      !manifest.at("sequences").is_array()) {
    throw DatasetError({mpath.string() + ": expected {\"version\": " + std::to_string(kManifestVersion) +
                        ", \"sequences\": [...]}"});
  }

  std::vector<Sequence> out;
  std::set<std::string> names;
  for (const json& entry : manifest.at("sequences")) {
    Sequence seq;
    int frames = 0, height = 0, width = 0;
    std::vector<std::pair<int, std::string>> objects;
    try {
      seq.name = entry.at("name").get<std::string>();
      frames = entry.at("frames").get<int>();
      height = entry.at("height").get<int>();
      width = entry.at("width").get<int>();
      seq.seen = entry.value("seen", true);
      for (const json& o : entry.at("objects")) objects.emplace_back(o.at("id").get<int>(), o.value("class_tag", ""));
    } catch (const json::exception& e) {
      problems.push_back("manifest entry " + entry.dump() + ": " + e.what());
      continue;
    }
    if (!names.insert(seq.name).second) problems.push_back(seq.name + ": duplicate sequence name");
    if (frames < 1 || height < 1 || width < 1) {
      problems.push_back(seq.name + ": frames, height and width must be positive");
      continue;
    }
    std::set<int> ids;
    for (const auto& [id, tag] : objects) {
      if (id < 1 || id > 255 || !ids.insert(id).second) {
        problems.push_back(seq.name + ": object id " + std::to_string(id) + " is invalid or repeated");
      }
    }

    const fs::path root = dir / seq.name;
    std::vector<cv::Mat> id_images;
    bool ok = true;
    for (int t = 0; t < frames; ++t) {
      const fs::path img_path = root / "images" / frame_name(t);
      const fs::path mask_path = root / "masks" / frame_name(t);
      cv::Mat img, ids_img;
      if (!fs::exists(img_path)) {
        problems.push_back(seq.name + ": missing frame " + img_path.string());
      } else if ((img = cv::imread(img_path.string(), cv::IMREAD_COLOR)).empty()) {
        problems.push_back(seq.name + ": cannot decode frame " + img_path.string());
      } else if (img.rows != height || img.cols != width) {
        problems.push_back(seq.name + ": frame " + img_path.string() + " is " + std::to_string(img.cols) + "x" +
                           std::to_string(img.rows) + ", manifest says " + std::to_string(width) + "x" +
                           std::to_string(height));
      }
      if (!fs::exists(mask_path)) {
        problems.push_back(seq.name + ": missing mask " + mask_path.string());
      } else if ((ids_img = cv::imread(mask_path.string(), cv::IMREAD_UNCHANGED)).empty() ||
                 ids_img.type() != CV_8UC1) {
        problems.push_back(seq.name + ": mask " + mask_path.string() + " is not an 8-bit single-channel image");
        ids_img.release();
      } else if (ids_img.rows != height || ids_img.cols != width) {
        problems.push_back(seq.name + ": mask " + mask_path.string() + " has the wrong size");
        ids_img.release();
      } else {
        for (int y = 0; y < ids_img.rows; ++y) {
          const auto* row = ids_img.ptr<std::uint8_t>(y);
          for (int x = 0; x < ids_img.cols; ++x) {
            if (row[x] != 0 && !ids.contains(row[x])) {
              problems.push_back(seq.name + ": mask " + mask_path.string() + " contains undeclared id " +
                                 std::to_string(row[x]));
              y = ids_img.rows;
              break;
            }
          }
        }
      }
      ok = ok && !img.empty() && !ids_img.empty() && img.rows == height && img.cols == width;
      seq.frames.push_back(img);
      id_images.push_back(ids_img);
    }
    // Frame numbering must stop where the manifest says.
    for (const char* sub : {"images", "masks"}) {
      if (fs::exists(root / sub / frame_name(frames))) {
        problems.push_back(seq.name + ": " + sub + " has frames beyond the declared " + std::to_string(frames));
      }
    }
    if (!ok) continue;
    for (const auto& [id, tag] : objects) {
      ObjectAnnotation o;
      o.id = id;
      o.class_tag = tag;
      for (const cv::Mat& m : id_images) o.masks.push_back(mask_from_ids(m, id));
      derive_boxes(o);
      seq.objects.push_back(std::move(o));
    }
    out.push_back(std::move(seq));
  }
  if (!problems.empty()) throw DatasetError(std::move(problems));
  return out;
}

std::vector<Sequence> generate_dataset(const GenDataConfig& cfg, std::uint64_t seed) {
  std::vector<Sequence> out;
  for (int i = 0; i < cfg.sequences; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "seq%03d", i);
    Sequence s = generate(random_scene(seed + static_cast<std::uint64_t>(i), cfg.scene), name);
    s.seen = cfg.unseen_every <= 0 || (i + 1) % cfg.unseen_every != 0;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

RotatedBox box_from_corners(const std::array<Point2, 4>& p) {
  const double cx = 0.25 * (p[0].x + p[1].x + p[2].x + p[3].x);
  const double cy = 0.25 * (p[0].y + p[1].y + p[2].y + p[3].y);
  const double w = std::hypot(p[1].x - p[0].x, p[1].y - p[0].y);
  const double h = std::hypot(p[2].x - p[1].x, p[2].y - p[1].y);
  return RotatedBox::canonical(cx, cy, w, h, std::atan2(p[1].y - p[0].y, p[1].x - p[0].x));
}

ObjectResult read_result_stream(const fs::path& dir, const std::string& sequence, int object_id, int frames) {
  ObjectResult r;
  r.sequence = sequence;
  r.object_id = object_id;
  std::vector<std::string> problems;
  std::ifstream boxes(dir / "boxes.txt");
  if (!boxes) throw DatasetError({"missing " + (dir / "boxes.txt").string()});
  std::string line;
  int t = 0;
  while (std::getline(boxes, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> v;
    for (double x; ss >> x;) v.push_back(x);
    if (v.size() == 5) {
      r.boxes.push_back(RotatedBox::from_axis({v[0], v[1], v[0] + v[2], v[1] + v[3]}));
    } else if (v.size() == 9) {
      r.boxes.push_back(box_from_corners({Point2{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}}));
    } else {
      problems.push_back((dir / "boxes.txt").string() + " line " + std::to_string(t + 1) + ": expected 5 or 9 numbers");
      r.boxes.push_back({});
    }
    ++t;
  }
  if (t != frames) {
    problems.push_back((dir / "boxes.txt").string() + ": " + std::to_string(t) + " lines for " +
                       std::to_string(frames) + " frames");
  }
  for (int f = 0; f < frames; ++f) {
    const fs::path p = dir / "masks" / frame_name(f);
    const cv::Mat m = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) {
      problems.push_back("missing or unreadable " + p.string());
      r.masks.emplace_back();
      continue;
    }
    std::vector<std::uint8_t> bits(m.total());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = m.data[i] != 0;
    r.masks.emplace_back(m.rows, m.cols, std::move(bits));
  }
  if (!problems.empty()) throw DatasetError(std::move(problems));
  return r;
}

void write_instance_stream(const fs::path& dir, const std::vector<cv::Mat>& ids) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (!cv::imwrite((dir / frame_name(static_cast<int>(t))).string(), ids[t])) {
      throw ConfigError("cannot write " + (dir / frame_name(static_cast<int>(t))).string());
    }
  }
}

}  // namespace siammask
