#pragma once

// Run configuration, the on-disk dataset layout and result-stream files.
//
// Dataset layout:
//   manifest.json
//   <seq>/images/00000.png ...   BGR frames
//   <seq>/masks/00000.png ...    8-bit instance ids, 0 = background

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammask/eval.hpp"
#include "siammask/model.hpp"
#include "siammask/mot.hpp"
#include "siammask/synthdata.hpp"
#include "siammask/track.hpp"
#include "siammask/train.hpp"

namespace siammask {

inline constexpr int kConfigVersion = 1;
inline constexpr int kManifestVersion = 1;

struct GenDataConfig {
  int sequences = 8;
  RandomSceneOptions scene;
  /// Every n-th sequence is tagged unseen; 0 keeps all seen.
  int unseen_every = 0;
};

struct EvalConfig {
  std::vector<double> thresholds{0.5, 0.7};
  ResetOptions reset;
};

struct PathsConfig {
  std::string dataset;
  std::string output;
  std::string checkpoint;
};

struct RunConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 1;
  Variant variant = Variant::three_branch;
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  TrackerOptions track;
  MotOptions mot;
  OracleDetectorOptions detector;
  EvalConfig eval;
  GenDataConfig data;
  PathsConfig paths;

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys take defaults; unknown keys and a version mismatch throw ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);
/// Fingerprint of the canonical serialization, 16 hex digits.
std::string config_hash(const RunConfig& c);
/// SIAMMASK_DATASET, SIAMMASK_OUTPUT and SIAMMASK_CHECKPOINT replace the matching paths.
void apply_environment(RunConfig& c);

// --- datasets -----------------------------------------------------------------------

/// Every problem found while loading, not just the first.
class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

void write_dataset(const std::filesystem::path& dir, const std::vector<Sequence>& sequences);
std::vector<Sequence> load_dataset(const std::filesystem::path& dir);

/// Sequences named seq000, seq001, ... from random scenes seeded by `seed + index`.
std::vector<Sequence> generate_dataset(const GenDataConfig& cfg, std::uint64_t seed);

// --- result streams --------------------------------------------------------------------

/// Reads what write_result_stream produced; 4-number lines become angle-0 boxes.
ObjectResult read_result_stream(const std::filesystem::path& dir, const std::string& sequence, int object_id,
                                int frames);
/// Box from 8 corner coordinates in the order RotatedBox::corners emits them.
RotatedBox box_from_corners(const std::array<Point2, 4>& corners);

/// Instance-id images of a multi-object run, 16-bit PNG, one per frame.
void write_instance_stream(const std::filesystem::path& dir, const std::vector<cv::Mat>& ids);

}  // namespace siammask
