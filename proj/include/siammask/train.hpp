#pragma once

// Anchors, label assignment, losses, training-pair sampling and the SGD loop.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "siammask/crop.hpp"
#include "siammask/dataset.hpp"
#include "siammask/model.hpp"

namespace siammask {

enum class MaskPath { plain, refined };

std::string to_string(MaskPath p);
MaskPath mask_path_from_string(const std::string& s);

struct TrainConfig {
  double lambda_mask = 32.0;
  double lambda_score = 1.0;
  double lambda_reg = 1.0;
  double smooth_l1_beta = 1.0;
  double positive_iou = 0.6;
  /// Two-branch positives: RoW centre closer than this to the target centre, in search-patch pixels.
  double center_distance = 16.0;
  double probability_clamp = 1e-7;

  double lr_start = 1e-3;
  double lr_peak = 5e-3;
  double lr_end = 5e-4;
  int warmup_epochs = 5;
  int decay_epochs = 15;
  int steps_per_epoch = 50;
  int batch_size = 1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 10.0;

  double exemplar_shift = 4.0;
  double search_shift = 64.0;
  std::array<double, 2> exemplar_scale{0.95, 1.05};
  std::array<double, 2> search_scale{0.82, 1.18};
  double context_amount = 0.5;
  int max_frame_gap = 10;

  std::vector<double> anchor_ratios{1.0 / 3.0, 0.5, 1.0, 2.0, 3.0};
  /// Anchor side for ratio 1, in search-patch pixels.
  double anchor_size = 64.0;
  MaskPath mask_path = MaskPath::refined;
  /// Refined path only: positive RoWs decoded per pair, rescaled to the full positive count.
  int max_mask_rows = 2;
  std::uint64_t seed = 1;

  int total_epochs() const { return warmup_epochs + decay_epochs; }
  void validate(const ModelConfig& model) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// --- anchors and deltas -----------------------------------------------------

struct CenterBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  AxisBox to_axis() const { return AxisBox::from_center(cx, cy, w, h); }
  static CenterBox from_axis(const AxisBox& b) { return {b.center().x, b.center().y, b.width(), b.height()}; }
};

using DeltaVector = std::array<double, 4>;

/// Throws std::invalid_argument when a box has non-positive size.
DeltaVector encode_deltas(const CenterBox& anchor, const CenterBox& target);
CenterBox decode_deltas(const CenterBox& anchor, const DeltaVector& delta);

/// Centre of a RoW's candidate window in search-patch pixels.
Point2 row_center(const ModelConfig& cfg, int cell);
/// The exemplar-sized window a RoW looks at, in search-patch pixels.
AxisBox row_window(const ModelConfig& cfg, int cell);

struct AnchorGrid {
  int side = 0;
  int k = 0;
  std::vector<CenterBox> anchors;  // index a * side * side + cell

  const CenterBox& at(int anchor, int cell) const { return anchors[static_cast<std::size_t>(anchor) * side * side + cell]; }
};

AnchorGrid make_anchors(const ModelConfig& model, const TrainConfig& cfg);

// --- labels ------------------------------------------------------------------

/// (1, R, R) grid of +-1: positive iff the RoW centre is strictly closer than center_distance.
nn::Tensor assign_labels_2b(const ModelConfig& model, const TrainConfig& cfg, const AxisBox& gt);
/// (k, R, R) grid of +-1: positive iff iou_axis(anchor, gt) >= positive_iou.
nn::Tensor assign_labels_3b(const AnchorGrid& anchors, const TrainConfig& cfg, const AxisBox& gt);
/// RoW indices that carry a mask loss: positive RoWs (any positive anchor for three-branch).
std::vector<int> positive_rows(const nn::Tensor& labels);
/// (1, S, S) grid of +-1 sampled from the search-patch mask under the RoW's window.
nn::Tensor mask_labels(const ModelConfig& model, const BinaryMask& search_mask, int cell, int side);

// --- losses on plain values ----------------------------------------------------

double smooth_l1(double x, double beta);
/// Mean over the grid of log(1 + exp(-y g)).
double loss_sim(const nn::Tensor& scores, const nn::Tensor& labels);
/// -(1/(k|D|)) sum [y log p + (1 - y) log(1 - p)], labels mapped to {0, 1}, p clamped.
double loss_score(const nn::Tensor& probabilities, const nn::Tensor& labels, double clamp = 1e-7);
/// (1/(2k|D|)) sum (y + 1) smooth_l1(delta - q); q, delta: (4k, R, R), channel 4a + j.
double loss_reg(const nn::Tensor& predicted, const nn::Tensor& target, const nn::Tensor& labels, double beta);
/// sum_n (1 + y_n)/(2wh) sum_ij log(1 + exp(-c_ij m_ij)); one entry per RoW.
double loss_mask(const std::vector<nn::Tensor>& logits, const std::vector<nn::Tensor>& labels,
                 const std::vector<int>& row_labels);

struct LossComponents {
  double mask = 0.0;
  double sim = 0.0;
  double score = 0.0;
  double reg = 0.0;
};
double total_loss(Variant variant, const LossComponents& c, const TrainConfig& cfg);

// --- training pairs ----------------------------------------------------------------

class PairRejected : public std::runtime_error {
 public:
  explicit PairRejected(const std::string& what) : std::runtime_error(what) {}
};

struct Augmentation {
  double shift_x = 0.0;  // patch pixels
  double shift_y = 0.0;
  double scale = 1.0;
};

struct TrainingPair {
  cv::Mat exemplar;  // exemplar_side^2, BGR
  cv::Mat search;    // search_side^2, BGR
  AxisBox gt_box;    // search-patch coordinates
  BinaryMask gt_mask;
  CropWindow search_window;
};

/// Crops both patches around the object with explicit augmentation.
TrainingPair make_training_pair(const cv::Mat& frame_z, const BinaryMask& mask_z, const cv::Mat& frame_x,
                                const BinaryMask& mask_x, const Augmentation& aug_z, const Augmentation& aug_x,
                                const ModelConfig& model, const TrainConfig& cfg);
/// Samples a frame pair of one object and augmentation within the configured ranges.
TrainingPair sample_training_pair(const std::vector<Sequence>& data, std::mt19937_64& rng, const ModelConfig& model,
                                  const TrainConfig& cfg);

struct PairTargets {
  nn::Tensor labels;  // (1, R, R) or (k, R, R)
  nn::Tensor deltas;  // (4k, R, R), three-branch only
  std::vector<int> positives;
  /// RoWs whose mask loss is evaluated and their labels; a subset of positives on the refined path.
  std::vector<int> mask_rows;
  std::vector<nn::Tensor> mask_targets;
  double mask_row_weight = 1.0;
};

PairTargets make_targets(const ModelConfig& model, Variant variant, const TrainConfig& cfg,
                         const AnchorGrid& anchors, const TrainingPair& pair, std::mt19937_64& rng);

struct LossGraph {
  nn::Var mask, sim, score, reg, total;
  LossComponents values() const;
};

/// Builds the differentiable loss of one pair given its normalized patches.
LossGraph pair_loss(const SiamMaskModel& model, const nn::Tensor& exemplar, const nn::Tensor& search,
                    const PairTargets& targets, const TrainConfig& cfg);

// --- optimization -----------------------------------------------------------------

/// Warmup from lr_start to lr_peak, then geometric decay to lr_end; epoch may be fractional.
double learning_rate(const TrainConfig& cfg, double epoch);

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

struct StepRecord {
  int step = 0;
  double epoch = 0.0;
  double lr = 0.0;
  double loss = 0.0;
  LossComponents components;
};

struct TrainOptions {
  /// Written after every epoch when non-empty.
  std::filesystem::path checkpoint_dir;
  /// Overrides cfg.total_epochs() * steps_per_epoch when positive.
  int max_steps = 0;
  std::function<void(const StepRecord&)> on_step;
  /// Merged into every checkpoint header.
  nlohmann::json checkpoint_extra = nlohmann::json::object();
};

struct TrainResult {
  std::vector<StepRecord> history;
};

/// SGD with momentum and weight decay. Throws TrainingDiverged on a non-finite loss.
TrainResult train(SiamMaskModel& model, const std::vector<Sequence>& data, const TrainConfig& cfg,
                  const TrainOptions& options = {});

/// One optimizer step on fixed pairs; exposed for overfit tests.
class SgdOptimizer {
 public:
  SgdOptimizer(ModelParams& params, const TrainConfig& cfg);
  /// Applies accumulated gradients scaled by 1/batch and returns the pre-clip gradient norm.
  double step(double lr, int batch);

 private:
  ModelParams& params_;
  TrainConfig cfg_;
  std::vector<nn::Tensor> velocity_;
};

}  // namespace siammask
