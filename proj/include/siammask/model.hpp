#pragma once

// The Siamese mask network: shared backbone, unshared adjust layers, depth-wise
// cross-correlation, score/box/mask heads and the stacked refinement decoder.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammask/nn.hpp"

namespace siammask {

enum class BackboneKind { paper_resnet50_c4, toy_convnet };
enum class Variant { two_branch, three_branch };

std::string to_string(BackboneKind kind);
std::string to_string(Variant variant);
BackboneKind backbone_kind_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  BackboneKind backbone_kind = BackboneKind::paper_resnet50_c4;
  int feature_channels = 256;
  /// conv5 width of the score, box and mask heads.
  int head_channels = 256;
  int anchors_per_cell = 5;
  int mask_side = 63;
  int refined_mask_side = 127;
  /// Channels of e1, e2, e3; the last refinement module halves the final entry.
  std::vector<int> refinement_channels{32, 16, 8};
  std::vector<int> toy_stage_channels{16, 32, 64, 64};
  int exemplar_side = 127;
  int search_side = 255;
  int response_side = 17;
  int total_stride = 8;
  std::array<double, 3> input_mean{0.5, 0.5, 0.5};
  std::array<double, 3> input_scale{4.0, 4.0, 4.0};

  static ModelConfig paper();
  /// CPU-sized network with the same 127/255 -> 15/31 -> 17 side contract.
  static ModelConfig toy();

  /// Throws ConfigError when the side/stride/channel invariants do not hold.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Spatial sides of the backbone outputs for an input of a given side.
struct PyramidSides {
  int f3 = 0;  // first stage, stride 2
  int f2 = 0;  // second stage, stride 4
  int f1 = 0;  // third stage, stride 8
  int final = 0;
};
PyramidSides pyramid_sides(const ModelConfig& cfg, int input_side);

/// Ordered, named parameter arrays. Insertion order is the checkpoint order.
class ModelParams {
 public:
  nn::Var& add(const std::string& name, nn::Tensor init);
  const nn::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, nn::Var>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, nn::Var>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();
  bool all_finite() const;

 private:
  std::vector<std::pair<std::string, nn::Var>> entries_;
};

struct FeaturePyramid {
  nn::Var f1;  // third backbone stage (stride 8)
  nn::Var f2;  // second stage (stride 4)
  nn::Var f3;  // first stage (stride 2)
  nn::Var final;
};

struct ResponseGrid {
  nn::Var features;    // (feature_channels, R, R)
  nn::Var scores;      // (1, R, R) two-branch; (2k, R, R) three-branch
  nn::Var box_deltas;  // (4k, R, R), three-branch only
  nn::Var mask_logits; // (mask_side^2, R, R) when requested
};

class SiamMaskModel {
 public:
  SiamMaskModel(ModelConfig config, Variant variant, std::uint64_t seed);
  /// Empty-parameter shell, filled by a checkpoint loader.
  SiamMaskModel(ModelConfig config, Variant variant, ModelParams params);

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return variant_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Normalizes an 8-bit HWC BGR patch into a (3, S, S) tensor.
  nn::Tensor normalize_patch(std::span<const std::uint8_t> bgr, int side) const;

  FeaturePyramid backbone_forward(const nn::Var& patch) const;
  nn::Var adjust_exemplar(const nn::Var& final) const;
  nn::Var adjust_search(const nn::Var& final) const;
  /// Full grid of heads. The per-RoW mask head is only run when with_mask is set.
  ResponseGrid heads_forward(const nn::Var& corr, bool with_mask) const;
  /// Plain mask head on selected RoWs: (mask_side^2, 1, P).
  nn::Var mask_head(const nn::Var& corr, std::span<const int> cells) const;
  /// Refined logits (1, S, S) for one RoW, S = refined_mask_side.
  nn::Var refine_mask(int cell, const nn::Var& corr, const FeaturePyramid& search) const;

  int score_channels() const;
  std::size_t expected_param_count() const;

 private:
  void init_params(std::uint64_t seed);
  void check_shapes() const;

  ModelConfig config_;
  Variant variant_;
  ModelParams params_;
};

}  // namespace siammask
