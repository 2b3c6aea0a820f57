#include "siammask/model.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include "siammask/errors.hpp"

namespace siammask {

using nn::Conv2dOptions;
using nn::Tensor;
using nn::Var;

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::paper_resnet50_c4 ? "paper_resnet50_c4" : "toy_convnet";
}

std::string to_string(Variant variant) { return variant == Variant::two_branch ? "two_branch" : "three_branch"; }

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "paper_resnet50_c4") return BackboneKind::paper_resnet50_c4;
  if (s == "toy_convnet") return BackboneKind::toy_convnet;
  throw ConfigError("unknown backbone_kind '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
  if (s == "two_branch") return Variant::two_branch;
  if (s == "three_branch") return Variant::three_branch;
  throw ConfigError("unknown variant '" + s + "'");
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.backbone_kind = BackboneKind::toy_convnet;
  c.feature_channels = 64;
  c.head_channels = 64;
  c.toy_stage_channels = {16, 32, 64, 64};
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"backbone_kind", to_string(c.backbone_kind)},
                     {"feature_channels", c.feature_channels},
                     {"head_channels", c.head_channels},
                     {"anchors_per_cell", c.anchors_per_cell},
                     {"mask_side", c.mask_side},
                     {"refined_mask_side", c.refined_mask_side},
                     {"refinement_channels", c.refinement_channels},
                     {"toy_stage_channels", c.toy_stage_channels},
                     {"exemplar_side", c.exemplar_side},
                     {"search_side", c.search_side},
                     {"response_side", c.response_side},
                     {"total_stride", c.total_stride},
                     {"input_mean", c.input_mean},
                     {"input_scale", c.input_scale}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::vector<std::string> known{
      "backbone_kind", "feature_channels", "head_channels", "anchors_per_cell", "mask_side",
      "refined_mask_side", "refinement_channels", "toy_stage_channels", "exemplar_side", "search_side",
      "response_side", "total_stride", "input_mean", "input_scale"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("model: unknown key '" + it.key() + "'");
    }
  }
  ModelConfig d = j.contains("backbone_kind") &&
                          backbone_kind_from_string(j.at("backbone_kind").get<std::string>()) ==
                              BackboneKind::toy_convnet
                      ? ModelConfig::toy()
                      : ModelConfig::paper();
  if (j.contains("backbone_kind")) d.backbone_kind = backbone_kind_from_string(j.at("backbone_kind").get<std::string>());
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("feature_channels", d.feature_channels);
  opt("head_channels", d.head_channels);
  opt("anchors_per_cell", d.anchors_per_cell);
  opt("mask_side", d.mask_side);
  opt("refined_mask_side", d.refined_mask_side);
  opt("refinement_channels", d.refinement_channels);
  opt("toy_stage_channels", d.toy_stage_channels);
  opt("exemplar_side", d.exemplar_side);
  opt("search_side", d.search_side);
  opt("response_side", d.response_side);
  opt("total_stride", d.total_stride);
  opt("input_mean", d.input_mean);
  opt("input_scale", d.input_scale);
  c = d;
}

PyramidSides pyramid_sides(const ModelConfig& cfg, int side) {
  auto conv = [](int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; };
  PyramidSides s;
  if (cfg.backbone_kind == BackboneKind::toy_convnet) {
    s.f3 = conv(side, 3, 2, 0);
    s.f2 = conv(s.f3, 3, 2, 0);
    s.f1 = conv(s.f2, 3, 2, 0);
  } else {
    // 7x7/2 valid conv, 3x3/2 max pool with pad 1, then the stride-2 block uses a
    // valid 3x3 conv; this reproduces 61/125 -> 31/63 -> 15/31.
    s.f3 = conv(side, 7, 2, 0);
    s.f2 = conv(s.f3, 3, 2, 1);
    s.f1 = conv(s.f2, 3, 2, 0);
  }
  s.final = s.f1;
  return s;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (feature_channels < 1 || head_channels < 1 || anchors_per_cell < 1 || mask_side < 1) {
    fail("channel counts and mask_side must be positive");
  }
  if (refinement_channels.size() != 3) fail("refinement_channels needs exactly 3 entries");
  for (int c : refinement_channels) {
    if (c < 1) fail("refinement_channels must be positive");
  }
  if (backbone_kind == BackboneKind::toy_convnet && toy_stage_channels.size() != 4) {
    fail("toy_stage_channels needs exactly 4 entries");
  }
  if (total_stride < 1 || (search_side - exemplar_side) % total_stride != 0) {
    fail("total_stride must divide search_side - exemplar_side");
  }
  if (response_side < 2) fail("response_side must be at least 2");
  if ((search_side - exemplar_side) / total_stride + 1 != response_side) {
    fail("response_side inconsistent with exemplar/search sides and stride");
  }
  const PyramidSides ze = pyramid_sides(*this, exemplar_side);
  const PyramidSides xe = pyramid_sides(*this, search_side);
  if (ze.final < 1) fail("exemplar_side too small for the backbone");
  if (xe.final - ze.final + 1 != response_side) {
    fail("backbone gives exemplar/search sides " + std::to_string(ze.final) + "/" + std::to_string(xe.final) +
         ", inconsistent with response_side " + std::to_string(response_side));
  }
  for (auto [e, x] : {std::pair{ze.f1, xe.f1}, std::pair{ze.f2, xe.f2}, std::pair{ze.f3, xe.f3}}) {
    if ((x - e) % (response_side - 1) != 0) fail("pyramid level cannot be cropped per RoW");
  }
  if (refined_mask_side != exemplar_side) fail("refined_mask_side must equal exemplar_side");
}

// ---------------------------------------------------------------------------

nn::Var& ModelParams::add(const std::string& name, Tensor init) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  entries_.emplace_back(name, Var(std::move(init), true));
  return entries_.back().second;
}

const nn::Var& ModelParams::get(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw ConfigError("missing parameter '" + name + "'");
}

bool ModelParams::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.value().size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

bool ModelParams::all_finite() const {
  for (const auto& e : entries_) {
    for (double v : e.second.value().data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

struct ParamFactory {
  ModelParams& params;
  std::mt19937_64 rng;

  void conv(const std::string& name, int cout, int cin, int k, double gain = 1.0) {
    Tensor w(cout, cin, k * k);
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / (cin * k * k)));
    for (auto& v : w.data) v = dist(rng);
    params.add(name + ".weight", std::move(w));
    params.add(name + ".bias", Tensor(cout, 1, 1));
  }
};

Var apply(const ModelParams& p, const std::string& name, const Var& x, Conv2dOptions opt = {}) {
  return nn::conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), opt);
}

Var apply_relu(const ModelParams& p, const std::string& name, const Var& x, Conv2dOptions opt = {}) {
  return nn::relu(apply(p, name, x, opt));
}

int kernel_of(const ModelParams& p, const std::string& name) {
  return static_cast<int>(std::lround(std::sqrt(double(p.get(name + ".weight").value().w))));
}

struct BlockSpec {
  std::string name;
  int cin, planes, cout, stride, dilation;
  int shortcut_kernel;  // 0 = identity
};

std::vector<BlockSpec> resnet_blocks() {
  std::vector<BlockSpec> blocks;
  auto layer = [&](int index, int count, int cin, int planes, int stride, int dilation, int shortcut_kernel) {
    for (int b = 0; b < count; ++b) {
      const std::string name = "backbone.layer" + std::to_string(index) + "." + std::to_string(b);
      blocks.push_back({name, b == 0 ? cin : planes * 4, planes, planes * 4, b == 0 ? stride : 1, dilation,
                        b == 0 ? shortcut_kernel : 0});
    }
  };
  layer(1, 3, 64, 64, 1, 1, 1);
  layer(2, 4, 256, 128, 2, 1, 3);
  layer(3, 6, 512, 256, 1, 2, 1);
  return blocks;
}

Var bottleneck(const ModelParams& p, const BlockSpec& b, const Var& x) {
  Var y = apply_relu(p, b.name + ".conv_a", x);
  const int pad = b.stride == 2 ? 0 : b.dilation;
  y = apply_relu(p, b.name + ".conv_b", y, {b.stride, pad, b.dilation});
  y = apply(p, b.name + ".conv_c", y);
  Var shortcut = b.shortcut_kernel == 0 ? x : apply(p, b.name + ".shortcut", x, {b.stride, 0, 1});
  return nn::relu(nn::add(y, shortcut));
}

struct LevelChannels {
  int f1, f2, f3, final;
};

LevelChannels level_channels(const ModelConfig& c) {
  if (c.backbone_kind == BackboneKind::toy_convnet) {
    const auto& s = c.toy_stage_channels;
    return {s[2], s[1], s[0], s[3]};
  }
  return {512, 256, 64, 1024};
}

}  // namespace

SiamMaskModel::SiamMaskModel(ModelConfig config, Variant variant, std::uint64_t seed)
    : config_(std::move(config)), variant_(variant) {
  config_.validate();
  init_params(seed);
  check_shapes();
}

SiamMaskModel::SiamMaskModel(ModelConfig config, Variant variant, ModelParams params)
    : config_(std::move(config)), variant_(variant), params_(std::move(params)) {
  config_.validate();
  check_shapes();
}

int SiamMaskModel::score_channels() const {
  return variant_ == Variant::two_branch ? 1 : 2 * config_.anchors_per_cell;
}

void SiamMaskModel::init_params(std::uint64_t seed) {
  ParamFactory f{params_, std::mt19937_64(seed)};
  const ModelConfig& c = config_;
  const LevelChannels ch = level_channels(c);

  if (c.backbone_kind == BackboneKind::toy_convnet) {
    const auto& s = c.toy_stage_channels;
    f.conv("backbone.stage1", s[0], 3, 3);
    f.conv("backbone.stage2", s[1], s[0], 3);
    f.conv("backbone.stage3", s[2], s[1], 3);
    f.conv("backbone.stage4", s[3], s[2], 3);
  } else {
    f.conv("backbone.conv1", 64, 3, 7);
    for (const BlockSpec& b : resnet_blocks()) {
      f.conv(b.name + ".conv_a", b.planes, b.cin, 1);
      f.conv(b.name + ".conv_b", b.planes, b.planes, 3);
      // Residual branches start at zero so the untrained stack stays well scaled.
      f.conv(b.name + ".conv_c", b.cout, b.planes, 1, 0.0);
      if (b.shortcut_kernel) f.conv(b.name + ".shortcut", b.cout, b.cin, b.shortcut_kernel);
    }
  }
  // Without normalization layers the correlation sums ze.final^2 coherent products;
  // shrinking both adjust layers keeps the untrained response near unit scale.
  const PyramidSides ze = pyramid_sides(c, c.exemplar_side);
  f.conv("adjust.exemplar", c.feature_channels, ch.final, 1, 1.0 / ze.final);
  f.conv("adjust.search", c.feature_channels, ch.final, 1, 1.0 / ze.final);

  // Output layers start small so the first losses sit near their uninformed values.
  f.conv("head.score.conv5", c.head_channels, c.feature_channels, 1);
  f.conv("head.score.conv6", score_channels(), c.head_channels, 1, 0.1);
  if (variant_ == Variant::three_branch) {
    f.conv("head.box.conv5", c.head_channels, c.feature_channels, 1);
    f.conv("head.box.conv6", 4 * c.anchors_per_cell, c.head_channels, 1, 0.1);
  }
  f.conv("head.mask.conv5", c.head_channels, c.feature_channels, 1);
  f.conv("head.mask.conv6", c.mask_side * c.mask_side, c.head_channels, 1, 0.1);

  const auto& k = c.refinement_channels;
  const int k_last = std::max(1, k[2] / 2);
  f.conv("refine.deconv", k[0] * ze.f1 * ze.f1, c.feature_channels, 1);
  const std::array<int, 4> ks{k[0], k[1], k[2], k_last};
  const std::array<int, 3> skip{ch.f1, ch.f2, ch.f3};
  for (int u = 0; u < 3; ++u) {
    const std::string name = "refine.u" + std::to_string(u + 2);
    f.conv(name + ".a1", ks[u], ks[u], 3);
    f.conv(name + ".a2", ks[u + 1], ks[u], 3);
    f.conv(name + ".b1", ks[u + 1], skip[u], 3);
    f.conv(name + ".b2", ks[u + 1], ks[u + 1], 3);
    f.conv(name + ".b3", ks[u + 1], ks[u + 1], 3);
  }
  f.conv("refine.out", 1, k_last, 3, 0.1);
}

void SiamMaskModel::check_shapes() const {
  auto expect = [&](const std::string& name, int cout) {
    const Tensor& w = params_.get(name + ".weight").value();
    if (w.c != cout) {
      throw ConfigError(name + ": expected " + std::to_string(cout) + " outputs, found " + std::to_string(w.c));
    }
  };
  expect("head.score.conv6", score_channels());
  if (variant_ == Variant::three_branch) expect("head.box.conv6", 4 * config_.anchors_per_cell);
  expect("head.mask.conv6", config_.mask_side * config_.mask_side);
  expect("adjust.exemplar", config_.feature_channels);
  expect("adjust.search", config_.feature_channels);
  for (const auto& [name, v] : params_.entries()) {
    for (double x : v.value().data) {
      if (!std::isfinite(x)) throw ConfigError("parameter '" + name + "' is not finite");
    }
  }
}

std::size_t SiamMaskModel::expected_param_count() const { return params_.scalar_count(); }

Tensor SiamMaskModel::normalize_patch(std::span<const std::uint8_t> bgr, int side) const {
  if (bgr.size() != static_cast<std::size_t>(side) * side * 3) throw ShapeError("normalize_patch: wrong byte count");
  Tensor t(3, side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const double v = bgr[(static_cast<std::size_t>(y) * side + x) * 3 + ch] / 255.0;
        t.at(ch, y, x) = (v - config_.input_mean[ch]) * config_.input_scale[ch];
      }
    }
  }
  return t;
}

FeaturePyramid SiamMaskModel::backbone_forward(const Var& patch) const {
  const Tensor& in = patch.value();
  if (in.c != 3) throw ShapeError("backbone_forward: expected 3 channels, got " + in.shape_str());
  if (in.h != in.w || (in.h != config_.exemplar_side && in.h != config_.search_side)) {
    throw ShapeError("backbone_forward: input side must be " + std::to_string(config_.exemplar_side) + " or " +
                     std::to_string(config_.search_side) + ", got " + in.shape_str());
  }
  const ModelParams& p = params_;
  FeaturePyramid out;
  if (config_.backbone_kind == BackboneKind::toy_convnet) {
    out.f3 = apply_relu(p, "backbone.stage1", patch, {2, 0, 1});
    out.f2 = apply_relu(p, "backbone.stage2", out.f3, {2, 0, 1});
    out.f1 = apply_relu(p, "backbone.stage3", out.f2, {2, 0, 1});
    out.final = apply_relu(p, "backbone.stage4", out.f1, {1, 2, 2});
    return out;
  }
  out.f3 = apply_relu(p, "backbone.conv1", patch, {2, 0, 1});
  Var x = nn::max_pool(out.f3, 3, 2, 1);
  for (const BlockSpec& b : resnet_blocks()) {
    x = bottleneck(p, b, x);
    if (b.name == "backbone.layer1.2") out.f2 = x;
    if (b.name == "backbone.layer2.3") out.f1 = x;
  }
  out.final = x;
  return out;
}

Var SiamMaskModel::adjust_exemplar(const Var& final) const { return apply(params_, "adjust.exemplar", final); }
Var SiamMaskModel::adjust_search(const Var& final) const { return apply(params_, "adjust.search", final); }

ResponseGrid SiamMaskModel::heads_forward(const Var& corr, bool with_mask) const {
  const Tensor& c = corr.value();
  if (c.c != config_.feature_channels) {
    throw ShapeError("heads_forward: expected " + std::to_string(config_.feature_channels) + " channels, got " +
                     c.shape_str());
  }
  ResponseGrid g;
  g.features = corr;
  g.scores = apply(params_, "head.score.conv6", apply_relu(params_, "head.score.conv5", corr));
  if (variant_ == Variant::three_branch) {
    g.box_deltas = apply(params_, "head.box.conv6", apply_relu(params_, "head.box.conv5", corr));
  }
  if (with_mask) g.mask_logits = apply(params_, "head.mask.conv6", apply_relu(params_, "head.mask.conv5", corr));
  return g;
}

Var SiamMaskModel::mask_head(const Var& corr, std::span<const int> cells) const {
  const Var rows = nn::gather_cells(corr, cells);
  return apply(params_, "head.mask.conv6", apply_relu(params_, "head.mask.conv5", rows));
}

Var SiamMaskModel::refine_mask(int cell, const Var& corr, const FeaturePyramid& search) const {
  const int R = config_.response_side;
  const Tensor& c = corr.value();
  if (c.h != R || c.w != R) throw ShapeError("refine_mask: correlation grid must be " + std::to_string(R));
  if (cell < 0 || cell >= R * R) throw std::out_of_range("refine_mask: RoW index " + std::to_string(cell));
  const int row = cell / R, col = cell % R;
  const ModelParams& p = params_;
  const PyramidSides ze = pyramid_sides(config_, config_.exemplar_side);

  const int k0 = config_.refinement_channels[0];
  const int cells[1] = {cell};
  Var e = apply(p, "refine.deconv", nn::gather_cells(corr, cells));
  e = nn::reshape(e, k0, ze.f1, ze.f1);

  struct Level {
    const Var* feat;
    int side;
    int next_side;
  };
  const std::array<Level, 3> levels{Level{&search.f1, ze.f1, ze.f2}, Level{&search.f2, ze.f2, ze.f3},
                                    Level{&search.f3, ze.f3, config_.refined_mask_side}};
  for (int u = 0; u < 3; ++u) {
    const Level& L = levels[u];
    const int step = (L.feat->value().h - L.side) / (R - 1);
    const Var skip = nn::crop(*L.feat, row * step, col * step, L.side, L.side);
    const std::string name = "refine.u" + std::to_string(u + 2);
    const Var a = apply(p, name + ".a2", apply_relu(p, name + ".a1", e, {1, 1, 1}), {1, 1, 1});
    Var b = apply_relu(p, name + ".b1", skip, {1, 1, 1});
    b = apply_relu(p, name + ".b2", b, {1, 1, 1});
    b = apply(p, name + ".b3", b, {1, 1, 1});
    e = nn::relu(nn::resize_bilinear(nn::add(a, b), L.next_side, L.next_side));
  }
  return apply(p, "refine.out", e, {1, kernel_of(p, "refine.out") / 2, 1});
}

}  // namespace siammask
