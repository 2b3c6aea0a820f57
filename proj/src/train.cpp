#include "siammask/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "siammask/checkpoint.hpp"
#include "siammask/errors.hpp"

namespace siammask {

using nn::Tensor;
using nn::Var;

std::string to_string(MaskPath p) { return p == MaskPath::plain ? "plain" : "refined"; }

MaskPath mask_path_from_string(const std::string& s) {
  if (s == "plain") return MaskPath::plain;
  if (s == "refined") return MaskPath::refined;
  throw ConfigError("unknown mask_path '" + s + "'");
}

void TrainConfig::validate(const ModelConfig& model) const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (lambda_mask < 0 || lambda_score < 0 || lambda_reg < 0) fail("loss weights must be non-negative");
  if (smooth_l1_beta <= 0) fail("smooth_l1_beta must be positive");
  if (positive_iou <= 0 || positive_iou > 1) fail("positive_iou must be in (0, 1]");
  if (center_distance <= 0) fail("center_distance must be positive");
  if (probability_clamp <= 0 || probability_clamp >= 0.5) fail("probability_clamp must be in (0, 0.5)");
  if (lr_start <= 0 || lr_peak <= 0 || lr_end <= 0) fail("learning rates must be positive");
  if (warmup_epochs < 0 || decay_epochs < 0 || total_epochs() < 1) fail("need at least one epoch");
  if (steps_per_epoch < 1 || batch_size < 1) fail("steps_per_epoch and batch_size must be positive");
  if (momentum < 0 || momentum >= 1 || weight_decay < 0 || grad_clip < 0) fail("optimizer constants out of range");
  if (exemplar_shift < 0 || search_shift < 0) fail("shifts must be non-negative");
  for (const auto& r : {exemplar_scale, search_scale}) {
    if (r[0] <= 0 || r[1] < r[0]) fail("scale ranges must be positive and ordered");
  }
  if (context_amount < 0 || max_frame_gap < 0) fail("context_amount and max_frame_gap must be non-negative");
  if (static_cast<int>(anchor_ratios.size()) != model.anchors_per_cell) {
    fail("anchor_ratios has " + std::to_string(anchor_ratios.size()) + " entries for k = " +
         std::to_string(model.anchors_per_cell));
  }
  for (double r : anchor_ratios) {
    if (r <= 0) fail("anchor ratios must be positive");
  }
  if (anchor_size <= 0 || max_mask_rows < 1) fail("anchor_size and max_mask_rows must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lambda_mask", c.lambda_mask},
                     {"lambda_score", c.lambda_score},
                     {"lambda_reg", c.lambda_reg},
                     {"smooth_l1_beta", c.smooth_l1_beta},
                     {"positive_iou", c.positive_iou},
                     {"center_distance", c.center_distance},
                     {"probability_clamp", c.probability_clamp},
                     {"lr_start", c.lr_start},
                     {"lr_peak", c.lr_peak},
                     {"lr_end", c.lr_end},
                     {"warmup_epochs", c.warmup_epochs},
                     {"decay_epochs", c.decay_epochs},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"batch_size", c.batch_size},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"grad_clip", c.grad_clip},
                     {"exemplar_shift", c.exemplar_shift},
                     {"search_shift", c.search_shift},
                     {"exemplar_scale", c.exemplar_scale},
                     {"search_scale", c.search_scale},
                     {"context_amount", c.context_amount},
                     {"max_frame_gap", c.max_frame_gap},
                     {"anchor_ratios", c.anchor_ratios},
                     {"anchor_size", c.anchor_size},
                     {"mask_path", to_string(c.mask_path)},
                     {"max_mask_rows", c.max_mask_rows},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const nlohmann::json defaults = TrainConfig{};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("train: unknown key '" + it.key() + "'");
  }
  nlohmann::json merged = defaults;
  merged.update(j);
  TrainConfig d;
  merged.at("lambda_mask").get_to(d.lambda_mask);
  merged.at("lambda_score").get_to(d.lambda_score);
  merged.at("lambda_reg").get_to(d.lambda_reg);
  merged.at("smooth_l1_beta").get_to(d.smooth_l1_beta);
  merged.at("positive_iou").get_to(d.positive_iou);
  merged.at("center_distance").get_to(d.center_distance);
  merged.at("probability_clamp").get_to(d.probability_clamp);
  merged.at("lr_start").get_to(d.lr_start);
  merged.at("lr_peak").get_to(d.lr_peak);
  merged.at("lr_end").get_to(d.lr_end);
  merged.at("warmup_epochs").get_to(d.warmup_epochs);
  merged.at("decay_epochs").get_to(d.decay_epochs);
  merged.at("steps_per_epoch").get_to(d.steps_per_epoch);
  merged.at("batch_size").get_to(d.batch_size);
  merged.at("momentum").get_to(d.momentum);
  merged.at("weight_decay").get_to(d.weight_decay);
  merged.at("grad_clip").get_to(d.grad_clip);
  merged.at("exemplar_shift").get_to(d.exemplar_shift);
  merged.at("search_shift").get_to(d.search_shift);
  merged.at("exemplar_scale").get_to(d.exemplar_scale);
  merged.at("search_scale").get_to(d.search_scale);
  merged.at("context_amount").get_to(d.context_amount);
  merged.at("max_frame_gap").get_to(d.max_frame_gap);
  merged.at("anchor_ratios").get_to(d.anchor_ratios);
  merged.at("anchor_size").get_to(d.anchor_size);
  d.mask_path = mask_path_from_string(merged.at("mask_path").get<std::string>());
  merged.at("max_mask_rows").get_to(d.max_mask_rows);
  merged.at("seed").get_to(d.seed);
  c = d;
}

// ---------------------------------------------------------------------------

DeltaVector encode_deltas(const CenterBox& a, const CenterBox& t) {
  if (a.w <= 0 || a.h <= 0) throw std::invalid_argument("encode_deltas: anchor must have positive size");
  if (t.w <= 0 || t.h <= 0) throw std::invalid_argument("encode_deltas: target must have positive size");
  return {(t.cx - a.cx) / a.w, (t.cy - a.cy) / a.h, std::log(t.w / a.w), std::log(t.h / a.h)};
}

CenterBox decode_deltas(const CenterBox& a, const DeltaVector& d) {
  if (a.w <= 0 || a.h <= 0) throw std::invalid_argument("decode_deltas: anchor must have positive size");
  return {a.cx + d[0] * a.w, a.cy + d[1] * a.h, a.w * std::exp(d[2]), a.h * std::exp(d[3])};
}

Point2 row_center(const ModelConfig& cfg, int cell) {
  const int r = cell / cfg.response_side, c = cell % cfg.response_side;
  return {c * cfg.total_stride + 0.5 * cfg.exemplar_side, r * cfg.total_stride + 0.5 * cfg.exemplar_side};
}

AxisBox row_window(const ModelConfig& cfg, int cell) {
  const int r = cell / cfg.response_side, c = cell % cfg.response_side;
  const double x = c * cfg.total_stride, y = r * cfg.total_stride;
  return {x, y, x + cfg.exemplar_side, y + cfg.exemplar_side};
}

AnchorGrid make_anchors(const ModelConfig& model, const TrainConfig& cfg) {
  cfg.validate(model);
  AnchorGrid g;
  g.side = model.response_side;
  g.k = model.anchors_per_cell;
  const int cells = g.side * g.side;
  for (double ratio : cfg.anchor_ratios) {
    // Equal area for every ratio (h / w).
    const double w = cfg.anchor_size / std::sqrt(ratio);
    const double h = w * ratio;
    for (int cell = 0; cell < cells; ++cell) {
      const Point2 c = row_center(model, cell);
      g.anchors.push_back({c.x, c.y, w, h});
    }
  }
  return g;
}

Tensor assign_labels_2b(const ModelConfig& model, const TrainConfig& cfg, const AxisBox& gt) {
  const int R = model.response_side;
  Tensor y(1, R, R, -1.0);
  const Point2 g = gt.center();
  for (int cell = 0; cell < R * R; ++cell) {
    const Point2 c = row_center(model, cell);
    if (std::hypot(c.x - g.x, c.y - g.y) < cfg.center_distance) y.data[cell] = 1.0;
  }
  return y;
}

Tensor assign_labels_3b(const AnchorGrid& anchors, const TrainConfig& cfg, const AxisBox& gt) {
  Tensor y(anchors.k, anchors.side, anchors.side, -1.0);
  for (std::size_t i = 0; i < anchors.anchors.size(); ++i) {
    if (iou_axis(anchors.anchors[i].to_axis(), gt) >= cfg.positive_iou) y.data[i] = 1.0;
  }
  return y;
}

std::vector<int> positive_rows(const Tensor& labels) {
  std::vector<int> rows;
  const int cells = labels.h * labels.w;
  for (int cell = 0; cell < cells; ++cell) {
    for (int a = 0; a < labels.c; ++a) {
      if (labels.channel(a)[cell] > 0) {
        rows.push_back(cell);
        break;
      }
    }
  }
  return rows;
}

Tensor mask_labels(const ModelConfig& model, const BinaryMask& search_mask, int cell, int side) {
  const AxisBox win = row_window(model, cell);
  Tensor t(1, side, side, -1.0);
  const double step = double(model.exemplar_side) / side;
  for (int u = 0; u < side; ++u) {
    const int y = static_cast<int>(win.y_min) + static_cast<int>(std::floor((u + 0.5) * step));
    if (y < 0 || y >= search_mask.height()) continue;
    for (int v = 0; v < side; ++v) {
      const int x = static_cast<int>(win.x_min) + static_cast<int>(std::floor((v + 0.5) * step));
      if (x >= 0 && x < search_mask.width() && search_mask.at(y, x)) t.at(0, u, v) = 1.0;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

namespace {

/// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) { return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

double smooth_l1(double x, double beta) {
  const double b2 = beta * beta;
  const double ax = std::abs(x);
  return ax < 1.0 / b2 ? 0.5 * b2 * x * x : ax - 0.5 / b2;
}

double loss_sim(const Tensor& scores, const Tensor& labels) {
  require_same(scores, labels, "loss_sim");
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += softplus_neg(labels.data[i] * scores.data[i]);
  return s / static_cast<double>(scores.size());
}

double loss_score(const Tensor& p, const Tensor& labels, double clamp) {
  require_same(p, labels, "loss_score");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double y = labels.data[i] > 0 ? 1.0 : 0.0;
    const double q = std::clamp(p.data[i], clamp, 1.0 - clamp);
    s -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

double loss_reg(const Tensor& q, const Tensor& delta, const Tensor& labels, double beta) {
  require_same(q, delta, "loss_reg");
  if (q.c != 4 * labels.c || q.h != labels.h || q.w != labels.w) throw ShapeError("loss_reg: label grid mismatch");
  const int cells = labels.h * labels.w;
  double s = 0.0;
  for (int a = 0; a < labels.c; ++a) {
    for (int cell = 0; cell < cells; ++cell) {
      const double f = labels.channel(a)[cell] + 1.0;
      if (f == 0.0) continue;
      for (int j = 0; j < 4; ++j) s += f * smooth_l1(delta.channel(4 * a + j)[cell] - q.channel(4 * a + j)[cell], beta);
    }
  }
  return s / (2.0 * labels.c * cells);
}

double loss_mask(const std::vector<Tensor>& logits, const std::vector<Tensor>& labels, const std::vector<int>& y) {
  if (logits.size() != labels.size() || logits.size() != y.size()) throw ShapeError("loss_mask: row count mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    const double f = (1.0 + y[n]) / (2.0 * static_cast<double>(logits[n].size()));
    if (f == 0.0) continue;
    require_same(logits[n], labels[n], "loss_mask");
    double row = 0.0;
    for (std::size_t i = 0; i < logits[n].size(); ++i) row += softplus_neg(labels[n].data[i] * logits[n].data[i]);
    s += f * row;
  }
  return s;
}

double total_loss(Variant variant, const LossComponents& c, const TrainConfig& cfg) {
  if (variant == Variant::two_branch) return cfg.lambda_mask * c.mask + c.sim;
  return cfg.lambda_mask * c.mask + cfg.lambda_score * c.score + cfg.lambda_reg * c.reg;
}

// ---------------------------------------------------------------------------

namespace {

CropWindow window_around(const BinaryMask& mask, const Augmentation& aug, double context, int out_side,
                         double side_factor) {
  const AxisBox b = min_max_box(mask);
  const double side = context_side(b.width(), b.height(), context) * side_factor / aug.scale;
  const Point2 c = b.center();
  // Moving the window against the shift puts the object at out_side/2 + shift.
  return {c.x - aug.shift_x * side / out_side, c.y - aug.shift_y * side / out_side, side, out_side};
}

}  // namespace

TrainingPair make_training_pair(const cv::Mat& frame_z, const BinaryMask& mask_z, const cv::Mat& frame_x,
                                const BinaryMask& mask_x, const Augmentation& aug_z, const Augmentation& aug_x,
                                const ModelConfig& model, const TrainConfig& cfg) {
  if (mask_z.empty() || mask_x.empty()) throw PairRejected("object absent in one of the frames");
  const CropWindow wz = window_around(mask_z, aug_z, cfg.context_amount, model.exemplar_side, 1.0);
  const CropWindow wx = window_around(mask_x, aug_x, cfg.context_amount, model.search_side,
                                      double(model.search_side) / model.exemplar_side);
  TrainingPair p;
  p.search_window = wx;
  p.gt_mask = crop_mask(mask_x, wx);
  if (p.gt_mask.count() < 4 || crop_mask(mask_z, wz).count() < 4) {
    throw PairRejected("object smaller than 4 pixels after cropping");
  }
  p.exemplar = crop_patch(frame_z, wz);
  p.search = crop_patch(frame_x, wx);
  p.gt_box = wx.to_patch(min_max_box(mask_x));
  return p;
}

TrainingPair sample_training_pair(const std::vector<Sequence>& data, std::mt19937_64& rng, const ModelConfig& model,
                                  const TrainConfig& cfg) {
  if (data.empty()) throw ConfigError("training data is empty");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](int n) { return std::min(n - 1, static_cast<int>(u(rng) * n)); };
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Sequence& seq = data[pick(static_cast<int>(data.size()))];
    if (seq.objects.empty()) continue;
    const ObjectAnnotation& obj = seq.objects[pick(static_cast<int>(seq.objects.size()))];
    const int tz = pick(seq.frame_count());
    const int lo = std::max(0, tz - cfg.max_frame_gap), hi = std::min(seq.frame_count() - 1, tz + cfg.max_frame_gap);
    const int tx = lo + pick(hi - lo + 1);
    if (!obj.visible(tz) || !obj.visible(tx)) continue;
    auto aug = [&](double shift, const std::array<double, 2>& scale) {
      return Augmentation{shift * (2 * u(rng) - 1), shift * (2 * u(rng) - 1), scale[0] + u(rng) * (scale[1] - scale[0])};
    };
    const Augmentation az = aug(cfg.exemplar_shift, cfg.exemplar_scale);
    const Augmentation ax = aug(cfg.search_shift, cfg.search_scale);
    try {
      return make_training_pair(seq.frames[tz], obj.masks[tz], seq.frames[tx], obj.masks[tx], az, ax, model, cfg);
    } catch (const PairRejected&) {
    }
  }
  throw PairRejected("no usable training pair after 200 attempts");
}

PairTargets make_targets(const ModelConfig& model, Variant variant, const TrainConfig& cfg, const AnchorGrid& anchors,
                         const TrainingPair& pair, std::mt19937_64& rng) {
  PairTargets t;
  if (variant == Variant::two_branch) {
    t.labels = assign_labels_2b(model, cfg, pair.gt_box);
  } else {
    t.labels = assign_labels_3b(anchors, cfg, pair.gt_box);
    const int cells = anchors.side * anchors.side;
    t.deltas = Tensor(4 * anchors.k, anchors.side, anchors.side);
    const CenterBox gt = CenterBox::from_axis(pair.gt_box);
    for (int a = 0; a < anchors.k; ++a) {
      for (int cell = 0; cell < cells; ++cell) {
        const DeltaVector d = encode_deltas(anchors.at(a, cell), gt);
        for (int j = 0; j < 4; ++j) t.deltas.channel(4 * a + j)[cell] = d[j];
      }
    }
  }
  t.positives = positive_rows(t.labels);
  t.mask_rows = t.positives;
  if (cfg.mask_path == MaskPath::refined && static_cast<int>(t.positives.size()) > cfg.max_mask_rows) {
    std::vector<int> chosen;
    std::sample(t.positives.begin(), t.positives.end(), std::back_inserter(chosen), cfg.max_mask_rows, rng);
    t.mask_row_weight = double(t.positives.size()) / chosen.size();
    t.mask_rows = std::move(chosen);
  }
  const int side = cfg.mask_path == MaskPath::plain ? model.mask_side : model.refined_mask_side;
  for (int cell : t.mask_rows) t.mask_targets.push_back(mask_labels(model, pair.gt_mask, cell, side));
  return t;
}

LossComponents LossGraph::values() const {
  auto v = [](const Var& x) { return x.defined() ? x.value().data[0] : 0.0; };
  return {v(mask), v(sim), v(score), v(reg)};
}

LossGraph pair_loss(const SiamMaskModel& model, const Tensor& exemplar, const Tensor& search,
                    const PairTargets& t, const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  const FeaturePyramid zf = model.backbone_forward(Var(exemplar));
  const FeaturePyramid xf = model.backbone_forward(Var(search));
  const Var corr = nn::depthwise_xcorr(model.adjust_search(xf.final), model.adjust_exemplar(zf.final));
  const ResponseGrid grid = model.heads_forward(corr, false);
  const int R = mc.response_side;

  LossGraph g;
  if (model.variant() == Variant::two_branch) {
    g.sim = nn::logistic_loss(grid.scores, t.labels, Tensor(1, R, R, 1.0 / (R * R)));
  } else {
    const int k = mc.anchors_per_cell;
    g.score = nn::softmax_pair_loss(grid.scores, t.labels, 1.0 / (k * R * R), cfg.probability_clamp);
    Tensor w(4 * k, R, R);
    for (int a = 0; a < k; ++a) {
      for (int cell = 0; cell < R * R; ++cell) {
        const double f = (t.labels.channel(a)[cell] + 1.0) / (2.0 * k * R * R);
        for (int j = 0; j < 4; ++j) w.channel(4 * a + j)[cell] = f;
      }
    }
    g.reg = nn::smooth_l1_loss(grid.box_deltas, t.deltas, w, cfg.smooth_l1_beta);
  }

  if (t.mask_rows.empty()) {
    g.mask = Var(Tensor(1, 1, 1, 0.0));
  } else if (cfg.mask_path == MaskPath::plain) {
    const int P = static_cast<int>(t.mask_rows.size());
    const int S2 = mc.mask_side * mc.mask_side;
    const Var logits = model.mask_head(corr, t.mask_rows);
    Tensor labels(S2, 1, P);
    for (int p = 0; p < P; ++p) {
      for (int i = 0; i < S2; ++i) labels.data[static_cast<std::size_t>(i) * P + p] = t.mask_targets[p].data[i];
    }
    g.mask = nn::logistic_loss(logits, labels, Tensor(S2, 1, P, t.mask_row_weight / S2));
  } else {
    const int S = mc.refined_mask_side;
    const Tensor weight(1, S, S, t.mask_row_weight / (S * S));
    for (std::size_t p = 0; p < t.mask_rows.size(); ++p) {
      const Var term = nn::logistic_loss(model.refine_mask(t.mask_rows[p], corr, xf), t.mask_targets[p], weight);
      g.mask = p == 0 ? term : nn::add(g.mask, term);
    }
  }

  g.total = nn::scale(g.mask, cfg.lambda_mask);
  if (model.variant() == Variant::two_branch) {
    g.total = nn::add(g.total, g.sim);
  } else {
    g.total = nn::add(g.total, nn::add(nn::scale(g.score, cfg.lambda_score), nn::scale(g.reg, cfg.lambda_reg)));
  }
  return g;
}

// ---------------------------------------------------------------------------

double learning_rate(const TrainConfig& cfg, double epoch) {
  if (epoch < cfg.warmup_epochs) return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * epoch / cfg.warmup_epochs;
  if (cfg.decay_epochs == 0) return cfg.lr_peak;
  const double t = std::clamp((epoch - cfg.warmup_epochs) / cfg.decay_epochs, 0.0, 1.0);
  return cfg.lr_peak * std::pow(cfg.lr_end / cfg.lr_peak, t);
}

SgdOptimizer::SgdOptimizer(ModelParams& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& e : params_.entries()) {
    const Tensor& v = e.second.value();
    velocity_.emplace_back(v.c, v.h, v.w);
  }
}

double SgdOptimizer::step(double lr, int batch) {
  auto& entries = params_.entries();
  double sq = 0.0;
  for (auto& e : entries) {
    for (double g : e.second.grad().data) sq += g * g;
  }
  const double norm = std::sqrt(sq) / batch;
  double factor = 1.0 / batch;
  if (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) factor *= cfg_.grad_clip / norm;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var& p = entries[i].second;
    auto& w = p.mutable_value().data;
    const auto& g = p.grad().data;
    auto& v = velocity_[i].data;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = cfg_.momentum * v[j] + factor * g[j] + cfg_.weight_decay * w[j];
      w[j] -= lr * v[j];
    }
    p.zero_grad();
  }
  return norm;
}

TrainResult train(SiamMaskModel& model, const std::vector<Sequence>& data, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate(model.config());
  if (data.empty()) throw ConfigError("train: dataset is empty");
  const ModelConfig& mc = model.config();
  const AnchorGrid anchors = make_anchors(mc, cfg);
  std::mt19937_64 rng(cfg.seed);
  SgdOptimizer opt(model.params(), cfg);
  model.params().zero_grad();

  const int total = options.max_steps > 0 ? options.max_steps : cfg.total_epochs() * cfg.steps_per_epoch;
  TrainResult result;
  for (int step = 0; step < total; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.epoch = double(step) / cfg.steps_per_epoch;
    rec.lr = learning_rate(cfg, rec.epoch);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const TrainingPair pair = sample_training_pair(data, rng, mc, cfg);
      const PairTargets targets = make_targets(mc, model.variant(), cfg, anchors, pair, rng);
      const Tensor z = model.normalize_patch({pair.exemplar.data, pair.exemplar.total() * 3}, mc.exemplar_side);
      const Tensor x = model.normalize_patch({pair.search.data, pair.search.total() * 3}, mc.search_side);
      const LossGraph g = pair_loss(model, z, x, targets, cfg);
      const double value = g.total.value().data[0];
      const LossComponents c = g.values();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << rec.epoch << ", lr " << rec.lr
            << "): mask=" << c.mask << " sim=" << c.sim << " score=" << c.score << " reg=" << c.reg;
        throw TrainingDiverged(msg.str());
      }
      nn::backward(g.total);
      rec.loss += value / cfg.batch_size;
      rec.components.mask += c.mask / cfg.batch_size;
      rec.components.sim += c.sim / cfg.batch_size;
      rec.components.score += c.score / cfg.batch_size;
      rec.components.reg += c.reg / cfg.batch_size;
    }
    opt.step(rec.lr, cfg.batch_size);
    if (!model.params().all_finite()) {
      throw TrainingDiverged("parameters became non-finite at step " + std::to_string(step));
    }
    result.history.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (!options.checkpoint_dir.empty() && (step + 1) % cfg.steps_per_epoch == 0) {
      const int epoch = (step + 1) / cfg.steps_per_epoch;
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
      nlohmann::json extra = options.checkpoint_extra;
      extra.update({{"epoch", epoch}, {"step", step + 1}, {"loss", rec.loss}});
      save_checkpoint(options.checkpoint_dir / name, model, extra);
    }
  }
  return result;
}

}  // namespace siammask
