#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "siammask/checkpoint.hpp"
#include "siammask/errors.hpp"
#include "siammask/eval.hpp"
#include "siammask/harness.hpp"
#include "siammask/mot.hpp"
#include "siammask/track.hpp"
#include "siammask/train.hpp"

namespace siammask::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data, out, checkpoint, results;
};

std::string frame_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d.png", t);
  return buf;
}

std::string object_dir(int id) { return "obj" + std::to_string(id); }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

std::string need(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing ") + what);
  return value;
}

class Session {
 public:
  Session(std::string command, const Common& c, std::ostream& out) : command_(std::move(command)), out_(out) {
    if (!c.config.empty()) cfg_ = load_run_config(c.config);
    apply_environment(cfg_);
    if (c.seed) cfg_.seed = *c.seed;
    if (!c.data.empty()) cfg_.paths.dataset = c.data;
    if (!c.out.empty()) cfg_.paths.output = c.out;
    if (!c.checkpoint.empty()) cfg_.paths.checkpoint = c.checkpoint;
  }

  RunConfig& cfg() { return cfg_; }

  /// Validates, prints the resolved config and returns its hash.
  std::string resolve() {
    cfg_ = json(cfg_).get<RunConfig>();
    hash_ = config_hash(cfg_);
    out_ << json{{"command", command_}, {"config_hash", hash_}, {"config", cfg_}}.dump() << "\n";
    return hash_;
  }

  json stamp() const { return json{{"command", command_}, {"config_hash", hash_}, {"config", cfg_}}; }
  const std::string& hash() const { return hash_; }
  std::ostream& out() { return out_; }

 private:
  std::string command_;
  std::ostream& out_;
  RunConfig cfg_;
  std::string hash_;
};

LoadedCheckpoint load_model(const RunConfig& cfg) {
  LoadedCheckpoint ck = load_checkpoint(need(cfg.paths.checkpoint, "--checkpoint"));
  return ck;
}

// --- commands ------------------------------------------------------------------------

void cmd_gen_data(Session& s) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path out = need(c.paths.output, "--out");
  const std::vector<Sequence> data = generate_dataset(c.data, c.seed);
  write_dataset(out, data);
  write_json(out / "run.json", s.stamp());
  s.out() << "wrote " << data.size() << " sequences to " << out.string() << "\n";
}

void cmd_train(Session& s, int max_steps) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path out = need(c.paths.output, "--out");
  const std::vector<Sequence> data = load_dataset(need(c.paths.dataset, "--data"));
  fs::create_directories(out);
  SiamMaskModel model(c.model, c.variant, c.seed);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  std::ofstream log(out / "loss.csv");
  log << "step,epoch,lr,loss,mask,sim,score,reg\n";
  TrainOptions opt;
  opt.checkpoint_dir = out;
  opt.max_steps = max_steps;
  opt.checkpoint_extra = {{"config_hash", s.hash()}};
  opt.on_step = [&](const StepRecord& r) {
    char line[256];
    std::snprintf(line, sizeof line, "%d,%.6f,%.8g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.step, r.epoch, r.lr, r.loss,
                  r.components.mask, r.components.sim, r.components.score, r.components.reg);
    log << line;
  };
  const TrainResult res = train(model, data, tc, opt);
  save_checkpoint(out / "model.ckpt", model,
                  {{"config_hash", s.hash()}, {"steps", res.history.size()},
                   {"loss", res.history.empty() ? 0.0 : res.history.back().loss}});
  write_json(out / "run.json", s.stamp());
  s.out() << "trained " << res.history.size() << " steps, checkpoint " << (out / "model.ckpt").string() << "\n";
}

TrackerOptions tracker_options(const RunConfig& c, const LoadedCheckpoint& ck) {
  TrackerOptions o = c.track;
  if (ck.model.variant() == Variant::three_branch) o.anchors = c.train;
  return o;
}

void cmd_track(Session& s, bool ground_truth) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path out = need(c.paths.output, "--out");
  const std::vector<Sequence> data = load_dataset(need(c.paths.dataset, "--data"));
  std::optional<LoadedCheckpoint> ck;
  if (!ground_truth) ck = load_model(c);
  int streams = 0;
  for (const Sequence& seq : data) {
    for (const ObjectAnnotation& obj : seq.objects) {
      std::vector<FrameResult> results;
      if (ground_truth) {
        GeneratedBox prev;
        for (int t = 0; t < seq.frame_count(); ++t) {
          FrameResult r;
          r.mask = obj.masks[t];
          r.box = generate_box(r.mask, c.track.strategy, prev);
          r.score = 1.0;
          prev = r.box;
          results.push_back(std::move(r));
        }
      } else {
        SiamMaskTracker tracker(ck->model, tracker_options(c, *ck));
        results = track_sequence(tracker, seq, obj.id);
      }
      write_result_stream(out / seq.name / object_dir(obj.id), results);
      ++streams;
    }
  }
  json stamp = s.stamp();
  stamp["ground_truth"] = ground_truth;
  write_json(out / "run.json", stamp);
  s.out() << "wrote " << streams << " result streams to " << out.string() << "\n";
}

void cmd_mot(Session& s) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path out = need(c.paths.output, "--out");
  const std::vector<Sequence> data = load_dataset(need(c.paths.dataset, "--data"));
  const LoadedCheckpoint ck = load_model(c);
  MotOptions mo = c.mot;
  mo.tracker = tracker_options(c, ck);
  for (const Sequence& seq : data) {
    MultiObjectTracker mot(ck.model, mo);
    std::vector<cv::Mat> ids;
    json frames = json::array();
    for (int t = 0; t < seq.frame_count(); ++t) {
      const MotStep step = mot.step(seq.frames[t], oracle_detector(seq, t, c.detector));
      cv::Mat id_img(seq.height(), seq.width(), CV_16UC1, cv::Scalar(0));
      json tracks = json::array();
      for (const MotTrack& tr : mot.tracks()) {
        if (tr.status == TrackStatus::active) {
          const auto v = tr.mask.values();
          auto* px = id_img.ptr<std::uint16_t>();
          for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i]) px[i] = static_cast<std::uint16_t>(tr.id);
          }
        }
        tracks.push_back({{"id", tr.id},
                          {"status", tr.status == TrackStatus::active ? "active" : "lost"},
                          {"lost_age", tr.lost_age},
                          {"box", {tr.box.x_min, tr.box.y_min, tr.box.x_max, tr.box.y_max}}});
      }
      json pairs = json::array();
      for (const auto& [i, j] : step.assignment.pairs) pairs.push_back({i, step.track_ids[j]});
      frames.push_back({{"frame", t},
                        {"assignment", pairs},
                        {"total_affinity", step.assignment.total},
                        {"spawned", step.spawned},
                        {"removed", step.removed},
                        {"tracks", tracks}});
      ids.push_back(id_img);
    }
    write_instance_stream(out / seq.name / "instances", ids);
    json manifest = s.stamp();
    manifest["sequence"] = seq.name;
    manifest["frames"] = frames;
    write_json(out / seq.name / "tracks.json", manifest);
  }
  write_json(out / "run.json", s.stamp());
  s.out() << "tracked " << data.size() << " sequences into " << out.string() << "\n";
}

void cmd_eval(Session& s, const std::string& results_dir, const std::string& report) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path results = need(results_dir, "--results");
  const fs::path report_path = need(report, "--report");
  const std::vector<Sequence> data = load_dataset(need(c.paths.dataset, "--data"));
  std::vector<ObjectResult> streams;
  json per_object = json::array();
  for (const Sequence& seq : data) {
    for (const ObjectAnnotation& obj : seq.objects) {
      const fs::path dir = results / seq.name / object_dir(obj.id);
      if (!fs::exists(dir)) continue;
      streams.push_back(read_result_stream(dir, seq.name, obj.id, seq.frame_count()));
    }
  }
  if (streams.empty()) throw ConfigError("eval: no result streams under " + results.string());
  MetricsReport rep = evaluate(data, streams);
  rep.boxes = [&] {
    // Recompute success rates with the configured thresholds.
    std::vector<std::vector<double>> ious;
    for (const ObjectResult& r : streams) {
      const Sequence& seq = *std::find_if(data.begin(), data.end(), [&](const Sequence& q) { return q.name == r.sequence; });
      const ObjectAnnotation& obj = seq.object(r.object_id);
      std::vector<double> v;
      bool started = false;
      for (int t = 0; t < seq.frame_count(); ++t) {
        if (!started) {
          started = obj.visible(t);
          continue;
        }
        if (obj.visible(t)) v.push_back(box_iou(r.boxes[t], obj.rotated[t]));
      }
      ious.push_back(std::move(v));
    }
    return success_map(ious, c.eval.thresholds);
  }();
  for (const ObjectResult& r : streams) {
    const Sequence& seq = *std::find_if(data.begin(), data.end(), [&](const Sequence& q) { return q.name == r.sequence; });
    const MetricsReport one = evaluate({seq}, {r});
    per_object.push_back({{"sequence", r.sequence}, {"object", r.object_id}, {"j", one.j}, {"f", one.f}, {"boxes", one.boxes}});
  }
  if (!c.paths.checkpoint.empty()) {
    const LoadedCheckpoint ck = load_model(c);
    std::vector<ResetRun> runs;
    for (const ObjectResult& r : streams) {
      const Sequence& seq = *std::find_if(data.begin(), data.end(), [&](const Sequence& q) { return q.name == r.sequence; });
      SiamMaskTracker tracker(ck.model, tracker_options(c, ck));
      runs.push_back(run_reset_protocol(tracker, seq, r.object_id, c.eval.reset));
    }
    rep.reset = accuracy_robustness(runs);
  }
  json j = s.stamp();
  j["version"] = 1;
  j["metrics"] = rep;
  j["objects"] = per_object;
  write_json(report_path, j);
  s.out() << json(rep).dump() << "\n";
}

void cmd_oracle_study(Session& s, const std::string& report) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path report_path = need(report, "--report");
  const std::vector<Sequence> data =
      c.paths.dataset.empty() ? generate_dataset(c.data, c.seed) : load_dataset(c.paths.dataset);
  const OracleReport rep = representation_oracles(data);
  json j = s.stamp();
  j["version"] = 1;
  j["oracles"] = rep;
  j["ordering_holds"] = rep.mbr.miou > rep.min_max.miou && rep.min_max.miou > rep.fixed_aspect.miou;
  write_json(report_path, j);
  s.out() << j["oracles"].dump() << "\n";
}

void cmd_render(Session& s, const std::string& results_dir) {
  s.resolve();
  const RunConfig& c = s.cfg();
  const fs::path results = need(results_dir, "--results");
  const fs::path out = need(c.paths.output, "--out");
  const std::vector<Sequence> data = load_dataset(need(c.paths.dataset, "--data"));
  static const cv::Scalar palette[] = {{40, 200, 240}, {240, 120, 40}, {80, 220, 80}, {200, 60, 200}, {60, 60, 230}};
  int written = 0;
  for (const Sequence& seq : data) {
    std::vector<std::pair<int, ObjectResult>> streams;
    for (const ObjectAnnotation& obj : seq.objects) {
      const fs::path dir = results / seq.name / object_dir(obj.id);
      if (fs::exists(dir)) streams.emplace_back(obj.id, read_result_stream(dir, seq.name, obj.id, seq.frame_count()));
    }
    if (streams.empty()) continue;
    fs::create_directories(out / seq.name);
    for (int t = 0; t < seq.frame_count(); ++t) {
      cv::Mat canvas = seq.frames[t].clone();
      for (const auto& [id, r] : streams) {
        const cv::Scalar col = palette[(id - 1) % 5];
        cv::Mat tint(canvas.size(), canvas.type(), col), blended;
        cv::addWeighted(canvas, 0.5, tint, 0.5, 0.0, blended);
        cv::Mat m(canvas.rows, canvas.cols, CV_8UC1);
        const auto v = r.masks[t].values();
        for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i] ? 255 : 0;
        blended.copyTo(canvas, m);
        std::vector<cv::Point> poly;
        for (const Point2& p : r.boxes[t].corners()) poly.emplace_back(cvRound(p.x), cvRound(p.y));
        cv::polylines(canvas, poly, true, col, 1, cv::LINE_8);
      }
      cv::imwrite((out / seq.name / frame_name(t)).string(), canvas);
      ++written;
    }
  }
  s.out() << "rendered " << written << " frames to " << out.string() << "\n";
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--seed", c.seed, "Override the configured seed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SiamMask tracking and segmentation toolkit", "siammask"};
  app.require_subcommand(1);
  Common c;
  std::string results, report, strategy, variant;
  int max_steps = 0, sequences = 0;
  bool ground_truth = false;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  add_common(gen, c);
  gen->add_option("--out", c.out, "Dataset directory");
  gen->add_option("--sequences", sequences, "Number of sequences");

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  add_common(tr, c);
  tr->add_option("--data", c.data, "Dataset directory");
  tr->add_option("--out", c.out, "Checkpoint directory");
  tr->add_option("--variant", variant, "two_branch or three_branch");
  tr->add_option("--max-steps", max_steps, "Stop after this many steps");

  auto* tk = app.add_subcommand("track", "Track every object of every sequence");
  add_common(tk, c);
  tk->add_option("--data", c.data, "Dataset directory");
  tk->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
  tk->add_option("--out", c.out, "Result directory");
  tk->add_option("--strategy", strategy, "min_max, mbr or opt");
  tk->add_flag("--ground-truth", ground_truth, "Emit the annotations instead of running a model");

  auto* mt = app.add_subcommand("mot", "Multi-object tracking with the oracle detector");
  add_common(mt, c);
  mt->add_option("--data", c.data, "Dataset directory");
  mt->add_option("--checkpoint", c.checkpoint, "Three-branch model checkpoint");
  mt->add_option("--out", c.out, "Result directory");

  auto* ev = app.add_subcommand("eval", "Score result streams against a dataset");
  add_common(ev, c);
  ev->add_option("--data", c.data, "Dataset directory");
  ev->add_option("--results", results, "Directory written by track");
  ev->add_option("--report", report, "Output JSON report");
  ev->add_option("--checkpoint", c.checkpoint, "Also run the reset protocol with this model");

  auto* os = app.add_subcommand("oracle-study", "Compare ground-truth box representations");
  add_common(os, c);
  os->add_option("--data", c.data, "Dataset directory (generated from the config when omitted)");
  os->add_option("--report", report, "Output JSON report");

  auto* rd = app.add_subcommand("render", "Overlay result masks and boxes on the frames");
  add_common(rd, c);
  rd->add_option("--data", c.data, "Dataset directory");
  rd->add_option("--results", results, "Directory written by track");
  rd->add_option("--out", c.out, "Image directory");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  std::string command = "siammask";
  auto fail = [&](const std::string& type, const std::string& message, int code) {
    err << json{{"error", {{"command", command}, {"type", type}, {"message", message}}}}.dump() << "\n";
    return code;
  };
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), 2);
  }

  CLI::App* sub = app.get_subcommands().front();
  command = sub->get_name();
  try {
    Session s(command, c, out);
    if (sub == gen) {
      if (sequences > 0) s.cfg().data.sequences = sequences;
      cmd_gen_data(s);
    } else if (sub == tr) {
      if (!variant.empty()) s.cfg().variant = variant_from_string(variant);
      cmd_train(s, max_steps);
    } else if (sub == tk) {
      if (!strategy.empty()) s.cfg().track.strategy = box_strategy_from_string(strategy);
      cmd_track(s, ground_truth);
    } else if (sub == mt) {
      cmd_mot(s);
    } else if (sub == ev) {
      cmd_eval(s, results, report);
    } else if (sub == os) {
      cmd_oracle_study(s, report);
    } else if (sub == rd) {
      cmd_render(s, results);
    }
  } catch (const UsageError& e) {
    return fail("UsageError", e.what(), 2);
  } catch (const DatasetError& e) {
    err << json{{"error",
                 {{"command", command}, {"type", "DatasetError"}, {"message", e.what()}, {"problems", e.problems()}}}}
               .dump()
        << "\n";
    return 1;
  } catch (const ConfigError& e) {
    return fail("ConfigError", e.what(), 1);
  } catch (const TrainingDiverged& e) {
    return fail("TrainingDiverged", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("Error", e.what(), 1);
  }
  return 0;
}

}  // namespace siammask::cli
