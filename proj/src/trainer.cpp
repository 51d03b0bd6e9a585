#include "vmap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace vmap {

std::string run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["run_id"] = c.run_id;
  j["model"] = nlohmann::json::parse(model_config_to_json(c.model));
  j["weights"] = {{"alpha_c", c.weights.alpha_c},
                  {"alpha_p", c.weights.alpha_p},
                  {"alpha_d", c.weights.alpha_d},
                  {"focal_alpha", c.weights.focal_alpha},
                  {"focal_gamma", c.weights.focal_gamma}};
  j["eval"] = {{"thresholds", c.eval.thresholds}, {"confidence_floor", c.eval.confidence_floor}};
  j["data"] = {{"dataset_dir", c.data.dataset_dir}, {"split", c.data.split}, {"seed", c.data.seed}};
  j["optim"] = {{"learning_rate", c.optim.learning_rate},
                {"decay", c.optim.decay},
                {"steps", c.optim.steps},
                {"batch_size", c.optim.batch_size},
                {"checkpoint_every", c.optim.checkpoint_every}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RunConfig c;
  c.run_id = j.value("run_id", c.run_id);
  if (j.contains("model")) c.model = model_config_from_json(j["model"].dump());
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    c.weights.alpha_c = w.value("alpha_c", c.weights.alpha_c);
    c.weights.alpha_p = w.value("alpha_p", c.weights.alpha_p);
    c.weights.alpha_d = w.value("alpha_d", c.weights.alpha_d);
    c.weights.focal_alpha = w.value("focal_alpha", c.weights.focal_alpha);
    c.weights.focal_gamma = w.value("focal_gamma", c.weights.focal_gamma);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    if (e.contains("thresholds")) c.eval.thresholds = e["thresholds"].get<std::vector<double>>();
    c.eval.confidence_floor = e.value("confidence_floor", c.eval.confidence_floor);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.data.dataset_dir = d.value("dataset_dir", c.data.dataset_dir);
    c.data.split = d.value("split", c.data.split);
    c.data.seed = d.value("seed", c.data.seed);
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    c.optim.learning_rate = o.value("learning_rate", c.optim.learning_rate);
    c.optim.decay = o.value("decay", c.optim.decay);
    c.optim.steps = o.value("steps", c.optim.steps);
    c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
    c.optim.checkpoint_every = o.value("checkpoint_every", c.optim.checkpoint_every);
  }
  if (c.optim.steps <= 0) throw std::invalid_argument("run config: steps must be > 0");
  if (c.optim.batch_size < 1) throw std::invalid_argument("run config: batch_size must be >= 1");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_run_config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

std::string runs_root() {
  if (const char* env = std::getenv("VMAP_RUNS_ROOT")) return env;
  return "runs";
}

std::string run_dir(const RunConfig& c) { return (fs::path(runs_root()) / c.run_id).string(); }

double AdamOptimizer::lr_at(int64_t step) const {
  if (cfg_.decay == "cosine")
    return cfg_.learning_rate * 0.5 *
           (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(cfg_.steps)));
  return cfg_.learning_rate;
}

void AdamOptimizer::step(ParamStore& params, int64_t step_index) {
  double lr = lr_at(step_index);
  double t = static_cast<double>(step_index + 1);
  double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t);
  double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t);
  for (auto& p : params.all()) {
    for (int64_t i = 0; i < p->value.size(); ++i) {
      size_t k = static_cast<size_t>(i);
      double g = p->grad[k];
      p->adam_m[k] = cfg_.adam_beta1 * p->adam_m[k] + (1.0 - cfg_.adam_beta1) * g;
      p->adam_v[k] = cfg_.adam_beta2 * p->adam_v[k] + (1.0 - cfg_.adam_beta2) * g * g;
      double mh = p->adam_m[k] / bc1;
      double vh = p->adam_v[k] / bc2;
      p->value[k] -= lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
    }
  }
}

std::vector<std::string> split_ids(const DatasetManifest& manifest, const std::string& split) {
  if (split == "train") return manifest.train_ids;
  if (split == "val") return manifest.val_ids;
  if (split == "all") return manifest.scene_ids;
  throw std::invalid_argument("unknown split: " + split);
}

namespace {

std::vector<const Image*> view_pointers(const SceneSample& s, bool single_view) {
  if (single_view) return {&s.images[0]};
  return {&s.images[0], &s.images[1], &s.images[2], &s.images[3]};
}

}  // namespace

TrainResult train(const RunConfig& config, const std::string& resume_from,
                  std::function<void(const StepRecord&)> on_step) {
  DatasetManifest manifest = load_manifest(config.data.dataset_dir);
  std::vector<std::string> ids = split_ids(manifest, config.data.split);
  if (ids.empty()) throw std::runtime_error("train: empty dataset split");

  std::vector<SceneSample> scenes;
  std::vector<std::vector<MapElement>> gts_norm;
  for (const std::string& id : ids) {
    scenes.push_back(load_scene(config.data.dataset_dir, id));
    gts_norm.push_back(normalize_elements(scenes.back().gt));
  }

  MapNet net(config.model);
  AdamOptimizer opt(config.optim);
  TrainState state;
  if (!resume_from.empty()) state = load_checkpoint(resume_from, net);

  fs::path dir(run_dir(config));
  fs::create_directories(dir / "checkpoints");
  {
    std::ofstream f(dir / "config.json");
    f << run_config_to_json(config);
  }
  std::ofstream log(dir / "train_log.jsonl", resume_from.empty() ? std::ios::trunc : std::ios::app);

  // Seeded epoch shuffling; re-derivable on resume.
  std::mt19937_64 order_rng(config.data.seed);
  std::vector<size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = 0;
  auto next_scene = [&]() -> size_t {
    if (cursor == 0) std::shuffle(order.begin(), order.end(), order_rng);
    size_t s = order[cursor];
    cursor = (cursor + 1) % order.size();
    return s;
  };
  // Replay data order up to the resume step.
  for (int64_t i = 0; i < state.step * config.optim.batch_size; ++i) next_scene();

  TrainResult result;
  for (int64_t step = state.step; step < config.optim.steps; ++step) {
    net.params().zero_grads();
    double total = 0.0, cls = 0.0, p2p = 0.0, dir_l = 0.0;
    size_t last_batch_scene = 0;
    for (int b = 0; b < config.optim.batch_size; ++b) {
      size_t si = next_scene();
      last_batch_scene = si;
      ad::Tape tape;
      ModelOutput out = net.forward(tape, view_pointers(scenes[si], config.model.single_view));
      LossReport rep;
      ad::Var loss =
          total_loss(tape, out, gts_norm[si], config.weights, config.model, &rep, nullptr);
      tape.backward(loss);
      total += rep.total;
      cls += rep.cls;
      p2p += rep.p2p;
      dir_l += rep.dir;
    }
    double inv_b = 1.0 / config.optim.batch_size;
    total *= inv_b;
    cls *= inv_b;
    p2p *= inv_b;
    dir_l *= inv_b;
    if (!std::isfinite(total)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               " (batch scene " + scenes[last_batch_scene].gt.scene_id + ")");
    }
    // Average gradients over the batch.
    for (auto& p : net.params().all())
      for (auto& g : p->grad.v) g *= inv_b;
    opt.step(net.params(), step);

    StepRecord rec{step, opt.lr_at(step), total, cls, p2p, dir_l};
    result.trace.push_back(rec);
    log << "{\"step\":" << rec.step << ",\"lr\":" << rec.lr << ",\"total\":" << rec.total
        << ",\"cls\":" << rec.cls << ",\"p2p\":" << rec.p2p << ",\"dir\":" << rec.dir << "}\n";
    if (on_step) on_step(rec);

    state.step = step + 1;
    if ((step + 1) % config.optim.checkpoint_every == 0) {
      save_checkpoint((dir / "checkpoints" / ("step_" + std::to_string(step + 1) + ".ckpt")).string(),
                      net, &state);
    }
  }
  log.flush();
  result.checkpoint_path = (dir / "checkpoints" / "final.ckpt").string();
  save_checkpoint(result.checkpoint_path, net, &state);
  return result;
}

std::vector<ScoredElement> prediction_to_elements(const Prediction& pred,
                                                  const PerceptionRange& range,
                                                  double confidence_floor) {
  int m = pred.class_logits.dim(0), nc = pred.class_logits.dim(1);
  int ne = pred.points.dim(1);
  std::vector<ScoredElement> out;
  for (int j = 0; j < m; ++j) {
    const double* logits = &pred.class_logits.v[static_cast<size_t>(j) * nc];
    double mx = logits[0];
    for (int c = 1; c < nc; ++c) mx = std::max(mx, logits[c]);
    double denom = 0.0;
    for (int c = 0; c < nc; ++c) denom += std::exp(logits[c] - mx);
    int argmax = 0;
    double best_real = -1.0;
    int best_cls = 0;
    for (int c = 0; c < nc; ++c) {
      double p = std::exp(logits[c] - mx) / denom;
      if (logits[c] > logits[argmax]) argmax = c;
      if (c < kNumClasses && p > best_real) {
        best_real = p;
        best_cls = c;
      }
    }
    if (argmax == kNumClasses) continue;  // no-object
    if (best_real < confidence_floor) continue;
    ScoredElement el;
    el.cls = static_cast<ElementClass>(best_cls);
    el.is_closed = class_is_closed(el.cls);
    el.confidence = best_real;
    el.points.resize(static_cast<size_t>(ne));
    Polyline unit(static_cast<size_t>(ne));
    for (int k = 0; k < ne; ++k) {
      unit[static_cast<size_t>(k)] = {
          std::clamp(pred.points.v[(static_cast<size_t>(j) * ne + k) * 2 + 0], 0.0, 1.0),
          std::clamp(pred.points.v[(static_cast<size_t>(j) * ne + k) * 2 + 1], 0.0, 1.0)};
    }
    el.points = denormalize_points(unit, range);
    out.push_back(std::move(el));
  }
  return out;
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const RunConfig& config,
                               const std::string& split, bool gt_as_predictions) {
  DatasetManifest manifest = load_manifest(config.data.dataset_dir);
  std::vector<std::string> ids = split_ids(manifest, split);
  if (ids.empty()) throw std::invalid_argument("evaluate: empty split " + split);

  MapNet net(config.model);
  if (!gt_as_predictions) load_checkpoint(checkpoint_path, net);

  std::vector<std::vector<ScoredElement>> preds;
  std::vector<VectorizedMap> gts;
  auto t0 = std::chrono::steady_clock::now();
  for (const std::string& id : ids) {
    SceneSample scene = load_scene(config.data.dataset_dir, id);
    if (gt_as_predictions) {
      std::vector<ScoredElement> p;
      for (const MapElement& el : scene.gt.elements)
        p.push_back({el.cls, el.points, el.is_closed, 1.0});
      preds.push_back(std::move(p));
    } else {
      Prediction pred = net.predict(view_pointers(scene, config.model.single_view));
      preds.push_back(prediction_to_elements(pred, scene.gt.range, config.eval.confidence_floor));
    }
    gts.push_back(scene.gt);
  }
  auto t1 = std::chrono::steady_clock::now();

  EvalConfig ecfg = config.eval;
  EvalResult res;
  res.breakdown = evaluate(preds, gts, ecfg);
  double secs = std::chrono::duration<double>(t1 - t0).count();
  res.scenes_per_second = secs > 0 ? static_cast<double>(ids.size()) / secs : 0.0;
  return res;
}

VectorizedMap infer_scene(MapNet& net, const SceneSample& scene, const EvalConfig& eval_cfg) {
  Prediction pred = net.predict(view_pointers(scene, net.config().single_view));
  std::vector<ScoredElement> els =
      prediction_to_elements(pred, scene.gt.range, eval_cfg.confidence_floor);
  VectorizedMap out;
  out.range = scene.gt.range;
  out.scene_id = scene.gt.scene_id;
  for (const ScoredElement& e : els) out.elements.push_back({e.cls, e.points, e.is_closed});
  return out;
}

}  // namespace vmap
