#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vmap/render_svg.hpp"
#include "vmap/trainer.hpp"

namespace fs = std::filesystem;
using namespace vmap;

namespace {

int cmd_gen_data(std::uint64_t seed, int n_scenes, int image_size, double train_ratio,
                 const std::string& out_dir) {
  SceneParams params;
  params.image_size = image_size;
  std::vector<SceneSample> samples;
  for (int i = 0; i < n_scenes; ++i) samples.push_back(generate_sample(seed + i, params));
  DatasetManifest m = export_dataset(samples, out_dir, train_ratio);
  std::cout << "wrote " << m.scene_ids.size() << " scenes to " << out_dir << " (train "
            << m.train_ids.size() << " / val " << m.val_ids.size() << ")\n";
  std::cout << "manifest: " << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  RunConfig cfg = load_run_config(config_path);
  std::cout << "training run " << cfg.run_id << " (" << cfg.optim.steps << " steps)\n";
  TrainResult res = train(cfg, resume, [](const StepRecord& r) {
    if (r.step % 25 == 0)
      std::cout << "step " << r.step << " total=" << r.total << " cls=" << r.cls
                << " p2p=" << r.p2p << " dir=" << r.dir << "\n";
  });
  std::cout << "final checkpoint: " << res.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& split, bool gt_as_predictions, const std::string& label) {
  RunConfig cfg = load_run_config(config_path);
  EvalResult res = evaluate_checkpoint(checkpoint, cfg, split, gt_as_predictions);
  fs::path dir(run_dir(cfg));
  fs::create_directories(dir);
  std::ofstream rf(dir / ("report_" + split + ".json"));
  rf << report_to_json(res.breakdown, cfg.eval);
  std::string row = report_table_row(res.breakdown, label.empty() ? cfg.run_id : label);
  std::ofstream tf(dir / ("report_" + split + ".txt"));
  tf << row << "\n";
  std::cout << row << "\n";
  std::cout << "throughput: " << res.scenes_per_second << " scenes/s (informational)\n";
  std::cout << "report: " << (dir / ("report_" + split + ".json")).string() << "\n";
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& checkpoint,
              const std::string& dataset_dir, const std::string& scene_id,
              const std::string& out_path) {
  RunConfig cfg = load_run_config(config_path);
  MapNet net(cfg.model);
  load_checkpoint(checkpoint, net);
  SceneSample scene = load_scene(dataset_dir, scene_id);
  VectorizedMap pred = infer_scene(net, scene, cfg.eval);
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot open output " + out_path);
  f << map_to_json(pred);
  std::cout << "wrote " << pred.elements.size() << " elements to " << out_path << "\n";
  return 0;
}

int cmd_render(const std::vector<std::string>& map_paths, const std::string& out_path) {
  std::vector<VectorizedMap> maps;
  std::vector<std::string> titles;
  for (const std::string& p : map_paths) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot open map document " + p);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
      maps.push_back(map_from_json(text));
    } catch (const std::exception& e) {
      throw std::runtime_error("parse error in " + p + ": " + e.what());
    }
    titles.push_back(fs::path(p).stem().string());
  }
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot open output " + out_path);
  f << render_maps_svg(maps, titles);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vectorized intersection mapping pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  std::uint64_t seed = 7;
  int n_scenes = 8, image_size = 128;
  double train_ratio = 0.75;
  std::string out_dir;
  gen->add_option("--seed", seed, "base RNG seed");
  gen->add_option("--scenes", n_scenes, "number of scenes");
  gen->add_option("--image-size", image_size, "square image size in pixels");
  gen->add_option("--train-ratio", train_ratio, "train split fraction");
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model from a run config");
  std::string config_path, resume;
  tr->add_option("--config", config_path, "run config JSON")->required();
  tr->add_option("--resume", resume, "checkpoint to resume from");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_config, ev_ckpt, ev_split = "val", ev_label;
  bool gt_as_pred = false;
  ev->add_option("--config", ev_config, "run config JSON")->required();
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path");
  ev->add_option("--split", ev_split, "dataset split (train|val|all)");
  ev->add_option("--label", ev_label, "row label for the table export");
  ev->add_flag("--gt-as-predictions", gt_as_pred, "feed ground truth as predictions (debug)");

  // infer
  auto* in = app.add_subcommand("infer", "predict a map for one scene");
  std::string in_config, in_ckpt, in_dataset, in_scene, in_out = "prediction.json";
  in->add_option("--config", in_config, "run config JSON")->required();
  in->add_option("--checkpoint", in_ckpt, "checkpoint path")->required();
  in->add_option("--dataset", in_dataset, "dataset directory")->required();
  in->add_option("--scene", in_scene, "scene id")->required();
  in->add_option("--out", in_out, "output map document");

  // render
  auto* re = app.add_subcommand("render", "render map document(s) to SVG");
  std::vector<std::string> re_maps;
  std::string re_out = "map.svg";
  re->add_option("--map", re_maps, "map document path(s); two give a side-by-side panel")
      ->required();
  re->add_option("--out", re_out, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(seed, n_scenes, image_size, train_ratio, out_dir);
    if (*tr) return cmd_train(config_path, resume);
    if (*ev) return cmd_eval(ev_config, ev_ckpt, ev_split, gt_as_pred, ev_label);
    if (*in) return cmd_infer(in_config, in_ckpt, in_dataset, in_scene, in_out);
    if (*re) return cmd_render(re_maps, re_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
