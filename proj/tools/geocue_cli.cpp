// Command-line surface: synthetic scene generation, training, weather
// evaluation, KNN cost benchmarking, and cue inspection dumps.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geocue/config.hpp"
#include "geocue/io.hpp"
#include "geocue/knn.hpp"
#include "geocue/metrics.hpp"
#include "geocue/train.hpp"

namespace fs = std::filesystem;
using namespace geocue;

namespace {

Config load_config_or_default(const std::string& path) {
  Config cfg;
  if (!path.empty()) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());  // missing config file is a config error
    }
    cfg = parse_config(text);
  }
  cfg.validate();
  return cfg;
}

std::string three_digits(int i) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

struct SceneSplitFiles {
  std::vector<PointCloud> clouds;
  std::vector<SceneEntry> entries;
};

SceneSplitFiles load_split(const std::string& data_dir,
                           const DatasetManifest& manifest,
                           const std::string& split) {
  SceneSplitFiles out;
  for (const SceneEntry& e : manifest.scenes) {
    if (e.split != split) continue;
    PointCloud cloud = read_scan_bin(data_dir + "/" + e.bin);
    cloud.labels = read_labels(data_dir + "/" + e.label, cloud.size());
    out.clouds.push_back(std::move(cloud));
    out.entries.push_back(e);
  }
  return out;
}

int cmd_gen(const Config& cfg, const std::string& out_dir,
            const std::string& weather, double severity) {
  fs::create_directories(out_dir + "/train");
  fs::create_directories(out_dir + "/eval");
  DatasetManifest manifest;
  manifest.config_hash = config_hash(cfg);

  auto emit = [&](const std::string& split, int count, uint64_t split_tag) {
    for (int i = 0; i < count; ++i) {
      const uint64_t seed = derive_seed(cfg.seed.master, kStreamScene,
                                        split_tag, static_cast<uint64_t>(i));
      PointCloud cloud = generate_scene(cfg.scene_spec(seed));
      SceneEntry e;
      e.split = split;
      e.seed = seed;
      if (split == "eval" && !weather.empty()) {
        const WeatherKind kind =
            weather == "mix"
                ? eval_weather_kind(cfg, i)
                : weather_from_name(weather);
        cloud = corrupt_weather(cloud, kind, severity,
                                derive_seed(seed, kStreamEvalWeather, 0));
        e.corrupted = true;
        e.weather = weather_name(kind);
        e.severity = severity;
      }
      e.bin = split + "/" + three_digits(i) + ".bin";
      e.label = split + "/" + three_digits(i) + ".label";
      write_scan_bin(cloud, out_dir + "/" + e.bin);
      write_labels(cloud.labels, out_dir + "/" + e.label);
      manifest.scenes.push_back(e);
    }
  };
  emit("train", cfg.scene.train_scenes, 0);
  emit("eval", cfg.scene.eval_scenes, 1);
  write_manifest(manifest, out_dir + "/manifest.json");
  std::cout << "wrote " << manifest.scenes.size() << " scenes to " << out_dir
            << "\n";
  return 0;
}

void report_eval(const EvalReport& rep, MetricsWriter* metrics,
                 const char* record_type) {
  for (int c = 0; c < rep.num_classes; ++c) {
    if (rep.gt_counts[static_cast<size_t>(c)] == 0) continue;
    std::cout << "IoU[" << class_name(static_cast<uint16_t>(c + 1))
              << "] = " << rep.iou[static_cast<size_t>(c)] << "\n";
  }
  std::cout << "mIoU = " << rep.miou << "\n";
  if (metrics) {
    nlohmann::ordered_json rec;
    rec["type"] = record_type;
    rec["miou"] = rep.miou;
    rec["iou"] = rep.iou;
    rec["gt_counts"] = rep.gt_counts;
    rec["scored_points"] = rep.scored_points;
    metrics->add(rec);
  }
}

std::pair<std::vector<int>, std::vector<int>> parse_sweep(
    const std::vector<std::string>& tokens) {
  std::vector<int> ws, ks;
  for (const std::string& tok : tokens) {
    const size_t eq = tok.find('=');
    if (eq == std::string::npos)
      throw ConfigError("bad --sweep token (want NAME=v1,v2): " + tok);
    const std::string name = tok.substr(0, eq);
    std::vector<int>* dst = nullptr;
    if (name == "W")
      dst = &ws;
    else if (name == "K")
      dst = &ks;
    else
      throw ConfigError("unknown sweep axis: " + name);
    std::string rest = tok.substr(eq + 1);
    size_t pos = 0;
    while (pos <= rest.size()) {
      size_t comma = rest.find(',', pos);
      if (comma == std::string::npos) comma = rest.size();
      const std::string item = rest.substr(pos, comma - pos);
      if (item.empty()) throw ConfigError("empty sweep value in: " + tok);
      dst->push_back(std::stoi(item));
      pos = comma + 1;
    }
  }
  if (ws.empty() || ks.empty())
    throw ConfigError("--sweep needs both W=... and K=...");
  return {ws, ks};
}

int cmd_train(Config cfg, const std::string& data_dir,
              const std::string& ckpt_dir, const std::string& metrics_path,
              const std::vector<std::string>& sweep_tokens) {
  const DatasetManifest manifest = read_manifest(data_dir + "/manifest.json");
  for (const SceneEntry& e : manifest.scenes)
    if (e.split == "train" && e.corrupted)
      throw DataError("training input " + e.bin +
                      " is weather-corrupted; training is source-only");
  SceneSplitFiles train_split = load_split(data_dir, manifest, "train");
  if (train_split.clouds.empty()) throw DataError("no training scenes in " + data_dir);

  MetricsWriter metrics(metrics_path);

  if (sweep_tokens.empty()) {
    TrainState st = train(train_split.clouds, cfg, &metrics);
    save_checkpoint(st, ckpt_dir);
    SceneSplitFiles eval_split = load_split(data_dir, manifest, "eval");
    if (!eval_split.clouds.empty()) {
      std::vector<PointCloud> eval_clouds;
      for (size_t i = 0; i < eval_split.clouds.size(); ++i) {
        const SceneEntry& e = eval_split.entries[i];
        eval_clouds.push_back(
            e.corrupted ? eval_split.clouds[i]
                        : corrupt_weather(
                              eval_split.clouds[i],
                              eval_weather_kind(cfg, static_cast<int>(i)),
                              cfg.eval.severity,
                              derive_seed(e.seed, kStreamEvalWeather, 0)));
      }
      const EvalReport rep =
          evaluate_frames(st.adapter, st.backbone, cfg, eval_clouds);
      report_eval(rep, &metrics, "eval");
    }
    metrics.flush();
    std::cout << "checkpoint saved to " << ckpt_dir << "\n";
    return 0;
  }

  const auto [ws, ks] = parse_sweep(sweep_tokens);
  SceneSplitFiles eval_split = load_split(data_dir, manifest, "eval");
  for (int w : ws) {
    for (int k : ks) {
      Config cell = cfg;
      cell.knn.window = w;
      cell.knn.k = k;
      cell.validate();
      TrainState st = train(train_split.clouds, cell, nullptr);
      std::vector<PointCloud> eval_clouds;
      for (size_t i = 0; i < eval_split.clouds.size(); ++i) {
        const SceneEntry& e = eval_split.entries[i];
        eval_clouds.push_back(
            e.corrupted ? eval_split.clouds[i]
                        : corrupt_weather(
                              eval_split.clouds[i],
                              eval_weather_kind(cell, static_cast<int>(i)),
                              cell.eval.severity,
                              derive_seed(e.seed, kStreamEvalWeather, 0)));
      }
      const EvalReport rep =
          evaluate_frames(st.adapter, st.backbone, cell, eval_clouds);
      const std::string cell_dir =
          ckpt_dir + "/W" + std::to_string(w) + "_K" + std::to_string(k);
      save_checkpoint(st, cell_dir);
      nlohmann::ordered_json rec;
      rec["type"] = "sweep_row";
      rec["W"] = w;
      rec["K"] = k;
      rec["miou"] = rep.miou;
      metrics.add(rec);
      std::cout << "sweep W=" << w << " K=" << k << " mIoU=" << rep.miou
                << "\n";
    }
  }
  metrics.flush();
  return 0;
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir,
             const std::string& weather, double severity,
             const std::string& metrics_path) {
  Checkpoint ck = load_checkpoint(ckpt_dir);
  if (!weather.empty()) ck.cfg.eval.weather = weather;
  if (severity >= 0.0) ck.cfg.eval.severity = severity;
  ck.cfg.validate();

  const DatasetManifest manifest = read_manifest(data_dir + "/manifest.json");
  SceneSplitFiles eval_split = load_split(data_dir, manifest, "eval");
  if (eval_split.clouds.empty()) throw DataError("no eval scenes in " + data_dir);
  std::vector<PointCloud> eval_clouds;
  for (size_t i = 0; i < eval_split.clouds.size(); ++i) {
    const SceneEntry& e = eval_split.entries[i];
    eval_clouds.push_back(
        e.corrupted
            ? eval_split.clouds[i]
            : corrupt_weather(eval_split.clouds[i],
                              eval_weather_kind(ck.cfg, static_cast<int>(i)),
                              ck.cfg.eval.severity,
                              derive_seed(e.seed, kStreamEvalWeather, 0)));
  }
  MetricsWriter metrics(metrics_path);
  const EvalReport rep =
      evaluate_frames(ck.adapter, ck.backbone, ck.cfg, eval_clouds);
  report_eval(rep, &metrics, "eval");
  metrics.flush();
  return 0;
}

int cmd_bench_knn(const Config& cfg, const std::string& metrics_path) {
  const PointCloud scene = generate_scene(
      cfg.scene_spec(derive_seed(cfg.seed.master, kStreamScene, 0, 0)));
  const double offset = find_seam_offset(scene);
  const GridIndex index = build_grid_index(scene, cfg.grid_spec(offset));
  const KnnBenchReport rep =
      bench_knn(index, cfg.knn.k, cfg.half_w(), cfg.knn.half_h);
  std::cout << format_bench_report(rep) << "\n";
  if (!metrics_path.empty()) {
    MetricsWriter metrics(metrics_path);
    nlohmann::ordered_json rec;
    rec["type"] = "bench_knn";
    rec["total_evals_local"] = rep.total_evals_local;
    rec["total_evals_global"] = rep.total_evals_global;
    rec["ratio"] = rep.ratio;
    rec["window"] = cfg.knn.window;
    rec["k"] = cfg.knn.k;
    rec["half_h"] = cfg.knn.half_h;
    metrics.add(rec);
    metrics.flush();
  }
  return 0;
}

int cmd_inspect(const Config& cfg_in, const std::string& scan_path,
                const std::string& ckpt_dir, const std::string& out_path) {
  PointCloud cloud = read_scan_bin(scan_path);
  const std::string label_path =
      fs::path(scan_path).replace_extension(".label").string();
  if (fs::exists(label_path))
    cloud.labels = read_labels(label_path, cloud.size());

  Config cfg = cfg_in;
  AdapterParams adapter;
  Mlp backbone;
  bool have_backbone = false;
  if (!ckpt_dir.empty()) {
    Checkpoint ck = load_checkpoint(ckpt_dir);
    cfg = ck.cfg;
    adapter = std::move(ck.adapter);
    backbone = std::move(ck.backbone);
    have_backbone = true;
  } else {
    adapter = AdapterParams::make(
        cfg.adapter_dims(), derive_seed(cfg.seed.master, kStreamInitAdapter));
  }

  const double offset = find_seam_offset(cloud);
  const GridIndex index = build_grid_index(cloud, cfg.grid_spec(offset));
  const GeometryCues cues =
      adapter_forward(cloud, index, adapter, cfg.adapter_options());

  std::vector<PlyColumn> cols;
  if (cloud.has_labels()) {
    PlyColumn lab{"label", {}};
    lab.values.assign(cloud.size(), 0.0);
    for (size_t i = 0; i < cloud.size(); ++i)
      lab.values[i] = static_cast<double>(cloud.labels[i]);
    cols.push_back(std::move(lab));
  }
  cols.push_back({"s", cues.s});
  cols.push_back({"d1", cues.d1});
  cols.push_back({"d2", cues.d2});
  if (have_backbone) {
    const std::vector<double> features =
        assemble_features(cloud, index.image.ranges, cues);
    const std::vector<double> probs = backbone_forward(backbone, features);
    const std::vector<int> preds = argmax_rows(probs, kNumClasses);
    PlyColumn pc{"pred", {}};
    pc.values.assign(cloud.size(), 0.0);
    for (size_t i = 0; i < cloud.size(); ++i)
      pc.values[i] = static_cast<double>(preds[i] + 1);
    cols.push_back(std::move(pc));
  }
  write_ply(cloud, cols, out_path);
  std::cout << "wrote " << out_path << " (" << cloud.size() << " points)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geocue: geometry-cue robustness pipeline for LiDAR range views"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, ckpt_dir, metrics_path;
  std::string weather;
  double severity = -1.0;
  uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> sweep_tokens;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI config path");
    sub->add_option("--seed", seed, "override [seed] master")
        ->each([&](const std::string&) { seed_set = true; });
  };

  CLI::App* gen = app.add_subcommand("gen", "generate synthetic scenes");
  add_common(gen);
  gen->add_option("--out", out_path, "output dataset directory")->required();
  gen->add_option("--weather", weather,
                  "corrupt eval scenes: mix|fog_light|fog_dense|rain|snow");
  gen->add_option("--severity", severity, "corruption severity in [0,1]");

  CLI::App* train_cmd = app.add_subcommand("train", "train on clean+SJ data");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_dir, "dataset directory from gen")
      ->required();
  train_cmd->add_option("--out", out_path, "checkpoint directory")->required();
  train_cmd->add_option("--metrics", metrics_path, "metrics JSONL path");
  train_cmd->add_option("--sweep", sweep_tokens,
                        "hyperparameter grid, e.g. --sweep W=256,512 K=8,16");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint on weather-corrupted scenes");
  eval_cmd->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--weather", weather, "override eval weather kind");
  eval_cmd->add_option("--severity", severity, "override severity");
  eval_cmd->add_option("--out", metrics_path, "metrics JSONL path");

  CLI::App* bench = app.add_subcommand("bench-knn", "windowed KNN cost report");
  add_common(bench);
  bench->add_option("--out", metrics_path, "metrics JSONL path");

  CLI::App* inspect = app.add_subcommand("inspect", "dump cues to ASCII PLY");
  add_common(inspect);
  inspect->add_option("--data", data_dir, "scan .bin path")->required();
  inspect->add_option("--ckpt", ckpt_dir, "checkpoint directory");
  inspect->add_option("--out", out_path, "output PLY path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  }

  try {
    Config cfg = load_config_or_default(config_path);
    if (seed_set) cfg.seed.master = seed;

    if (gen->parsed()) {
      if (!weather.empty() && severity < 0.0) severity = cfg.eval.severity;
      if (!weather.empty() && weather != "mix") weather_from_name(weather);
      if (!weather.empty() && (severity < 0.0 || severity > 1.0))
        throw ConfigError("severity must be in [0,1]");
      return cmd_gen(cfg, out_path, weather, severity);
    }
    if (train_cmd->parsed())
      return cmd_train(cfg, data_dir, out_path, metrics_path, sweep_tokens);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt_dir, data_dir, weather, severity, metrics_path);
    if (bench->parsed()) return cmd_bench_knn(cfg, metrics_path);
    if (inspect->parsed())
      return cmd_inspect(cfg, data_dir, ckpt_dir, out_path);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "ERROR 3: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ERROR 1: " << e.what() << "\n";
    return 1;
  }
}
