#include <catch2/catch_amalgamated.hpp>

#include "geocue/train.hpp"
#include "oracles.hpp"

using namespace geocue;
using Catch::Approx;

namespace {

/// Small, fast configuration for training tests.
Config tiny_config() {
  Config cfg;
  cfg.scene.n_points = 1800;
  cfg.scene.buildings = 2;
  cfg.scene.vehicles = 2;
  cfg.scene.fences = 1;
  cfg.scene.poles = 2;
  cfg.scene.vegetation = 2;
  cfg.knn.window = 16;
  cfg.knn.k = 4;
  cfg.knn.half_h = 2;
  cfg.adapter.hidden = 8;
  cfg.adapter.feature_dim = 8;
  cfg.adapter.cue_hidden = 8;
  cfg.adapter.cue_dim = 4;
  cfg.policy.q_hidden = 8;
  cfg.policy.batch_size = 8;
  cfg.train.backbone_hidden = 16;
  cfg.train.epochs = 2;
  cfg.validate();
  return cfg;
}

std::vector<PointCloud> tiny_dataset(const Config& cfg, int n) {
  return make_scenes(cfg, n, 0);
}

std::string snapshot(const TrainState& st) {
  std::string s = serialize_layers(kAdapterMagic, st.adapter.layers());
  std::vector<const Dense*> bb;
  for (const Dense& d : st.backbone.layers) bb.push_back(&d);
  s += serialize_layers(kBackboneMagic, bb);
  return s;
}

}  // namespace

TEST_CASE("two-branch gradients match finite differences end to end",
          "[train]") {
  Config cfg = tiny_config();
  cfg.scene.n_points = 400;
  cfg.loss.alpha = 1.5;
  cfg.loss.eta = 0.2;
  cfg.loss.kappa = 0.8;

  const PointCloud scene = generate_scene(cfg.scene_spec(11));
  const JitterResult sj =
      selective_jitter(scene, cfg.jitter_config(derive_seed(1, 2, 3)));
  const PointCloud& perturbed = sj.cloud;

  TrainState st = init_train_state(cfg, {scene});

  // Freeze one drop decision so the loss is a pure function of parameters.
  FrameForward ref0 =
      forward_frame(perturbed, st.adapter, st.backbone, cfg, true);
  std::vector<Region> regions =
      build_regions(perturbed, ref0.cues, ref0.index.image,
                    cfg.policy.regions_azimuth, cfg.policy.regions_elevation);
  const Region* target = nullptr;
  for (const Region& r : regions)
    if (r.point_ids.size() > 30) target = &r;
  REQUIRE(target != nullptr);
  Rng rng_drop(17);
  const DropResult drop = region_drop(perturbed, *target, 0.5, rng_drop);
  REQUIRE_FALSE(drop.dropped_ids.empty());

  auto loss = [&]() {
    FrameForward ref =
        forward_frame(perturbed, st.adapter, st.backbone, cfg, true);
    return two_branch_pass(cfg, st.class_w, st.adapter, st.backbone,
                           perturbed, ref, &drop)
        .l_total;
  };

  FrameForward ref =
      forward_frame(perturbed, st.adapter, st.backbone, cfg, true);
  const TwoBranchOut tb = two_branch_pass(cfg, st.class_w, st.adapter,
                                          st.backbone, perturbed, ref, &drop);
  CHECK(tb.l_total ==
        Approx(loss_total(tb.l_before, tb.l_after, tb.l_ent, cfg.loss.alpha,
                          cfg.loss.eta))
            .margin(1e-12));

  Rng pick(23);
  int checked = 0;
  // Backbone parameters.
  for (int t = 0; t < 8; ++t) {
    const size_t layer = pick.below(st.backbone.layers.size());
    const size_t wi = pick.below(st.backbone.layers[layer].w.size());
    INFO("backbone layer " << layer << " w[" << wi << "]");
    CHECK(oracle::grad_matches(loss, &st.backbone.layers[layer].w[wi],
                               tb.bb_grads.dw[layer][wi]));
    ++checked;
  }
  // Adapter parameters, all three blocks.
  for (int t = 0; t < 5; ++t) {
    const size_t wi = pick.below(st.adapter.phi_p.layers[0].w.size());
    INFO("phi_p w[" << wi << "]");
    CHECK(oracle::grad_matches(loss, &st.adapter.phi_p.layers[0].w[wi],
                               tb.ad_grads.phi_p.dw[0][wi]));
    const size_t wa = pick.below(st.adapter.fc_att.w.size());
    CHECK(oracle::grad_matches(loss, &st.adapter.fc_att.w[wa],
                               tb.ad_grads.fc_att_w[wa]));
    const size_t wo = pick.below(st.adapter.mlp_out.layers[1].w.size());
    CHECK(oracle::grad_matches(loss, &st.adapter.mlp_out.layers[1].w[wo],
                               tb.ad_grads.mlp_out.dw[1][wo]));
    checked += 3;
  }
  CHECK(checked >= 20);
}

TEST_CASE("zero learning rate freezes parameters", "[train]") {
  Config cfg = tiny_config();
  cfg.train.lr = 0.0;
  cfg.train.epochs = 1;
  const std::vector<PointCloud> data = tiny_dataset(cfg, 2);
  TrainState st = init_train_state(cfg, data);
  const std::string before = snapshot(st);
  train_epoch(data, st);
  CHECK(snapshot(st) == before);
}

TEST_CASE("epoch log holds one record per frame", "[train]") {
  Config cfg = tiny_config();
  const std::vector<PointCloud> data = tiny_dataset(cfg, 3);
  TrainState st = init_train_state(cfg, data);
  const EpochLog log = train_epoch(data, st);
  CHECK(log.frames.size() == 3);
  for (const FrameLog& fl : log.frames) {
    CHECK(std::isfinite(fl.reward));
    CHECK(std::isfinite(fl.loss_total));
    CHECK(fl.region >= 0);  // tiny scenes always have droppable regions
  }
}

TEST_CASE("identical config and seed reproduce metrics byte for byte",
          "[train]") {
  Config cfg = tiny_config();
  cfg.seed.master = 77;
  const std::vector<PointCloud> data = tiny_dataset(cfg, 3);

  auto run = [&](int workers) {
    Config c = cfg;
    c.train.workers = workers;
    MetricsWriter m;
    const TrainState st = train(data, c, &m);
    return std::make_pair(m.text(), snapshot(st));
  };
  const auto [text1, snap1] = run(1);
  const auto [text2, snap2] = run(1);
  CHECK(text1 == text2);
  CHECK(snap1 == snap2);

  SECTION("worker count does not change the result") {
    const auto [text4, snap4] = run(4);
    CHECK(snap4 == snap1);
  }

  SECTION("a different seed changes the parameters") {
    Config c = cfg;
    c.seed.master = 78;
    MetricsWriter m;
    const TrainState st = train(data, c, &m);
    CHECK(snapshot(st) != snap1);
  }
}

TEST_CASE("mode switches prune the pipeline", "[train]") {
  Config cfg = tiny_config();
  const std::vector<PointCloud> data = tiny_dataset(cfg, 2);

  SECTION("no_drop never drops") {
    cfg.train.mode = "no_drop";
    TrainState st = init_train_state(cfg, data);
    const EpochLog log = train_epoch(data, st);
    for (const FrameLog& fl : log.frames) {
      CHECK(fl.region == -1);
      CHECK(fl.dropped == 0);
      CHECK(fl.loss_total == fl.loss_before);
    }
    CHECK(st.qf.buffer.items.empty());
  }

  SECTION("random_policy drops but never trains Q") {
    cfg.train.mode = "random_policy";
    TrainState st = init_train_state(cfg, data);
    const QFunction q_before = st.qf;
    const EpochLog log = train_epoch(data, st);
    bool any_drop = false;
    for (const FrameLog& fl : log.frames) any_drop |= fl.dropped > 0;
    CHECK(any_drop);
    CHECK(st.qf.buffer.items.empty());
    for (size_t i = 0; i < st.qf.net.layers[0].w.size(); ++i)
      CHECK(st.qf.net.layers[0].w[i] == q_before.net.layers[0].w[i]);
  }

  SECTION("full mode fills the replay buffer and updates Q") {
    cfg.train.mode = "full";
    TrainState st = init_train_state(cfg, data);
    const QFunction q_before = st.qf;
    train_epoch(data, st);
    CHECK_FALSE(st.qf.buffer.items.empty());
    bool moved = false;
    for (size_t i = 0; i < st.qf.net.layers[0].w.size(); ++i)
      moved |= st.qf.net.layers[0].w[i] != q_before.net.layers[0].w[i];
    CHECK(moved);
  }
}

TEST_CASE("single-frame overfit reaches high training mIoU", "[train]") {
  Config cfg = tiny_config();
  cfg.scene.n_points = 1500;
  cfg.train.epochs = 200;
  cfg.train.lr = 0.12;
  cfg.jitter.fraction = 0.0;  // train on the clean frame
  cfg.seed.master = 5;
  const PointCloud frame = generate_scene(cfg.scene_spec(42));
  const std::vector<PointCloud> data{frame};

  TrainState st = init_train_state(cfg, data);
  for (int e = 0; e < cfg.train.epochs; ++e) train_epoch(data, st);
  const EvalReport rep = evaluate_frames(st.adapter, st.backbone, cfg, data);
  CHECK(rep.miou > 0.95);
}

TEST_CASE("severity zero evaluation equals clean evaluation", "[train]") {
  Config cfg = tiny_config();
  cfg.eval.severity = 0.0;
  const std::vector<PointCloud> data = tiny_dataset(cfg, 2);
  TrainState st = init_train_state(cfg, data);
  train_epoch(data, st);

  const std::vector<PointCloud> eval_clean = make_scenes(cfg, 2, 1);
  const std::vector<PointCloud> eval_corrupt =
      corrupt_eval_scenes(cfg, eval_clean, cfg.seed.master);
  const EvalReport clean =
      evaluate_frames(st.adapter, st.backbone, cfg, eval_clean);
  const EvalReport shifted =
      evaluate_frames(st.adapter, st.backbone, cfg, eval_corrupt);
  CHECK(clean.miou == shifted.miou);
  CHECK(clean.confusion == shifted.confusion);
}

TEST_CASE("checkpoints restore the exact predictor", "[train]") {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / "geocue_ckpt_test";
  fs::remove_all(dir);

  Config cfg = tiny_config();
  const std::vector<PointCloud> data = tiny_dataset(cfg, 2);
  TrainState st = init_train_state(cfg, data);
  train_epoch(data, st);
  save_checkpoint(st, dir.string());

  const Checkpoint ck = load_checkpoint(dir.string());
  CHECK(config_hash(ck.cfg) == config_hash(cfg));
  const Prediction a = predict_frame(st.adapter, st.backbone, cfg, data[0]);
  const Prediction b =
      predict_frame(ck.adapter, ck.backbone, ck.cfg, data[0]);
  REQUIRE(a.preds.size() == b.preds.size());
  for (size_t i = 0; i < a.preds.size(); ++i) {
    CHECK(a.preds[i] == b.preds[i]);
    CHECK(a.probs[i * kNumClasses] == b.probs[i * kNumClasses]);
  }
  fs::remove_all(dir);
}

TEST_CASE("training input validation", "[train]") {
  const Config cfg = tiny_config();
  CHECK_THROWS_AS(train({}, cfg, nullptr), std::invalid_argument);
  PointCloud unlabeled;
  unlabeled.points = {{1, 0, 0, 0.5}};
  CHECK_THROWS_AS(train({unlabeled}, cfg, nullptr), std::invalid_argument);
}
