#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "geocue/adapter.hpp"
#include "geocue/config.hpp"
#include "geocue/io.hpp"
#include "geocue/learner.hpp"
#include "geocue/metrics.hpp"
#include "geocue/policy.hpp"
#include "geocue/scene.hpp"
#include "geocue/weather.hpp"

namespace geocue {

// Independent RNG stream tags derived from the master seed.
enum SeedStream : uint64_t {
  kStreamScene = 1,
  kStreamJitter = 2,
  kStreamPolicy = 3,
  kStreamDrop = 4,
  kStreamInitAdapter = 5,
  kStreamInitBackbone = 6,
  kStreamInitQ = 7,
  kStreamEvalWeather = 8,
  kStreamQSample = 9,
};

/// Coordinate-like backbone inputs are scaled to O(1).
inline constexpr double kCoordScale = 1.0 / 50.0;

inline int backbone_input_dim(int cue_total) { return 5 + cue_total; }

/// Foreground classes for the drop-reward penalty.
inline const std::vector<uint16_t>& foreground_classes() {
  static const std::vector<uint16_t> fg{kClassVehicle, kClassPole};
  return fg;
}

/// Momentum buffers for both adapter heads plus the attention map.
struct AdapterOptimizer {
  SgdMomentum phi, out;
  std::vector<double> v_att_w;
  double v_att_b = 0.0;
  double momentum = 0.9;

  static AdapterOptimizer zeros_like(const AdapterParams& p, double momentum) {
    AdapterOptimizer o;
    o.momentum = momentum;
    o.phi = SgdMomentum::zeros_like(p.phi_p, momentum);
    o.out = SgdMomentum::zeros_like(p.mlp_out, momentum);
    o.v_att_w.assign(p.fc_att.w.size(), 0.0);
    return o;
  }

  void step(AdapterParams& p, const AdapterGrads& g, double lr) {
    phi.step(p.phi_p, g.phi_p, lr);
    out.step(p.mlp_out, g.mlp_out, lr);
    for (size_t i = 0; i < p.fc_att.w.size(); ++i) {
      v_att_w[i] = momentum * v_att_w[i] + g.fc_att_w[i];
      p.fc_att.w[i] -= lr * v_att_w[i];
    }
    v_att_b = momentum * v_att_b + g.fc_att_b;
    p.fc_att.b[0] -= lr * v_att_b;
  }
};

struct TrainState {
  Config cfg;
  AdapterParams adapter;
  Mlp backbone;
  QFunction qf;
  AdapterOptimizer opt_adapter;
  SgdMomentum opt_backbone;
  std::vector<double> class_w;  // per class index 0..C-1
  long long global_step = 0;
  long long total_steps = 0;
  int epoch = 0;
};

/// Backbone feature rows [x, y, z, intensity, range, g] for the given
/// points; coordinate-like entries scaled by kCoordScale. An empty cue set
/// (cue-less baseline) yields bare 5-feature rows.
inline std::vector<double> assemble_features(const PointCloud& cloud,
                                             const std::vector<double>& ranges,
                                             const GeometryCues& cues) {
  const int gt = cues.n > 0 ? cues.cue_total : 0;
  const int in_dim = backbone_input_dim(gt);
  std::vector<double> rows(cloud.size() * static_cast<size_t>(in_dim));
  for (size_t i = 0; i < cloud.size(); ++i) {
    double* r = rows.data() + i * static_cast<size_t>(in_dim);
    const Point& p = cloud.points[i];
    r[0] = p.x * kCoordScale;
    r[1] = p.y * kCoordScale;
    r[2] = p.z * kCoordScale;
    r[3] = p.intensity;
    r[4] = ranges[i] * kCoordScale;
    if (gt == 0) continue;
    const double* g = cues.g_row(static_cast<int>(i));
    for (int j = 0; j < gt; ++j) r[5 + j] = g[j];
    // The trailing raw coordinates of g are coordinate-like too.
    for (int j = gt - 3; j < gt; ++j) r[5 + j] *= kCoordScale;
  }
  return rows;
}

/// Extracts dL/dg rows from backbone input gradients. The scaled coordinate
/// tail carries no parameter dependence, so its scaling needs no undo here.
inline std::vector<double> slice_cue_grads(const std::vector<double>& dinputs,
                                           int cue_total) {
  const int in_dim = backbone_input_dim(cue_total);
  const size_t n = dinputs.size() / static_cast<size_t>(in_dim);
  std::vector<double> dg(n * static_cast<size_t>(cue_total));
  for (size_t i = 0; i < n; ++i)
    for (int j = 0; j < cue_total; ++j)
      dg[i * static_cast<size_t>(cue_total) + static_cast<size_t>(j)] =
          dinputs[i * static_cast<size_t>(in_dim) + 5 + static_cast<size_t>(j)];
  return dg;
}

/// Class indices (0..C-1) from raw labels; the ignore label maps to -1.
inline std::vector<int> class_indices(const std::vector<uint16_t>& labels) {
  std::vector<int> idx(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    idx[i] = static_cast<int>(labels[i]) - 1;
  return idx;
}

inline std::vector<int> argmax_rows(const std::vector<double>& probs, int c) {
  const size_t n = probs.size() / static_cast<size_t>(c);
  std::vector<int> out(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const double* row = probs.data() + i * static_cast<size_t>(c);
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

/// Everything the pipeline derives from one cloud: seam-aligned grid,
/// adapter cues, backbone features and predictions.
struct FrameForward {
  double seam_offset = 0.0;
  GridIndex index;         // source points at `cloud` argument
  GeometryCues cues;
  AdapterCache cache;
  std::vector<double> features;
  BackboneCache bb_cache;
  std::vector<double> probs;
};

inline FrameForward forward_frame(const PointCloud& cloud,
                                  const AdapterParams& adapter,
                                  const Mlp& backbone, const Config& cfg,
                                  bool want_backward_caches) {
  FrameForward f;
  f.seam_offset = find_seam_offset(cloud);
  f.index = build_grid_index(cloud, cfg.grid_spec(f.seam_offset));
  if (cfg.uses_cues())
    f.cues = adapter_forward(cloud, f.index, adapter, cfg.adapter_options(),
                             want_backward_caches ? &f.cache : nullptr);
  f.features = assemble_features(cloud, f.index.image.ranges, f.cues);
  f.probs = backbone_forward(backbone, f.features,
                             want_backward_caches ? &f.bb_cache : nullptr);
  return f;
}

struct FrameLog {
  double loss_before = 0.0;
  double loss_after = 0.0;
  double loss_entropy = 0.0;
  double loss_total = 0.0;
  double reward = 0.0;
  double epsilon = 0.0;
  double td_loss = 0.0;
  int region = -1;
  int ratio_idx = -1;
  int dropped = 0;
};

/// Losses and parameter gradients of the two-branch objective for one
/// frame. `drop == nullptr` trains the reference branch alone.
struct TwoBranchOut {
  double l_before = 0.0;
  double l_after = 0.0;
  double l_ent = 0.0;
  double l_total = 0.0;
  double l_after_plain = 0.0;  // unweighted drop-branch CE, for the reward
  MlpGrads bb_grads;
  AdapterGrads ad_grads;
  FrameForward drop_fwd;  // populated when a drop branch ran
  bool has_drop = false;
};

/// Computes the combined objective and its exact gradients. When called
/// with the same frozen drop decision, the returned gradients match finite
/// differences of l_total with respect to every adapter and backbone
/// parameter. `ref` must carry backward caches.
inline TwoBranchOut two_branch_pass(const Config& cfg,
                                    const std::vector<double>& class_w,
                                    const AdapterParams& adapter,
                                    const Mlp& backbone,
                                    const PointCloud& perturbed,
                                    FrameForward& ref,
                                    const DropResult* drop) {
  const int c_classes = kNumClasses;
  const double alpha = cfg.loss.alpha;
  const double eta = cfg.loss.eta;
  const double kappa = cfg.loss.kappa;

  TwoBranchOut out;
  out.bb_grads = MlpGrads::zeros_like(backbone);
  out.ad_grads = AdapterGrads::zeros_like(adapter);

  const std::vector<int> labels_ref = class_indices(perturbed.labels);
  out.l_before = loss_ce(ref.probs, labels_ref, class_w);

  const size_t n_ref = perturbed.size();
  std::vector<double> dlogits_ref(n_ref * static_cast<size_t>(c_classes), 0.0);
  const double inv_n_ref = 1.0 / static_cast<double>(n_ref);
  for (size_t i = 0; i < n_ref; ++i)
    add_ce_logit_grad(ref.probs.data() + i * c_classes, c_classes,
                      labels_ref[i],
                      class_w[static_cast<size_t>(labels_ref[i])], inv_n_ref,
                      dlogits_ref.data() + i * c_classes);

  if (drop != nullptr && !drop->cloud.empty()) {
    out.has_drop = true;
    out.drop_fwd = forward_frame(drop->cloud, adapter, backbone, cfg, true);
    FrameForward& dr = out.drop_fwd;
    const std::vector<int> labels_drop = class_indices(drop->cloud.labels);
    const size_t n_drop = drop->cloud.size();

    out.l_after =
        loss_after(dr.probs, labels_drop, class_w, dr.cues.s, kappa);
    out.l_after_plain = loss_ce(dr.probs, labels_drop, class_w);

    // Entropy couples the branches point-by-point on the survivors.
    std::vector<double> probs_sj_kept(n_drop * static_cast<size_t>(c_classes));
    for (size_t j = 0; j < n_drop; ++j)
      std::copy_n(ref.probs.data() +
                      static_cast<size_t>(drop->kept_ids[j]) * c_classes,
                  c_classes, probs_sj_kept.data() + j * c_classes);
    out.l_ent = loss_entropy(probs_sj_kept, dr.probs, c_classes);
    out.l_total = loss_total(out.l_before, out.l_after, out.l_ent, alpha, eta);

    std::vector<double> dlogits_drop(n_drop * static_cast<size_t>(c_classes),
                                     0.0);
    const double inv_n_drop = 1.0 / static_cast<double>(n_drop);
    for (size_t j = 0; j < n_drop; ++j) {
      add_ce_logit_grad(dr.probs.data() + j * c_classes, c_classes,
                        labels_drop[j],
                        class_w[static_cast<size_t>(labels_drop[j])],
                        alpha * (1.0 + kappa * dr.cues.s[j]) * inv_n_drop,
                        dlogits_drop.data() + j * c_classes);
      add_entropy_logit_grad(dr.probs.data() + j * c_classes, c_classes,
                             eta * 0.5 * inv_n_drop,
                             dlogits_drop.data() + j * c_classes);
      add_entropy_logit_grad(
          ref.probs.data() + static_cast<size_t>(drop->kept_ids[j]) * c_classes,
          c_classes, eta * 0.5 * inv_n_drop,
          dlogits_ref.data() + static_cast<size_t>(drop->kept_ids[j]) * c_classes);
    }

    std::vector<double> dinputs_drop;
    backbone_backward(backbone, dr.bb_cache, dlogits_drop, out.bb_grads,
                      &dinputs_drop);
    if (dr.cues.n > 0)
      out.ad_grads.add(adapter_backward(
          drop->cloud, dr.cues, dr.cache, adapter,
          slice_cue_grads(dinputs_drop, dr.cues.cue_total),
          cfg.train.workers));
  } else {
    out.l_total = out.l_before;
  }

  std::vector<double> dinputs_ref;
  backbone_backward(backbone, ref.bb_cache, dlogits_ref, out.bb_grads,
                    &dinputs_ref);
  if (ref.cues.n > 0)
    out.ad_grads.add(adapter_backward(
        perturbed, ref.cues, ref.cache, adapter,
        slice_cue_grads(dinputs_ref, ref.cues.cue_total), cfg.train.workers));
  return out;
}

struct EpochLog {
  std::vector<FrameLog> frames;
  double mean_total = 0.0;
  double mean_reward = 0.0;
};

inline double epsilon_at(const Config& cfg, long long step,
                         long long total_steps) {
  const double horizon =
      std::max(1.0, cfg.policy.eps_decay_frac * static_cast<double>(total_steps));
  const double t = std::min(1.0, static_cast<double>(step) / horizon);
  return cfg.policy.eps_start + (cfg.policy.eps_end - cfg.policy.eps_start) * t;
}

inline TrainState init_train_state(const Config& cfg,
                                   const std::vector<PointCloud>& dataset) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  const uint64_t master = cfg.seed.master;
  st.adapter = AdapterParams::make(cfg.adapter_dims(),
                                   derive_seed(master, kStreamInitAdapter));
  {
    Rng rng(derive_seed(master, kStreamInitBackbone));
    const int in_dim = backbone_input_dim(
        cfg.uses_cues() ? cfg.adapter_dims().cue_total() : 0);
    st.backbone = Mlp::make({in_dim, cfg.train.backbone_hidden,
                             cfg.train.backbone_hidden, kNumClasses},
                            rng);
  }
  const int state_dim =
      region_feature_dim(cfg.adapter_dims().cue_total()) + 3;
  st.qf = QFunction::make(state_dim, cfg.policy.q_hidden, cfg.policy.ratios,
                          derive_seed(master, kStreamInitQ));
  st.qf.gamma = cfg.policy.gamma;
  st.qf.lr = cfg.policy.q_lr;
  st.qf.target_sync = cfg.policy.target_sync;
  st.qf.buffer.capacity = static_cast<size_t>(cfg.policy.replay_capacity);

  std::vector<long long> hist(kNumClasses, 0);
  for (const PointCloud& c : dataset)
    for (uint16_t l : c.labels)
      if (l >= 1 && l <= kNumClasses) ++hist[static_cast<size_t>(l) - 1];
  st.class_w = class_weights(hist);

  st.opt_adapter =
      AdapterOptimizer::zeros_like(st.adapter, cfg.train.momentum);
  st.opt_backbone = SgdMomentum::zeros_like(st.backbone, cfg.train.momentum);
  st.total_steps =
      static_cast<long long>(cfg.train.epochs) *
      static_cast<long long>(dataset.size());
  return st;
}

/// One pass over the dataset following the drop-policy control loop:
/// jitter, cues, reference loss, regions, action, drop, drop-branch losses,
/// combined backward and parameter step, then reward and Q update.
inline EpochLog train_epoch(const std::vector<PointCloud>& dataset,
                            TrainState& st) {
  const Config& cfg = st.cfg;
  const uint64_t master = cfg.seed.master;
  const int c_classes = kNumClasses;
  const bool use_drop = cfg.train.mode != "no_drop";
  const bool learned_policy = cfg.train.mode == "full";

  // Cosine-decayed learning rate over the epoch schedule.
  const double lr =
      cfg.train.epochs > 1
          ? cfg.train.lr * 0.5 *
                (1.0 + std::cos(kPi * static_cast<double>(st.epoch) /
                                static_cast<double>(cfg.train.epochs)))
          : cfg.train.lr;

  EpochLog log;
  log.frames.reserve(dataset.size());

  for (size_t fi = 0; fi < dataset.size(); ++fi) {
    FrameLog fl;
    const PointCloud& raw = dataset[fi];
    const JitterResult sj = selective_jitter(
        raw, cfg.jitter_config(derive_seed(master, kStreamJitter,
                                           static_cast<uint64_t>(st.epoch),
                                           fi)));
    const PointCloud& perturbed = sj.cloud;

    FrameForward ref =
        forward_frame(perturbed, st.adapter, st.backbone, cfg, true);
    const std::vector<double> entropy_ref = uncertainty(ref.probs, c_classes);
    std::vector<Region> regions;
    USummary usum;
    if (use_drop) {
      regions = build_regions(perturbed, ref.cues, ref.index.image,
                              cfg.policy.regions_azimuth,
                              cfg.policy.regions_elevation);
      usum = summarize_uncertainty(entropy_ref, regions);
    }

    bool did_drop = false;
    DropResult drop;
    Action action{-1, -1};
    double eps = 0.0;
    if (use_drop) {
      Rng rng_policy(derive_seed(master, kStreamPolicy,
                                 static_cast<uint64_t>(st.epoch), fi));
      std::vector<int> usable;
      for (const Region& r : regions)
        if (!r.point_ids.empty()) usable.push_back(r.id);
      if (!usable.empty()) {
        if (learned_policy) {
          eps = epsilon_at(cfg, st.global_step, st.total_steps);
          action = select_action(st.qf, regions, usum, eps, rng_policy);
        } else {
          const uint64_t pick = rng_policy.below(
              static_cast<uint64_t>(usable.size()) * st.qf.n_ratios());
          action = {usable[static_cast<size_t>(pick / st.qf.n_ratios())],
                    static_cast<int>(pick % st.qf.n_ratios())};
        }
        Rng rng_drop(derive_seed(master, kStreamDrop,
                                 static_cast<uint64_t>(st.epoch), fi));
        drop = region_drop(perturbed,
                           regions[static_cast<size_t>(action.region_id)],
                           st.qf.ratios[static_cast<size_t>(action.ratio_idx)],
                           rng_drop);
        did_drop = !drop.cloud.empty();
      }
    }

    TwoBranchOut tb =
        two_branch_pass(cfg, st.class_w, st.adapter, st.backbone, perturbed,
                        ref, did_drop ? &drop : nullptr);
    fl.loss_before = tb.l_before;
    fl.loss_after = tb.l_after;
    fl.loss_entropy = tb.l_ent;
    fl.loss_total = tb.l_total;

    if (tb.has_drop) {
      fl.region = action.region_id;
      fl.ratio_idx = action.ratio_idx;
      fl.epsilon = eps;
      fl.dropped = static_cast<int>(drop.dropped_ids.size());

      const double gtr =
          gt_ratio(drop.dropped_ids, perturbed.labels, foreground_classes());
      fl.reward = reward(tb.l_after_plain, tb.l_before, gtr, cfg.loss.lambda);
      if (learned_policy) {
        // Next state: the chosen region re-described on the post-drop cloud.
        std::vector<Region> regions_post =
            build_regions(drop.cloud, tb.drop_fwd.cues, tb.drop_fwd.index.image,
                          cfg.policy.regions_azimuth,
                          cfg.policy.regions_elevation);
        const USummary usum_post = summarize_uncertainty(
            uncertainty(tb.drop_fwd.probs, c_classes), regions_post);
        Transition t;
        t.state = q_state(regions[static_cast<size_t>(action.region_id)], usum);
        t.ratio_idx = action.ratio_idx;
        t.reward = fl.reward;
        t.next_state = q_state(
            regions_post[static_cast<size_t>(action.region_id)], usum_post);
        st.qf.buffer.push(std::move(t));

        Rng rng_q(derive_seed(master, kStreamQSample,
                              static_cast<uint64_t>(st.epoch), fi));
        const size_t nbuf = st.qf.buffer.items.size();
        for (int u = 0; u < cfg.policy.updates_per_frame; ++u) {
          std::vector<Transition> batch;
          const size_t bs =
              std::min(static_cast<size_t>(cfg.policy.batch_size), nbuf);
          batch.reserve(bs);
          for (size_t b = 0; b < bs; ++b)
            batch.push_back(st.qf.buffer.items[static_cast<size_t>(
                rng_q.below(nbuf))]);
          fl.td_loss = q_update(st.qf, batch);
        }
      }
    }

    if (cfg.train.grad_clip > 0.0) {
      const double norm = std::sqrt(tb.bb_grads.squared_norm() +
                                    tb.ad_grads.squared_norm());
      if (norm > cfg.train.grad_clip) {
        const double scale = cfg.train.grad_clip / norm;
        tb.bb_grads.scale(scale);
        tb.ad_grads.scale(scale);
      }
    }
    st.opt_backbone.step(st.backbone, tb.bb_grads, lr);
    st.opt_adapter.step(st.adapter, tb.ad_grads, lr);

    ++st.global_step;
    log.frames.push_back(fl);
  }

  double acc_total = 0.0, acc_reward = 0.0;
  for (const FrameLog& fl : log.frames) {
    acc_total += fl.loss_total;
    acc_reward += fl.reward;
  }
  if (!log.frames.empty()) {
    log.mean_total = acc_total / static_cast<double>(log.frames.size());
    log.mean_reward = acc_reward / static_cast<double>(log.frames.size());
  }
  ++st.epoch;
  return log;
}

struct Prediction {
  std::vector<double> probs;
  std::vector<int> preds;  // class indices
  GeometryCues cues;
};

inline Prediction predict_frame(const AdapterParams& adapter,
                                const Mlp& backbone, const Config& cfg,
                                const PointCloud& cloud) {
  FrameForward f = forward_frame(cloud, adapter, backbone, cfg, false);
  Prediction p;
  p.preds = argmax_rows(f.probs, kNumClasses);
  p.probs = std::move(f.probs);
  p.cues = std::move(f.cues);
  return p;
}

/// Scores a parameter set over labeled frames (ignore-labeled points are
/// excluded from the report).
inline EvalReport evaluate_frames(const AdapterParams& adapter,
                                  const Mlp& backbone, const Config& cfg,
                                  const std::vector<PointCloud>& frames) {
  std::vector<int> preds, labels;
  for (const PointCloud& cloud : frames) {
    Prediction p = predict_frame(adapter, backbone, cfg, cloud);
    const std::vector<int> li = class_indices(cloud.labels);
    preds.insert(preds.end(), p.preds.begin(), p.preds.end());
    labels.insert(labels.end(), li.begin(), li.end());
  }
  return evaluate(preds, labels, kNumClasses);
}

/// Full training run; emits per-step and per-epoch metrics records when a
/// writer is given.
inline TrainState train(const std::vector<PointCloud>& dataset,
                        const Config& cfg, MetricsWriter* metrics = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("empty training dataset");
  for (const PointCloud& c : dataset)
    if (!c.has_labels())
      throw std::invalid_argument("training frames need labels");
  TrainState st = init_train_state(cfg, dataset);
  if (metrics) {
    nlohmann::ordered_json rec;
    rec["type"] = "run";
    rec["config_hash"] = config_hash(cfg);
    rec["mode"] = cfg.train.mode;
    rec["seed"] = cfg.seed.master;
    rec["frames"] = dataset.size();
    metrics->add(rec);
  }
  for (int e = 0; e < cfg.train.epochs; ++e) {
    const EpochLog log = train_epoch(dataset, st);
    if (metrics) {
      for (size_t f = 0; f < log.frames.size(); ++f) {
        const FrameLog& fl = log.frames[f];
        nlohmann::ordered_json rec;
        rec["type"] = "step";
        rec["step"] = st.global_step - static_cast<long long>(
                                           log.frames.size() - f);
        rec["region"] = fl.region;
        rec["ratio_idx"] = fl.ratio_idx;
        rec["reward"] = fl.reward;
        rec["epsilon"] = fl.epsilon;
        rec["td_loss"] = fl.td_loss;
        metrics->add(rec);
      }
      nlohmann::ordered_json rec;
      rec["type"] = "epoch";
      rec["epoch"] = e;
      rec["mean_loss_total"] = log.mean_total;
      rec["mean_reward"] = log.mean_reward;
      metrics->add(rec);
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoints: adapter/backbone/Q parameter binaries plus a JSON manifest
// embedding the full config.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const TrainState& st, const std::string& dir) {
  std::filesystem::create_directories(dir);
  atomic_write_file(dir + "/adapter.bin",
                    serialize_layers(kAdapterMagic, st.adapter.layers()));
  {
    std::vector<const Dense*> layers;
    for (const Dense& d : st.backbone.layers) layers.push_back(&d);
    atomic_write_file(dir + "/backbone.bin",
                      serialize_layers(kBackboneMagic, layers));
  }
  {
    std::vector<const Dense*> layers;
    for (const Dense& d : st.qf.net.layers) layers.push_back(&d);
    atomic_write_file(dir + "/qnet.bin", serialize_layers(kQMagic, layers));
  }
  nlohmann::ordered_json j;
  j["config"] = serialize_config(st.cfg);
  j["config_hash"] = config_hash(st.cfg);
  j["epoch"] = st.epoch;
  j["class_weights"] = st.class_w;
  atomic_write_file(dir + "/checkpoint.json", j.dump(2) + "\n");
}

struct Checkpoint {
  Config cfg;
  AdapterParams adapter;
  Mlp backbone;
  QFunction qf;
  std::vector<double> class_w;
};

inline Checkpoint load_checkpoint(const std::string& dir) {
  Checkpoint ck;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir + "/checkpoint.json"));
    ck.cfg = parse_config(j.at("config").get<std::string>());
    ck.class_w = j.at("class_weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest in " + dir + ": " +
                    e.what());
  }
  ck.adapter = AdapterParams::make(ck.cfg.adapter_dims(), 0);
  deserialize_layers(read_file(dir + "/adapter.bin"), kAdapterMagic,
                     ck.adapter.layers(), dir + "/adapter.bin");
  ck.adapter.sync_dims();

  ck.backbone.layers.resize(3);
  {
    std::vector<Dense*> layers;
    for (Dense& d : ck.backbone.layers) layers.push_back(&d);
    deserialize_layers(read_file(dir + "/backbone.bin"), kBackboneMagic,
                       layers, dir + "/backbone.bin");
  }
  const int state_dim = region_feature_dim(ck.cfg.adapter_dims().cue_total()) + 3;
  ck.qf = QFunction::make(state_dim, ck.cfg.policy.q_hidden,
                          ck.cfg.policy.ratios, 0);
  {
    std::vector<Dense*> layers;
    for (Dense& d : ck.qf.net.layers) layers.push_back(&d);
    deserialize_layers(read_file(dir + "/qnet.bin"), kQMagic, layers,
                       dir + "/qnet.bin");
    ck.qf.target = ck.qf.net;
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Dataset synthesis and weather-corrupted evaluation sets.
// ---------------------------------------------------------------------------

inline std::vector<PointCloud> make_scenes(const Config& cfg, int count,
                                           uint64_t split_tag) {
  std::vector<PointCloud> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(generate_scene(cfg.scene_spec(
        derive_seed(cfg.seed.master, kStreamScene, split_tag,
                    static_cast<uint64_t>(i)))));
  return out;
}

/// Weather kind of the i-th eval scene under the "mix" policy.
inline WeatherKind eval_weather_kind(const Config& cfg, int scene_idx) {
  if (cfg.eval.weather != "mix") return weather_from_name(cfg.eval.weather);
  static const WeatherKind cycle[4] = {
      WeatherKind::kFogLight, WeatherKind::kFogDense, WeatherKind::kRain,
      WeatherKind::kSnow};
  return cycle[scene_idx % 4];
}

/// Corrupts eval scenes deterministically from their own generation seeds,
/// so every training run scores against the identical shifted set.
inline std::vector<PointCloud> corrupt_eval_scenes(
    const Config& cfg, const std::vector<PointCloud>& scenes,
    uint64_t data_seed) {
  std::vector<PointCloud> out;
  out.reserve(scenes.size());
  for (size_t i = 0; i < scenes.size(); ++i)
    out.push_back(corrupt_weather(
        scenes[i], eval_weather_kind(cfg, static_cast<int>(i)),
        cfg.eval.severity,
        derive_seed(data_seed, kStreamEvalWeather, i)));
  return out;
}

}  // namespace geocue
