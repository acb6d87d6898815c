#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "geocue/nn.hpp"

namespace geocue {

inline constexpr double kLogClamp = 1e-12;

/// Inverse-log-frequency class weights, mean-normalized over the classes
/// present in the histogram; absent classes get weight 0.
inline std::vector<double> class_weights(
    const std::vector<long long>& histogram) {
  long long total = 0;
  for (long long c : histogram) total += c;
  if (total <= 0) throw std::invalid_argument("empty label histogram");
  std::vector<double> w(histogram.size(), 0.0);
  double sum = 0.0;
  int present = 0;
  for (size_t c = 0; c < histogram.size(); ++c) {
    if (histogram[c] <= 0) continue;
    const double freq =
        static_cast<double>(histogram[c]) / static_cast<double>(total);
    w[c] = 1.0 / std::log(1.02 + freq);
    sum += w[c];
    ++present;
  }
  const double norm = static_cast<double>(present) / sum;
  for (double& v : w) v *= norm;
  return w;
}

namespace detail {

inline void check_probs(const std::vector<double>& probs, size_t n, int c,
                        const char* what) {
  if (probs.size() != n * static_cast<size_t>(c))
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  for (size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < c; ++j) row += probs[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
    if (std::abs(row - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) +
                                  ": probability row does not sum to 1");
  }
}

}  // namespace detail

/// Class-weighted cross-entropy, mean over points.
inline double loss_ce(const std::vector<double>& probs,
                      const std::vector<int>& labels,
                      const std::vector<double>& w) {
  const size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("loss_ce: empty batch");
  const int c = static_cast<int>(w.size());
  detail::check_probs(probs, n, c, "loss_ce");
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw std::invalid_argument("loss_ce: label out of range");
    const double p =
        std::max(probs[i * static_cast<size_t>(c) + static_cast<size_t>(y)],
                 kLogClamp);
    acc -= w[static_cast<size_t>(y)] * std::log(p);
  }
  return acc / static_cast<double>(n);
}

/// Post-drop loss: per-point cross-entropy scaled by (1 + kappa * s_i).
inline double loss_after(const std::vector<double>& probs_drop,
                         const std::vector<int>& labels,
                         const std::vector<double>& w,
                         const std::vector<double>& s, double kappa) {
  const size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("loss_after: empty batch");
  if (s.size() != n) throw std::invalid_argument("loss_after: shape mismatch");
  const int c = static_cast<int>(w.size());
  detail::check_probs(probs_drop, n, c, "loss_after");
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c)
      throw std::invalid_argument("loss_after: label out of range");
    const double p =
        std::max(probs_drop[i * static_cast<size_t>(c) + static_cast<size_t>(y)],
                 kLogClamp);
    acc += (1.0 + kappa * s[i]) * (-w[static_cast<size_t>(y)] * std::log(p));
  }
  return acc / static_cast<double>(n);
}

/// Mean Shannon entropy of the two branches (the entropy regularizer).
inline double loss_entropy(const std::vector<double>& probs_sj,
                           const std::vector<double>& probs_drop, int c) {
  if (probs_sj.size() != probs_drop.size())
    throw std::invalid_argument("loss_entropy: shape mismatch");
  if (c < 1 || probs_sj.size() % static_cast<size_t>(c) != 0)
    throw std::invalid_argument("loss_entropy: shape mismatch");
  const size_t n = probs_sj.size() / static_cast<size_t>(c);
  if (n == 0) throw std::invalid_argument("loss_entropy: empty batch");
  detail::check_probs(probs_sj, n, c, "loss_entropy");
  detail::check_probs(probs_drop, n, c, "loss_entropy");
  double acc = 0.0;
  for (size_t i = 0; i < n * static_cast<size_t>(c); ++i) {
    acc += probs_sj[i] * std::log(std::max(probs_sj[i], kLogClamp));
    acc += probs_drop[i] * std::log(std::max(probs_drop[i], kLogClamp));
  }
  return -acc / (2.0 * static_cast<double>(n));
}

/// Final objective: reference + alpha * post-drop + eta * entropy.
inline double loss_total(double l_before, double l_after, double l_ent,
                         double alpha, double eta) {
  if (alpha < 1.0) throw std::invalid_argument("alpha must be >= 1");
  if (eta < 0.0) throw std::invalid_argument("eta must be >= 0");
  return l_before + alpha * l_after + eta * l_ent;
}

/// Per-point Shannon entropy (natural log) of prediction rows.
inline std::vector<double> uncertainty(const std::vector<double>& probs,
                                       int c) {
  if (c < 1 || probs.size() % static_cast<size_t>(c) != 0)
    throw std::invalid_argument("uncertainty: shape mismatch");
  const size_t n = probs.size() / static_cast<size_t>(c);
  detail::check_probs(probs, n, c, "uncertainty");
  std::vector<double> h(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) {
      const double p = probs[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
      acc -= p * std::log(std::max(p, kLogClamp));
    }
    h[i] = acc;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Backbone: per-point perceptron over (point features ++ cue vector).
// ---------------------------------------------------------------------------

inline constexpr const char* kBackboneMagic = "LGB1";

struct BackboneCache {
  std::vector<double> inputs;   // n * in_dim
  std::vector<double> scratch;  // n * scratch_size
  std::vector<double> probs;    // n * C
  size_t n = 0;
};

/// Softmax predictions for a batch of feature rows; caches pre-activations
/// for the backward pass.
inline std::vector<double> backbone_forward(const Mlp& net,
                                            const std::vector<double>& inputs,
                                            BackboneCache* cache = nullptr) {
  const int in_dim = net.in_dim();
  const int c = net.out_dim();
  if (in_dim <= 0 || inputs.size() % static_cast<size_t>(in_dim) != 0)
    throw std::invalid_argument("backbone_forward: shape mismatch");
  const size_t n = inputs.size() / static_cast<size_t>(in_dim);
  std::vector<double> probs(n * static_cast<size_t>(c));
  const size_t ss = net.scratch_size();
  std::vector<double> scratch_all;
  if (cache) scratch_all.resize(n * ss);
  std::vector<double> scratch(ss);
  for (size_t i = 0; i < n; ++i) {
    double* s = cache ? scratch_all.data() + i * ss : scratch.data();
    double* out = probs.data() + i * static_cast<size_t>(c);
    net.forward(inputs.data() + i * static_cast<size_t>(in_dim), s, out);
    softmax_inplace(out, c);
  }
  if (cache) {
    cache->inputs = inputs;
    cache->scratch = std::move(scratch_all);
    cache->probs = probs;
    cache->n = n;
  }
  return probs;
}

/// Backward from per-point logit gradients; accumulates parameter grads and
/// optionally per-point input gradients (n * in_dim).
inline void backbone_backward(const Mlp& net, const BackboneCache& cache,
                              const std::vector<double>& dlogits,
                              MlpGrads& grads, std::vector<double>* dinputs) {
  const int in_dim = net.in_dim();
  const int c = net.out_dim();
  if (cache.n == 0) throw std::logic_error("missing forward cache");
  if (dlogits.size() != cache.n * static_cast<size_t>(c))
    throw std::invalid_argument("backbone_backward: shape mismatch");
  if (dinputs) dinputs->assign(cache.n * static_cast<size_t>(in_dim), 0.0);
  const size_t ss = net.scratch_size();
  for (size_t i = 0; i < cache.n; ++i) {
    mlp_backward(net, cache.inputs.data() + i * static_cast<size_t>(in_dim),
                 cache.scratch.data() + i * ss,
                 dlogits.data() + i * static_cast<size_t>(c), grads,
                 dinputs ? dinputs->data() + i * static_cast<size_t>(in_dim)
                         : nullptr);
  }
}

/// dL/dlogits for weighted cross-entropy terms: scale * w_y * (p - onehot).
inline void add_ce_logit_grad(const double* probs, int c, int label, double wy,
                              double scale, double* dlogits) {
  for (int j = 0; j < c; ++j)
    dlogits[j] += scale * wy * (probs[j] - (j == label ? 1.0 : 0.0));
}

/// dL/dlogits for the entropy of a softmax row:
/// dH/dz_j = -p_j * (log p_j + H).
inline void add_entropy_logit_grad(const double* probs, int c, double scale,
                                   double* dlogits) {
  double h = 0.0;
  for (int j = 0; j < c; ++j)
    h -= probs[j] * std::log(std::max(probs[j], kLogClamp));
  for (int j = 0; j < c; ++j)
    dlogits[j] -= scale * probs[j] *
                  (std::log(std::max(probs[j], kLogClamp)) + h);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
  int num_classes = 0;
  std::vector<long long> confusion;  // C x C, rows = ground truth
  std::vector<double> iou;           // -1 for classes absent from GT
  std::vector<long long> gt_counts;
  double miou = 0.0;
  long long scored_points = 0;

  long long& at(int truth, int pred) {
    return confusion[static_cast<size_t>(truth) * num_classes +
                     static_cast<size_t>(pred)];
  }
  long long at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * num_classes +
                     static_cast<size_t>(pred)];
  }
};

/// Confusion matrix, per-class IoU, and mIoU over the classes present in
/// the ground truth. Labels < 0 mark ignored points.
inline EvalReport evaluate(const std::vector<int>& preds,
                           const std::vector<int>& labels, int c) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("evaluate: length mismatch");
  if (c < 1) throw std::invalid_argument("evaluate: bad class count");
  EvalReport rep;
  rep.num_classes = c;
  rep.confusion.assign(static_cast<size_t>(c) * c, 0);
  rep.gt_counts.assign(static_cast<size_t>(c), 0);
  rep.iou.assign(static_cast<size_t>(c), -1.0);
  for (size_t i = 0; i < preds.size(); ++i) {
    const int y = labels[i];
    if (y < 0) continue;  // ignore class
    const int p = preds[i];
    if (y >= c || p < 0 || p >= c)
      throw std::invalid_argument("evaluate: class id out of range");
    ++rep.at(y, p);
    ++rep.gt_counts[static_cast<size_t>(y)];
    ++rep.scored_points;
  }
  double acc = 0.0;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    if (rep.gt_counts[static_cast<size_t>(k)] == 0) continue;
    const long long tp = rep.at(k, k);
    long long fp = 0, fn = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += rep.at(j, k);
      fn += rep.at(k, j);
    }
    const long long denom = tp + fp + fn;
    rep.iou[static_cast<size_t>(k)] =
        denom > 0 ? static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    acc += rep.iou[static_cast<size_t>(k)];
    ++present;
  }
  rep.miou = present > 0 ? acc / present : 0.0;
  return rep;
}

}  // namespace geocue
