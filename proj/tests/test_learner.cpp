#include <catch2/catch_amalgamated.hpp>

#include "geocue/learner.hpp"
#include "oracles.hpp"

using namespace geocue;
using Catch::Approx;

namespace {

std::vector<double> softmax_rows_of(const Mlp& net,
                                    const std::vector<double>& inputs) {
  return backbone_forward(net, inputs);
}

}  // namespace

TEST_CASE("class_weights", "[learner]") {
  SECTION("uniform histogram gives unit weights") {
    const std::vector<double> w = class_weights({100, 100, 100, 100});
    for (double v : w) CHECK(v == Approx(1.0).margin(1e-12));
  }

  SECTION("rarer classes weigh more") {
    const std::vector<double> w = class_weights({900, 100, 500});
    CHECK(w[1] > w[2]);
    CHECK(w[2] > w[0]);
  }

  SECTION("90/10 split matches the inverse-log formula") {
    const std::vector<double> w = class_weights({90, 10});
    const double raw_common = 1.0 / std::log(1.02 + 0.9);
    const double raw_rare = 1.0 / std::log(1.02 + 0.1);
    CHECK(w[1] / w[0] == Approx(raw_rare / raw_common).margin(1e-12));
    CHECK((w[0] + w[1]) / 2.0 == Approx(1.0).margin(1e-12));
  }

  SECTION("absent classes get zero weight") {
    const std::vector<double> w = class_weights({50, 0, 50});
    CHECK(w[1] == 0.0);
    CHECK(w[0] == Approx(1.0));
  }

  SECTION("empty histogram is an error") {
    CHECK_THROWS_AS(class_weights({0, 0}), std::invalid_argument);
  }
}

TEST_CASE("loss_ce", "[learner]") {
  const std::vector<double> unit_w{1, 1, 1, 1};

  SECTION("perfect one-hot predictions give zero loss") {
    const std::vector<double> probs{1, 0, 0, 0, 0, 0, 1, 0};
    CHECK(loss_ce(probs, {0, 2}, unit_w) == Approx(0.0).margin(1e-12));
  }

  SECTION("uniform predictions over 4 classes give ln 4") {
    const std::vector<double> probs(8, 0.25);
    CHECK(loss_ce(probs, {1, 3}, unit_w) ==
          Approx(1.3862943611198906).margin(1e-9));
  }

  SECTION("doubling the weights doubles the loss") {
    Rng rng(3);
    std::vector<double> probs(4 * 5);
    for (int i = 0; i < 5; ++i) {
      double z = 0;
      for (int j = 0; j < 4; ++j) {
        probs[static_cast<size_t>(i * 4 + j)] = 0.1 + rng.u01();
        z += probs[static_cast<size_t>(i * 4 + j)];
      }
      for (int j = 0; j < 4; ++j) probs[static_cast<size_t>(i * 4 + j)] /= z;
    }
    const std::vector<int> labels{0, 1, 2, 3, 1};
    const std::vector<double> w2{2, 2, 2, 2};
    CHECK(loss_ce(probs, labels, w2) ==
          Approx(2.0 * loss_ce(probs, labels, unit_w)).margin(1e-12));
  }

  SECTION("shape and label validation") {
    CHECK_THROWS_AS(loss_ce({0.5, 0.5}, {0, 1}, unit_w),
                    std::invalid_argument);
    CHECK_THROWS_AS(loss_ce({0.25, 0.25, 0.25, 0.25}, {7}, unit_w),
                    std::invalid_argument);
    CHECK_THROWS_AS(loss_ce({0.9, 0.9, 0.1, 0.1}, {0}, unit_w),
                    std::invalid_argument);  // row does not sum to 1
  }
}

TEST_CASE("loss_after", "[learner]") {
  Rng rng(5);
  const int n = 6, c = 4;
  std::vector<double> probs(static_cast<size_t>(n * c));
  for (int i = 0; i < n; ++i) {
    double z = 0;
    for (int j = 0; j < c; ++j) {
      probs[static_cast<size_t>(i * c + j)] = 0.05 + rng.u01();
      z += probs[static_cast<size_t>(i * c + j)];
    }
    for (int j = 0; j < c; ++j) probs[static_cast<size_t>(i * c + j)] /= z;
  }
  const std::vector<int> labels{0, 1, 2, 3, 0, 2};
  const std::vector<double> w{1.3, 0.7, 1.1, 0.9};
  std::vector<double> s(static_cast<size_t>(n));
  for (double& v : s) v = rng.u01();

  SECTION("kappa 0 reduces exactly to loss_ce") {
    CHECK(loss_after(probs, labels, w, s, 0.0) == loss_ce(probs, labels, w));
  }

  SECTION("all s = 1 scales by 1 + kappa") {
    const std::vector<double> ones(static_cast<size_t>(n), 1.0);
    const double kappa = 0.8;
    CHECK(loss_after(probs, labels, w, ones, kappa) ==
          Approx((1.0 + kappa) * loss_ce(probs, labels, w)).margin(1e-12));
  }

  SECTION("mixed s matches per-point recomputation") {
    const double kappa = 1.7;
    double expect = 0.0;
    for (int i = 0; i < n; ++i) {
      const double p = probs[static_cast<size_t>(i * c + labels[static_cast<size_t>(i)])];
      expect += (1.0 + kappa * s[static_cast<size_t>(i)]) *
                (-w[static_cast<size_t>(labels[static_cast<size_t>(i)])] *
                 std::log(p));
    }
    expect /= n;
    CHECK(loss_after(probs, labels, w, s, kappa) ==
          Approx(expect).margin(1e-12));
  }

  SECTION("s length mismatch is an error") {
    CHECK_THROWS_AS(loss_after(probs, labels, w, {0.5}, 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("loss_entropy", "[learner]") {
  SECTION("both branches uniform give ln C") {
    const int c = 5;
    const std::vector<double> uni(2 * static_cast<size_t>(c), 1.0 / c);
    CHECK(loss_entropy(uni, uni, c) == Approx(std::log(5.0)).margin(1e-9));
  }

  SECTION("both branches one-hot give zero") {
    const std::vector<double> onehot{1, 0, 0, 0, 1, 0};
    CHECK(loss_entropy(onehot, onehot, 3) == Approx(0.0).margin(1e-9));
  }

  SECTION("asymmetric branches average the two entropies") {
    const std::vector<double> a{0.5, 0.25, 0.25};
    const std::vector<double> b{1.0, 0.0, 0.0};
    const double ha = 1.5 * std::log(2.0);
    CHECK(loss_entropy(a, b, 3) == Approx(0.5 * ha).margin(1e-9));
  }

  SECTION("shape mismatch is an error") {
    CHECK_THROWS_AS(loss_entropy({0.5, 0.5}, {0.5, 0.5, 0.0}, 2),
                    std::invalid_argument);
  }
}

TEST_CASE("loss_total", "[learner]") {
  SECTION("alpha 1, eta 0 sums the two branch losses") {
    CHECK(loss_total(0.7, 0.4, 9.9, 1.0, 0.0) == Approx(1.1).margin(1e-12));
  }

  SECTION("the worked example") {
    CHECK(loss_total(1.0, 0.5, 0.2, 2.0, 0.1) == Approx(2.02).margin(1e-12));
  }

  SECTION("linearity in each argument") {
    const double alpha = 1.5, eta = 0.3;
    const double base = loss_total(1.0, 2.0, 3.0, alpha, eta);
    CHECK(loss_total(1.0 + 1.0, 2.0, 3.0, alpha, eta) - base ==
          Approx(1.0).margin(1e-12));
    CHECK(loss_total(1.0, 2.0 + 1.0, 3.0, alpha, eta) - base ==
          Approx(alpha).margin(1e-12));
    CHECK(loss_total(1.0, 2.0, 3.0 + 1.0, alpha, eta) - base ==
          Approx(eta).margin(1e-12));
  }

  SECTION("constraint violations") {
    CHECK_THROWS_AS(loss_total(1, 1, 1, 0.5, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(loss_total(1, 1, 1, 1.0, -0.1), std::invalid_argument);
  }
}

TEST_CASE("uncertainty", "[learner]") {
  SECTION("one-hot row has zero entropy") {
    const std::vector<double> h = uncertainty({0, 1, 0}, 3);
    CHECK(h[0] == Approx(0.0).margin(1e-9));
  }

  SECTION("uniform row has entropy ln C") {
    const std::vector<double> h = uncertainty({0.25, 0.25, 0.25, 0.25}, 4);
    CHECK(h[0] == Approx(std::log(4.0)).margin(1e-9));
  }

  SECTION("the (0.5, 0.25, 0.25) row") {
    const std::vector<double> h = uncertainty({0.5, 0.25, 0.25}, 3);
    CHECK(h[0] == Approx(1.0397207708399179).margin(1e-9));
    CHECK(h[0] == Approx(1.5 * std::log(2.0)).margin(1e-12));
  }

  SECTION("entropy stays in [0, ln C]") {
    Rng rng(7);
    const int c = 6;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> row(static_cast<size_t>(c));
      double z = 0;
      for (double& v : row) {
        v = rng.u01();
        z += v;
      }
      for (double& v : row) v /= z;
      const std::vector<double> h = uncertainty(row, c);
      CHECK(h[0] >= 0.0);
      CHECK(h[0] <= std::log(6.0) + 1e-12);
    }
  }
}

TEST_CASE("backbone forward and backward", "[learner]") {
  Rng init(11);
  Mlp net = Mlp::make({7, 9, 8, 4}, init);
  const int c = net.out_dim();

  SECTION("zero final layer gives uniform softmax") {
    Mlp zeroed = net;
    std::fill(zeroed.layers.back().w.begin(), zeroed.layers.back().w.end(),
              0.0);
    std::fill(zeroed.layers.back().b.begin(), zeroed.layers.back().b.end(),
              0.0);
    Rng rng(13);
    std::vector<double> inputs(7 * 3);
    for (double& v : inputs) v = rng.gaussian();
    const std::vector<double> probs = softmax_rows_of(zeroed, inputs);
    for (double p : probs) CHECK(p == Approx(0.25).margin(1e-12));
  }

  SECTION("deterministic construction under a fixed seed") {
    Rng a(17), b(17);
    const Mlp m1 = Mlp::make({5, 6, 3}, a);
    const Mlp m2 = Mlp::make({5, 6, 3}, b);
    for (size_t l = 0; l < m1.layers.size(); ++l)
      for (size_t i = 0; i < m1.layers[l].w.size(); ++i)
        CHECK(m1.layers[l].w[i] == m2.layers[l].w[i]);
  }

  SECTION("gradients match finite differences through CE and entropy") {
    Rng rng(19);
    const int n = 5;
    std::vector<double> inputs(static_cast<size_t>(n) * 7);
    for (double& v : inputs) v = rng.gaussian();
    const std::vector<int> labels{0, 3, 1, 2, 0};
    const std::vector<double> w{1.2, 0.8, 1.0, 1.1};
    const double eta = 0.37;

    auto loss = [&]() {
      const std::vector<double> probs = backbone_forward(net, inputs);
      double h = 0.0;
      for (int i = 0; i < n; ++i)
        h += uncertainty({probs.begin() + i * c, probs.begin() + (i + 1) * c},
                         c)[0];
      return loss_ce(probs, labels, w) + eta * h / n;
    };

    BackboneCache cache;
    const std::vector<double> probs = backbone_forward(net, inputs, &cache);
    std::vector<double> dlogits(static_cast<size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i) {
      add_ce_logit_grad(probs.data() + i * c, c, labels[static_cast<size_t>(i)],
                        w[static_cast<size_t>(labels[static_cast<size_t>(i)])],
                        1.0 / n, dlogits.data() + i * c);
      add_entropy_logit_grad(probs.data() + i * c, c, eta / n,
                             dlogits.data() + i * c);
    }
    MlpGrads grads = MlpGrads::zeros_like(net);
    std::vector<double> dinputs;
    backbone_backward(net, cache, dlogits, grads, &dinputs);

    Rng pick(23);
    for (int t = 0; t < 25; ++t) {
      const size_t layer = pick.below(net.layers.size());
      const size_t wi = pick.below(net.layers[layer].w.size());
      const double fd = oracle::central_diff(loss, &net.layers[layer].w[wi]);
      INFO("layer " << layer << " w[" << wi << "]");
      CHECK(oracle::rel_err(fd, grads.dw[layer][wi]) < 1e-4);
    }
    for (int t = 0; t < 8; ++t) {
      const size_t layer = pick.below(net.layers.size());
      const size_t bi = pick.below(net.layers[layer].b.size());
      const double fd = oracle::central_diff(loss, &net.layers[layer].b[bi]);
      CHECK(oracle::rel_err(fd, grads.db[layer][bi]) < 1e-4);
    }
    // Input gradients too (they drive the adapter path).
    for (int t = 0; t < 10; ++t) {
      const size_t ii = pick.below(inputs.size());
      const double fd = oracle::central_diff(loss, &inputs[ii]);
      CHECK(oracle::rel_err(fd, dinputs[ii]) < 1e-4);
    }
  }

  SECTION("missing cache is an error") {
    BackboneCache cache;
    MlpGrads grads = MlpGrads::zeros_like(net);
    CHECK_THROWS_AS(backbone_backward(net, cache, {}, grads, nullptr),
                    std::logic_error);
  }
}

TEST_CASE("evaluate", "[learner]") {
  SECTION("perfect predictions give IoU 1 everywhere") {
    const std::vector<int> labels{0, 1, 2, 1, 0, 2, 2};
    const EvalReport rep = evaluate(labels, labels, 3);
    CHECK(rep.miou == Approx(1.0));
    for (int k = 0; k < 3; ++k) CHECK(rep.iou[static_cast<size_t>(k)] == 1.0);
  }

  SECTION("disjoint predictions give IoU 0") {
    const std::vector<int> labels{0, 0, 0};
    const std::vector<int> preds{1, 1, 1};
    const EvalReport rep = evaluate(preds, labels, 2);
    CHECK(rep.iou[0] == 0.0);
    CHECK(rep.miou == 0.0);
  }

  SECTION("hand-built 3-class confusion case") {
    // truth:  0 0 0 0 1 1 1 2 2 2
    // pred:   0 0 1 2 1 1 0 2 2 1
    const std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 2, 2, 2};
    const std::vector<int> preds{0, 0, 1, 2, 1, 1, 0, 2, 2, 1};
    const EvalReport rep = evaluate(preds, labels, 3);
    // class 0: TP=2, FN=2, FP=1 -> 2/5
    CHECK(rep.iou[0] == Approx(2.0 / 5.0));
    // class 1: TP=2, FN=1, FP=2 -> 2/5
    CHECK(rep.iou[1] == Approx(2.0 / 5.0));
    // class 2: TP=2, FN=1, FP=1 -> 2/4
    CHECK(rep.iou[2] == Approx(0.5));
    CHECK(rep.miou == Approx((0.4 + 0.4 + 0.5) / 3.0));

    // Confusion rows sum to ground-truth counts.
    for (int k = 0; k < 3; ++k) {
      long long row = 0;
      for (int j = 0; j < 3; ++j) row += rep.at(k, j);
      CHECK(row == rep.gt_counts[static_cast<size_t>(k)]);
    }
  }

  SECTION("ignore-labeled points are excluded") {
    const std::vector<int> labels{0, -1, 1, -1};
    const std::vector<int> preds{0, 0, 1, 1};
    const EvalReport rep = evaluate(preds, labels, 2);
    CHECK(rep.scored_points == 2);
    CHECK(rep.miou == Approx(1.0));
  }

  SECTION("classes absent from ground truth do not enter the mean") {
    const std::vector<int> labels{0, 0, 1};
    const std::vector<int> preds{0, 0, 1};
    const EvalReport rep = evaluate(preds, labels, 5);
    CHECK(rep.miou == Approx(1.0));
    CHECK(rep.iou[3] == -1.0);
  }

  SECTION("length mismatch is an error") {
    CHECK_THROWS_AS(evaluate({0, 1}, {0}, 2), std::invalid_argument);
  }
}
