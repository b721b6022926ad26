#include <doctest.h>

#include <cmath>

#include "cep/gradcheck.hpp"
#include "cep/losses.hpp"
#include "oracles.hpp"

using namespace cep;

namespace {

Var leaf_rows(Tape& t, const std::vector<oracle::Vec>& rows) {
  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t d = static_cast<int64_t>(rows[0].size());
  Tensor m({n, d});
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t j = 0; j < d; ++j) m.set(r * d + j, rows[r][j]);
  }
  return t.leaf(m);
}

TripleEmbeddings const_triple(Tape& t, const std::vector<oracle::Vec>& p,
                              const std::vector<oracle::Vec>& c,
                              const std::vector<oracle::Vec>& f) {
  return {leaf_rows(t, p), leaf_rows(t, c), leaf_rows(t, f)};
}

}  // namespace

TEST_CASE("six elementary cycles enumerate exactly") {
  const auto& cycles = elementary_cycles();
  REQUIRE(cycles.size() == 6);
  CHECK(cycles[0].start == TimeRole::kCurrent);
  CHECK(cycles[0].forward_first);
  CHECK(cycles[0].depth == 1);
  CHECK(cycles[1].start == TimeRole::kCurrent);
  CHECK(!cycles[1].forward_first);
  CHECK(cycles[1].depth == 1);
  CHECK(cycles[2].start == TimeRole::kPast);
  CHECK(cycles[2].forward_first);
  CHECK(cycles[2].depth == 1);
  CHECK(cycles[3].start == TimeRole::kPast);
  CHECK(cycles[3].forward_first);
  CHECK(cycles[3].depth == 2);
  CHECK(cycles[4].start == TimeRole::kFuture);
  CHECK(!cycles[4].forward_first);
  CHECK(cycles[4].depth == 1);
  CHECK(cycles[5].start == TimeRole::kFuture);
  CHECK(!cycles[5].forward_first);
  CHECK(cycles[5].depth == 2);
}

TEST_CASE("cycle loss closes exactly for identity and inverse predictors") {
  const std::vector<oracle::Vec> z{{2.0}};
  NoiseSource noise(1, 0);

  // identity predictors with the noise path zeroed
  {
    Tape t(Precision::f64);
    const PredictorParams ident = oracle::affine_predictor(1, 0.0);
    PredictorVars mu = leaf_predictor(t, ident, false);
    PredictorVars ups = leaf_predictor(t, ident, false);
    TripleEmbeddings e = const_triple(t, z, z, z);
    CycleLossResult r = cycle_loss(t, e, e, mu, ups, noise);
    CHECK(t.value(r.total).item() == 0.0);
  }
  // exact inverses: mu adds one, ups removes it
  {
    Tape t(Precision::f64);
    PredictorVars mu = leaf_predictor(t, oracle::affine_predictor(1, 1.0), false);
    PredictorVars ups =
        leaf_predictor(t, oracle::affine_predictor(1, -1.0), false);
    TripleEmbeddings e = const_triple(t, z, z, z);
    CycleLossResult r = cycle_loss(t, e, e, mu, ups, noise);
    CHECK(std::abs(t.value(r.total).item()) < 1e-12);
  }
}

TEST_CASE("cycle loss hand-computed value for the +1/+1 predictors") {
  // mu(z) = z + 1 and ups(z) = z + 1: term distances 2,2,2,4,2,4 sum to 16
  Tape t(Precision::f64);
  PredictorVars mu = leaf_predictor(t, oracle::affine_predictor(1, 1.0), false);
  PredictorVars ups = leaf_predictor(t, oracle::affine_predictor(1, 1.0), false);
  const std::vector<oracle::Vec> z{{2.0}};
  TripleEmbeddings e = const_triple(t, z, z, z);
  NoiseSource noise(1, 0);
  CycleLossResult r = cycle_loss(t, e, e, mu, ups, noise);
  CHECK(std::abs(t.value(r.total).item() - 16.0) < 1e-12);
  const double expect[6] = {2, 2, 2, 4, 2, 4};
  for (int i = 0; i < 6; ++i) {
    CHECK(std::abs(t.value(r.terms[i]).item() - expect[i]) < 1e-12);
  }
}

TEST_CASE("cycle loss is nonnegative on random instances") {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    PredictorConfig cfg = predictor_config_for(4);
    cfg.hidden = 8;
    const PredictorParams mu_p =
        PredictorParams::init(cfg, rng.next_u64(), Precision::f64);
    const PredictorParams ups_p =
        PredictorParams::init(cfg, rng.next_u64(), Precision::f64);
    Tape t(Precision::f64);
    PredictorVars mu = leaf_predictor(t, mu_p, false);
    PredictorVars ups = leaf_predictor(t, ups_p, false);
    std::vector<oracle::Vec> rows(2, oracle::Vec(4));
    for (auto& r : rows) {
      for (double& v : r) v = rng.uniform(-1, 1);
    }
    TripleEmbeddings e = const_triple(t, rows, rows, rows);
    NoiseSource noise(rng.next_u64(), cfg.noise_dim);
    CycleLossResult res = cycle_loss(t, e, e, mu, ups, noise);
    CHECK(t.value(res.total).item() >= 0.0);
  }
}

TEST_CASE("infonce frozen value and degenerate cases") {
  Tape t(Precision::f64);
  Var anchor = t.leaf(Tensor::vec({1, 0}));
  Var positive = t.leaf(Tensor::vec({1, 0}));
  Var negative = t.leaf(Tensor::vec({0, 1}));

  // no negatives: P_pos = 1 exactly
  CHECK(t.value(infonce(t, anchor, positive, {}, 1.0)).item() == 0.0);

  const Var negs[1] = {negative};
  const double L = t.value(infonce(t, anchor, positive, negs, 1.0)).item();
  // -ln(e / (e + 1))
  CHECK(L == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(std::abs(L - oracle::infonce({1, 0}, {1, 0}, {{0, 1}}, 1.0)) < 1e-12);

  CHECK_THROWS_AS(infonce(t, anchor, positive, negs, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(infonce(t, anchor, positive, negs, -1.0),
                  std::invalid_argument);
}

TEST_CASE("infonce temperature ratio invariance") {
  Rng rng(55);
  for (int trial = 0; trial < 5; ++trial) {
    oracle::Vec a(3), p(3), n1(3), n2(3);
    for (double* v : {a.data(), p.data(), n1.data(), n2.data()}) {
      for (int i = 0; i < 3; ++i) v[i] = rng.uniform(-1, 1);
    }
    const double c = rng.uniform(0.5, 3.0);
    Tape t(Precision::f64);
    auto leaf_vec = [&](const oracle::Vec& v, double s) {
      Tensor tv({3});
      for (int i = 0; i < 3; ++i) tv.set(i, v[static_cast<size_t>(i)] * s);
      return t.leaf(tv);
    };
    // scaling the anchor by c scales every similarity by c
    Var a1 = leaf_vec(a, 1.0), a2 = leaf_vec(a, c);
    Var p1 = leaf_vec(p, 1.0);
    const Var negs1[2] = {leaf_vec(n1, 1.0), leaf_vec(n2, 1.0)};
    const double l1 = t.value(infonce(t, a1, p1, negs1, 1.0)).item();
    const double l2 = t.value(infonce(t, a2, p1, negs1, c)).item();
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  }
}

TEST_CASE("infonce monotone in the similarities") {
  Tape t(Precision::f64);
  Var anchor = t.leaf(Tensor::vec({1, 0}));
  Var neg = t.leaf(Tensor::vec({0.4, 0.2}));
  const Var negs[1] = {neg};
  auto loss_with_positive = [&](double px) {
    Var p = t.leaf(Tensor::vec({px, 0.3}));
    return t.value(infonce(t, p /*anchor*/, p, negs, 1.0)).item();
  };
  // decreasing in S_p: moving the positive closer to the anchor
  Var p_near = t.leaf(Tensor::vec({0.9, 0.1}));
  Var p_far = t.leaf(Tensor::vec({0.2, 0.1}));
  const double near = t.value(infonce(t, anchor, p_near, negs, 1.0)).item();
  const double far = t.value(infonce(t, anchor, p_far, negs, 1.0)).item();
  CHECK(near < far);
  (void)loss_with_positive;
  // increasing in S_i: a harder negative
  Var n_hard = t.leaf(Tensor::vec({0.9, 0.0}));
  const Var negs_hard[1] = {n_hard};
  const double harder =
      t.value(infonce(t, anchor, p_near, negs_hard, 1.0)).item();
  CHECK(harder > near);
}

TEST_CASE("brute-force scalar oracle matches the tensor implementation") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t dim = 2 + static_cast<int64_t>(rng.below(3));  // 2..4
    const int64_t batch = 1 + static_cast<int64_t>(rng.below(2));
    PredictorConfig cfg = predictor_config_for(dim);
    cfg.hidden = 6;
    const PredictorParams mu_p =
        PredictorParams::init(cfg, rng.next_u64(), Precision::f64);
    const PredictorParams ups_p =
        PredictorParams::init(cfg, rng.next_u64(), Precision::f64);
    auto rows = [&](uint64_t seed) {
      Rng r(seed);
      std::vector<oracle::Vec> out(static_cast<size_t>(batch),
                                   oracle::Vec(static_cast<size_t>(dim)));
      for (auto& row : out) {
        for (double& v : row) v = r.uniform(-1, 1);
      }
      return out;
    };
    const auto live_p = rows(rng.next_u64());
    const auto live_t = rows(rng.next_u64());
    const auto live_f = rows(rng.next_u64());
    const auto tgt_p = rows(rng.next_u64());
    const auto tgt_t = rows(rng.next_u64());
    const auto tgt_f = rows(rng.next_u64());
    std::vector<std::vector<oracle::Vec>> negs(static_cast<size_t>(batch));
    for (auto& per_row : negs) {
      const size_t k = 1 + rng.below(3);
      for (size_t i = 0; i < k; ++i) {
        oracle::Vec v(static_cast<size_t>(dim));
        for (double& x : v) x = rng.uniform(-1, 1);
        per_row.push_back(std::move(v));
      }
    }
    const double xi = rng.uniform(0.5, 2.0);
    NoiseSource noise(rng.next_u64(), cfg.noise_dim);

    Tape t(Precision::f64);
    PredictorVars mu = leaf_predictor(t, mu_p, false);
    PredictorVars ups = leaf_predictor(t, ups_p, false);
    TripleEmbeddings live = const_triple(t, live_p, live_t, live_f);
    TripleEmbeddings tgt = const_triple(t, tgt_p, tgt_t, tgt_f);
    CycleLossResult cyc = cycle_loss(t, tgt, live, mu, ups, noise);

    std::vector<NegativeSet> neg_sets(static_cast<size_t>(batch));
    for (size_t r = 0; r < negs.size(); ++r) {
      for (const oracle::Vec& v : negs[r]) {
        Tensor tv({dim});
        for (int64_t j = 0; j < dim; ++j) tv.set(j, v[static_cast<size_t>(j)]);
        neg_sets[r].easy.push_back(stop_gradient(t.leaf(tv)));
      }
    }
    ContrastiveConfig ccfg;
    ccfg.xi = xi;
    Var nce = contrastive_loss(t, tgt, live, mu, ups, noise, neg_sets, ccfg);

    const double cyc_oracle = oracle::cycle_loss(
        mu_p, ups_p, tgt_p, tgt_t, tgt_f, live_p, live_t, live_f, noise);
    const double nce_oracle = oracle::contrastive_loss(
        mu_p, ups_p, tgt_p, tgt_t, tgt_f, live_p, live_t, live_f, negs, xi,
        true, noise);
    CHECK(std::abs(t.value(cyc.total).item() - cyc_oracle) < 1e-10);
    CHECK(std::abs(t.value(nce).item() - nce_oracle) < 1e-10);
  }
}

TEST_CASE("two-pair configuration restricts to the Z_t anchors") {
  Rng rng(31);
  const int64_t dim = 4;
  PredictorConfig cfg = predictor_config_for(dim);
  cfg.hidden = 6;
  const PredictorParams mu_p = PredictorParams::init(cfg, 1, Precision::f64);
  const PredictorParams ups_p = PredictorParams::init(cfg, 2, Precision::f64);
  auto rows = [&](uint64_t seed) {
    Rng r(seed);
    std::vector<oracle::Vec> out(1, oracle::Vec(static_cast<size_t>(dim)));
    for (double& v : out[0]) v = r.uniform(-1, 1);
    return out;
  };
  const auto lp = rows(1), lt = rows(2), lf = rows(3);
  const auto tp = rows(4), tt = rows(5), tf = rows(6);
  std::vector<std::vector<oracle::Vec>> negs{{oracle::Vec{0.1, 0.2, 0.3, 0.4}}};
  NoiseSource noise(7, cfg.noise_dim);

  Tape t(Precision::f64);
  PredictorVars mu = leaf_predictor(t, mu_p, false);
  PredictorVars ups = leaf_predictor(t, ups_p, false);
  std::vector<NegativeSet> neg_sets(1);
  Tensor tv({dim});
  for (int64_t j = 0; j < dim; ++j) tv.set(j, negs[0][0][static_cast<size_t>(j)]);
  neg_sets[0].easy.push_back(stop_gradient(t.leaf(tv)));
  ContrastiveConfig ccfg;
  ccfg.four_pairs = false;
  Var nce = contrastive_loss(t, const_triple(t, tp, tt, tf),
                             const_triple(t, lp, lt, lf), mu, ups, noise,
                             neg_sets, ccfg);
  const double oracle_val = oracle::contrastive_loss(
      mu_p, ups_p, tp, tt, tf, lp, lt, lf, negs, 1.0, false, noise);
  CHECK(std::abs(t.value(nce).item() - oracle_val) < 1e-12);
}

TEST_CASE("gradients to negatives are exactly zero") {
  const int64_t dim = 4;
  PredictorConfig cfg = predictor_config_for(dim);
  cfg.hidden = 6;
  const PredictorParams mu_p = PredictorParams::init(cfg, 3, Precision::f64);
  const PredictorParams ups_p = PredictorParams::init(cfg, 4, Precision::f64);

  Tape t(Precision::f64);
  PredictorVars mu = leaf_predictor(t, mu_p, true);
  PredictorVars ups = leaf_predictor(t, ups_p, true);
  Rng rng(10);
  auto row = [&] {
    Tensor m({1, dim});
    for (int64_t j = 0; j < dim; ++j) m.set(j, rng.uniform(-1, 1));
    return t.leaf(m, true);
  };
  TripleEmbeddings live{row(), row(), row()};
  TripleEmbeddings tgt{stop_gradient(live.past), stop_gradient(live.current),
                       stop_gradient(live.future)};
  std::vector<NegativeSet> negs(1);
  std::vector<Var> probes;
  for (int i = 0; i < 3; ++i) {
    Tensor v({dim});
    for (int64_t j = 0; j < dim; ++j) v.set(j, rng.uniform(-1, 1));
    Var leaf = t.leaf(v, true);
    probes.push_back(leaf);
    negs[0].easy.push_back(stop_gradient(leaf));
  }
  NoiseSource noise(11, cfg.noise_dim);
  ContrastiveConfig ccfg;
  Var nce = contrastive_loss(t, tgt, live, mu, ups, noise, negs, ccfg);
  GradientMap g = t.backward(nce);
  for (Var p : probes) {
    const Tensor& gt = g.at(p);
    for (int64_t j = 0; j < gt.numel(); ++j) CHECK(gt.at(j) == 0.0);
  }
}

TEST_CASE("combined loss arithmetic") {
  Tape t(Precision::f64);
  Var lc = t.leaf(Tensor::scalar(16.0));
  Var lx = t.leaf(Tensor::scalar(0.5));
  CHECK(t.value(combined_loss(lc, lx, 0.1)).item() ==
        doctest::Approx(2.1).epsilon(1e-15));
  CHECK(t.value(combined_loss(lc, lx, 0.0)).item() == 0.5);
  CHECK_THROWS_AS(combined_loss(lc, lx, -0.1), std::invalid_argument);
}

TEST_CASE("combined model gradient check") {
  const GradCheckCase c = combined_loss_gradcheck_case();
  const double err = grad_check(c.fn, c.inputs, 1e-4);
  INFO("combined loss max relative error ", err);
  CHECK(err < c.tolerance);
}
