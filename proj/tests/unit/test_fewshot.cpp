#include <doctest.h>

#include <cmath>
#include <set>

#include "ancor/checkpoint.hpp"
#include "ancor/fewshot.hpp"
#include "ancor/numcore.hpp"
#include "oracles.hpp"

using namespace ancor;

namespace {

struct Toy {
  Dataset data;
  Hierarchy hierarchy;
};

// Coarse class c sits at +-coarse_gap on axis 0; fine class f adds
// fine_gap on axis 1 + (f % subs). Per class: n samples with N(0, noise).
Toy toy(std::size_t coarse, std::size_t subs, std::size_t n, std::size_t dim, double coarse_gap, double fine_gap,
        double noise, std::uint64_t seed) {
  Toy t;
  t.hierarchy.num_coarse = coarse;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  const std::size_t fine = coarse * subs;
  t.data.features = Matrix(fine * n, dim);
  for (std::size_t f = 0; f < fine; ++f) {
    const std::size_t c = f / subs;
    t.hierarchy.fine_to_coarse.push_back(c);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = f * n + i;
      for (std::size_t j = 0; j < dim; ++j) t.data.features(r, j) = g(rng);
      t.data.features(r, c % dim) += coarse_gap;
      t.data.features(r, (coarse + f % subs) % dim) += fine_gap;
      t.data.coarse.push_back(c);
      t.data.fine.push_back(f);
    }
  }
  return t;
}

EvalConfig plain_cfg(EvalMode mode, std::size_t episodes = 20) {
  EvalConfig c;
  c.mode = mode;
  c.episodes = episodes;
  c.support_augment_copies = 0;
  return c;
}

Matrix identity_features(const Matrix& x) { return l2_normalize_rows(x); }

}  // namespace

TEST_CASE("episode sampling") {
  HierarchySpec s;
  s.input_dim = 8;
  s.seed = 2;
  const DatasetSplit d = generate_synthetic(s);
  Rng rng(1);
  const Episode all = sample_episode(d.test, d.hierarchy, EvalMode::AllWay, 5, 1, 15, rng);
  CHECK(all.way == 16);
  CHECK(all.support.size() == 16);
  CHECK(all.query.size() == 240);

  for (int i = 0; i < 100; ++i) {
    for (EvalMode m : {EvalMode::FiveWay, EvalMode::AllWay, EvalMode::IntraClass, EvalMode::CoarseAllWay}) {
      const Episode ep = sample_episode(d.test, d.hierarchy, m, 5, 1 + i % 3, 15, rng);
      std::set<std::size_t> sup(ep.support.begin(), ep.support.end()), qry(ep.query.begin(), ep.query.end());
      CHECK(sup.size() == ep.support.size());
      CHECK(qry.size() == ep.query.size());
      for (std::size_t x : sup) CHECK(qry.count(x) == 0);
      std::set<std::size_t> cls(ep.classes.begin(), ep.classes.end());
      CHECK(cls.size() == ep.way);
      std::vector<std::size_t> per_way(ep.way, 0), per_way_q(ep.way, 0);
      for (std::size_t j = 0; j < ep.support.size(); ++j) {
        ++per_way[ep.support_labels[j]];
        const std::size_t truth = ep.coarse_labels ? d.test.coarse[ep.support[j]] : d.test.fine[ep.support[j]];
        CHECK(ep.classes[ep.support_labels[j]] == truth);
      }
      for (std::size_t j = 0; j < ep.query.size(); ++j) {
        ++per_way_q[ep.query_labels[j]];
        const std::size_t truth = ep.coarse_labels ? d.test.coarse[ep.query[j]] : d.test.fine[ep.query[j]];
        CHECK(ep.classes[ep.query_labels[j]] == truth);
      }
      for (std::size_t w = 0; w < ep.way; ++w) {
        CHECK(per_way[w] == ep.shot);
        CHECK(per_way_q[w] == 15);
      }
      if (m == EvalMode::FiveWay) CHECK(ep.way == 5);
      if (m == EvalMode::CoarseAllWay) CHECK((ep.way == 4 && ep.coarse_labels));
      if (m == EvalMode::IntraClass) {
        CHECK(ep.way == 4);
        std::set<std::size_t> parents;
        for (std::size_t f : ep.classes) parents.insert(d.hierarchy.fine_to_coarse[f]);
        CHECK(parents.size() == 1);
      }
    }
  }

  CHECK_THROWS_AS(sample_episode(d.test, d.hierarchy, EvalMode::AllWay, 5, 10, 15, rng), EpisodeError);
  CHECK_THROWS_AS(sample_episode(d.test, d.hierarchy, EvalMode::FiveWay, 17, 1, 15, rng), EpisodeError);
  CHECK(parse_eval_mode(to_string(EvalMode::IntraClass)) == EvalMode::IntraClass);
  CHECK_THROWS_AS(parse_eval_mode("seven-way"), ConfigError);
}

TEST_CASE("feature extraction") {
  const AncorModel m = init_model(ModelDims{8, 12, 6, 3, 1}, ModelVariant::Seq, 5);
  std::mt19937_64 rng(1);
  Matrix x = oracle::random_matrix(7, 8, rng);
  for (std::size_t c = 0; c < 8; ++c) x(6, c) = x(2, c);
  const Matrix f = extract_features(m, x);
  CHECK(f.cols() == 12);
  for (std::size_t r = 0; r < 7; ++r) CHECK(std::abs(norm(f.row(r)) - 1.0) < 1e-12);
  for (std::size_t c = 0; c < 12; ++c) CHECK(f(6, c) == f(2, c));
  const Matrix expect = l2_normalize_rows(encode(m, x));
  CHECK(f == expect);
}

TEST_CASE("LR head basics") {
  Matrix sup(2, 3);
  sup(0, 0) = 1.0;
  sup(1, 0) = -1.0;
  const std::vector<std::size_t> y{0, 1};
  const LrHead h = fit_lr_head(sup, y, 2, LrHeadConfig{});
  Matrix q(4, 3);
  q(0, 0) = 1.0;
  q(1, 0) = -1.0;
  q(2, 0) = 0.6, q(2, 1) = 0.8;
  q(3, 0) = -0.6, q(3, 2) = 0.8;
  CHECK(h.predict(q) == std::vector<std::size_t>{0, 1, 0, 1});
  const Matrix p = h.probabilities(q);
  for (std::size_t r = 0; r < 4; ++r) CHECK(p(r, 0) + p(r, 1) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(fit_lr_head(sup, std::vector<std::size_t>{0, 2}, 2, LrHeadConfig{}), IndexError);
  CHECK_THROWS_AS(fit_lr_head(sup, std::vector<std::size_t>{0}, 2, LrHeadConfig{}), DimensionError);
}

TEST_CASE("LR head: dual and primal paths agree and match a Newton oracle") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    // n < dim takes the Gram path; compare against the primal path by padding rows.
    const Matrix f = l2_normalize_rows(oracle::random_matrix(6, 10, rng));
    std::vector<std::size_t> y{0, 1, 2, 0, 1, 2};
    const LrHead dual = fit_lr_head(f, y, 3, LrHeadConfig{});
    Matrix tall(12, 10);
    std::vector<std::size_t> y2;
    for (std::size_t r = 0; r < 12; ++r) {
      std::copy(f.row(r % 6).begin(), f.row(r % 6).end(), tall.row(r).begin());
      y2.push_back(y[r % 6]);
    }
    // Duplicating every row leaves the mean loss unchanged.
    const LrHead primal = fit_lr_head(tall, y2, 3, LrHeadConfig{});
    CHECK(oracle::max_abs_diff(dual.weight, primal.weight) < 1e-10);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(dual.bias[k] - primal.bias[k]) < 1e-10);
  }

  // Long, strongly regularized runs converge to the Newton optimum.
  LrHeadConfig strong{3000, 1.0, 0.1};
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix f = l2_normalize_rows(oracle::random_matrix(15, 4, rng));
    std::vector<std::size_t> y(15);
    for (std::size_t i = 0; i < 15; ++i) y[i] = i % 3;
    const LrHead h = fit_lr_head(f, y, 3, strong);
    const auto w = oracle::newton_lr(f, y, 3, 0.1);
    // Biases are identified only up to a common shift.
    const double shift = h.bias[0] - w[0].back();
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 4; ++c) CHECK(h.weight(k, c) == doctest::Approx(w[k][c]).epsilon(1e-6));
      CHECK(h.bias[k] - w[k].back() == doctest::Approx(shift).epsilon(1e-6));
    }
  }
}

TEST_CASE("LR head accuracy matches the Newton oracle on toy episodes") {
  // Overlapping classes on the 2-sphere: the regularized optimum is finite
  // and well conditioned, so the fixed budget reaches it.
  const Toy t = toy(1, 3, 60, 3, 0.0, 1.0, 1.0, 4);
  EvalConfig cfg = plain_cfg(EvalMode::AllWay);
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const Episode ep = sample_episode(t.data, t.hierarchy, EvalMode::AllWay, 3, 20, 15, rng);
    const Matrix sf = identity_features(gather_rows(t.data.features, ep.support));
    const Matrix qf = identity_features(gather_rows(t.data.features, ep.query));
    const auto ours = fit_lr_head(sf, ep.support_labels, 3, cfg.head).predict(qf);
    const auto ref = oracle::lr_predict(oracle::newton_lr(sf, ep.support_labels, 3, cfg.head.l2), qf);
    CHECK(std::abs(accuracy(ours, ep.query_labels) - accuracy(ref, ep.query_labels)) <= 0.02 + 1e-12);
  }
}

TEST_CASE("LR head is permutation-equivariant") {
  std::mt19937_64 rng(10);
  const Matrix f = l2_normalize_rows(oracle::random_matrix(20, 5, rng));
  const Matrix q = l2_normalize_rows(oracle::random_matrix(30, 5, rng));
  std::vector<std::size_t> y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = i % 4;
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::size_t> yp(20);
  for (std::size_t i = 0; i < 20; ++i) yp[i] = perm[y[i]];
  const auto a = fit_lr_head(f, y, 4, LrHeadConfig{}).predict(q);
  const auto b = fit_lr_head(f, yp, 4, LrHeadConfig{}).predict(q);
  for (std::size_t i = 0; i < 30; ++i) CHECK(b[i] == perm[a[i]]);
}

TEST_CASE("run_episodes with stub classifiers") {
  HierarchySpec s;
  s.input_dim = 8;
  s.seed = 2;
  const DatasetSplit d = generate_synthetic(s);
  EvalConfig cfg = plain_cfg(EvalMode::FiveWay, 200);
  const EvalReport perfect =
      run_episodes(d.test, d.hierarchy, cfg, [](const Episode& ep, Rng&) { return ep.query_labels; });
  CHECK(perfect.mean == 1.0);
  CHECK(perfect.ci95 == 0.0);
  CHECK(perfect.way == 5);

  auto guess = [](const Episode& ep, Rng& rng) {
    std::vector<std::size_t> out(ep.query.size());
    for (auto& v : out) v = std::uniform_int_distribution<std::size_t>(0, ep.way - 1)(rng);
    return out;
  };
  const EvalReport g = run_episodes(d.test, d.hierarchy, cfg, guess);
  // 200 episodes x 75 queries of Bernoulli(0.2).
  const double sigma = std::sqrt(0.2 * 0.8 / (200.0 * 75.0));
  CHECK(std::abs(g.mean - 0.2) < 3 * sigma);
  const EvalReport g2 = run_episodes(d.test, d.hierarchy, cfg, guess);
  CHECK(g2.accuracies == g.accuracies);

  EvalConfig big = cfg;
  big.episodes = 800;
  const EvalReport g4 = run_episodes(d.test, d.hierarchy, big, guess);
  CHECK(g4.ci95 / g.ci95 == doctest::Approx(0.5).epsilon(0.15));

  // Population standard deviation.
  EvalReport r;
  r.accuracies = {0.0, 1.0, 0.5, 0.5};
  summarize(r);
  CHECK(r.mean == 0.5);
  CHECK(r.ci95 == doctest::Approx(1.96 * std::sqrt(0.125) / 2.0).epsilon(1e-15));

  EvalConfig bad = cfg;
  bad.episodes = 0;
  CHECK_THROWS_AS(run_episodes(d.test, d.hierarchy, bad, guess), ConfigError);
}

TEST_CASE("evaluation is deterministic and leaves the model untouched") {
  HierarchySpec s;
  s.input_dim = 8;
  s.seed = 2;
  const DatasetSplit d = generate_synthetic(s);
  const AncorModel m = init_model(ModelDims{8, 16, 6, 4, 1}, ModelVariant::Seq, 1);
  const auto before = encode_arrays(model_arrays(m));
  EvalConfig cfg;
  cfg.episodes = 10;
  const EvalReport a = evaluate(m, d.test, d.hierarchy, cfg);
  const EvalReport b = evaluate(m, d.test, d.hierarchy, cfg);
  CHECK(a.accuracies == b.accuracies);
  CHECK(encode_arrays(model_arrays(m)) == before);
  CHECK(a.mean >= 0.0);
  CHECK(a.mean <= 1.0);
  CHECK(a.config.head.iterations == 500);
}

TEST_CASE("support expansion") {
  const Toy t = toy(1, 2, 20, 3, 0.0, 2.0, 0.1, 1);
  Rng rng(1);
  const Episode ep = sample_episode(t.data, t.hierarchy, EvalMode::AllWay, 2, 2, 15, rng);
  EvalConfig cfg;
  const SupportSet s = build_support(identity_features, ep, t.data, cfg, rng);
  CHECK(s.features.rows() == 4 * 6);
  const Matrix orig = identity_features(gather_rows(t.data.features, std::vector<std::size_t>{ep.support[0]}));
  for (std::size_t c = 0; c < 3; ++c) CHECK(s.features(0, c) == orig(0, c));
  CHECK(s.labels[5] == ep.support_labels[0]);
  CHECK(s.labels[6] == ep.support_labels[1]);
  cfg.include_original_support = false;
  CHECK(build_support(identity_features, ep, t.data, cfg, rng).features.rows() == 20);
}

TEST_CASE("ensemble combinator") {
  const Matrix pa = [] {
    Matrix m(3, 3);
    const double v[9] = {0.5, 0.3, 0.2, 0.1, 0.45, 0.45, 0.2, 0.2, 0.6};
    std::copy(v, v + 9, m.values().begin());
    return m;
  }();
  const Matrix pb = [] {
    Matrix m(3, 3);
    const double v[9] = {0.1, 0.8, 0.1, 0.3, 0.2, 0.5, 0.7, 0.1, 0.2};
    std::copy(v, v + 9, m.values().begin());
    return m;
  }();
  // Hand averages: (0.3,0.55,0.15) (0.2,0.325,0.475) (0.45,0.15,0.4).
  CHECK(ensemble_predictions(pa, pb) == std::vector<std::size_t>{1, 2, 0});
  Matrix uniform(3, 3);
  for (double& v : uniform.values()) v = 1.0 / 3.0;
  CHECK(ensemble_predictions(pa, uniform) == argmax_rows(pa));
  CHECK_THROWS_AS(ensemble_predictions(pa, Matrix(3, 2)), DimensionError);

  const Toy t = toy(2, 2, 40, 6, 3.0, 1.0, 1.0, 7);
  EvalConfig cfg;
  cfg.episodes = 30;
  const FeatureFn fa = identity_features;
  const FeatureFn fb = [](const Matrix& x) {
    Matrix y = x;
    for (double& v : y.values()) v = std::tanh(v);
    return l2_normalize_rows(y);
  };
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const Episode ep = sample_episode(t.data, t.hierarchy, EvalMode::AllWay, 4, 1, 15, rng);
    Rng r1 = rng, r2 = rng, r3 = rng;
    const auto self = combine_ensemble(fa, fa, ep, t.data, cfg, r1);
    const auto single = lr_predict(fa, ep, t.data, cfg, r2);
    CHECK(self == single);
    Rng ra = rng, rb = rng;
    const Matrix prob_a = lr_probabilities(fa, ep, t.data, cfg, ra);
    const Matrix prob_b = lr_probabilities(fb, ep, t.data, cfg, rb);
    std::vector<std::size_t> expect(ep.query.size());
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      double best = -1;
      for (std::size_t w = 0; w < ep.way; ++w) {
        const double avg = 0.5 * (prob_a(q, w) + prob_b(q, w));
        if (avg > best) best = avg, expect[q] = w;
      }
    }
    CHECK(combine_ensemble(fa, fb, ep, t.data, cfg, r3) == expect);
    rng.discard(7);
  }
}

TEST_CASE("cascade combinator") {
  const Toy t = toy(2, 2, 30, 6, 8.0, 4.0, 0.3, 9);
  EvalConfig cfg = plain_cfg(EvalMode::AllWay);
  const CoarsePredictor truth = [](const Matrix& x) {
    std::vector<std::size_t> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = x(i, 0) > x(i, 1) ? 0 : 1;
    return out;
  };
  const CoarsePredictor wrong = [&](const Matrix& x) {
    auto out = truth(x);
    for (auto& v : out) v = 1 - v;
    return out;
  };
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const Episode ep = sample_episode(t.data, t.hierarchy, EvalMode::AllWay, 4, 2, 15, rng);
    Rng r = rng;
    CHECK(accuracy(combine_cascade(truth, identity_features, ep, t.data, t.hierarchy, cfg, r), ep.query_labels) == 1.0);
    CHECK(accuracy(combine_cascade(wrong, identity_features, ep, t.data, t.hierarchy, cfg, r), ep.query_labels) == 0.0);
  }

  // Noisy toy: compare with a brute-force two-stage oracle built from the
  // Newton LR reference.
  const Toy n = toy(2, 2, 60, 4, 2.0, 1.0, 1.0, 10);
  const CoarsePredictor noisy = truth;
  LrHeadConfig head_cfg = cfg.head;
  std::size_t agree = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    const Episode ep = sample_episode(n.data, n.hierarchy, EvalMode::AllWay, 4, 20, 15, rng);
    Rng r = rng;
    const auto got = combine_cascade(noisy, identity_features, ep, n.data, n.hierarchy, cfg, r);
    const Matrix qx = gather_rows(n.data.features, ep.query);
    const auto cp = noisy(qx);
    const Matrix sf = identity_features(gather_rows(n.data.features, ep.support));
    const Matrix qf = identity_features(qx);
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      std::vector<std::size_t> local;
      for (std::size_t w = 0; w < ep.way; ++w)
        if (n.hierarchy.fine_to_coarse[ep.classes[w]] == cp[q]) local.push_back(w);
      std::vector<std::size_t> rows, labels;
      for (std::size_t s = 0; s < ep.support.size(); ++s) {
        const auto it = std::find(local.begin(), local.end(), ep.support_labels[s]);
        if (it != local.end()) rows.push_back(s), labels.push_back(it - local.begin());
      }
      const auto w = oracle::newton_lr(gather_rows(sf, rows), labels, local.size(), head_cfg.l2);
      const std::size_t expect = local[oracle::lr_predict(w, gather_rows(qf, std::vector<std::size_t>{q}))[0]];
      agree += got[q] == expect;
      ++total;
    }
  }
  CHECK(static_cast<double>(agree) / total >= 0.98);

  // A predicted coarse class with no way in the episode scores wrong.
  Rng r(1);
  const Episode five = [&] {
    Episode e = sample_episode(t.data, t.hierarchy, EvalMode::AllWay, 4, 1, 15, r);
    return e;
  }();
  Hierarchy h3 = t.hierarchy;
  h3.num_coarse = 3;
  const CoarsePredictor to_empty = [](const Matrix& x) { return std::vector<std::size_t>(x.rows(), 2); };
  const auto p = combine_cascade(to_empty, identity_features, five, t.data, h3, cfg, r);
  for (std::size_t v : p) CHECK(v == five.way);

  Episode coarse_ep = five;
  coarse_ep.coarse_labels = true;
  CHECK_THROWS_AS(combine_cascade(truth, identity_features, coarse_ep, t.data, t.hierarchy, cfg, r), EpisodeError);
}

TEST_CASE("concat combinator") {
  const Toy t = toy(2, 2, 40, 6, 3.0, 1.0, 1.0, 12);
  EvalConfig cfg;
  const FeatureFn a = identity_features;
  const FeatureFn zero = [](const Matrix& x) { return Matrix(x.rows(), 5); };
  const FeatureFn b = [](const Matrix& x) {
    Matrix y(x.rows(), 2);
    for (std::size_t r = 0; r < x.rows(); ++r) y(r, 0) = 1.0, y(r, 1) = x(r, 0);
    return l2_normalize_rows(y);
  };
  std::mt19937_64 g(1);
  const Matrix x = oracle::random_matrix(5, 6, g);
  const Matrix c = concat_features(a, b)(x);
  CHECK(c.cols() == 8);
  for (std::size_t r = 0; r < 5; ++r) CHECK(std::abs(norm(c.row(r)) - 1.0) < 1e-12);
  CHECK(concat_features(a, zero)(x).cols() == 11);

  Rng rng(4);
  double self_acc = 0, single_acc = 0;
  for (int i = 0; i < 30; ++i) {
    const Episode ep = sample_episode(t.data, t.hierarchy, EvalMode::AllWay, 4, 1, 15, rng);
    Rng r1 = rng, r2 = rng, r3 = rng;
    const auto single = lr_predict(a, ep, t.data, cfg, r1);
    CHECK(combine_concat(a, zero, ep, t.data, cfg, r2) == single);
    self_acc += accuracy(combine_concat(a, a, ep, t.data, cfg, r3), ep.query_labels);
    single_acc += accuracy(single, ep.query_labels);
    rng.discard(3);
  }
  CHECK(std::abs(self_acc - single_acc) / 30 <= 0.02);
}
