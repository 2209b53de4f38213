#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ancor/checkpoint.hpp"
#include "ancor/model.hpp"
#include "ancor/numcore.hpp"
#include "oracles.hpp"

using namespace ancor;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.input = 8;
  d.feature = 16;
  d.embedding = 4;
  d.classes = 3;
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ancor_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void check_params_equal(const MlpParams& a, const MlpParams& b) {
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    CHECK(a.layers[i].weight == b.layers[i].weight);
    CHECK(a.layers[i].bias == b.layers[i].bias);
  }
}

void check_models_equal(const AncorModel& a, const AncorModel& b) {
  check_params_equal(a.encoder, b.encoder);
  check_params_equal(a.embedder, b.embedder);
  check_params_equal(a.momentum_encoder, b.momentum_encoder);
  check_params_equal(a.momentum_embedder, b.momentum_embedder);
  CHECK(a.classifier == b.classifier);
  CHECK(a.variant == b.variant);
  CHECK(a.tap == b.tap);
  CHECK(a.fork_post_relu == b.fork_post_relu);
}

}  // namespace

TEST_CASE("init_model shapes") {
  const ModelDims d = small_dims();
  const AncorModel seq = init_model(d, ModelVariant::Seq, 1);
  CHECK(seq.classifier.rows() == 3);
  CHECK(seq.classifier.cols() == 4);
  const AncorModel fork = init_model(d, ModelVariant::Fork, 1);
  CHECK(fork.classifier.rows() == 3);
  CHECK(fork.classifier.cols() == 16);
  CHECK(seq.encoder.layers.size() == 2);
  CHECK(seq.embedder.layers.size() == 2);
  CHECK(seq.encoder.input_dim() == 8);
  CHECK(seq.encoder.output_dim() == 16);
  CHECK(seq.embedder.layers[0].weight.rows() == 16);
  CHECK(seq.embedder.output_dim() == 4);
  for (const auto& l : seq.encoder.layers) CHECK(l.bias == Matrix(1, l.weight.rows()));
  CHECK(seq.momentum_encoder.same_shape(seq.encoder));
  CHECK(seq.momentum_embedder.same_shape(seq.embedder));
}

TEST_CASE("init_model validates dimensions") {
  ModelDims d = small_dims();
  d.embedding = 16;  // e must be < d
  CHECK_THROWS_AS(init_model(d, ModelVariant::Seq, 0), ConfigError);
  d = small_dims();
  d.classes = 0;
  CHECK_THROWS_AS(init_model(d, ModelVariant::Seq, 0), ConfigError);
}

TEST_CASE("init_model is deterministic and He-scaled") {
  ModelDims d = small_dims();
  d.input = 200;
  d.feature = 300;
  const AncorModel a = init_model(d, ModelVariant::Seq, 42), b = init_model(d, ModelVariant::Seq, 42);
  check_models_equal(a, b);
  const AncorModel c = init_model(d, ModelVariant::Seq, 43);
  CHECK_FALSE(a.encoder.layers[0].weight == c.encoder.layers[0].weight);
  // Sample std of the first layer against sqrt(2 / fan_in).
  const Matrix& w = a.encoder.layers[0].weight;
  double s = 0;
  for (double v : w.values()) s += v * v;
  const double sd = std::sqrt(s / static_cast<double>(w.size()));
  CHECK(sd == doctest::Approx(std::sqrt(2.0 / 200.0)).epsilon(0.03));
}

TEST_CASE("momentum twins start as copies") {
  const AncorModel m = init_model(small_dims(), ModelVariant::Seq, 7);
  std::mt19937_64 rng(7);
  const Matrix x = oracle::random_matrix(5, 8, rng);
  CHECK(embed_key(m, x) == embed_query(m, x));
  check_params_equal(m.encoder, m.momentum_encoder);
}

TEST_CASE("embed_query is unit norm") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const AncorModel m = init_model(small_dims(), ModelVariant::Seq, seed);
    std::mt19937_64 rng(seed);
    const Matrix q = embed_query(m, oracle::random_matrix(6, 8, rng));
    for (std::size_t r = 0; r < q.rows(); ++r) CHECK(std::abs(norm(q.row(r)) - 1.0) <= 1e-12);
  }
}

TEST_CASE("embed_query matches a hand-chained forward pass") {
  ModelDims d;
  d.input = 2;
  d.feature = 3;
  d.embedding = 2;
  d.classes = 2;
  AncorModel m = init_model(d, ModelVariant::Seq, 0);
  // encoder: 2 -> 3 -> 3, embedder: 3 -> 3 -> 2
  m.encoder.layers[0].weight = Matrix{{1, 0}, {0, 1}, {1, -1}};
  m.encoder.layers[0].bias = Matrix{{0, 0, 0.5}};
  m.encoder.layers[1].weight = Matrix{{1, 0, 0}, {0, 2, 0}, {0, 0, 1}};
  m.encoder.layers[1].bias = Matrix{{0, 0, 0}};
  m.embedder.layers[0].weight = Matrix::identity(3);
  m.embedder.layers[0].bias = Matrix{{0, -1, 0}};
  m.embedder.layers[1].weight = Matrix{{1, 1, 0}, {0, 0, 1}};
  m.embedder.layers[1].bias = Matrix{{0, 0}};
  const Matrix x{{2.0, -1.0}};
  // h1 = relu([2, -1, 3.5]) = [2, 0, 3.5]; B = [2, 0, 3.5]
  // e1 = relu([2, -1, 3.5]) = [2, 0, 3.5]; e2 = [2, 3.5]
  const Matrix b = encode(m, x);
  CHECK(b == Matrix{{2.0, 0.0, 3.5}});
  const Matrix q = embed_query(m, x);
  const double n = std::sqrt(4.0 + 12.25);
  CHECK(q(0, 0) == doctest::Approx(2.0 / n).epsilon(1e-15));
  CHECK(q(0, 1) == doctest::Approx(3.5 / n).epsilon(1e-15));
}

TEST_CASE("embed_query is not scale invariant") {
  AncorModel m = init_model(small_dims(), ModelVariant::Seq, 11);
  std::mt19937_64 rng(11);
  // Zero biases would make the net positively homogeneous.
  for (auto* p : {&m.encoder, &m.embedder})
    for (auto& l : p->layers) l.bias = oracle::random_matrix(1, l.bias.cols(), rng);
  const Matrix x = oracle::random_matrix(1, 8, rng);
  CHECK(oracle::max_abs_diff(embed_query(m, x), embed_query(m, x * 3.0)) > 1e-6);
}

TEST_CASE("classify_logits contract") {
  AncorModel m = init_model(small_dims(), ModelVariant::Seq, 0);
  m.classifier = Matrix{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}};
  const Matrix z{{0, 1, 0, 0}};
  CHECK(classify_logits(m, z) == Matrix{{0, 1, 0}});
  std::mt19937_64 rng(1);
  m.classifier = oracle::random_matrix(3, 4, rng);
  const Matrix zz = oracle::random_matrix(1, 4, rng);
  const Matrix l1 = classify_logits(m, zz);
  m.classifier *= 2.0;
  const Matrix l2 = classify_logits(m, zz);
  for (std::size_t i = 0; i < 3; ++i) CHECK(l2[i] == doctest::Approx(2 * l1[i]));
  const auto argmax = [](const Matrix& l) { return std::max_element(l.values().begin(), l.values().end()) - l.values().begin(); };
  CHECK(argmax(l1) == argmax(l2));

  const AncorModel fork = init_model(small_dims(), ModelVariant::Fork, 0);
  CHECK_THROWS_AS(classify_logits(fork, Matrix(1, 4)), DimensionError);
  CHECK(classify_logits(fork, Matrix(1, 16)).cols() == 3);
}

TEST_CASE("Seq and Fork share encoder features") {
  const AncorModel seq = init_model(small_dims(), ModelVariant::Seq, 5);
  const AncorModel fork = init_model(small_dims(), ModelVariant::Fork, 5);
  std::mt19937_64 rng(5);
  const Matrix x = oracle::random_matrix(4, 8, rng);
  CHECK(encode(seq, x) == encode(fork, x));
  CHECK(coarse_logits(seq, x).cols() == 3);
  CHECK(coarse_logits(fork, x).cols() == 3);
}

TEST_CASE("momentum_update examples") {
  AncorModel m = init_model(small_dims(), ModelVariant::Seq, 3);
  for (auto* p : {&m.encoder, &m.embedder})
    for (auto& l : p->layers) {
      l.weight.fill(1.0);
      l.bias.fill(1.0);
    }
  for (auto* p : {&m.momentum_encoder, &m.momentum_embedder})
    for (auto& l : p->layers) {
      l.weight.fill(0.0);
      l.bias.fill(0.0);
    }
  AncorModel once = m;
  momentum_update(once, 0.9);
  CHECK(once.momentum_encoder.layers[0].weight[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(once.momentum_embedder.layers[1].bias[0] == doctest::Approx(0.1).epsilon(1e-15));

  AncorModel many = m;
  for (int i = 0; i < 1000; ++i) momentum_update(many, 0.999);
  CHECK(many.momentum_encoder.layers[1].weight[3] == doctest::Approx(1.0 - std::pow(0.999, 1000)).epsilon(1e-12));
  CHECK(many.momentum_encoder.layers[1].weight[3] == doctest::Approx(0.6323).epsilon(1e-4));

  AncorModel frozen = once;
  momentum_update(frozen, 1.0);
  check_params_equal(frozen.momentum_encoder, once.momentum_encoder);

  AncorModel copied = once;
  momentum_update(copied, 0.0);
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(3, 8, rng);
  CHECK(embed_key(copied, x) == embed_query(copied, x));

  CHECK_THROWS_AS(momentum_update(copied, 1.5), ConfigError);
  CHECK_THROWS_AS(momentum_update(copied, -0.1), ConfigError);
}

TEST_CASE("momentum parameters approach online parameters monotonically") {
  AncorModel m = init_model(small_dims(), ModelVariant::Seq, 9);
  std::mt19937_64 rng(9);
  for (auto& l : m.encoder.layers) l.weight = oracle::random_matrix(l.weight.rows(), l.weight.cols(), rng);
  auto gap = [&](const AncorModel& mm) {
    std::vector<double> g;
    for (std::size_t i = 0; i < mm.encoder.layers.size(); ++i)
      for (std::size_t j = 0; j < mm.encoder.layers[i].weight.size(); ++j)
        g.push_back(std::abs(mm.encoder.layers[i].weight[j] - mm.momentum_encoder.layers[i].weight[j]));
    return g;
  };
  auto prev = gap(m);
  for (int step = 0; step < 20; ++step) {
    momentum_update(m, 0.7);
    const auto cur = gap(m);
    for (std::size_t i = 0; i < cur.size(); ++i) CHECK(cur[i] <= prev[i]);
    prev = cur;
  }
}

TEST_CASE("mlp_backward matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const AncorModel m = init_model(small_dims(), ModelVariant::Seq, seed);
    std::mt19937_64 rng(seed);
    const Matrix x = oracle::random_matrix(3, 8, rng);
    const Matrix up = oracle::random_matrix(3, 16, rng);
    MlpCache cache;
    mlp_forward(m.encoder, x, &cache);
    MlpParams grads = zeros_like(m.encoder);
    const Matrix gx = mlp_backward(m.encoder, cache, up, grads, true);
    auto loss_of = [&](const MlpParams& p, const Matrix& in) {
      const Matrix y = mlp_forward(p, in);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    CHECK(finite_diff_check([&](const Matrix& v) { return loss_of(m.encoder, v); }, x, gx, 1e-5) < 1e-5);
    for (std::size_t l = 0; l < m.encoder.layers.size(); ++l) {
      MlpParams p = m.encoder;
      auto fw = [&](const Matrix& v) {
        p.layers[l].weight = v;
        const double r = loss_of(p, x);
        p.layers[l].weight = m.encoder.layers[l].weight;
        return r;
      };
      CHECK(finite_diff_check(fw, m.encoder.layers[l].weight, grads.layers[l].weight, 1e-5) < 1e-5);
      auto fb = [&](const Matrix& v) {
        p.layers[l].bias = v;
        const double r = loss_of(p, x);
        p.layers[l].bias = m.encoder.layers[l].bias;
        return r;
      };
      CHECK(finite_diff_check(fb, m.encoder.layers[l].bias, grads.layers[l].bias, 1e-5) < 1e-5);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (ModelVariant v : {ModelVariant::Seq, ModelVariant::Fork}) {
    AncorModel m = init_model(small_dims(), v, 21);
    momentum_update(m, 0.5);
    const auto path = temp_path("roundtrip.ancr");
    save_checkpoint(m, path);
    check_models_equal(load_checkpoint(path), m);
  }
  AncorModel pre = init_model(small_dims(), ModelVariant::Fork, 2, ClassifierTap::EmbedderHidden, false);
  const auto path = temp_path("pre.ancr");
  save_checkpoint(pre, path);
  CHECK_FALSE(load_checkpoint(path).fork_post_relu);
}

TEST_CASE("checkpoint header layout") {
  const AncorModel m = init_model(small_dims(), ModelVariant::Seq, 1);
  const auto bytes = encode_arrays(model_arrays(m));
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ANCR");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  const std::uint32_t count = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | bytes[11] << 24;
  CHECK(count == model_arrays(m).size());
  const std::uint16_t name_len = bytes[12] | bytes[13] << 8;
  CHECK(std::string(bytes.begin() + 14, bytes.begin() + 14 + name_len) == "encoder.0.w");
  const auto arrays = model_arrays(m);
  CHECK(find_array(arrays, "classifier.W") != nullptr);
  CHECK(find_array(arrays, "momentum.encoder.0.w") != nullptr);
  CHECK(find_array(arrays, "momentum.embedder.1.b") != nullptr);
}

TEST_CASE("checkpoint load errors are distinct") {
  const AncorModel m = init_model(small_dims(), ModelVariant::Seq, 1);
  const auto good = encode_arrays(model_arrays(m));
  auto kind_of = [](const std::vector<std::uint8_t>& bytes) {
    try {
      model_from_arrays(decode_arrays(bytes));
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    FAIL("no error");
    return CheckpointError::Kind::BadMagic;
  };

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == CheckpointError::Kind::BadMagic);

  auto bad_version = good;
  bad_version[4] = 2;
  CHECK(kind_of(bad_version) == CheckpointError::Kind::VersionMismatch);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  CHECK(kind_of(truncated) == CheckpointError::Kind::Truncated);
  try {
    decode_arrays(truncated);
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("'") != std::string::npos);  // names the array
  }

  ArrayList arrays = model_arrays(m);
  for (auto& a : arrays)
    if (a.name == "encoder.1.w") a.value = Matrix(3, 3);
  CHECK(kind_of(encode_arrays(arrays)) == CheckpointError::Kind::ShapeMismatch);

  ArrayList missing = model_arrays(m);
  missing.erase(missing.begin());
  CHECK(kind_of(encode_arrays(missing)) == CheckpointError::Kind::MissingArray);

  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ancr")), IoError);
}
