#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "dcvh/error.hpp"
#include "dcvh/models.hpp"
#include "test_support.hpp"

using namespace dcvh;
using dcvh::testing::random_like;
using dcvh::testing::weighted_sum;

namespace {

ModelConfig small_config(std::size_t bits = 8) {
  ModelConfig c;
  c.code_bits = bits;
  c.image_hidden = {6};
  c.conv1_kernels = 3;
  c.conv2_kernels = 4;
  c.text_fc = 5;
  return c;
}

// Loss = sum(r ⊙ forward(x)); parameter gradients via the model closure.
template <class Forward>
double check_model_grads(ParamSet& params, Forward forward, const Tensor& r) {
  auto err = grad_check([&](ParamSet& p) {
    auto out = forward();
    out.backward(r, p);
    return weighted_sum(out.value, r);
  }, params);
  return err.max_rel_error;
}

bool in_unit_interval(const Tensor& z) {
  for (double v : z.data())
    if (!(v >= 0.0 && v < 1.0)) return false;
  return true;
}

}  // namespace

TEST_CASE("dbe examples") {
  std::mt19937_64 rng(1);
  ParamSet ps;
  DbeLayer dbe(ps, "dbe", 3, 4, 0.05, rng);
  const Tensor x = Tensor::uniform({5, 3}, -1, 1, rng);

  ps.value(dbe.gamma).fill(0.0);
  ps.value(dbe.beta).fill(-3.0);
  auto dead = dbe.forward(ps, x, Mode::kTrain, false).value;
  for (double v : dead.data()) CHECK(v == 0.0);

  ps.value(dbe.beta).fill(10.0);
  auto hot = dbe.forward(ps, x, Mode::kTrain, false).value;
  for (double v : hot.data()) {
    CHECK(v == std::tanh(10.0));
    CHECK(v < 1.0);
  }
  CHECK(hot[0] == doctest::Approx(0.99999999588).epsilon(1e-10));

  ps.value(dbe.beta).fill(40.0);  // tanh rounds to 1.0 here
  CHECK(in_unit_interval(dbe.forward(ps, x, Mode::kTrain, false).value));
}

TEST_CASE("dbe composition passes the gradient check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    ParamSet ps;
    DbeLayer dbe(ps, "dbe", 4, 5, 0.5, rng);
    ps.value(dbe.beta) = Tensor::uniform({5}, 0.2, 0.6, rng);
    const Tensor x = Tensor::uniform({6, 4}, -1, 1, rng);
    const Tensor r = Tensor::uniform({6, 5}, -1, 1, rng);
    CHECK(check_model_grads(ps, [&] { return dbe.forward(ps, x, Mode::kTrain, true); }, r) <= 1e-5);

    // input gradient through the same closure
    ParamSet in;
    in.add("x", x);
    auto err = grad_check([&](ParamSet& p) {
      auto out = dbe.forward(ps, p.value(0), Mode::kTrain, true);
      p.accumulate(0, out.backward(r, ps));
      return weighted_sum(out.value, r);
    }, in);
    CHECK(err.max_rel_error <= 1e-5);
  }
}

TEST_CASE("binarize") {
  const Tensor z = Tensor::matrix({{0.5, 0.49999, 0.0, 0.99}});
  auto b = binarize(z);
  CHECK(b.get(0, 0));
  CHECK_FALSE(b.get(0, 1));
  CHECK_FALSE(b.get(0, 2));
  CHECK(b.get(0, 3));
  auto zeros = binarize(Tensor({3, 16}));
  CHECK(zeros == BitMatrix(3, 16));
  CHECK_THROWS_AS(binarize(Tensor::matrix({{1.2}})), ContractError);
  CHECK_THROWS_AS(binarize(Tensor::matrix({{-0.1}})), ContractError);
  CHECK_THROWS_AS(binarize(Tensor::matrix({{std::nan("")}})), ContractError);
}

TEST_CASE("binarize is invariant to side-preserving monotone perturbations") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = Tensor::uniform({10, 16}, 0, 1, rng);
    const double a = std::uniform_real_distribution<>(0.5, 3)(rng);
    Tensor warped = z;
    // strictly increasing on [0,1), fixes 0.5
    for (double& v : warped.data()) v = 0.5 + 0.5 * std::tanh(a * (v - 0.5)) / std::tanh(a * 0.5);
    for (double& v : warped.data()) v = std::min(std::max(v, 0.0), 0.999999);
    CHECK(binarize(warped) == binarize(z));
  }
}

TEST_CASE("image projection") {
  std::mt19937_64 rng(3);
  ImageProjection model(10, small_config(), rng);
  CHECK(model.input_dim() == 10);
  CHECK(model.code_bits() == 8);

  SUBCASE("zero weights give tanh(relu(beta))") {
    for (auto& p : model.params())
      if (p.name.ends_with(".weights")) p.value.fill(0.0);
    Tensor& beta = model.params().value(*model.params().find("dbe.beta"));
    beta = Tensor::vector({-1, 0, 0.3, 1, 2, -2, 0.5, 5});
    auto z = model.forward(Tensor::uniform({64, 10}, -1, 1, rng), Mode::kTrain, false).value;
    REQUIRE(z.shape() == Shape{64, 8});
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(z.at(r, c) == std::tanh(std::max(beta[c], 0.0)));
  }

  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(model.forward(Tensor({4, 9}), Mode::kTrain), DimensionError);
  }

  SUBCASE("end-to-end gradient check") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 r2(seed);
      ModelConfig c = small_config(5);
      c.init_range = 0.5;
      ImageProjection m(4, c, r2);
      const Tensor x = Tensor::uniform({6, 4}, -1, 1, r2);
      const Tensor r = Tensor::uniform({6, 5}, -1, 1, r2);
      for (auto& p : m.params())
        if (p.name.ends_with(".beta")) p.value = Tensor::uniform(p.value.shape(), 0.2, 0.6, r2);
      CHECK(check_model_grads(m.params(), [&] { return m.forward(x, Mode::kTrain, true); }, r) <= 1e-5);
    }
  }
}

TEST_CASE("image projection supports each code length") {
  for (std::size_t bits : {16u, 32u, 64u}) {
    std::mt19937_64 rng(bits);
    ImageProjection model(12, small_config(bits), rng);
    auto z = model.forward(Tensor::uniform({64, 12}, -1, 1, rng), Mode::kTrain, false).value;
    CHECK(z.shape() == Shape{64, bits});
    CHECK(in_unit_interval(z));
    CHECK(binarize(z).cols() == bits);
  }
}

TEST_CASE("dbe output stays in [0,1) over wide random inputs") {
  std::mt19937_64 rng(4);
  ModelConfig c = small_config(32);
  c.init_range = 1.0;
  ImageProjection model(20, c, rng);
  std::size_t samples = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const double scale = std::pow(10.0, trial % 8 - 2);
    const Tensor x = Tensor::uniform({100, 20}, -scale, scale, rng);
    auto dbe_gamma = *model.params().find("dbe.gamma");
    model.params().value(dbe_gamma) = Tensor::uniform({32}, -50, 50, rng);
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
      auto z = model.forward(x, mode, false).value;
      REQUIRE(in_unit_interval(z));
      samples += z.size();
    }
  }
  CHECK(samples >= 100000);
}

TEST_CASE("text projection") {
  std::mt19937_64 rng(5);
  TextProjection model(3, 4, small_config(), rng);
  CHECK(model.input_dim() == 12);

  SUBCASE("all-zero input") {
    auto x = Tensor({7, 12});
    auto c1 = conv1d(x, model.params().value(model.conv1_index()), 3, false).value;
    for (double v : c1.data()) CHECK(v == 0.0);
    auto z = model.forward(x, Mode::kTrain, false).value;
    const Tensor& beta = model.params().value(*model.params().find("dbe.beta"));
    // every layer sees zeros, so only the dbe shift survives
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(z.at(r, c) == std::tanh(std::max(beta[c], 0.0)));
  }

  SUBCASE("length errors") {
    CHECK_THROWS_AS(model.forward(Tensor({2, 13}), Mode::kTrain), DimensionError);
    CHECK_THROWS_AS(model.forward(Tensor({2, 9}), Mode::kTrain), DimensionError);
  }

  SUBCASE("end-to-end gradient check") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 r2(seed);
      ModelConfig c = small_config(5);
      c.init_range = 0.5;
      TextProjection m(3, 3, c, r2);
      for (auto& p : m.params())
        if (p.name.ends_with(".beta")) p.value = Tensor::uniform(p.value.shape(), 0.2, 0.6, r2);
      const Tensor x = Tensor::uniform({6, 9}, -1, 1, r2);
      const Tensor r = Tensor::uniform({6, 5}, -1, 1, r2);
      CHECK(check_model_grads(m.params(), [&] { return m.forward(x, Mode::kTrain, true); }, r) <= 1e-5);
    }
  }
}

TEST_CASE("text projection at full width") {
  std::mt19937_64 rng(6);
  ModelConfig c = ModelConfig::full_scale();
  c.text_fc = 64;
  TextProjection model(300, 20, c, rng);
  const Tensor x = Tensor::uniform({2, 6000}, -1, 1, rng);
  auto c1 = conv1d(x, model.params().value(model.conv1_index()), 300, false).value;
  CHECK(c1.shape() == Shape{2, 1000, 20});
  CHECK(model.params().value(model.conv2_index()).shape() == Shape{1000, 20000});
  const Tensor flat = c1.reshaped({2, 20000});
  CHECK(matmul_nt(flat, model.params().value(model.conv2_index())).shape() == Shape{2, 1000});
  auto z = model.forward(x, Mode::kTrain, false).value;
  CHECK(z.shape() == Shape{2, 64});
  CHECK(in_unit_interval(z));
}

TEST_CASE("zero padding extension leaves responses unchanged") {
  std::mt19937_64 rng(7);
  const std::size_t d = 4, words = 3, extra = 2, k1 = 3;
  ModelConfig c = small_config();
  TextProjection base(d, words, c, rng);
  TextProjection wide(d, words + extra, c, rng);

  // copy every tensor, zero-extending conv2 over the padded positions
  auto from = base.state();
  auto to = wide.state();
  for (std::size_t i = 0; i < from.size(); ++i) {
    REQUIRE(from[i].first == to[i].first);
    if (from[i].first != "conv2.kernels") {
      *to[i].second = *from[i].second;
      continue;
    }
    const Tensor& src = *from[i].second;
    Tensor& dst = *to[i].second;
    dst.fill(0.0);
    for (std::size_t k2 = 0; k2 < src.dim(0); ++k2)
      for (std::size_t k = 0; k < k1; ++k)
        for (std::size_t p = 0; p < words; ++p) dst.at(k2, k * (words + extra) + p) = src.at(k2, k * words + p);
  }

  const Tensor x = Tensor::uniform({5, d * words}, -1, 1, rng);
  Tensor padded({5, d * (words + extra)});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t j = 0; j < d * words; ++j) padded.at(r, j) = x.at(r, j);

  auto short_c1 = conv1d(x, base.params().value(base.conv1_index()), d, false).value;
  auto long_c1 = conv1d(padded, wide.params().value(wide.conv1_index()), d, false).value;
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t k = 0; k < k1; ++k) {
      for (std::size_t p = 0; p < words; ++p)
        CHECK(long_c1[(b * k1 + k) * (words + extra) + p] == short_c1[(b * k1 + k) * words + p]);
      for (std::size_t p = words; p < words + extra; ++p) CHECK(long_c1[(b * k1 + k) * (words + extra) + p] == 0.0);
    }
  CHECK(wide.forward(padded, Mode::kTrain, false).value == base.forward(x, Mode::kTrain, false).value);
}

TEST_CASE("classify") {
  std::mt19937_64 rng(8);
  Classifier clf(2, 2, 0.05, rng);
  clf.params().value(0) = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(classify(Tensor::matrix({{1, 0}}), clf) == Tensor::matrix({{1, 2}}));
  clf.params().value(0).fill(0.0);
  CHECK(classify(Tensor::matrix({{0.3, 0.9}}), clf) == Tensor::matrix({{0, 0}}));
  CHECK_THROWS_AS(classify(Tensor({1, 3}), clf), DimensionError);

  for (int trial = 0; trial < 20; ++trial) {
    Classifier c(7, 5, 1.0, rng);
    const Tensor z = Tensor::uniform({9, 7}, 0, 1, rng);
    const Tensor logits = classify(z, c);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t p = 0; p < 5; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < 7; ++j) s += z.at(i, j) * c.weights().at(j, p);
        REQUIRE(logits.at(i, p) == s);
      }
  }
}

TEST_CASE("two-view model, encode and checkpoints") {
  ModelSpec spec{10, 3, 4, 6, small_config(16)};
  auto model = TwoViewModel::create(spec, 11);
  auto again = TwoViewModel::create(spec, 11);
  auto other = TwoViewModel::create(spec, 12);
  CHECK(model.image.view() == View::kImage);
  CHECK(model.text.view() == View::kText);
  CHECK(model[View::kText].input_dim() == 12);
  CHECK(model.image.classifier.categories() == 6);
  CHECK(*model.state()[0].second == *again.state()[0].second);
  CHECK_FALSE(*model.state()[0].second == *other.state()[0].second);
  CHECK(parse_view("text") == View::kText);
  CHECK(std::string(view_name(View::kImage)) == "image");
  CHECK_THROWS_AS(parse_view("audio"), ArgumentError);

  std::mt19937_64 rng(9);
  const Tensor feats = Tensor::uniform({50, 10}, -1, 1, rng);
  // populate running statistics
  model.image.project(feats, Mode::kTrain, false);
  const Tensor whole = encode(model.image, feats, 1000);
  CHECK(encode(model.image, feats, 7) == whole);
  CHECK(whole == model.image.project(feats, Mode::kInfer, false).value);

  const std::string cfg = R"({"seed": 11})";
  const auto path = std::filesystem::temp_directory_path() / "dcvh_ckpt_test.bin";
  save_checkpoint(path, model, cfg);
  auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(loaded.config_json == cfg);
  CHECK(loaded.model.spec.config.image_hidden == spec.config.image_hidden);
  auto a = model.state(), b = loaded.model.state();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  CHECK(encode(loaded.model.image, feats) == whole);

  auto bytes = serialize_checkpoint(model, cfg);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(deserialize_checkpoint(cut), FormatError);
  auto bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  bytes.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), FormatError);
}
