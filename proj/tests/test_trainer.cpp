#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "dcvh/error.hpp"
#include "dcvh/trainer.hpp"
#include "test_support.hpp"

using namespace dcvh;

namespace {

constexpr std::size_t kFeat = 12, kEmbed = 4, kWords = 3, kCats = 4;

PairedData toy(std::size_t n, std::uint64_t seed) {
  auto v = testing::toy_views(n, kCats, kFeat, kEmbed, kWords, seed);
  return {v.image, v.text, v.labels};
}

ModelSpec toy_spec(std::size_t bits = 16) {
  ModelConfig c;
  c.code_bits = bits;
  c.image_hidden = {16};
  c.conv1_kernels = 4;
  c.conv2_kernels = 8;
  c.text_fc = 16;
  return {kFeat, kEmbed, kWords, kCats, c};
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 20;
  c.pretrain_iters_image = 40;
  c.pretrain_iters_text = 40;
  c.joint_iters = 40;
  c.log_every = 10;
  c.seed = 3;
  return c;
}

bool same_state(TwoViewModel& a, TwoViewModel& b) {
  auto sa = a.state(), sb = b.state();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (sa[i].first != sb[i].first || !(*sa[i].second == *sb[i].second)) return false;
  return true;
}

double full_bce(ViewModel& view, const Tensor& input, const LabelMatrix& labels) {
  ViewModel copy = view;
  auto z = copy.project(input, Mode::kTrain, false).value;
  return multilabel_bce(classify(z, copy.classifier), labels).value;
}

double paired_hamming(TwoViewModel& m, const PairedData& d) {
  return alignment_exact(binarize(encode(m.image, d.image)), binarize(encode(m.text, d.text)));
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.joint_iters = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  auto p = TrainConfig::full_scale();
  CHECK(p.pretrain_rate.base_rate == 2e-4);
  CHECK(p.joint_rate.base_rate == 1e-4);
  CHECK(p.pretrain_iters_image == 10000);
  CHECK(p.pretrain_iters_text == 2000);
  CHECK(p.batch_size == 64);
}

TEST_CASE("batch sampler covers each epoch without replacement") {
  std::seed_seq seq{1, 2};
  BatchSampler s(10, 3, seq);
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::set<std::size_t> seen;
    for (int b = 0; b < 3; ++b) {
      const auto& rows = s.next();
      CHECK(rows.size() == 3);
      for (auto r : rows) CHECK(seen.insert(r).second);
    }
    CHECK(seen.size() == 9);  // one row dropped per epoch
  }
  std::seed_seq small{1};
  CHECK_THROWS_AS(BatchSampler(2, 3, small), ConfigError);
}

TEST_CASE("divergence guard") {
  CHECK_NOTHROW(check_divergence(1e5, Phase::kJoint, 3));
  CHECK_THROWS_AS(check_divergence(2e6, Phase::kJoint, 3), DivergenceError);
  CHECK_THROWS_AS(check_divergence(std::numeric_limits<double>::quiet_NaN(), Phase::kJoint, 3), DivergenceError);
  try {
    check_divergence(INFINITY, Phase::kPretrainText, 17);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("iteration 17") != std::string::npos);
  }

  auto data = toy(60, 1);
  auto model = TwoViewModel::create(toy_spec(), 1);
  TrainConfig c = quick_config();
  c.pretrain_rate.base_rate = 1e9;
  CHECK_THROWS_AS(pretrain_view(model.image, data.image, data.labels, c), Error);
}

TEST_CASE("pretraining") {
  auto data = toy(200, 2);
  SUBCASE("zero iterations leave the initialisation") {
    auto model = TwoViewModel::create(toy_spec(), 5);
    auto init = model;
    TrainConfig c = quick_config();
    c.pretrain_iters_image = 0;
    pretrain_view(model.image, data.image, data.labels, c);
    CHECK(same_state(model, init));
  }
  SUBCASE("toy corpus: bce falls") {
    auto model = TwoViewModel::create(toy_spec(16), 5);
    TrainConfig c = quick_config();
    c.pretrain_iters_image = c.pretrain_iters_text = 300;
    for (View v : {View::kImage, View::kText}) {
      const Tensor& input = v == View::kImage ? data.image : data.text;
      const double before = full_bce(model[v], input, data.labels);
      std::vector<TrainRecord> history;
      pretrain_view(model[v], input, data.labels, c, &history);
      const double after = full_bce(model[v], input, data.labels);
      CHECK(after < before);
      CHECK(history.size() == 31);
      CHECK(history.back().iteration == 299);
    }
  }
}

TEST_CASE("joint step with lambda = 1 leaves classifiers bit-identical") {
  auto data = toy(64, 3);
  auto model = TwoViewModel::create(toy_spec(), 7);
  const Tensor wi = model.image.classifier.weights(), wt = model.text.classifier.weights();
  const Tensor proj_before = model.image.projection_params().value(0);
  for (std::int64_t it = 0; it < 5; ++it) {
    joint_step(model, data.image, data.text, data.labels, 1.0, LrSchedule{0.1, 0.9, 1000}, it);
  }
  CHECK(model.image.classifier.weights() == wi);
  CHECK(model.text.classifier.weights() == wt);
  CHECK_FALSE(model.image.projection_params().value(0) == proj_before);
}

TEST_CASE("detached joint step equals (1-lambda)-scaled classification steps") {
  auto data = toy(32, 4);
  for (double lambda : {0.05, 0.2, 0.5, 0.8}) {
    auto joint = TwoViewModel::create(toy_spec(), 9);
    auto split = joint;
    const LrSchedule rate{0.05, 0.9, 1000};
    joint_step(joint, data.image, data.text, data.labels, lambda, rate, 0, {.detach_alignment = true});
    classification_step(split.image, data.image, data.labels, rate, 0, 1.0 - lambda);
    classification_step(split.text, data.text, data.labels, rate, 0, 1.0 - lambda);
    CHECK(same_state(joint, split));
  }
}

TEST_CASE("alignment sends no parameter gradient when both views emit all-zero codes") {
  auto data = toy(32, 5);
  auto base = TwoViewModel::create(toy_spec(), 11);
  for (ViewModel* v : {&base.image, &base.text}) {
    ParamSet& p = v->projection_params();
    p.value(*p.find("dbe.gamma")).fill(0.0);
    p.value(*p.find("dbe.beta")).fill(-1.0);
  }
  auto a = base, b = base;
  const LrSchedule rate{0.05, 0.9, 1000};
  const auto ra = joint_step(a, data.image, data.text, data.labels, 0.3, rate, 0);
  joint_step(b, data.image, data.text, data.labels, 0.3, rate, 0, {.detach_alignment = true});
  CHECK(ra.j_align == 0.0);
  CHECK(same_state(a, b));
}

TEST_CASE("single joint steps at a small rate rarely increase the loss") {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto data = toy(64, 100 + seed);
    auto model = TwoViewModel::create(toy_spec(), seed);
    const double before = measure_loss(model, data, 0.2).total;
    joint_step(model, data.image, data.text, data.labels, 0.2, LrSchedule{1e-4, 0.9, 1000}, 0);
    const double after = measure_loss(model, data, 0.2).total;
    if (after <= before) ++decreased;
  }
  CHECK(decreased >= 45);
}

TEST_CASE("loss report bookkeeping") {
  auto data = toy(40, 6);
  auto model = TwoViewModel::create(toy_spec(), 1);
  auto r = joint_step(model, data.image, data.text, data.labels, 0.4, LrSchedule{0.01, 0.9, 1000}, 0);
  CHECK(r.lambda == 0.4);
  CHECK(r.total == doctest::Approx(0.6 * (r.l_image + r.l_text) + 0.4 * r.j_align).epsilon(1e-12));
}

TEST_CASE("train") {
  auto data = toy(200, 7);
  TrainConfig c = quick_config();

  SUBCASE("no joint iterations gives the pretrained models") {
    c.joint_iters = 0;
    auto state = train(data, toy_spec(), c);
    auto manual = TwoViewModel::create(toy_spec(), c.seed);
    pretrain_view(manual.image, data.image, data.labels, c);
    pretrain_view(manual.text, data.text, data.labels, c);
    CHECK(same_state(state.model, manual));
    CHECK(state.iteration == 80);
  }

  SUBCASE("deterministic in the seed") {
    auto a = train(data, toy_spec(), c);
    auto b = train(data, toy_spec(), c);
    CHECK(serialize_checkpoint(a.model, "{}") == serialize_checkpoint(b.model, "{}"));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].loss.total == b.history[i].loss.total);
      CHECK(a.history[i].iteration == b.history[i].iteration);
    }
    c.seed = 4;
    auto other = train(data, toy_spec(), c);
    CHECK_FALSE(serialize_checkpoint(a.model, "{}") == serialize_checkpoint(other.model, "{}"));
  }

  SUBCASE("history and sink agree") {
    std::vector<TrainRecord> sunk;
    auto s = train(data, toy_spec(), c, [&](const TrainRecord& r) { sunk.push_back(r); });
    CHECK(sunk.size() == s.history.size());
    CHECK(s.history.size() == 3 * 5);
    CHECK(s.history.front().phase == Phase::kPretrainImage);
    CHECK(s.history.back().phase == Phase::kJoint);
    CHECK(s.history.back().iteration == 39);
  }

  SUBCASE("re-encoding the training set reproduces its codes") {
    auto s = train(data, toy_spec(), c);
    const BitMatrix first = binarize(encode(s.model.image, data.image));
    CHECK(binarize(encode(s.model.image, data.image, 17)) == first);
    auto restored = deserialize_checkpoint(serialize_checkpoint(s.model, "{}"));
    CHECK(binarize(encode(restored.model.image, data.image)) == first);
  }

  CHECK_THROWS_AS(train(PairedData{Tensor({0, kFeat}), Tensor({0, 12}), LabelMatrix(0, kCats)}, toy_spec(), c),
                  Error);
}

TEST_CASE("stronger alignment weight pulls paired codes together") {
  auto data = toy(300, 8);
  TrainConfig c = quick_config();
  c.batch_size = 32;
  c.pretrain_iters_image = c.pretrain_iters_text = 200;
  c.joint_iters = 400;
  c.lambda = 0.2;
  auto strong = train(data, toy_spec(), c);
  c.lambda = 0.001;
  auto weak = train(data, toy_spec(), c);
  CHECK(paired_hamming(strong.model, data) < paired_hamming(weak.model, data));
}
