#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mbs/engine.hpp"
#include "mbs/errors.hpp"
#include "support.hpp"

using namespace mbs;

namespace {

/// y = w x, no bias.
BuiltModel scalar_model(double w) {
  BuiltModel m = build_model(ModelSpec{{DenseSpec{1, 1, false}}}, {1}, 0);
  m.params.at("0.weight")[0] = w;
  return m;
}

Batch scalar_batch(const std::vector<std::pair<double, double>>& xy) {
  Batch b{Tensor({xy.size(), 1}), Tensor({xy.size(), 1})};
  for (std::size_t i = 0; i < xy.size(); ++i) b.inputs[i] = xy[i].first, b.targets[i] = xy[i].second;
  return b;
}

/// (2/N) sum x (w x - y)
double analytic_grad(double w, const std::vector<std::pair<double, double>>& xy) {
  double s = 0.0;
  for (auto [x, y] : xy) s += x * (w * x - y);
  return 2.0 * s / static_cast<double>(xy.size());
}

Dataset cluster_data(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
  CounterRng rng(seed);
  Dataset ds;
  ds.inputs = testing::random_tensor(rng, {n, d});
  ds.targets = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) ds.targets[i] = static_cast<double>(i % classes);
  ds.n_classes = classes;
  return ds;
}

}  // namespace

TEST_CASE("plan_split examples") {
  const MicroBatchPlan a = plan_split(16, 8);
  CHECK(a.sizes == std::vector<std::size_t>{8, 8});
  CHECK(a.n_s_mu == 2);
  const MicroBatchPlan b = plan_split(10, 8);
  CHECK(b.sizes == std::vector<std::size_t>{8, 2});
  CHECK(b.n_s_mu == 2);
  CHECK(b.ranges == std::vector<IndexRange>{{0, 8}, {8, 10}});
  const MicroBatchPlan c = plan_split(4, 8);
  CHECK(c.n_mu == 4);
  CHECK(c.sizes == std::vector<std::size_t>{4});
  CHECK(c.n_s_mu == 1);
  CHECK_THROWS_AS(plan_split(0, 4), ArgumentError);
  CHECK_THROWS_AS(plan_split(4, 0), ArgumentError);
}

TEST_CASE("plan invariants over all small sizes") {
  for (std::size_t n_b = 1; n_b <= 70; ++n_b) {
    for (std::size_t n_mu = 1; n_mu <= 75; ++n_mu) {
      const MicroBatchPlan p = plan_split(n_b, n_mu);
      p.validate();
      CHECK(std::accumulate(p.sizes.begin(), p.sizes.end(), std::size_t{0}) == n_b);
      CHECK(p.n_s_mu == (n_b + p.n_mu - 1) / p.n_mu);
      CHECK(p.n_mu <= n_b);
      std::size_t next = 0;
      for (std::size_t k = 0; k < p.n_s_mu; ++k) {
        CHECK(p.ranges[k].begin == next);
        CHECK(p.ranges[k].size() == p.sizes[k]);
        CHECK(p.sizes[k] <= p.n_mu);
        next = p.ranges[k].end;
      }
      CHECK(next == n_b);
    }
  }
}

TEST_CASE("normalize_loss examples") {
  const LossValue two{2.0, 4, 1.0};
  CHECK(normalize_loss(two, plan_split(16, 4), 0, NormalizationMode::paper_faithful).value == 0.5);
  const MicroBatchPlan ragged = plan_split(10, 8);
  const LossValue n = normalize_loss(LossValue{2.0, 2, 1.0}, ragged, 1, NormalizationMode::exact_weighted);
  CHECK(n.value == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(n.scale == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(normalize_loss(two, plan_split(16, 4), 2, NormalizationMode::off).value == 2.0);
  CHECK_THROWS_AS(normalize_loss(two, plan_split(16, 4), 4, NormalizationMode::off), ArgumentError);
}

TEST_CASE("normalization mode names round-trip") {
  for (NormalizationMode m : {NormalizationMode::paper_faithful, NormalizationMode::exact_weighted,
                              NormalizationMode::off})
    CHECK(parse_normalization_mode(to_string(m)) == m);
  CHECK_THROWS(parse_normalization_mode("bogus"));
}

TEST_CASE("accumulate examples") {
  ParameterSet p;
  p.add("w", Tensor::vector({0, 0}));
  GradientSet g1, g2;
  g1.add("w", Tensor::vector({1, 2}));
  g2.add("w", Tensor::vector({3, 4}));
  {
    GradientAccumulator acc(p, 2);
    accumulate(accumulate(acc, g1), g2);
    CHECK(acc.sums().at("w") == Tensor::vector({4, 6}));
    CHECK(acc.complete());
    CHECK_THROWS_AS(acc.accumulate(g1), ArgumentError);
  }
  {
    GradientAccumulator acc(p, 1);
    acc.accumulate(g1);
    CHECK(acc.sums().at("w") == g1.at("w"));
  }
  {
    GradientAccumulator acc(p, 3);
    for (int i = 0; i < 3; ++i) acc.accumulate(g2);
    CHECK(acc.sums().at("w") == Tensor::vector({9, 12}));
    acc.reset(1);
    CHECK(acc.sums().at("w") == Tensor::vector({0, 0}));
    CHECK(acc.micro_batches_seen() == 0);
  }
  GradientSet wrong;
  wrong.add("v", Tensor::vector({1, 2}));
  GradientAccumulator acc(p, 2);
  CHECK_THROWS_AS(acc.accumulate(wrong), KeyMismatchError);
}

TEST_CASE("scalar model: normalized micro-gradients sum to the full gradient") {
  const std::vector<std::pair<double, double>> xy{{1, 2}, {2, 3}, {3, 5}, {4, 4}};
  BuiltModel m = scalar_model(1.0);
  const Batch batch = scalar_batch(xy);
  const MicroBatchPlan plan = plan_split(4, 2);

  const MiniBatchStats pf =
      accumulate_mini_batch(m.model, m.params, batch, plan, NormalizationMode::paper_faithful, {LossKind::mse});
  // micro-gradients: (2/2)(1*(1-2) + 2*(2-3)) / 2 = -1.5, (2/2)(3*(3-5) + 4*(4-4)) / 2 = -3
  const double full = analytic_grad(1.0, xy);
  CHECK(full == -4.5);
  CHECK(pf.accumulated.at("0.weight")[0] == -4.5);

  const MiniBatchStats off =
      accumulate_mini_batch(m.model, m.params, batch, plan, NormalizationMode::off, {LossKind::mse});
  CHECK(off.accumulated.at("0.weight")[0] == -9.0);

  const GradientSet fb = full_batch_gradient(m.model, m.params, batch, {LossKind::mse});
  CHECK(fb.at("0.weight")[0] == -4.5);
}

TEST_CASE("one micro-batch equals plain mini-batch training in every mode") {
  const std::vector<std::pair<double, double>> xy{{1, 2}, {2, 3}, {3, 5}, {4, 4}};
  const Batch batch = scalar_batch(xy);
  for (NormalizationMode mode : {NormalizationMode::paper_faithful, NormalizationMode::exact_weighted,
                                 NormalizationMode::off}) {
    BuiltModel m = scalar_model(1.0);
    const MiniBatchStats s = accumulate_mini_batch(m.model, m.params, batch, plan_split(4, 4), mode, {LossKind::mse});
    CHECK(s.accumulated == full_batch_gradient(m.model, m.params, batch, {LossKind::mse}));
  }
}

TEST_CASE("loss-site and seed-site normalization give identical gradients") {
  CounterRng rng(55);
  for (int i = 0; i < 30; ++i) {
    const testing::Instance inst = testing::random_instance(rng, {});
    BuiltModel m = build_model(inst.spec, inst.input_shape, inst.seed);
    const MicroBatchPlan plan = plan_split(inst.batch.size(), 1 + rng.below(inst.batch.size()));
    for (NormalizationMode mode : {NormalizationMode::paper_faithful, NormalizationMode::exact_weighted}) {
      const MiniBatchStats a =
          accumulate_mini_batch(m.model, m.params, inst.batch, plan, mode, inst.loss, {NormalizationSite::loss});
      const MiniBatchStats b = accumulate_mini_batch(m.model, m.params, inst.batch, plan, mode, inst.loss,
                                                     {NormalizationSite::backward_seed});
      CHECK(a.accumulated == b.accumulated);
    }
  }
}

TEST_CASE("exact_weighted is exact on ragged splits") {
  CounterRng rng(66);
  for (int i = 0; i < 30; ++i) {
    const testing::Instance inst = testing::random_instance(rng, {});
    BuiltModel m = build_model(inst.spec, inst.input_shape, inst.seed);
    const MicroBatchPlan plan = plan_split(inst.batch.size(), 1 + rng.below(inst.batch.size()));
    const MiniBatchStats s =
        accumulate_mini_batch(m.model, m.params, inst.batch, plan, NormalizationMode::exact_weighted, inst.loss);
    CHECK(max_relative_error(s.accumulated, full_batch_gradient(m.model, m.params, inst.batch, inst.loss)) <= 1e-10);
  }
}

TEST_CASE("mini-batch stats expose per-micro-batch normalized losses") {
  const std::vector<std::pair<double, double>> xy{{1, 2}, {2, 3}, {3, 5}, {4, 4}, {5, 5}};
  BuiltModel m = scalar_model(1.0);
  const MiniBatchStats s = accumulate_mini_batch(m.model, m.params, scalar_batch(xy), plan_split(5, 2),
                                                 NormalizationMode::paper_faithful, {LossKind::mse});
  REQUIRE(s.micro.size() == 3);
  for (const MicroBatchStats& mb : s.micro) CHECK(mb.normalized_loss == mb.raw_loss / 3.0);
  // weighted raw mean = full-batch mean loss: (1 + 1 + 4 + 0 + 0) / 5
  CHECK(s.loss == doctest::Approx(6.0 / 5.0).epsilon(1e-15));
  CHECK(s.outputs.shape() == Shape{5, 1});
}

TEST_CASE("train_mini_batch performs exactly one optimizer step") {
  const std::vector<std::pair<double, double>> xy{{1, 2}, {2, 3}, {3, 5}, {4, 4}};
  BuiltModel m = scalar_model(1.0);
  OptimizerConfig c;
  c.lr = 0.1, c.momentum = 0.0, c.weight_decay = 0.0;
  OptimizerState opt(c, m.params);
  const MiniBatchStats s = train_mini_batch(m.model, m.params, scalar_batch(xy), plan_split(4, 1),
                                            NormalizationMode::paper_faithful, {LossKind::mse}, opt);
  CHECK(opt.step_count() == 1);
  CHECK(s.step_count == 1);
  CHECK(m.params.at("0.weight")[0] == doctest::Approx(1.0 + 0.45).epsilon(1e-14));
}

TEST_CASE("epoch of 33 samples with mini-batch 16") {
  Dataset ds = cluster_data(33, 3, 2, 1);
  BuiltModel m = build_model(ModelSpec{{DenseSpec{3, 2, true}}}, {3}, 1);
  OptimizerState opt(OptimizerConfig{}, m.params);
  EpochConfig ec;
  ec.mini_batch_size = 16;
  ec.micro_batch_size = 8;
  ec.loss = {LossKind::cross_entropy};
  const EpochStats st = train_epoch(m.model, m.params, ds, opt, ec);
  REQUIRE(st.mini_batches.size() == 3);
  CHECK(st.mini_batches[0].size == 16);
  CHECK(st.mini_batches[1].size == 16);
  CHECK(st.mini_batches[2].size == 1);
  CHECK(st.mini_batches[2].n_s_mu == 1);
  CHECK(st.micro_batch_count == 5);
  CHECK(st.step_count == 3);
  CHECK(opt.step_count() == 3);
}

TEST_CASE("epochs are bit-reproducible and prefetch does not change them") {
  auto trace = [](bool prefetch) {
    Dataset ds = cluster_data(50, 4, 3, 9);
    BuiltModel m = build_model(ModelSpec{{DenseSpec{4, 6, true}, ReluSpec{}, DenseSpec{6, 3, true}}}, {4}, 9);
    OptimizerState opt(OptimizerConfig{}, m.params);
    EpochConfig ec;
    ec.mini_batch_size = 12;
    ec.micro_batch_size = 5;
    ec.loss = {LossKind::cross_entropy};
    ec.seed = 4;
    ec.options.prefetch = prefetch;
    std::vector<double> losses;
    for (std::size_t e = 0; e < 2; ++e) {
      ec.epoch = e;
      for (const MiniBatchSummary& s : train_epoch(m.model, m.params, ds, opt, ec).mini_batches)
        losses.push_back(s.loss);
    }
    return std::make_pair(losses, m.params);
  };
  const auto a = trace(false), b = trace(false), c = trace(true);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first == c.first);
  CHECK(a.second == c.second);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(20, 3, 0), b = epoch_order(20, 3, 0), c = epoch_order(20, 3, 1);
  CHECK(a == b);
  CHECK(a != c);
  std::vector<std::size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(20);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
}

TEST_CASE("learning-rate policy advances per update or per epoch") {
  LrPolicy p{LrSchedule::linear, LrScheduleUnit::update, 0.1, 10, 5};
  CHECK(p.lr_at(0, 0) == 0.1);
  CHECK(p.lr_at(5, 4) == doctest::Approx(0.05));
  p.unit = LrScheduleUnit::epoch;
  CHECK(p.lr_at(5, 1) == doctest::Approx(0.08));
  p.schedule = LrSchedule::constant;
  CHECK(p.lr_at(7, 3) == 0.1);
}

TEST_CASE("evaluation reports accuracy in eval mode") {
  Dataset ds = cluster_data(20, 2, 2, 3);
  BuiltModel m = build_model(ModelSpec{{DenseSpec{2, 2, true}}}, {2}, 3);
  const EvalResult a = evaluate(m.model, m.params, ds, {LossKind::cross_entropy}, 0.5, 7);
  const EvalResult b = evaluate(m.model, m.params, ds, {LossKind::cross_entropy}, 0.5, 256);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
  const Tensor out = forward(m.model, m.params, ds.inputs, Mode::eval).output;
  CHECK(a.accuracy == accuracy(out, ds.targets));
}
