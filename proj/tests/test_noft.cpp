#include <doctest.h>

#include <cmath>

#include "noft/error.hpp"
#include "noft/noft.hpp"
#include "noft/verify.hpp"

using namespace noft;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::Io;
}

Tensor64 random_tensor(const Shape& s, Rng& rng) { return gaussian_sample(s, rng).cast<double>(); }

void zero_attention(NoftModel& m) {
  for (auto* w : {&m.attention.wq, &m.attention.wk, &m.attention.wv, &m.attention.bq, &m.attention.bk,
                  &m.attention.bv}) {
    for (double& x : *w) x = 0.0;
  }
}

NoftModel endpoint_model(const Shape& s, double logit, bool restandardize) {
  ModelOptions o;
  o.lambda_min = 0.0;
  o.lambda_init = logit;
  o.restandardize = restandardize;
  NoftModel m = NoftModel::create(s, o, 1);
  zero_attention(m);
  return m;
}

}  // namespace

TEST_CASE("model construction and parameter budget") {
  const NoftModel m = NoftModel::create({4, 64, 64}, ModelOptions{}, 0);
  CHECK(m.parameter_count() == 16384 + 3 * (16 + 4));
  CHECK(m.attention.parameter_count() == 60);

  ModelOptions coarse;
  coarse.lambda_downsample = 2;
  CHECK(NoftModel::create({4, 64, 64}, coarse, 0).parameter_count() == 4096 + 60);

  const auto blocks = parameter_blocks(m);
  REQUIRE(blocks.size() == 7);
  CHECK(blocks[0].name == "attention.wq");
  CHECK(blocks[0].dims == Shape{4, 4, 1, 1});
  CHECK(blocks[6].name == "filter.logits");
  CHECK(blocks[6].dims == Shape{4, 64, 64});
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.values.size();
  CHECK(total == m.parameter_count());

  CHECK(NoftModel::create({4, 8, 8}, ModelOptions{}, 5).attention.wq ==
        NoftModel::create({4, 8, 8}, ModelOptions{}, 5).attention.wq);
  CHECK(kind_of([] { NoftModel::create({4}, ModelOptions{}, 0); }) == ErrorKind::Shape);
  ModelOptions zero_iters;
  zero_iters.n_iters = 0;
  CHECK(kind_of([&] { NoftModel::create({2, 4, 4}, zero_iters, 0); }) == ErrorKind::Parameter);
}

TEST_CASE("forward identity and full-leak endpoints") {
  Rng rng(1);
  const Shape s{2, 4, 4};
  const Tensor64 o = random_tensor(s, rng);
  const Tensor64 d = random_tensor(s, rng);

  // logistic(800) == 1 exactly in double precision.
  const auto keep = forward(endpoint_model(s, 800.0, true), o, d);
  const Tensor64 so = standardize(o);
  for (std::size_t i = 0; i < o.size(); ++i) CHECK(keep.output[i] == doctest::Approx(so[i]).epsilon(1e-12));

  const auto leak = forward(endpoint_model(s, -800.0, false), o, d);
  CHECK(leak.output == d);
}

TEST_CASE("forward equals the composition of module operations") {
  Rng rng(2);
  const Shape s{2, 4, 4};
  NoftModel m = NoftModel::create(s, ModelOptions{}, 3);
  for (double& w : m.filter.logits) w = rng.uniform(-2.0, 2.0);
  const Tensor64 o = random_tensor(s, rng);
  const Tensor64 d = random_tensor(s, rng);

  const Tensor64 att = attention::sinkhorn_attention(o, m.attention, {.n_iters = m.n_iters}).output;
  Tensor64 res = o;
  for (std::size_t i = 0; i < o.size(); ++i) res[i] += att[i];
  const Tensor64 r = standardize(res);
  const Tensor64 lambda = bottleneck::lambda_of(m.filter);
  const Tensor64 z = standardize(bottleneck::compress(r, d, lambda));

  const auto fwd = forward(m, o, d);
  for (std::size_t i = 0; i < o.size(); ++i) CHECK(std::abs(fwd.output[i] - z[i]) < 1e-6);
  CHECK(kind_of([&] { forward(m, Tensor64({2, 4, 3}), d); }) == ErrorKind::Shape);
}

TEST_CASE("total_loss decomposition") {
  Rng rng(3);
  const Shape s{2, 4, 4};
  NoftModel m = NoftModel::create(s, ModelOptions{}, 4);
  for (double& w : m.filter.logits) w = rng.uniform(-2.0, 2.0);
  const Tensor64 o = random_tensor(s, rng);
  const Tensor64 d = random_tensor(s, rng);

  const auto zero = total_loss(m, o, d, 0.0);
  CHECK(zero.loss == zero.l_noise);

  for (double beta : {0.01, 0.1, 1.0, 10.0}) {
    const auto l = total_loss(m, o, d, beta);
    const auto fwd = forward(m, o, d);
    const double l_noise = mse(fwd.output, o);
    const double l_info = bottleneck::info_loss(fwd.tape.lambda, fwd.tape.r);
    CHECK(l.l_noise == l_noise);
    CHECK(l.l_info == l_info);
    CHECK(std::abs(l.loss - (beta * l_info + l_noise)) < 1e-12);
  }

  const auto leak = total_loss(endpoint_model(s, -800.0, false), o, d, 0.5);
  CHECK(leak.l_noise == mse(d, o));
  CHECK(leak.l_info == 0.0);

  CHECK(kind_of([&] { total_loss(m, o, d, -1.0); }) == ErrorKind::Parameter);
}

TEST_CASE("standardize backward matches finite differences") {
  Rng rng(5);
  const Shape s{2, 3, 3};
  Tensor64 x = random_tensor(s, rng);
  const Tensor64 w = random_tensor(s, rng);
  auto probe = [&](const Tensor64& xi) {
    const Tensor64 y = standardize(xi);
    double t = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) t += w[i] * y[i];
    return t;
  };
  const Tensor64 y = standardize(x);
  const Tensor64 dx = standardize_backward(y, moments(std::span<const double>(x.values())).stddev, w);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + 1e-5;
    const double fp = probe(x);
    x[i] = x0 - 1e-5;
    const double fm = probe(x);
    x[i] = x0;
    CHECK(dx[i] == doctest::Approx((fp - fm) / 2e-5).epsilon(1e-6));
  }
}

TEST_CASE("full gradient check at (2,4,4)") {
  for (std::uint64_t seed : {0, 1, 2}) {
    CAPTURE(seed);
    const auto f = verify::make_grad_fixture({2, 4, 4}, 3, seed);
    const auto check = verify::check_model_gradients(f.model, f.n_orig, f.n_div, 0.1, 1e-3, 1e-4);
    CHECK(check.passed);
    CHECK(check.max_rel_error < 1e-4);
    REQUIRE(check.blocks.size() == 8);
    CHECK(check.blocks.back().name == "input");
  }
}

TEST_CASE("gradient check with options off the default path") {
  ModelOptions o;
  o.n_iters = 2;
  o.kernel_size = 3;
  o.lambda_downsample = 2;
  o.restandardize = false;
  const Shape s{2, 5, 4};
  NoftModel m = NoftModel::create(s, o, 9);
  Rng rng(9);
  for (double& w : m.filter.logits) w = rng.uniform(-2.0, 2.0);
  const auto check = verify::check_model_gradients(m, random_tensor(s, rng), random_tensor(s, rng), 0.3, 1e-3, 1e-4);
  CHECK(check.passed);

  const Shape s3{2, 3, 2, 3};
  NoftModel m3 = NoftModel::create(s3, ModelOptions{}, 10);
  for (double& w : m3.filter.logits) w = rng.uniform(-2.0, 2.0);
  CHECK(verify::check_model_gradients(m3, random_tensor(s3, rng), random_tensor(s3, rng), 0.1, 1e-3, 1e-4).passed);
}

TEST_CASE("backward structure and determinism") {
  Rng rng(6);
  const Shape s{2, 4, 4};
  const Tensor64 o = random_tensor(s, rng);
  const Tensor64 d = random_tensor(s, rng);

  // Saturated logits sit on the clamp, so the filter receives no gradient.
  NoftModel keep = endpoint_model(s, 800.0, true);
  keep.filter.lambda_min = 1e-4;
  const auto lr = total_loss(keep, o, d, 0.1);
  const auto g = backward(keep, lr.tape, 0.1);
  for (double v : g.filter_logits) CHECK(v == 0.0);

  NoftModel m = NoftModel::create(s, ModelOptions{}, 7);
  const auto a = backward(m, total_loss(m, o, d, 0.1).tape, 0.1);
  const auto b = backward(m, total_loss(m, o, d, 0.1).tape, 0.1);
  CHECK(a.attention.wq == b.attention.wq);
  CHECK(a.filter_logits == b.filter_logits);
  CHECK(a.d_orig == b.d_orig);
}

TEST_CASE("adam update") {
  AdamConfig cfg;
  std::vector<double> p{1.0, -2.0}, m(2, 0.0), v(2, 0.0);
  const std::vector<double> zero(2, 0.0);
  adam_update(p, zero, m, v, cfg, 1);
  CHECK(p == std::vector<double>{1.0, -2.0});

  std::vector<double> q{0.5}, mq(1, 0.0), vq(1, 0.0);
  adam_update(q, std::vector<double>{1.0}, mq, vq, cfg, 1);
  // m_hat = 1, v_hat = 1: the step is lr / (1 + eps).
  CHECK(0.5 - q[0] == doctest::Approx(2e-3 / (1.0 + 1e-8)).epsilon(1e-12));

  // Hand-rolled second step.
  adam_update(q, std::vector<double>{-3.0}, mq, vq, cfg, 2);
  const double m2 = 0.9 * 0.1 + 0.1 * -3.0;
  const double v2 = 0.999 * 0.001 + 0.001 * 9.0;
  const double step = 2e-3 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.998001)) + 1e-8);
  CHECK(q[0] == doctest::Approx(0.5 - 2e-3 / (1.0 + 1e-8) - step).epsilon(1e-12));

  std::vector<double> r1{0.3}, r2{0.3}, m1(1), m2v(1), v1(1), v2v(1);
  for (std::size_t t = 1; t <= 5; ++t) {
    adam_update(r1, std::vector<double>{0.1 * t}, m1, v1, cfg, t);
    adam_update(r2, std::vector<double>{0.1 * t}, m2v, v2v, cfg, t);
  }
  CHECK(r1 == r2);

  CHECK(kind_of([&] { adam_update(p, std::vector<double>{1.0}, m, v, cfg, 1); }) == ErrorKind::Shape);
  CHECK(kind_of([&] { adam_update(p, zero, m, v, cfg, 0); }) == ErrorKind::Parameter);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK(c.beta == 0.01);
  CHECK(c.learning_rate == 2e-3);
  CHECK(c.steps == 20000);
  CHECK(c.batch == 1);
  CHECK(c.effective_div_policy() == DivPolicy::ResampleEachStep);
  c.mode = TrainMode::Instance;
  CHECK(c.effective_div_policy() == DivPolicy::Fixed);
  c.div_policy = DivPolicy::ResampleEachStep;
  CHECK(c.effective_div_policy() == DivPolicy::ResampleEachStep);

  auto invalid = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    return kind_of([&] { t.validate(); });
  };
  CHECK(invalid([](TrainConfig& t) { t.beta = -1; }) == ErrorKind::Config);
  CHECK(invalid([](TrainConfig& t) { t.learning_rate = 0; }) == ErrorKind::Config);
  CHECK(invalid([](TrainConfig& t) { t.steps = 0; }) == ErrorKind::Config);
  CHECK(invalid([](TrainConfig& t) { t.batch = 2; }) == ErrorKind::Config);
  CHECK(invalid([](TrainConfig& t) { t.model.kernel_size = 2; }) == ErrorKind::Config);
}

TEST_CASE("train plumbing") {
  TrainConfig c;
  c.steps = 1;
  const auto one = train(c, {2, 4, 4});
  CHECK(one.records.size() == 1);
  CHECK(one.initial_mean_lambda == doctest::Approx(0.9002).epsilon(1e-4));

  c.steps = 15;
  const auto a = train(c, {2, 4, 4});
  const auto b = train(c, {2, 4, 4});
  REQUIRE(a.records.size() == 15);
  for (std::size_t i = 0; i < 15; ++i) {
    CHECK(a.records[i].loss == b.records[i].loss);
    CHECK(std::abs(a.records[i].loss - (c.beta * a.records[i].l_info + a.records[i].l_noise)) < 1e-9);
  }
  CHECK(a.model.filter.logits == b.model.filter.logits);

  c.mode = TrainMode::Instance;
  CHECK(kind_of([&] { train(c, {2, 4, 4}); }) == ErrorKind::Config);
  Rng rng(1);
  CHECK(kind_of([&] { train(c, {2, 4, 4}, gaussian_sample({2, 4, 5}, rng)); }) == ErrorKind::Shape);
  const auto inst = train(c, {2, 4, 4}, gaussian_sample({2, 4, 4}, rng));
  CHECK(inst.records.size() == 15);
}

TEST_CASE("apply") {
  Rng rng(8);
  const Shape s{4, 8, 8};
  const NoftModel m = NoftModel::create(s, ModelOptions{}, 2);
  const NoiseTensor o = gaussian_sample(s, rng);
  const NoiseTensor a = apply(m, o, 1);
  const NoiseTensor b = apply(m, o, 1);
  const NoiseTensor c = apply(m, o, 2);
  CHECK(a == b);
  CHECK(mse(a, c) > 0.0);
  const Moments mo = moments(a.values());
  CHECK(std::abs(mo.mean) < 0.02);
  CHECK(std::abs(mo.stddev - 1.0) < 0.02);
  CHECK(kind_of([&] { apply(m, gaussian_sample({4, 8, 9}, rng), 1); }) == ErrorKind::Shape);
}

TEST_CASE("pearson") {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{2, 4, 6, 8};
  const std::vector<double> c{4, 3, 2, 1};
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  CHECK(pearson(a, c) == doctest::Approx(-1.0));
  CHECK(kind_of([&] { pearson(a, std::vector<double>{1, 1, 1, 1}); }) == ErrorKind::DegenerateVariance);
}
