#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "noft/error.hpp"
#include "noft/noft.hpp"
#include "noft/verify.hpp"

using namespace noft;
using namespace noft::verify;

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

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("grad_check on a quadratic") {
  const Probe square = [](std::span<const double> w) {
    double s = 0.0;
    for (double x : w) s += x * x;
    return s;
  };
  const std::vector<double> point(5, 1.0);
  const std::vector<double> analytic(5, 2.0);
  const auto r = grad_check(square, point, analytic, 1e-3, 1e-8);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.coordinates == 5);

  std::vector<double> corrupted = analytic;
  corrupted[3] *= 2.0;
  const auto bad = grad_check(square, point, corrupted, 1e-3, 1e-4);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_index == 3);
  CHECK(bad.analytic_at_worst == 4.0);
  CHECK(bad.numeric_at_worst == doctest::Approx(2.0));
}

TEST_CASE("grad_check rejects non-finite probes and bad steps") {
  const Probe nan_probe = [](std::span<const double>) { return std::nan(""); };
  const std::vector<double> p{1.0};
  CHECK(kind_of([&] { grad_check(nan_probe, p, p, 1e-3, 1e-4); }) == ErrorKind::Domain);
  const Probe id = [](std::span<const double> w) { return w[0]; };
  CHECK(kind_of([&] { grad_check(id, p, p, 0.0, 1e-4); }) == ErrorKind::Parameter);
  CHECK(kind_of([&] { grad_check(id, p, std::vector<double>{}, 1e-3, 1e-4); }) == ErrorKind::Shape);
}

TEST_CASE("grad_check flags any single-coordinate corruption of size 10 tol") {
  const auto f = make_grad_fixture({2, 4, 4}, 3, 4);
  const double beta = 0.1, tol = 1e-4;
  const LossResult base = total_loss(f.model, f.n_orig, f.n_div, beta);
  const Gradients g = backward(f.model, base.tape, beta);
  NoftModel m = f.model;
  std::span<double> logits = m.filter.logits;
  const std::vector<double> point(logits.begin(), logits.end());
  const Probe probe = [&](std::span<const double> x) {
    std::copy(x.begin(), x.end(), logits.begin());
    return total_loss(m, f.n_orig, f.n_div, beta).loss;
  };
  CHECK(grad_check(probe, point, g.filter_logits, 1e-3, tol).passed);
  for (std::size_t i = 0; i < point.size(); ++i) {
    std::vector<double> corrupted = g.filter_logits;
    corrupted[i] += 10.0 * tol * std::max(1.0, std::abs(corrupted[i]));
    const auto r = grad_check(probe, point, corrupted, 1e-3, tol);
    CHECK_FALSE(r.passed);
    CHECK(r.worst_index == i);
  }
}

TEST_CASE("toy generator") {
  const ToyGenerator gen = ToyGenerator::create(64, 5);
  CHECK(gen.weight.rows == ToyGenerator::kDefaultOutputs);
  CHECK(gen.weight.cols == 64);
  CHECK(ToyGenerator::create(64, 5).weight == gen.weight);
  CHECK_FALSE(ToyGenerator::create(64, 6).weight == gen.weight);

  const std::vector<double> zero(64, 0.0);
  for (double v : toy_generate(gen, zero)) CHECK(v == 0.0);

  Rng rng(1);
  const auto a = random_vector(64, rng);
  const auto b = random_vector(64, rng);
  std::vector<double> ab(64);
  for (std::size_t i = 0; i < 64; ++i) ab[i] = a[i] + b[i];
  const auto ga = toy_generate(gen, a), gb = toy_generate(gen, b), gab = toy_generate(gen, ab);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(gab[i] - ga[i] - gb[i]) < 1e-5);
  CHECK(toy_generate(gen, a) == ga);

  // Brute-force matrix-vector oracle.
  for (std::size_t p = 0; p < ga.size(); ++p) {
    double s = 0.0;
    for (std::size_t d = 0; d < 64; ++d) s += gen.weight(p, d) * a[d];
    CHECK(ga[p] == doctest::Approx(s).epsilon(1e-12));
  }

  const ToyGenerator sq = ToyGenerator::create(64, 5, 192, true);
  const auto sa = toy_generate(sq, a);
  for (std::size_t p = 0; p < sa.size(); ++p) CHECK(sa[p] == doctest::Approx(std::tanh(ga[p])).epsilon(1e-12));

  const NoiseTensor t({1, 64}, std::vector<float>(a.begin(), a.end()));
  CHECK(toy_generate(gen, t).size() == 192);
  CHECK(kind_of([&] { toy_generate(gen, std::vector<double>(63, 0.0)); }) == ErrorKind::Shape);
}

TEST_CASE("content score") {
  Rng rng(2);
  const auto a = random_vector(192, rng);
  std::vector<double> neg = a, twice = a;
  for (double& x : neg) x = -x;
  for (double& x : twice) x *= 2.0;
  CHECK(content_score(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(content_score(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));

  const auto b = random_vector(192, rng);
  CHECK(std::abs(content_score(a, b) - content_score(b, a)) < 1e-9);
  CHECK(std::abs(content_score(twice, b) - content_score(a, b)) < 1e-9);

  // Random 192-vectors are nearly orthogonal: |cos| < 0.25 essentially always.
  int small = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    if (std::abs(content_score(random_vector(192, rng), random_vector(192, rng))) < 0.25) ++small;
  }
  CHECK(small >= 990);

  CHECK(kind_of([&] { content_score(a, std::vector<double>(192, 0.0)); }) == ErrorKind::Domain);
  CHECK(kind_of([&] { content_score(a, std::vector<double>(5, 1.0)); }) == ErrorKind::Shape);
}

TEST_CASE("diversity score") {
  Rng rng(3);
  const auto u = random_vector(20, rng);
  std::vector<double> neg = u;
  for (double& x : neg) x = -x;
  CHECK(diversity_score({u, u, u}) == 0.0);
  CHECK(diversity_score({u, neg}) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(kind_of([&] { diversity_score({u}); }) == ErrorKind::Config);

  // Brute-force oracle, scale and order invariance.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> set;
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 4);
    for (std::size_t i = 0; i < n; ++i) set.push_back(random_vector(6, rng));
    double dist = 0.0, norm = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (double x : set[i]) s += x * x;
      norm += std::sqrt(s);
      for (std::size_t j = i + 1; j < n; ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < 6; ++k) d += (set[i][k] - set[j][k]) * (set[i][k] - set[j][k]);
        dist += std::sqrt(d);
        ++pairs;
      }
    }
    const double score = diversity_score(set);
    CHECK(score == doctest::Approx((dist / pairs) / (norm / n)).epsilon(1e-12));
    auto scaled = set;
    for (auto& v : scaled)
      for (double& x : v) x *= 3.5;
    CHECK(diversity_score(scaled) == doctest::Approx(score).epsilon(1e-12));
    auto reversed = set;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(diversity_score(reversed) == doctest::Approx(score).epsilon(1e-12));
  }
}

TEST_CASE("sweep plumbing") {
  SweepConfig cfg;
  cfg.shape = {2, 4, 4};
  cfg.train.steps = 5;
  cfg.trials = 1;
  const auto one = tradeoff_sweep({0.01, 0.1}, cfg);
  REQUIRE(one.rows.size() == 2);
  CHECK_FALSE(one.rows[0].diversity.has_value());
  CHECK(format_table(one).find("n/a") != std::string::npos);

  cfg.trials = 2;
  const auto two = tradeoff_sweep({0.5}, cfg);
  REQUIRE(two.rows.size() == 1);
  CHECK(two.rows[0].diversity.has_value());
  CHECK(two.rows[0].beta == 0.5);
  CHECK(two.steps == 5);

  CHECK(kind_of([&] { tradeoff_sweep({}, cfg); }) == ErrorKind::Config);
  cfg.train.learning_rate = -1.0;
  CHECK(kind_of([&] { tradeoff_sweep({0.1, 0.2}, cfg); }) == ErrorKind::Config);
}

TEST_CASE("seed derivation is stable") {
  CHECK(sweep_source_noise({2, 4, 4}, 1) == sweep_source_noise({2, 4, 4}, 1));
  CHECK_FALSE(sweep_source_noise({2, 4, 4}, 1) == sweep_source_noise({2, 4, 4}, 2));
  CHECK(trial_div_seed(1, 0) != trial_div_seed(1, 1));
}

TEST_CASE("content preservation counts wins") {
  const NoftModel identity = [] {
    ModelOptions o;
    o.lambda_init = 9.0;
    return NoftModel::create({2, 4, 4}, o, 0);
  }();
  const ToyGenerator gen = ToyGenerator::create(32, 1);
  const auto res = content_preservation(identity, gen, 20, 3);
  CHECK(res.trials == 20);
  CHECK(res.noft_scores.size() == 20);
  CHECK(res.wins == 20);
}
