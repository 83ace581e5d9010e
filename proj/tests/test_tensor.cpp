#include <doctest.h>

#include <cmath>
#include <numbers>

#include "noft/error.hpp"
#include "noft/tensor.hpp"

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

}  // namespace

TEST_CASE("shape validation and parsing") {
  CHECK_NOTHROW(validate_shape({4, 64, 64}));
  CHECK_NOTHROW(validate_shape({8, 16, 16, 16}));
  CHECK_NOTHROW(validate_shape({3, 5}));
  CHECK(kind_of([] { validate_shape({}); }) == ErrorKind::Shape);
  CHECK(kind_of([] { validate_shape({4}); }) == ErrorKind::Shape);
  CHECK(kind_of([] { validate_shape({1, 2, 3, 4, 5}); }) == ErrorKind::Shape);
  CHECK(kind_of([] { validate_shape({4, 0, 4}); }) == ErrorKind::Shape);

  CHECK(parse_shape("4,16,16") == Shape{4, 16, 16});
  CHECK(parse_shape("4x64x64") == Shape{4, 64, 64});
  CHECK(parse_shape(" 2, 3 ") == Shape{2, 3});
  CHECK(kind_of([] { parse_shape("4,,4"); }) == ErrorKind::Shape);
  CHECK(kind_of([] { parse_shape("4,a"); }) == ErrorKind::Shape);
  CHECK(kind_of([] { parse_shape("-4,4"); }) == ErrorKind::Shape);

  CHECK(element_count({4, 16, 16}) == 1024);
  CHECK(spatial_size({4, 16, 16}) == 256);
  CHECK(shape_to_string({4, 16, 16}) == "(4,16,16)");
}

TEST_CASE("gaussian_sample is seed-deterministic") {
  Rng a(7), b(7), c(8);
  const NoiseTensor x = gaussian_sample({4, 16, 16}, a);
  const NoiseTensor y = gaussian_sample({4, 16, 16}, b);
  const NoiseTensor z = gaussian_sample({4, 16, 16}, c);
  CHECK(x == y);
  CHECK_FALSE(x == z);
  CHECK(a.draws() == b.draws());
  CHECK(a.draws() > 0);
}

TEST_CASE("gaussian_sample moments at 4x64x64") {
  Rng rng(7);
  const NoiseTensor t = gaussian_sample({4, 64, 64}, rng);
  const Moments m = moments(t.values());
  CHECK(m.mean > -0.02);
  CHECK(m.mean < 0.02);
  CHECK(m.stddev > 0.98);
  CHECK(m.stddev < 1.02);
  for (float v : t.values()) REQUIRE(std::isfinite(v));
}

TEST_CASE("gaussian_sample rejects invalid shapes") {
  Rng rng(1);
  CHECK(kind_of([&] { gaussian_sample({}, rng); }) == ErrorKind::Shape);
  CHECK(kind_of([&] { gaussian_sample({1, 2, 3, 4, 5}, rng); }) == ErrorKind::Shape);
}

TEST_CASE("rng stream is pinned") {
  // mt19937_64's sequence is fixed by the standard; the 10000th output of a
  // default-seeded engine is 9981545732273789042.
  std::mt19937_64 ref;
  ref.discard(9999);
  CHECK(ref() == 9981545732273789042ULL);

  Rng rng(0);
  std::mt19937_64 eng(0);
  const double expected = static_cast<double>(eng() >> 11) * 0x1.0p-53;
  CHECK(rng.uniform() == expected);

  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}

TEST_CASE("normal draws match Box-Muller over the engine") {
  Rng rng(42);
  std::mt19937_64 eng(42);
  auto u = [&] { return static_cast<double>(eng() >> 11) * 0x1.0p-53; };
  const double u1 = u(), u2 = u();
  const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
  const double z0 = radius * std::cos(2.0 * std::numbers::pi * u2);
  const double z1 = radius * std::sin(2.0 * std::numbers::pi * u2);
  CHECK(rng.normal() == doctest::Approx(z0).epsilon(1e-15));
  CHECK(rng.normal() == doctest::Approx(z1).epsilon(1e-15));
}

TEST_CASE("standardize examples") {
  const NoiseTensor fixed({1, 2}, std::vector<float>{-1.0f, 1.0f});
  const NoiseTensor s = standardize(fixed);
  CHECK(s[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(s[1] == doctest::Approx(1.0).epsilon(1e-6));

  const NoiseTensor pair({1, 2}, std::vector<float>{1.0f, 3.0f});
  const NoiseTensor p = standardize(pair);
  CHECK(p[0] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(p[1] == doctest::Approx(1.0).epsilon(1e-7));

  CHECK(kind_of([] { standardize(NoiseTensor({2, 4}, 5.0f)); }) == ErrorKind::DegenerateVariance);
  CHECK(kind_of([] { standardize(Tensor64({1, 1}, 2.0)); }) == ErrorKind::DegenerateVariance);
}

TEST_CASE("standardize is global and idempotent") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor64 t = gaussian_sample({3, 5, 7}, rng).cast<double>();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 4.0 * t[i] + (i < 35 ? 10.0 : -3.0);
    const Tensor64 s = standardize(t);
    const Moments m = moments(std::span<const double>(s.values()));
    CHECK(std::abs(m.mean) < 1e-12);
    CHECK(m.stddev == doctest::Approx(1.0).epsilon(1e-12));
    const Tensor64 ss = standardize(s);
    for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(std::abs(ss[i] - s[i]) < 1e-6);
  }
}

TEST_CASE("mse examples and properties") {
  const Shape s{2, 4, 4};
  CHECK(mse(Tensor64(s, 0.0), Tensor64(s, 1.0)) == 1.0);

  Rng rng(11);
  const NoiseTensor a = gaussian_sample(s, rng);
  const NoiseTensor b = gaussian_sample(s, rng);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, b) == mse(b, a));

  double oracle = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    oracle += d * d;
  }
  oracle /= static_cast<double>(a.size());
  CHECK(std::abs(mse(a, b) - oracle) < 1e-7);

  CHECK(kind_of([&] { mse(a, NoiseTensor({2, 4, 3}, 0.0f)); }) == ErrorKind::Shape);
}

TEST_CASE("error messages carry their kind") {
  const Error e(ErrorKind::Truncated, "payload");
  CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  CHECK(e.kind() == ErrorKind::Truncated);
}
