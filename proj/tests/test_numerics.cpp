#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "p2prisk/csv.hpp"
#include "p2prisk/numerics.hpp"

using namespace p2prisk;
using Catch::Approx;

TEST_CASE("rng matches the published reference stream") {
  // Known-answer vectors for the SplitMix64 update, frozen here and in README.
  Rng zero(0);
  CHECK(zero.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(zero.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(zero.next_u64() == 0x06c45d188009454fULL);

  Rng seeded(42);
  CHECK(seeded.next_u64() == 0xbdd732262feb6e95ULL);
  CHECK(seeded.next_u64() == 0x28efe333b266f103ULL);
  CHECK(seeded.next_u64() == 0x47526757130f9f52ULL);
}

TEST_CASE("rng uniform stream is deterministic and in range") {
  Rng rng(123);
  CHECK(rng.uniform() == Approx(0.7064912217637067).epsilon(0).margin(0));
  CHECK(rng.uniform() == Approx(0.976596648325027).epsilon(0).margin(0));
  CHECK(rng.uniform() == Approx(0.8596622389336012).epsilon(0).margin(0));

  Rng bounds(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = bounds.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  Rng ranged(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = ranged.uniform(-2.0, 5.0);
    REQUIRE(u >= -2.0);
    REQUIRE(u < 5.0);
  }
}

TEST_CASE("rng normal has roughly standard moments") {
  Rng rng(2024);
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(var == Approx(1.0).margin(0.02));
}

TEST_CASE("rng below is in range and covers all residues") {
  Rng rng(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t v = rng.below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
  CHECK(rng.below(1) == 0);
}

TEST_CASE("split yields an independent deterministic child stream") {
  Rng a(77);
  Rng b(77);
  Rng child_a = a.split();
  Rng child_b = b.split();
  for (int i = 0; i < 16; ++i) REQUIRE(child_a.next_u64() == child_b.next_u64());
  // The parent stream continues past the split point identically.
  for (int i = 0; i < 16; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("shuffle is a seeded permutation") {
  std::vector<int> items(20);
  std::iota(items.begin(), items.end(), 0);
  std::vector<int> copy = items;

  Rng rng(31);
  shuffle(rng, items);
  CHECK(items != copy);  // 20! makes identity astronomically unlikely
  std::vector<int> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == copy);

  std::vector<int> again(20);
  std::iota(again.begin(), again.end(), 0);
  Rng rng2(31);
  shuffle(rng2, again);
  CHECK(again == items);
}

TEST_CASE("matrix construction validates shape and rejects non-finite data") {
  Matrix m(2, 3, 1.5);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 1.5);

  CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Matrix(2, 2, std::nan("")), std::invalid_argument);

  const Matrix eye = Matrix::identity(3);
  CHECK(eye(0, 0) == 1.0);
  CHECK(eye(0, 1) == 0.0);
  CHECK(eye(2, 2) == 1.0);
}

TEST_CASE("matvec and friends match hand calculations") {
  const Matrix m(2, 3, {1, 2, 3, 4, 5, 6});
  const Vector v{1, 0, -1};
  const Vector mv = matvec(m, v);
  REQUIRE(mv.size() == 2);
  CHECK(mv[0] == -2.0);  // 1 - 3
  CHECK(mv[1] == -2.0);  // 4 - 6

  const Vector w{1, 2};
  const Vector mtw = matvec_transpose(m, w);
  REQUIRE(mtw.size() == 3);
  CHECK(mtw[0] == 9.0);   // 1 + 8
  CHECK(mtw[1] == 12.0);  // 2 + 10
  CHECK(mtw[2] == 15.0);  // 3 + 12

  Matrix acc(2, 2);
  add_outer(acc, {1, 2}, {3, 4});
  CHECK(acc(0, 0) == 3.0);
  CHECK(acc(0, 1) == 4.0);
  CHECK(acc(1, 0) == 6.0);
  CHECK(acc(1, 1) == 8.0);

  CHECK(hadamard({1, 2}, {3, 4}) == Vector{3, 8});
  Vector t{1, 1};
  add_in_place(t, {2, 3});
  CHECK(t == Vector{3, 4});

  CHECK_THROWS_AS(matvec(m, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(matvec_transpose(m, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(add_outer(acc, {1, 2, 3}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(hadamard({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("sigmoid is stable and matches known values") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(0.5) == Approx(0.6224593312018546).epsilon(1e-15));
  CHECK(sigmoid(-0.5) == Approx(1.0 - 0.6224593312018546).epsilon(1e-15));
  // Extreme inputs saturate without overflow or NaN.
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(std::isfinite(sigmoid(-1e308)));

  CHECK(apply_activation(Activation::sigmoid, 0.5) == sigmoid(0.5));
  CHECK(apply_activation(Activation::tanh, 0.75) == Approx(0.6351489523872873).epsilon(1e-15));
  CHECK(apply_activation(Activation::linear, 1.25) == 1.25);

  const Vector out = activation_apply(Activation::tanh, {0.0, 0.75});
  CHECK(out[0] == 0.0);
  CHECK(out[1] == Approx(0.6351489523872873).epsilon(1e-15));
}

TEST_CASE("glorot init respects the fan-based bound and the seed") {
  Rng rng(11);
  const std::size_t rows = 8, cols = 5;
  const Matrix m = glorot_init(rng, rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double v : m.data()) {
    REQUIRE(std::abs(v) <= limit);
  }
  Rng rng2(11);
  const Matrix m2 = glorot_init(rng2, rows, cols);
  CHECK(m.data() == m2.data());
  CHECK_THROWS_AS(glorot_init(rng, 0, 3), std::invalid_argument);
}

TEST_CASE("adam follows the bias-corrected trajectory") {
  // Oracle: hand iteration of the update rule with constant gradient 0.5.
  AdamState state(1);
  Vector params{1.0};
  adam_step(state, params, {0.5});
  CHECK(params[0] == Approx(0.9990000001999999).epsilon(0).margin(1e-15));
  adam_step(state, params, {0.5});
  CHECK(params[0] == Approx(0.9980000003999999).epsilon(0).margin(1e-15));
  adam_step(state, params, {0.5});
  CHECK(params[0] == Approx(0.9970000005999999).epsilon(0).margin(1e-15));
  CHECK(state.step_count == 3);
}

TEST_CASE("adam first step size is learning-rate bounded per coordinate") {
  AdamState state(3, 0.01);
  Vector params{1.0, -2.0, 0.5};
  const Vector before = params;
  adam_step(state, params, {100.0, -0.004, 1e-9});
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(std::abs(params[i] - before[i]) <= 0.01 + 1e-12);
  }
  // Zero gradient leaves the coordinate untouched.
  AdamState zero_state(1);
  Vector p{3.0};
  adam_step(zero_state, p, {0.0});
  CHECK(p[0] == 3.0);
}

TEST_CASE("finite differences recover simple analytic gradients") {
  const auto quadratic = [](const Vector& x) { return x[0] * x[0] + 3.0 * x[1]; };
  const Vector grad = finite_diff_gradient(quadratic, {2.0, -1.0});
  CHECK(grad[0] == Approx(4.0).margin(1e-8));
  CHECK(grad[1] == Approx(3.0).margin(1e-8));

  const auto cubic = [](const Vector& x) { return x[0] * x[0] * x[0]; };
  CHECK(finite_diff_gradient(cubic, {1.5})[0] == Approx(6.75).margin(1e-6));
  CHECK_THROWS_AS(finite_diff_gradient(cubic, {1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("csv parser handles quoting, newlines, and crlf") {
  std::istringstream in(
      "id,note,amount\r\n"
      "a,\"hello, world\",1.5\n"
      "\n"
      "b,\"line\nbreak\",2\n"
      "c,\"doubled \"\"quotes\"\"\",3\n");
  const CsvTable table = read_csv(in);
  REQUIRE(table.header == std::vector<std::string>{"id", "note", "amount"});
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0][1] == "hello, world");
  CHECK(table.rows[1][1] == "line\nbreak");
  CHECK(table.rows[2][1] == "doubled \"quotes\"");
}

TEST_CASE("csv parser rejects malformed input") {
  std::istringstream empty("");
  CHECK_THROWS_AS(read_csv(empty), data_error);
  std::istringstream unterminated("a,b\n\"open,2\n");
  CHECK_THROWS_AS(read_csv(unterminated), data_error);
}

TEST_CASE("csv_escape quotes only when needed") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("with,comma") == "\"with,comma\"");
  CHECK(csv_escape("with\nnewline") == "\"with\nnewline\"");
  CHECK(csv_escape("with \"quote\"") == "\"with \"\"quote\"\"\"");
}

TEST_CASE("format_double round-trips through parse_double") {
  Rng rng(404);
  for (int i = 0; i < 2000; ++i) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-12.0, 12.0));
    const auto parsed = parse_double(format_double(x));
    REQUIRE(parsed.has_value());
    REQUIRE(*parsed == x);
  }
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(1.5) == "1.5");
}

TEST_CASE("parse_double accepts full numeric fields only") {
  CHECK(parse_double("1.25") == 1.25);
  CHECK(parse_double("  -3e2 ") == -300.0);
  CHECK_FALSE(parse_double("").has_value());
  CHECK_FALSE(parse_double("abc").has_value());
  CHECK_FALSE(parse_double("1.5x").has_value());
  CHECK_FALSE(parse_double("1.5 2.0").has_value());
  // Non-finite spellings are treated as missing, not as data.
  CHECK_FALSE(parse_double("nan").has_value());
  CHECK_FALSE(parse_double("inf").has_value());
}

TEST_CASE("trim strips ascii whitespace") {
  CHECK(trim("  x  ") == "x");
  CHECK(trim("\t a b \r\n") == "a b");
  CHECK(trim("") == "");
  CHECK(trim("   ") == "");
}
