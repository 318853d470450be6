#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "ppodiff/evalstats.hpp"

using namespace ppodiff;
namespace fs = std::filesystem;

namespace {

LearningCurve curve(std::vector<std::pair<double, double>> pts) {
  LearningCurve c;
  for (auto [s, r] : pts) c.add(s, r);
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ppodiff_unit_evalstats";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("evalstats") {
  TEST_CASE("ALC of a flat curve is the constant") {
    CHECK(alc_at_t(curve({{0, 3.5}, {10, 3.5}, {25, 3.5}}), 25) == 3.5);
  }

  TEST_CASE("ALC of a linear ramp is one half") {
    CHECK(alc_at_t(curve({{0, 0}, {100, 1}}), 100) == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("ALC matches a manual trapezoid sum") {
    const LearningCurve c = curve({{0, -10}, {2, -6}, {5, -7}, {9, -2}, {10, 1}});
    const double area = (2 * (-10 + -6) + 3 * (-6 + -7) + 4 * (-7 + -2) + 1 * (-2 + 1)) / 2.0;
    CHECK(std::abs(alc_at_t(c, 10) - area / 10.0) < 1e-12);
    // Truncation at T = 7 interpolates R(7) = -4.5 between steps 5 and 9.
    const double part = (2 * (-10 + -6) + 3 * (-6 + -7) + 2 * (-7 + -4.5)) / 2.0;
    CHECK(std::abs(alc_at_t(c, 7) - part / 7.0) < 1e-12);
  }

  TEST_CASE("ALC ignores redundant collinear points") {
    const LearningCurve a = curve({{0, 1}, {10, 3}, {20, -1}});
    const LearningCurve b = curve({{0, 1}, {2.5, 1.5}, {5, 2}, {10, 3}, {12, 2.2}, {20, -1}});
    CHECK(alc_at_t(a, 20) == doctest::Approx(alc_at_t(b, 20)).epsilon(1e-14));
    CHECK(alc_at_t(a, 14) == doctest::Approx(alc_at_t(b, 14)).epsilon(1e-14));
  }

  TEST_CASE("ALC needs two points before T") {
    CHECK_THROWS_AS(alc_at_t(curve({{0, 1}}), 10), InsufficientData);
    CHECK_THROWS_AS(alc_at_t(curve({{0, 1}, {20, 2}}), 10), InsufficientData);
    CHECK_THROWS_AS(curve({{0, 1}, {0, 2}}), DomainError);
  }

  TEST_CASE("final return averages the trailing fraction") {
    LearningCurve c;
    for (int i = 0; i < 20; ++i) c.add(i, i);
    CHECK(final_return(c, 0.1) == 18.5);
    CHECK(final_return(c, 0.0) == 19.0);
  }

  TEST_CASE("Wilcoxon examples") {
    const std::vector<double> x = {1, 2, 3, 4, 5};
    CHECK(wilcoxon_paired(x, x).p_value == 1.0);
    CHECK(wilcoxon_paired(x, x).n_used == 0);
    const WilcoxonResult r = wilcoxon_paired({2, 3, 4, 5, 6}, {1, 1, 1, 1, 1});
    CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-15));
    CHECK(r.w_plus == 15.0);
    CHECK(r.w_minus == 0.0);
    CHECK_THROWS_AS(wilcoxon_paired({1, 2}, {0, 0}), InsufficientData);
    CHECK_THROWS_AS(wilcoxon_paired({1, 2, 3}, {0, 0}), ShapeError);
  }

  TEST_CASE("Wilcoxon matches the n = 10 critical table entry") {
    // Negative ranks {1, 3, 4}: W- = 8, P(W <= 8) = 25 / 1024 one-sided.
    std::vector<double> d;
    for (int i = 1; i <= 10; ++i) d.push_back((i == 1 || i == 3 || i == 4) ? -i : i);
    const WilcoxonResult r = wilcoxon_paired(d, std::vector<double>(10, 0.0));
    CHECK(r.statistic == 8.0);
    CHECK(r.p_value == doctest::Approx(50.0 / 1024.0).epsilon(1e-15));
  }

  TEST_CASE("Wilcoxon matches sign enumeration and is symmetric") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.3, 1.0);
    std::uniform_int_distribution<int> tie(0, 3);
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t len = 3 + rep % 8;
      std::vector<double> x(len), y(len);
      for (std::size_t i = 0; i < len; ++i) {
        y[i] = 0.0;
        // Rounding forces ties and occasional zero differences.
        x[i] = rep % 2 ? std::round(n(rng) * 2.0) / 2.0 : n(rng);
        if (tie(rng) == 0) x[i] = y[i];
      }
      const WilcoxonResult r = wilcoxon_paired(x, y);
      CHECK(r.p_value == doctest::Approx(testutil::wilcoxon_enumerated(x, y)).epsilon(1e-12));
      CHECK(wilcoxon_paired(y, x).p_value == r.p_value);
    }
  }

  TEST_CASE("Spearman perfect relations") {
    const std::vector<double> x = {1, 4, 9, 10, 20};
    std::vector<double> neg;
    for (double v : x) neg.push_back(-v);
    CHECK(spearman_rho(x, x).rho == doctest::Approx(1.0));
    CHECK(spearman_rho(x, neg).rho == doctest::Approx(-1.0));
  }

  TEST_CASE("Spearman with ties matches the rank-then-Pearson oracle") {
    const std::vector<double> x = {1, 2, 2, 3, 5, 5, 5, 8};
    const std::vector<double> y = {2, 1, 4, 4, 3, 7, 7, 6};
    CHECK(spearman_rho(x, y).rho == doctest::Approx(testutil::rank_pearson(x, y)).epsilon(1e-14));
    CHECK(mid_ranks({10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  }

  TEST_CASE("Spearman is invariant to monotone transforms") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    std::vector<double> x(30), y(30), fx(30), gy(30);
    for (int i = 0; i < 30; ++i) {
      x[i] = n(rng);
      y[i] = x[i] + n(rng);
      fx[i] = std::exp(x[i]);
      gy[i] = y[i] * y[i] * y[i] - 4.0;
    }
    CHECK(spearman_rho(fx, gy).rho == doctest::Approx(spearman_rho(x, y).rho).epsilon(1e-14));
  }

  TEST_CASE("Spearman on constant input is flagged undefined") {
    const SpearmanResult r = spearman_rho(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    CHECK_FALSE(r.defined);
    CHECK(r.rho == 0.0);
    CHECK_THROWS_AS(spearman_rho(std::vector<double>{1}, std::vector<double>{1}), InsufficientData);
  }

  TEST_CASE("Student-t interval") {
    // n = 4, mean 2.5, sd sqrt(5/3), t_{0.975, 3} = 3.182446305284263.
    const ConfidenceInterval ci = student_t_ci({1, 2, 3, 4});
    CHECK(ci.mean == 2.5);
    CHECK(ci.half_width == doctest::Approx(3.182446305284263 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-12));
    const ConfidenceInterval one = student_t_ci({7});
    CHECK(one.degenerate);
    CHECK(one.half_width == 0.0);
  }

  TEST_CASE("quantiles and box summary") {
    const BoxSummary b = box_summary({5, 1, 4, 2, 3});
    CHECK(b.min == 1);
    CHECK(b.q1 == 2);
    CHECK(b.median == 3);
    CHECK(b.q3 == 4);
    CHECK(b.max == 5);
    CHECK(quantile({0, 10}, 0.25) == 2.5);
  }

  TEST_CASE("run log and curve CSV round-trip") {
    const fs::path log = scratch("runlog.csv");
    {
      RunLogWriter w(log);
      RunLogRow r;
      r.iteration = 1;
      r.k_policy = 0.0123456789012345;
      r.pet_events = 2;
      w.append(r);
      r.iteration = 2;
      r.src_synthetic = 7;
      w.append(r);
    }
    auto cols = read_numeric_csv(log);
    CHECK(cols.size() == RunLogWriter::columns().size());
    CHECK(cols["iteration"] == std::vector<double>{1, 2});
    CHECK(cols["k_policy"][0] == 0.0123456789012345);
    CHECK(cols["src_synthetic"][1] == 7);

    const fs::path cpath = scratch("curve.csv");
    write_curve_csv(cpath, {{0, -3.25, 1.0, 0.1}, {500, -1.0, 0.5, 0.2}});
    const LearningCurve c = read_curve(cpath);
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[1].step == 500);
    CHECK(c.points[0].mean_return == -3.25);
    CHECK_THROWS_AS(read_curve(log), IOError);
    CHECK_THROWS_AS(read_numeric_csv(scratch("missing.csv")), IOError);
  }
}
