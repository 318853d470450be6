#include <doctest.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>
#include <set>

#include "ppodiff/guidance.hpp"

using namespace ppodiff;

namespace {

// Q(s, a) = c . a, gradient c everywhere.
class LinearQ final : public ActionValue {
 public:
  explicit LinearQ(RowVector c) : c_(std::move(c)) {}
  Vector values(const Tensor&, const Tensor& a) const override { return a * c_.transpose(); }
  Tensor action_gradient(const Tensor&, const Tensor& a) const override {
    return c_.replicate(a.rows(), 1);
  }

 private:
  RowVector c_;
};

class NanQ final : public ActionValue {
 public:
  Vector values(const Tensor&, const Tensor& a) const override { return Vector::Zero(a.rows()); }
  Tensor action_gradient(const Tensor&, const Tensor& a) const override {
    Tensor g = Tensor::Ones(a.rows(), a.cols());
    g(0, 0) = std::numeric_limits<double>::quiet_NaN();
    return g;
  }
};

ProposalSet toy_proposals(const Vector& q, int K, double beta) {
  ProposalSet p;
  const Eigen::Index n = q.size() / K;
  p.K = K;
  p.beta = beta;
  p.states = Tensor(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.states(i, 0) = static_cast<double>(i);
    p.origin.push_back(10 + 2 * i);
  }
  p.candidates = Tensor(q.size(), 1);
  p.candidates.col(0) = Vector::LinSpaced(q.size(), 0.0, static_cast<double>(q.size() - 1));
  p.q = q;
  p.weights.resize(q.size());
  for (Eigen::Index i = 0; i < n; ++i) p.weights.segment(i * K, K) = energy_weights(q.segment(i * K, K), beta);
  return p;
}

}  // namespace

TEST_SUITE("guidance") {
  TEST_CASE("beta zero gives uniform weights") {
    Vector q(4);
    q << 3, -1, 0.5, 7;
    const Vector w = energy_weights(q, 0.0);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(w(i) == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("softmax arithmetic") {
    Vector q(2);
    q << 0.0, std::log(2.0);
    const Vector w = energy_weights(q, 1.0);
    CHECK(w(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(w(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("large beta approaches one-hot at the argmax") {
    Vector q(3);
    q << 0.1, 0.3, 0.2;
    const Vector w = energy_weights(q, 1e4);
    CHECK(w(1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w(0) < 1e-12);
  }

  TEST_CASE("weights sum to one, are permutation-equivariant and monotone") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int rep = 0; rep < 50; ++rep) {
      Vector q(10);
      for (auto& v : q) v = n(rng);
      const double beta = std::abs(n(rng));
      const Vector w = energy_weights(q, beta);
      CHECK(std::abs(w.sum() - 1.0) < 1e-12);
      std::vector<int> perm(10);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Vector qp(10);
      for (int i = 0; i < 10; ++i) qp(i) = q(perm[i]);
      const Vector wp = energy_weights(qp, beta);
      for (int i = 0; i < 10; ++i) CHECK(wp(i) == doctest::Approx(w(perm[i])).epsilon(1e-12));
      for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
          if (q(i) > q(j)) CHECK(w(i) >= w(j));
        }
      }
    }
    CHECK_THROWS_AS(energy_weights(Vector(), 1.0), ShapeError);
    CHECK_THROWS_AS(energy_weights(Vector::Zero(2), -1.0), DomainError);
  }

  TEST_CASE("zero alpha gives a zero guidance term") {
    LinearQ q(RowVector::Constant(2, 5.0));
    CHECK(guided_step_term(q, Tensor::Zero(3, 1), Tensor::Zero(3, 2), 0.0, 0.1).isZero());
  }

  TEST_CASE("linear critic with a small slope is returned uncapped") {
    RowVector c(2);
    c << 0.03, -0.04;
    LinearQ q(c);
    const Tensor g = guided_step_term(q, Tensor::Zero(2, 1), Tensor::Zero(2, 2), 1.0, 0.1);
    CHECK(g.row(0) == c);
    CHECK(g.row(1) == c);
  }

  TEST_CASE("steep critic is capped at norm 0.1") {
    RowVector c(2);
    c << 300.0, -400.0;
    LinearQ q(c);
    const Tensor g = guided_step_term(q, Tensor::Zero(3, 1), Tensor::Zero(3, 2), 0.3, 0.1);
    for (Eigen::Index i = 0; i < 3; ++i) {
      CHECK(g.row(i).norm() == doctest::Approx(0.1).epsilon(1e-14));
      CHECK(g(i, 0) / g(i, 1) == doctest::Approx(-0.75));
    }
  }

  TEST_CASE("the cap applies after alpha") {
    RowVector c(1);
    c << 0.5;
    LinearQ q(c);
    // alpha * 0.5 = 0.05 < 0.1 although the raw gradient exceeds the cap.
    CHECK(guided_step_term(q, Tensor::Zero(1, 1), Tensor::Zero(1, 1), 0.1, 0.1)(0, 0) ==
          doctest::Approx(0.05).epsilon(1e-15));
  }

  TEST_CASE("non-finite gradient rows are zeroed and counted") {
    NanQ q;
    std::size_t events = 0;
    const Tensor g = guided_step_term(q, Tensor::Zero(3, 1), Tensor::Zero(3, 2), 0.2, 0.1, nullptr, &events);
    CHECK(events == 1);
    CHECK(g.row(0).isZero());
    CHECK(g.row(1).norm() == doctest::Approx(0.2 * std::sqrt(2.0) > 0.1 ? 0.1 : 0.2 * std::sqrt(2.0)));
  }

  TEST_CASE("beta schedule") {
    CHECK(beta_at(0.0) == 0.0);
    CHECK(beta_at(0.15) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(beta_at(0.3) == 1.0);
    CHECK(beta_at(1.0) == 1.0);
    CHECK(beta_at(0.6, 2.0, 0.3) == 2.0);
  }

  TEST_CASE("alpha schedule stays within [0, alpha_max]") {
    CHECK(guidance_alpha(2.0, 2.0, 0.3) == 0.0);
    CHECK(guidance_alpha(1.0, 2.0, 0.3) == doctest::Approx(0.15));
    CHECK(guidance_alpha(0.0, 2.0, 0.3) == 0.3);
    for (double s = 0.01; s <= 2.0; s *= 1.3) {
      const double a = guidance_alpha(s, 2.0, 0.3);
      CHECK(a >= 0.0);
      CHECK(a <= 0.3);
    }
  }

  TEST_CASE("resampling is reproducible under a seed") {
    Vector q = Vector::Zero(12);
    const ProposalSet p = toy_proposals(q, 4, 0.0);
    std::mt19937_64 a(3), b(3);
    const SyntheticBatch x = build_dsyn(p, {FilterMode::resample, 2, 1.0}, 100, a);
    const SyntheticBatch y = build_dsyn(p, {FilterMode::resample, 2, 1.0}, 100, b);
    CHECK(x.candidate == y.candidate);
    CHECK(x.size() == 6);
  }

  TEST_CASE("degenerate weights always draw the first candidate") {
    ProposalSet p = toy_proposals(Vector::Zero(5), 5, 0.0);
    p.weights << 1, 0, 0, 0, 0;
    std::mt19937_64 rng(1);
    const SyntheticBatch d = build_dsyn(p, {FilterMode::resample, 20, 1.0}, 100, rng);
    for (Eigen::Index c : d.candidate) CHECK(c == 0);
  }

  TEST_CASE("top-k with k = K keeps every candidate before the cap") {
    Vector q(6);
    q << 1, 5, 3, 2, 2, 0;
    const ProposalSet p = toy_proposals(q, 3, 1.0);
    std::mt19937_64 rng(1);
    const SyntheticBatch all = build_dsyn(p, {FilterMode::topk, 3, 1.0}, 100, rng);
    CHECK(std::set<Eigen::Index>(all.candidate.begin(), all.candidate.end()).size() == 6);
    const SyntheticBatch capped = build_dsyn(p, {FilterMode::topk, 3, 0.2}, 20, rng);
    CHECK(capped.size() == 4);
  }

  TEST_CASE("top-k breaks ties by lowest index") {
    Vector q(4);
    q << 2, 7, 7, 1;
    const ProposalSet p = toy_proposals(q, 4, 1.0);
    std::mt19937_64 rng(1);
    const SyntheticBatch d = build_dsyn(p, {FilterMode::topk, 1, 1.0}, 100, rng);
    REQUIRE(d.size() == 1);
    CHECK(d.candidate[0] == 1);
  }

  TEST_CASE("share cap truncates by descending weight and tags origins") {
    Vector q(8);
    q << 0, 1, 2, 3, 3, 2, 1, 0;
    const ProposalSet p = toy_proposals(q, 4, 2.0);
    std::mt19937_64 rng(1);
    const SyntheticBatch d = build_dsyn(p, {FilterMode::topk, 4, 0.2}, 15, rng);
    REQUIRE(d.size() == 3);
    // Kept: both q = 3 candidates and the earlier q = 2 one, in selection order
    // (top-k lists each state's candidates by descending Q).
    CHECK(d.candidate == std::vector<Eigen::Index>{3, 2, 4});
    CHECK(d.origin == std::vector<Eigen::Index>{10, 10, 12});
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      CHECK(d.actions(j, 0) == p.candidates(d.candidate[j], 0));
      CHECK(d.states.row(j) == p.states.row(d.candidate[j] / 4));
    }
  }

  TEST_CASE("with beta = 0 the filter draws candidates uniformly") {
    const int K = 8;
    const ProposalSet p = toy_proposals(Vector::LinSpaced(K, -3, 3), K, 0.0);
    std::mt19937_64 rng(5);
    std::vector<double> counts(K, 0.0);
    const int draws = 40000;
    const SyntheticBatch d = build_dsyn(p, {FilterMode::resample, draws, 1.0}, draws, rng);
    for (Eigen::Index c : d.candidate) counts[static_cast<std::size_t>(c)] += 1.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - draws / double(K)) * (c - draws / double(K)) / (draws / double(K));
    CHECK(boost::math::cdf(boost::math::complement(boost::math::chi_squared(K - 1), chi2)) > 0.01);
  }

  TEST_CASE("proposal statistics") {
    Vector q(4);
    q << 0, 1, 2, 4;
    const ProposalSet p = toy_proposals(q, 2, 0.0);
    std::mt19937_64 rng(1);
    const SyntheticBatch d = build_dsyn(p, {FilterMode::topk, 1, 1.0}, 10, rng);
    const ProposalStats s = proposal_stats(p, d);
    CHECK(s.q_mean_uniform == doctest::Approx(1.75));
    CHECK(s.q_mean_weighted == doctest::Approx(1.75));
    CHECK(s.acceptance == doctest::Approx(0.5));
  }
}
