#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "lanhar/error.hpp"
#include "lanhar/losses.hpp"
#include "lanhar/nn/layers.hpp"
#include "lanhar/util.hpp"
#include "../support/gradcheck.hpp"

using namespace lanhar;
using nn::Matrix;

namespace {

double scalar(nn::Tape& t, nn::Var v) { return t.value(v)(0, 0); }

Matrix random_rows(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  Eigen::VectorXd a(3), b(3);
  a << 1, 0, 0;
  b << 0, 1, 0;
  CHECK(losses::cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(losses::cosine_similarity(a, a) == doctest::Approx(1.0));
  b << -2, 0, 0;
  CHECK(losses::cosine_similarity(a, b) == doctest::Approx(-1.0));
  Eigen::VectorXd c(2);
  c << 1, 1;
  CHECK_THROWS_AS(losses::cosine_similarity(a, c), Error);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(losses::cosine_similarity(a, z), Error);
}

TEST_CASE("alignment loss is zero for a single perfectly aligned pair") {
  nn::Tape t;
  Matrix v(1, 4);
  v << 0.3, -1.2, 0.05, 2.0;
  auto h = t.input(v);
  auto z = t.input(v);
  CHECK(scalar(t, losses::loss_align(t, h, z, 1.0)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("alignment loss matches the two-pair orthogonal oracle") {
  // H == Z, rows orthonormal, tau = 1: every row of S/tau is [1,0] or [0,1],
  // so each CE term is ln(1 + e^{-1}) and the total is 2 ln(1 + e^{-1}).
  nn::Tape t;
  Matrix m(2, 2);
  m << 1, 0, 0, 1;
  auto h = t.input(m);
  auto z = t.input(m);
  const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
  CHECK(scalar(t, losses::loss_align(t, h, z, 1.0)) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.6265).epsilon(1e-3));
}

TEST_CASE("alignment loss is invariant to row rescaling") {
  Matrix h = random_rows(4, 8, 11);
  Matrix z = random_rows(4, 8, 12);
  nn::Tape t1;
  double base = scalar(t1, losses::loss_align(t1, t1.input(h), t1.input(z), 0.07));
  Matrix h2 = h;
  Matrix z2 = z;
  for (int i = 0; i < 4; ++i) {
    h2.row(i) *= (1.0 + i) * 3.7;
    z2.row(i) *= 0.2 + 0.1 * i;
  }
  nn::Tape t2;
  double scaled = scalar(t2, losses::loss_align(t2, t2.input(h2), t2.input(z2), 0.07));
  CHECK(scaled == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("alignment loss is symmetric under consistent row permutation") {
  Matrix h = random_rows(5, 6, 21);
  Matrix z = random_rows(5, 6, 22);
  nn::Tape t1;
  double base = scalar(t1, losses::loss_align(t1, t1.input(h), t1.input(z), 0.5));
  std::vector<int> perm = {3, 0, 4, 1, 2};
  Matrix hp(5, 6), zp(5, 6);
  for (int i = 0; i < 5; ++i) {
    hp.row(i) = h.row(perm[i]);
    zp.row(i) = z.row(perm[i]);
  }
  nn::Tape t2;
  double permuted = scalar(t2, losses::loss_align(t2, t2.input(hp), t2.input(zp), 0.5));
  CHECK(permuted == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("alignment loss is positive when pairs are distinct") {
  Matrix h = random_rows(3, 4, 31);
  nn::Tape t;
  double v = scalar(t, losses::loss_align(t, t.input(h), t.input(h), 0.07));
  CHECK(v > 0.0);
}

TEST_CASE("alignment loss validates its arguments") {
  nn::Tape t;
  auto h = t.input(random_rows(2, 3, 41));
  auto z3 = t.input(random_rows(3, 3, 42));
  CHECK_THROWS_AS(losses::loss_align(t, h, z3, 1.0), Error);
  auto zw = t.input(random_rows(2, 4, 43));
  CHECK_THROWS_AS(losses::loss_align(t, h, zw, 1.0), Error);
  auto z = t.input(random_rows(2, 3, 44));
  CHECK_THROWS_AS(losses::loss_align(t, h, z, 0.0), Error);
  CHECK_THROWS_AS(losses::loss_align(t, h, z, -0.1), Error);
}

TEST_CASE("pairwise margin oracles") {
  // softplus(-x) = -ln sigmoid(x)
  auto neg_log_sigmoid = [](double x) { return std::log1p(std::exp(-x)); };
  CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(neg_log_sigmoid(0.8) == doctest::Approx(0.3711).epsilon(1e-3));
  CHECK(neg_log_sigmoid(1.0) == doctest::Approx(0.3133).epsilon(1e-3));

  // Two same-group unit vectors with sim 1, cross sim 0 -> -ln sigmoid(1).
  nn::Tape t;
  Matrix e(3, 2);
  e << 1, 0, 1, 0, 0, 1;  // rows 0,1 identical (group a), row 2 orthogonal (group b)
  auto ev = t.input(e);
  std::vector<losses::Triple> triples = {{0, 1, 2}};
  auto term = losses::loss_pairwise_triples(t, ev, triples);
  CHECK(scalar(t, term) == doctest::Approx(neg_log_sigmoid(1.0)).epsilon(1e-12));

  // Same-pair similarity equal to cross similarity -> sigma(0) -> ln 2.
  Matrix e2(3, 2);
  e2 << 1, 0, 0, 1, 0, 1;  // sim(0,1) = 0 and sim(0,2) = 0, so the margin is 0
  nn::Tape t2;
  std::vector<losses::Triple> tr = {{0, 1, 2}};
  CHECK(scalar(t2, losses::loss_pairwise_triples(t2, t2.input(e2), tr)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("triple enumeration is exhaustive below the cap and capped above it") {
  std::vector<int> groups = {0, 0, 0, 1, 1};
  Rng rng(1);
  auto triples = losses::group_triples(groups, 1000, rng);
  // Ordered same pairs in group 0: 3*2 = 6, each with 2 cross rows -> 12.
  // Ordered same pairs in group 1: 2*1 = 2, each with 3 cross rows -> 6.
  CHECK(triples.size() == 18);
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& tr : triples) {
    CHECK(groups[tr.same_a] == groups[tr.same_b]);
    CHECK(groups[tr.cross] != groups[tr.same_a]);
    CHECK(tr.same_a != tr.same_b);
    seen.insert({tr.same_a, tr.same_b, tr.cross});
  }
  CHECK(seen.size() == 18);

  Rng rng2(2);
  auto capped = losses::group_triples(groups, 4, rng2);
  CHECK(capped.size() == 4);
  std::set<std::tuple<int, int, int>> unique_capped;
  for (const auto& tr : capped) unique_capped.insert({tr.same_a, tr.same_b, tr.cross});
  CHECK(unique_capped.size() == 4);  // sampled without replacement

  Rng rng3(2);
  auto capped_again = losses::group_triples(groups, 4, rng3);
  REQUIRE(capped_again.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(capped_again[i].same_a == capped[i].same_a);
    CHECK(capped_again[i].same_b == capped[i].same_b);
    CHECK(capped_again[i].cross == capped[i].cross);
  }
}

TEST_CASE("category term matches brute-force enumeration") {
  Matrix e = random_rows(6, 5, 51);
  std::vector<int> cats = {0, 0, 0, 1, 1, 2};
  nn::Tape t;
  Rng rng(3);
  auto term = losses::loss_pairwise_category(t, t.input(e), cats, 1000, rng);
  REQUIRE_FALSE(term.skipped);

  // Brute force: normalize rows, enumerate every ordered (same pair, cross)
  // triple, and average the margins.
  Matrix n = e;
  for (int i = 0; i < n.rows(); ++i) n.row(i) /= n.row(i).norm();
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      if (j == i || cats[i] != cats[j]) continue;
      for (int k = 0; k < 6; ++k) {
        if (cats[k] == cats[i]) continue;
        double s_same = n.row(i).dot(n.row(j));
        double s_cross = n.row(i).dot(n.row(k));
        total += std::log1p(std::exp(-(s_same - s_cross)));
        ++count;
      }
    }
  REQUIRE(count > 0);
  CHECK(scalar(t, term.loss) == doctest::Approx(total / count).epsilon(1e-10));
}

TEST_CASE("degenerate groupings are skipped with a zero term") {
  Matrix e = random_rows(3, 4, 61);
  nn::Tape t;
  Rng rng(4);
  // All same category: no cross candidates.
  auto all_same = losses::loss_pairwise_category(t, t.input(e), {0, 0, 0}, 10, rng);
  CHECK(all_same.skipped);
  CHECK(scalar(t, all_same.loss) == 0.0);
  // All distinct: no same pairs.
  auto all_diff = losses::loss_pairwise_category(t, t.input(e), {0, 1, 2}, 10, rng);
  CHECK(all_diff.skipped);
  CHECK(scalar(t, all_diff.loss) == 0.0);
}

TEST_CASE("total text loss composes the weighted sum") {
  CHECK(losses::loss_text_total(1.0, 0.5, 0.5, 0.5, 2.0, 0.1, 0.01) ==
        doctest::Approx(1.17).epsilon(1e-12));
  CHECK(losses::loss_text_total(1.0, 0.5, 0.5, 0.5, 2.0, 0.0, 0.0) == doctest::Approx(1.0));
  CHECK(losses::loss_text_total(0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.01) == doctest::Approx(0.0));
}

TEST_CASE("alignment loss gradient check") {
  Rng rng(71);
  nn::Parameter ph("h", nn::normal_init(4, 6, rng, 1.0));
  nn::Parameter pz("z", nn::normal_init(4, 6, rng, 1.0));
  double worst = testing::grad_check(
      [&](nn::Tape& t) {
        return losses::loss_align(t, t.param(ph), t.param(pz), 0.07);
      },
      {&ph, &pz});
  CHECK(worst < 1e-4);
}

TEST_CASE("category loss gradient check") {
  Rng rng(72);
  nn::Parameter pe("e", nn::normal_init(5, 4, rng, 1.0));
  std::vector<int> cats = {0, 0, 1, 1, 2};
  double worst = testing::grad_check(
      [&](nn::Tape& t) {
        Rng trip_rng(9);
        auto term = losses::loss_pairwise_category(t, t.param(pe), cats, 64, trip_rng);
        return term.loss;
      },
      {&pe});
  CHECK(worst < 1e-4);
}

TEST_CASE("label variant loss gradient check") {
  Rng rng(73);
  nn::Parameter pe("e", nn::normal_init(6, 4, rng, 1.0));
  std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  double worst = testing::grad_check(
      [&](nn::Tape& t) {
        Rng trip_rng(10);
        auto term = losses::loss_label_variants(t, t.param(pe), labels, 64, trip_rng);
        return term.loss;
      },
      {&pe});
  CHECK(worst < 1e-4);
}

TEST_CASE("frozen-target loss shares the paired-alignment oracles") {
  // Single pair: zero.
  nn::Tape t1;
  Matrix e1(1, 3);
  e1 << 0.2, -0.4, 1.0;
  CHECK(scalar(t1, losses::loss_sensor(t1, t1.input(e1), e1, 1.0)) ==
        doctest::Approx(0.0).epsilon(1e-12));

  // Two orthonormal pairs at tau = 1: 2 ln(1 + e^{-1}).
  nn::Tape t2;
  Matrix e2(2, 2);
  e2 << 1, 0, 0, 1;
  const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
  CHECK(scalar(t2, losses::loss_sensor(t2, t2.input(e2), e2, 1.0)) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sensor alignment loss gradient check and target freeze") {
  Rng rng(74);
  nn::Parameter pe("e", nn::normal_init(3, 5, rng, 1.0));
  Matrix z = random_rows(3, 5, 75);
  double worst = testing::grad_check(
      [&](nn::Tape& t) { return losses::loss_sensor(t, t.param(pe), z, 0.07); },
      {&pe});
  CHECK(worst < 1e-4);

  // The closed-over targets are constants: loss value must not depend on any
  // parameter other than e, and the tape must hold z as a plain input.
  nn::Tape t;
  auto loss = losses::loss_sensor(t, t.param(pe), z, 0.07);
  t.backward(loss);
  CHECK(pe.grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("retrieval ranking is unchanged by embedding scale") {
  Matrix e = random_rows(4, 8, 81);
  Matrix z = random_rows(4, 8, 82);
  auto nearest = [](const Matrix& queries, const Matrix& keys) {
    std::vector<int> out;
    for (int i = 0; i < queries.rows(); ++i) {
      int best = 0;
      double best_sim = -2.0;
      for (int j = 0; j < keys.rows(); ++j) {
        double sim = queries.row(i).dot(keys.row(j)) /
                     (queries.row(i).norm() * keys.row(j).norm());
        if (sim > best_sim) {
          best_sim = sim;
          best = j;
        }
      }
      out.push_back(best);
    }
    return out;
  };
  auto base = nearest(e, z);
  Matrix e_scaled = e * 17.0;
  CHECK(nearest(e_scaled, z) == base);
}
