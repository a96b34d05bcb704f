#include <gtest/gtest.h>

#include "causalmm/error.hpp"
#include "causalmm/harness.hpp"
#include "causalmm/rng.hpp"
#include "causalmm/scm.hpp"

using namespace causalmm;

namespace {

// Joint P(a, m, o) of the mutilated graph, enumerated cell by cell without
// going through the library's summation.
std::vector<double> brute_force_do(const DiscreteSCM& s, std::size_t a_star) {
  std::vector<double> out(s.card_o, 0.0);
  for (std::size_t m = 0; m < s.card_m; ++m) {
    for (std::size_t a = 0; a < s.card_a; ++a) {
      const double clamp = a == a_star ? 1.0 : 0.0;
      for (std::size_t o = 0; o < s.card_o; ++o) out[o] += s.p_m[m] * clamp * s.p_o(a, m, o);
    }
  }
  return out;
}

DiscreteSCM binary_scm(Tensor p_m, Tensor p_a_given_m, std::vector<double> p_o) {
  DiscreteSCM s;
  s.p_m = std::move(p_m);
  s.p_a_given_m = std::move(p_a_given_m);
  s.p_o_given_a_m = Tensor({2, 2, 2}, std::move(p_o));
  s.validate();
  return s;
}

void expect_distribution(const Distribution& d) {
  double sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_GE(d[i], 0.0);
    sum += d[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

}  // namespace

TEST(BackdoorAdjust, NoConfoundingInO) {
  // P(o | a, m) independent of m.
  const DiscreteSCM s = binary_scm(Tensor::vector({0.3, 0.7}), Tensor::matrix({{0.6, 0.4}, {0.2, 0.8}}),
                                   {0.9, 0.1, 0.9, 0.1, 0.25, 0.75, 0.25, 0.75});
  for (std::size_t a = 0; a < 2; ++a) {
    const Distribution d = backdoor_adjust(s, a);
    EXPECT_NEAR(d[0], s.p_o(a, 0, 0), 1e-15);
    EXPECT_NEAR(d[1], s.p_o(a, 0, 1), 1e-15);
  }
}

TEST(BackdoorAdjust, PointMassPrior) {
  const DiscreteSCM s = binary_scm(Tensor::vector({0.0, 1.0}), Tensor::matrix({{0.6, 0.4}, {0.2, 0.8}}),
                                   {0.9, 0.1, 0.3, 0.7, 0.5, 0.5, 0.15, 0.85});
  const Distribution d = backdoor_adjust(s, 1);
  EXPECT_EQ(d[0], s.p_o(1, 1, 0));
  EXPECT_EQ(d[1], s.p_o(1, 1, 1));
}

TEST(BackdoorAdjust, MatchesOracleSeed3) {
  const DiscreteSCM s = random_scm(3, 2, 2, 2);
  for (std::size_t a = 0; a < 2; ++a) {
    const Distribution adj = backdoor_adjust(s, a), oracle = intervene_oracle(s, a);
    for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(adj[o], oracle[o], 1e-12);
  }
}

TEST(BackdoorAdjust, IndexError) {
  const DiscreteSCM s = random_scm(1, 3, 2, 2);
  EXPECT_THROW(backdoor_adjust(s, 3), IndexError);
  EXPECT_THROW(intervene_oracle(s, 3), IndexError);
  EXPECT_THROW(observational_conditional(s, 3), IndexError);
}

TEST(InterveneOracle, DeterministicMechanism) {
  DiscreteSCM s = random_scm(2, 4, 3, 3);
  std::vector<double> table(4 * 3 * 3, 0.0);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t m = 0; m < 3; ++m) table[(a * 3 + m) * 3 + a % 3] = 1.0;
  }
  s.p_o_given_a_m = Tensor({4, 3, 3}, table);
  for (std::size_t a = 0; a < 4; ++a) {
    const Distribution d = intervene_oracle(s, a);
    for (std::size_t o = 0; o < 3; ++o) EXPECT_EQ(d[o], o == a % 3 ? 1.0 : 0.0);
  }
}

TEST(InterveneOracle, ThousandRandomScms) {
  SeededRng cards(77);
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const std::size_t ca = 2 + cards.index(4), cm = 2 + cards.index(4), co = 2 + cards.index(4);
    const DiscreteSCM s = random_scm(t, ca, cm, co);
    for (std::size_t a = 0; a < ca; ++a) {
      const Distribution adj = backdoor_adjust(s, a);
      const Distribution oracle = intervene_oracle(s, a);
      const auto brute = brute_force_do(s, a);
      expect_distribution(oracle);
      for (std::size_t o = 0; o < co; ++o) {
        EXPECT_NEAR(adj[o], oracle[o], 1e-12);
        EXPECT_NEAR(brute[o], oracle[o], 1e-12);
      }
    }
  }
}

TEST(ObservationalConditional, EqualsBackdoorWithoutConfounding) {
  // P(a | m) independent of m.
  const DiscreteSCM s =
      binary_scm(Tensor::vector({0.4, 0.6}), Tensor::matrix({{0.3, 0.7}, {0.3, 0.7}}), {0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.05, 0.95});
  for (std::size_t a = 0; a < 2; ++a) EXPECT_LE(total_variation(observational_conditional(s, a), backdoor_adjust(s, a)), 1e-15);
}

TEST(ObservationalConditional, ConfoundedDiffersByHand) {
  const DiscreteSCM s = confounded_scm();
  // P(o=1 | a=0): P(m=1 | a=0) = 0.1, so 0.9 * 0.1 + 0.1 * 0.8 = 0.17.
  // P(o=1 | do(a=0)) = 0.5 * 0.1 + 0.5 * 0.8 = 0.45.
  EXPECT_NEAR(observational_conditional(s, 0)[1], 0.17, 1e-12);
  EXPECT_NEAR(backdoor_adjust(s, 0)[1], 0.45, 1e-12);
  EXPECT_GT(total_variation(observational_conditional(s, 0), backdoor_adjust(s, 0)), 0.05);
}

TEST(ObservationalConditional, PointMassPrior) {
  const DiscreteSCM s = binary_scm(Tensor::vector({1.0, 0.0}), Tensor::matrix({{0.6, 0.4}, {0.2, 0.8}}),
                                   {0.9, 0.1, 0.3, 0.7, 0.5, 0.5, 0.15, 0.85});
  for (std::size_t a = 0; a < 2; ++a) EXPECT_LE(total_variation(observational_conditional(s, a), backdoor_adjust(s, a)), 1e-15);
}

TEST(ObservationalConditional, ZeroProbabilityValue) {
  const DiscreteSCM s = binary_scm(Tensor::vector({0.5, 0.5}), Tensor::matrix({{1.0, 0.0}, {1.0, 0.0}}),
                                   {0.9, 0.1, 0.3, 0.7, 0.5, 0.5, 0.15, 0.85});
  EXPECT_THROW(observational_conditional(s, 1), ConditioningError);
  EXPECT_NO_THROW(backdoor_adjust(s, 1));
}

TEST(RandomScm, DeterministicValidAndSeedSensitive) {
  const DiscreteSCM a = random_scm(5, 3, 4, 5), b = random_scm(5, 3, 4, 5), c = random_scm(6, 3, 4, 5);
  EXPECT_EQ(a.p_o_given_a_m, b.p_o_given_a_m);
  EXPECT_EQ(a.p_m, b.p_m);
  EXPECT_NO_THROW(a.validate());
  EXPECT_NE(a.p_o_given_a_m, c.p_o_given_a_m);
  const DiscreteSCM s1 = random_scm(1, 2, 2, 2), s2 = random_scm(2, 2, 2, 2);
  EXPECT_NE(s1.p_a_given_m, s2.p_a_given_m);
  EXPECT_THROW(random_scm(1, 1, 2, 2), InputError);
}

TEST(RandomScm, DirichletOneMarginalMean) {
  // Each entry of a flat Dirichlet over k cells has mean 1/k.
  double sum = 0.0;
  const int n = 4000;
  for (int s = 0; s < n; ++s) sum += random_scm(static_cast<std::uint64_t>(s), 2, 4, 2).p_m[0];
  EXPECT_NEAR(sum / n, 0.25, 0.01);
}

TEST(DiscreteScm, ValidationAndJson) {
  DiscreteSCM s = random_scm(9, 2, 3, 4);
  nlohmann::json j;
  to_json(j, s);
  const DiscreteSCM back = j.get<DiscreteSCM>();
  EXPECT_EQ(back.p_o_given_a_m, s.p_o_given_a_m);
  EXPECT_EQ(back.card_m, 3u);
  s.p_m[0] += 0.1;
  EXPECT_THROW(s.validate(), InputError);
}

TEST(ScmCheck, SuitePasses) {
  const ScmCheckResult r = run_scm_check(200, 4);
  EXPECT_TRUE(r.passed);
  EXPECT_LE(r.max_abs_diff, 1e-12);
  EXPECT_GT(r.confounded_tv, 0.05);
}
