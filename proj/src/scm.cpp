#include "causalmm/scm.hpp"

#include <cmath>
#include <string>

#include "causalmm/error.hpp"
#include "causalmm/rng.hpp"

namespace causalmm {

namespace {

constexpr double kProbTol = 1e-12;

void check_rows(const Tensor& t, std::size_t row_len, const char* name) {
  if (t.size() % row_len != 0) throw InputError(std::string(name) + " has a partial row");
  for (std::size_t start = 0; start < t.size(); start += row_len) {
    double sum = 0.0;
    for (std::size_t i = 0; i < row_len; ++i) {
      const double p = t[start + i];
      if (p < 0.0) throw InputError(std::string(name) + " has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTol) throw InputError(std::string(name) + " row does not sum to 1");
  }
}

void check_outcome(const DiscreteSCM& scm, std::size_t a) {
  if (a >= scm.card_a) {
    throw IndexError("value " + std::to_string(a) + " outside attention cardinality " + std::to_string(scm.card_a));
  }
}

void dirichlet_row(SeededRng& rng, std::span<double> row) {
  double sum = 0.0;
  for (double& v : row) {
    v = -std::log(1.0 - rng.uniform());
    sum += v;
  }
  for (double& v : row) v /= sum;
}

}  // namespace

void DiscreteSCM::validate() const {
  if (card_a < 2 || card_m < 2 || card_o < 2) throw InputError("SCM cardinalities must be >= 2");
  if (p_m.size() != card_m || p_a_given_m.size() != card_m * card_a || p_o_given_a_m.size() != card_a * card_m * card_o) {
    throw DimensionError("SCM table sizes do not match cardinalities");
  }
  check_rows(p_m, card_m, "p_m");
  check_rows(p_a_given_m, card_a, "p_a_given_m");
  check_rows(p_o_given_a_m, card_o, "p_o_given_a_m");
}

void to_json(nlohmann::json& j, const DiscreteSCM& scm) {
  j = nlohmann::json{{"card_a", scm.card_a},
                     {"card_m", scm.card_m},
                     {"card_o", scm.card_o},
                     {"p_m", scm.p_m.values()},
                     {"p_a_given_m", scm.p_a_given_m.values()},
                     {"p_o_given_a_m", scm.p_o_given_a_m.values()}};
}

void from_json(const nlohmann::json& j, DiscreteSCM& scm) {
  try {
    scm.card_a = j.at("card_a").get<std::size_t>();
    scm.card_m = j.at("card_m").get<std::size_t>();
    scm.card_o = j.at("card_o").get<std::size_t>();
    auto table = [&](const char* key, Shape shape) {
      return Tensor(std::move(shape), j.at(key).get<std::vector<double>>());
    };
    scm.p_m = table("p_m", {scm.card_m});
    scm.p_a_given_m = table("p_a_given_m", {scm.card_m, scm.card_a});
    scm.p_o_given_a_m = table("p_o_given_a_m", {scm.card_a, scm.card_m, scm.card_o});
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed SCM: ") + e.what());
  }
  scm.validate();
}

double total_variation(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw DimensionError("distributions differ in support size");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

Distribution backdoor_adjust(const DiscreteSCM& scm, std::size_t a) {
  check_outcome(scm, a);
  Tensor out({scm.card_o});
  for (std::size_t m = 0; m < scm.card_m; ++m) {
    for (std::size_t o = 0; o < scm.card_o; ++o) out[o] += scm.p_o(a, m, o) * scm.p_m[m];
  }
  return Distribution{std::move(out)};
}

Distribution intervene_oracle(const DiscreteSCM& scm, std::size_t a) {
  check_outcome(scm, a);
  // Joint of the mutilated model: P*(m, a', o) = P(m) [a' = a] P(o | a', m).
  Tensor joint({scm.card_m, scm.card_a, scm.card_o});
  for (std::size_t m = 0; m < scm.card_m; ++m) {
    for (std::size_t ap = 0; ap < scm.card_a; ++ap) {
      const double clamp = ap == a ? 1.0 : 0.0;
      for (std::size_t o = 0; o < scm.card_o; ++o) {
        joint[(m * scm.card_a + ap) * scm.card_o + o] = scm.p_m[m] * clamp * scm.p_o(ap, m, o);
      }
    }
  }
  Tensor out({scm.card_o});
  for (std::size_t m = 0; m < scm.card_m; ++m) {
    for (std::size_t ap = 0; ap < scm.card_a; ++ap) {
      for (std::size_t o = 0; o < scm.card_o; ++o) out[o] += joint[(m * scm.card_a + ap) * scm.card_o + o];
    }
  }
  return Distribution{std::move(out)};
}

Distribution observational_conditional(const DiscreteSCM& scm, std::size_t a) {
  check_outcome(scm, a);
  double p_a = 0.0;
  Tensor out({scm.card_o});
  for (std::size_t m = 0; m < scm.card_m; ++m) {
    const double p_ma = scm.p_m[m] * scm.p_a(m, a);
    p_a += p_ma;
    for (std::size_t o = 0; o < scm.card_o; ++o) out[o] += p_ma * scm.p_o(a, m, o);
  }
  if (p_a <= 0.0) throw ConditioningError("P(A = " + std::to_string(a) + ") is zero");
  for (auto& v : out.data()) v /= p_a;
  return Distribution{std::move(out)};
}

DiscreteSCM random_scm(std::uint64_t seed, std::size_t card_a, std::size_t card_m, std::size_t card_o) {
  if (card_a < 2 || card_m < 2 || card_o < 2) throw InputError("SCM cardinalities must be >= 2");
  SeededRng rng(seed);
  DiscreteSCM scm;
  scm.card_a = card_a;
  scm.card_m = card_m;
  scm.card_o = card_o;
  scm.p_m = Tensor({card_m});
  dirichlet_row(rng, scm.p_m.data());
  scm.p_a_given_m = Tensor({card_m, card_a});
  for (std::size_t m = 0; m < card_m; ++m) dirichlet_row(rng, scm.p_a_given_m.row(m));
  scm.p_o_given_a_m = Tensor({card_a, card_m, card_o});
  for (std::size_t r = 0; r < card_a * card_m; ++r) dirichlet_row(rng, scm.p_o_given_a_m.row(r));
  return scm;
}

}  // namespace causalmm
