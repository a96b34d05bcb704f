#pragma once

#include <cstdint>

#include <json.hpp>

#include "causalmm/tensor.hpp"

namespace causalmm {

// Discrete SCM over attention A, modality prior M and output O with edges
// M -> A, M -> O and A -> O. M is the confounder on the back-door path
// A <- M -> O.
struct DiscreteSCM {
  std::size_t card_a = 2;
  std::size_t card_m = 2;
  std::size_t card_o = 2;
  Tensor p_m;            // [card_m]
  Tensor p_a_given_m;    // [card_m x card_a]
  Tensor p_o_given_a_m;  // [card_a x card_m x card_o]

  double p_o(std::size_t a, std::size_t m, std::size_t o) const {
    return p_o_given_a_m[(a * card_m + m) * card_o + o];
  }
  double p_a(std::size_t m, std::size_t a) const { return p_a_given_m[m * card_a + a]; }

  // Throws InputError unless every table is a valid (conditional) distribution.
  void validate() const;
};

void to_json(nlohmann::json& j, const DiscreteSCM& scm);
void from_json(const nlohmann::json& j, DiscreteSCM& scm);

// Probability vector that sums to 1 within 1e-12.
struct Distribution {
  Tensor probs;

  double operator[](std::size_t i) const { return probs[i]; }
  std::size_t size() const { return probs.size(); }
};

double total_variation(const Distribution& p, const Distribution& q);

// P(o | do(a)) = sum_m P(o | a, m) P(m).
Distribution backdoor_adjust(const DiscreteSCM& scm, std::size_t a);

// P(o | do(a)) by enumerating the joint of the mutilated graph (edge M -> A
// removed, A clamped to a).
Distribution intervene_oracle(const DiscreteSCM& scm, std::size_t a);

// P(o | a) under the observational joint; carries the confounding bias.
// Throws ConditioningError when P(A = a) = 0.
Distribution observational_conditional(const DiscreteSCM& scm, std::size_t a);

// Each conditional row is an independent symmetric Dirichlet(1) draw.
DiscreteSCM random_scm(std::uint64_t seed, std::size_t card_a, std::size_t card_m, std::size_t card_o);

}  // namespace causalmm
