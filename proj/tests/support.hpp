#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cour/dsl.hpp"
#include "cour/similarity.hpp"

namespace testing_support {

/// Value that survives a print/parse cycle unchanged (nine significant digits).
double round9(double v);

cour::dsl::EnvSignature small_signature();

/// Random well-formed term: every declared hyperparameter is used, every
/// constant is exactly representable in canonical text.
cour::dsl::RewardTerm random_term(std::mt19937_64& rng, const cour::dsl::EnvSignature& sig, const std::string& name,
                                  int max_depth = 5);
cour::dsl::RewardFunction random_function(std::mt19937_64& rng, const cour::dsl::EnvSignature& sig);

cour::sim::TokenStream random_stream(std::mt19937_64& rng, int max_len, int alphabet);

/// Textbook O(nm) edit distance.
std::size_t dp_levenshtein(const cour::sim::TokenStream& a, const cour::sim::TokenStream& b);

}  // namespace testing_support

#include "cour/cuq.hpp"

namespace testing_support {

/// Batch of 1..6 samples for one component: fresh random terms mixed with
/// near-copies (one constant changed) and exact copies of earlier ones.
std::vector<cour::cuq::ComponentSample> random_batch(std::mt19937_64& rng, const cour::dsl::EnvSignature& sig);

}  // namespace testing_support

#include "cour/bayesopt.hpp"

namespace testing_support {

/// Posterior from a dense LU solve against directly evaluated kernels,
/// using the model's chosen kernel parameters and jitter.
cour::bo::Posterior dense_posterior(const cour::bo::GPModel& model, const cour::bo::Point& x);

}  // namespace testing_support
