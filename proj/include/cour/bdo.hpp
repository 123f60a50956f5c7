#pragma once

// Decoupled optimization of a reward function: each term's hyperparameters
// are tuned against the environment metric of its own aspect, with budget
// shares proportional to the terms' uncertainty, then the recombination
// weights are tuned against task fitness.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cour/bayesopt.hpp"
#include "cour/dsl.hpp"
#include "cour/env.hpp"
#include "cour/llm.hpp"

namespace cour::bdo {

class InsufficientBudget : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// min_evals each plus a largest-remainder share of the rest proportional
/// to u (equal shares when every u is zero). Ties in the remainder go to
/// the earlier entry.
std::vector<int> allocate_budget(std::span<const double> u, int total, int min_evals);
std::map<std::string, int> allocate_budget(const std::vector<std::pair<std::string, double>>& u, int total,
                                           int min_evals);

enum class TermObjectiveKind {
    Aspect,   // train on the term alone, score its aspect metric
    Coupled,  // train on the full reward, vary only this term, score fitness
};

struct BdoConfig {
    int total_budget = 30;
    int min_evals = 4;
    double weight_fraction = 1.0 / 3.0;
    env::CemConfig cem{15, 32, 0.25, 1.0, 1e-3};
    TermObjectiveKind term_objective = TermObjectiveKind::Aspect;
    bo::BOOptions bo;

    void validate() const;
    int weight_budget(std::size_t n_terms) const;
};

struct BdoPlan {
    std::vector<std::string> order;  // term stages in execution order
    std::map<std::string, int> term_budgets;
    int weight_budget = 0;

    int total() const;
};

/// Term stages run by descending u (declaration order on ties); terms
/// without hyperparameters get no budget. A single-term function skips the
/// weight stage.
BdoPlan plan_budget(const dsl::RewardFunction& rf, const std::map<std::string, double>& u, const BdoConfig& cfg);

/// One objective call, in global order across stages.
struct Evaluation {
    int index = 0;  // 1-based
    std::string stage;
    bo::Point point;
    double objective = -std::numeric_limits<double>::infinity();
    double fitness = -std::numeric_limits<double>::infinity();
};

/// Shared by every stage of one run; counts each objective call.
class EvaluationLog {
public:
    void record(std::string stage, bo::Point point, double objective, double fitness);
    const std::vector<Evaluation>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<Evaluation> entries_;
};

struct ObjectiveValue {
    double objective = 0.0;
    double fitness = 0.0;
};

/// J(R_i): train a policy on `term` alone for each evaluation seed and
/// average the aspect metric (objective) and task fitness over seeds.
/// Hyperparameter values must lie within the declared bounds.
ObjectiveValue term_objective(const env::ToyEnv& env, const dsl::RewardTerm& term, std::span<const double> theta,
                              const env::CemConfig& cem, std::span<const std::uint64_t> seeds);

/// Mean fitness of a policy trained on the combined reward; `alpha` is
/// normalized onto the simplex first.
ObjectiveValue combined_objective(const env::ToyEnv& env, const dsl::RewardFunction& rf,
                                  const std::vector<std::vector<double>>& thetas, std::span<const double> alpha,
                                  const env::CemConfig& cem, std::span<const std::uint64_t> seeds);

/// w / sum(w); an all-zero vector maps to the uniform weights.
std::vector<double> normalize_weights(std::span<const double> w);

/// Search strategy: Bayesian optimization by default, or a provider that
/// proposes values (the llm-tune ablation).
using Tuner = std::function<bo::BOTrace(const bo::Objective& objective, const bo::SearchSpace& space,
                                         const bo::Budget& budget, std::uint64_t seed, const std::string& context,
                                         const bo::Point& initial)>;

Tuner bo_tuner(const bo::BOOptions& opts = {}, int lhs_only_up_to = 0);
Tuner provider_tuner(llm::Gateway& gateway);

struct TermResult {
    std::string name;
    std::vector<std::string> dims;
    std::vector<double> theta;
    bo::BOTrace trace;
    int budget = 0;
};

struct OptimizedReward {
    dsl::RewardFunction rf;                  // terms as given, weights = alpha
    std::vector<std::vector<double>> thetas;  // per term, declaration order
    std::vector<double> alpha;
    std::vector<TermResult> terms;  // execution order
    bo::BOTrace weight_trace;
    std::vector<std::string> weight_dims;
    bool weight_stage_skipped = false;
    BdoPlan plan;
    std::vector<Evaluation> evaluations;

    /// Canonical text with the optimized hyperparameters inlined as defaults.
    std::string canonical() const;
};

OptimizedReward run_bdo(const dsl::RewardFunction& rf, const std::map<std::string, double>& u,
                        const env::ToyEnv& env, const BdoConfig& cfg, std::span<const std::uint64_t> eval_seeds,
                        std::uint64_t seed, const Tuner& tuner);

/// Joint search over every hyperparameter and weight against task fitness.
OptimizedReward run_monolithic(const dsl::RewardFunction& rf, const env::ToyEnv& env, const BdoConfig& cfg,
                               std::span<const std::uint64_t> eval_seeds, std::uint64_t seed, const Tuner& tuner);

}  // namespace cour::bdo
