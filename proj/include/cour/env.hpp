#pragma once

// Deterministic toy MDPs with aspect metrics and a sparse fitness, plus
// cross-entropy-method search over linear policies.
//
// Trajectories hold states s_0..s_T and actions a_0..a_{T-1}. The shaped
// reward of step t is R(s_t, a_t); metrics and fitness read the post-step
// states s_1..s_T.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cour/dsl.hpp"
#include "cour/error.hpp"

namespace cour::env {

class NonFinitePolicyOutput : public Error {
public:
    using Error::Error;
};

/// A reward error raised while training or scoring for one evaluation seed.
class SeedEvaluationError : public dsl::NumericalDomainError {
public:
    SeedEvaluationError(std::uint64_t seed, const dsl::NumericalDomainError& cause)
        : dsl::NumericalDomainError(std::string(cause.what()) + " (evaluation seed " + std::to_string(seed) + ")",
                                    cause.path()),
          seed_(seed) {}
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
};

struct Trajectory {
    std::vector<std::vector<double>> states;
    std::vector<std::vector<double>> actions;
    bool terminal = false;

    int steps() const noexcept { return static_cast<int>(actions.size()); }
    bool operator==(const Trajectory&) const = default;
};

struct StepResult {
    std::vector<double> next;
    bool done = false;
};

class ToyEnv {
public:
    virtual ~ToyEnv() = default;

    virtual std::string name() const = 0;
    virtual const dsl::EnvSignature& signature() const = 0;
    virtual int horizon() const = 0;
    double gamma() const noexcept { return 0.99; }
    virtual double action_lo(std::size_t) const { return -1.0; }
    virtual double action_hi(std::size_t) const { return 1.0; }

    virtual std::vector<double> initial_state(std::uint64_t seed) const = 0;
    virtual StepResult step(std::span<const double> s, std::span<const double> a) const = 0;

    virtual std::vector<std::string> aspects() const = 0;
    /// Throws ConfigError for an aspect the environment does not define.
    virtual double aspect_metric(std::string_view aspect, const Trajectory& traj) const = 0;
    virtual double fitness(const Trajectory& traj) const = 0;

    /// Human-engineered reward in the DSL, used as the fitness yardstick.
    virtual std::string_view reference_source() const = 0;
    virtual std::string default_task() const = 0;

    bool has_aspect(std::string_view aspect) const;
};

/// 1-D double integrator: state (x, v, prev_u), action u.
class PointMassVelocity final : public ToyEnv {
public:
    static constexpr double kDt = 0.05;
    static constexpr double kTarget = 1.0;

    PointMassVelocity();
    std::string name() const override { return "point-mass-velocity"; }
    const dsl::EnvSignature& signature() const override { return sig_; }
    int horizon() const override { return 200; }
    std::vector<double> initial_state(std::uint64_t seed) const override;
    StepResult step(std::span<const double> s, std::span<const double> a) const override;
    std::vector<std::string> aspects() const override { return {"speed", "stability", "smoothness"}; }
    double aspect_metric(std::string_view aspect, const Trajectory& traj) const override;
    double fitness(const Trajectory& traj) const override;
    std::string_view reference_source() const override;
    std::string default_task() const override;

private:
    dsl::EnvSignature sig_;
};

/// n x n grid, goal in the far corner. State (x/(n-1), y/(n-1), normalized
/// Manhattan distance); action (ax, ay) moves one cell along the axis with
/// the larger magnitude (ties move along x, zero counts as positive).
class GridReach final : public ToyEnv {
public:
    explicit GridReach(int size = 8, int horizon = 64);
    std::string name() const override { return "grid-reach"; }
    const dsl::EnvSignature& signature() const override { return sig_; }
    int horizon() const override { return horizon_; }
    int size() const noexcept { return size_; }
    std::vector<double> initial_state(std::uint64_t seed) const override;
    StepResult step(std::span<const double> s, std::span<const double> a) const override;
    std::vector<std::string> aspects() const override { return {"progress", "efficiency"}; }
    double aspect_metric(std::string_view aspect, const Trajectory& traj) const override;
    double fitness(const Trajectory& traj) const override;
    std::string_view reference_source() const override;
    std::string default_task() const override;

    std::vector<double> encode(int x, int y) const;
    std::pair<int, int> decode(std::span<const double> s) const;

private:
    int size_;
    int horizon_;
    dsl::EnvSignature sig_;
};

/// Linearized cart-pole: state (x, xd, phi, phid, prev_f), action f in
/// [-1, 1] scaled to a 10 N push. Once |phi| reaches 0.8 the pole has
/// fallen and stays down for the rest of the horizon.
class BalancePole final : public ToyEnv {
public:
    static constexpr double kDt = 0.02;
    static constexpr double kFailAngle = 0.8;

    BalancePole();
    std::string name() const override { return "balance-pole"; }
    const dsl::EnvSignature& signature() const override { return sig_; }
    int horizon() const override { return 200; }
    std::vector<double> initial_state(std::uint64_t seed) const override;
    StepResult step(std::span<const double> s, std::span<const double> a) const override;
    std::vector<std::string> aspects() const override { return {"stability", "smoothness", "centering"}; }
    double aspect_metric(std::string_view aspect, const Trajectory& traj) const override;
    double fitness(const Trajectory& traj) const override;
    std::string_view reference_source() const override;
    std::string default_task() const override;

private:
    dsl::EnvSignature sig_;
};

std::vector<std::string> env_names();
/// Throws ConfigError for an unknown name.
std::shared_ptr<const ToyEnv> make_env(std::string_view name);

struct LinearPolicy {
    std::size_t n_action = 0;
    std::size_t n_state = 0;
    std::vector<double> weights;  // row-major n_action x n_state
    std::vector<double> bias;

    static LinearPolicy zeros(const ToyEnv& env);
    static LinearPolicy from_params(const ToyEnv& env, std::span<const double> params);
    std::vector<double> params() const;
    /// Clipped to the environment's action bounds.
    std::vector<double> act(const ToyEnv& env, std::span<const double> s) const;
    static std::size_t param_count(const ToyEnv& env);
};

Trajectory rollout(const ToyEnv& env, const LinearPolicy& policy, std::uint64_t seed);
/// Re-simulates `actions` from `s0`.
Trajectory replay(const ToyEnv& env, std::vector<double> s0, const std::vector<std::vector<double>>& actions);

using StepReward = std::function<double(std::span<const double> s, std::span<const double> a)>;
double discounted_return(const ToyEnv& env, const Trajectory& traj, const StepReward& reward);

struct CemConfig {
    int iters = 8;
    int pop = 16;
    double elite_frac = 0.25;
    double init_std = 1.0;
    double min_std = 1e-3;

    void validate() const;
    int elite_count() const;
};

struct CemResult {
    std::vector<double> mean;
    std::vector<double> elite_score;  // mean score of the elite set, per iteration
};

/// Maximizes `score` over R^dim starting from N(0, init_std^2).
CemResult cem_optimize(std::size_t dim, const std::function<double(const std::vector<double>&)>& score,
                       const CemConfig& cfg, std::uint64_t seed);

/// Trains a linear policy on rollouts from the initial state of `seed`.
LinearPolicy cem_search(const ToyEnv& env, const std::function<double(const Trajectory&)>& reward_eval,
                        const CemConfig& cfg, std::uint64_t seed);

/// Reward with per-term hyperparameter values in declaration order.
struct BoundReward {
    const dsl::RewardFunction* rf = nullptr;
    std::vector<std::vector<double>> thetas;
};

/// Policy trained on the discounted sum of `reward`, then rolled out from the
/// same seed's initial state.
Trajectory train_and_rollout(const ToyEnv& env, const BoundReward& reward, const CemConfig& cfg,
                             std::uint64_t seed);

struct FitnessStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::vector<double> per_seed;
};

FitnessStats summarize(std::vector<double> values);

FitnessStats evaluate_reward(const ToyEnv& env, const BoundReward& reward, const CemConfig& cfg,
                             std::span<const std::uint64_t> seeds);

std::string trajectory_to_json(const Trajectory& traj);

}  // namespace cour::env
