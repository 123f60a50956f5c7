#include "cour/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "assets.hpp"
#include "cour/seed.hpp"

namespace cour::env {

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

[[noreturn]] void unknown_aspect(const std::string& env, std::string_view aspect) {
    throw ConfigError("environment '" + env + "' has no aspect '" + std::string(aspect) + "'");
}

double mean_abs_change(const Trajectory& traj, std::size_t index, double initial) {
    if (traj.actions.empty()) return 0.0;
    double prev = initial;
    double sum = 0.0;
    for (const auto& a : traj.actions) {
        sum += std::abs(a[index] - prev);
        prev = a[index];
    }
    return sum / static_cast<double>(traj.actions.size());
}

}  // namespace

bool ToyEnv::has_aspect(std::string_view aspect) const {
    auto as = aspects();
    return std::find(as.begin(), as.end(), aspect) != as.end();
}

// ------------------------------------------------------------ point mass

PointMassVelocity::PointMassVelocity() {
    sig_.state = {{"x", "m"}, {"v", "m/s"}, {"prev_u", "m/s^2"}};
    sig_.action = {{"u", "m/s^2"}};
}

std::vector<double> PointMassVelocity::initial_state(std::uint64_t seed) const {
    std::mt19937_64 rng(derive_seed(seed, "init/point-mass"));
    std::uniform_real_distribution<double> ux(-0.5, 0.5), uv(-0.3, 0.3);
    double x = ux(rng);
    double v = uv(rng);
    return {x, v, 0.0};
}

StepResult PointMassVelocity::step(std::span<const double> s, std::span<const double> a) const {
    double u = a[0];
    return {{s[0] + kDt * s[1], s[1] + kDt * u, u}, false};
}

double PointMassVelocity::aspect_metric(std::string_view aspect, const Trajectory& traj) const {
    const std::size_t T = traj.actions.size();
    if (T == 0) return 0.0;
    if (aspect == "speed") {
        double sum = 0.0;
        for (std::size_t t = 1; t <= T; ++t) sum += clip01(1.0 - std::abs(traj.states[t][1] - kTarget) / kTarget);
        return sum / static_cast<double>(T);
    }
    if (aspect == "stability") {
        std::size_t first = T / 2 + 1;
        double n = static_cast<double>(T - first + 1);
        double mean = 0.0;
        for (std::size_t t = first; t <= T; ++t) mean += traj.states[t][1];
        mean /= n;
        double var = 0.0;
        for (std::size_t t = first; t <= T; ++t) var += (traj.states[t][1] - mean) * (traj.states[t][1] - mean);
        var /= n;
        return 1.0 - std::min(1.0, var / 0.25);
    }
    if (aspect == "smoothness") return 1.0 - std::min(1.0, mean_abs_change(traj, 0, traj.states[0][2]) / 2.0);
    unknown_aspect(name(), aspect);
}

double PointMassVelocity::fitness(const Trajectory& traj) const {
    int hits = 0;
    for (std::size_t t = 1; t < traj.states.size(); ++t)
        if (std::abs(traj.states[t][1] - kTarget) < 0.1) ++hits;
    return static_cast<double>(hits) / horizon();
}

std::string_view PointMassVelocity::reference_source() const { return assets::get("rewards/point-mass-velocity.dsl"); }

std::string PointMassVelocity::default_task() const {
    return "Make the point mass move forward at a steady velocity of 1 m/s while keeping its acceleration "
           "commands smooth.";
}

// ------------------------------------------------------------------ grid

GridReach::GridReach(int size, int horizon) : size_(size), horizon_(horizon) {
    if (size < 2 || horizon < 1) throw ConfigError("grid needs size >= 2 and a positive horizon");
    sig_.state = {{"x", "cells/(n-1)"}, {"y", "cells/(n-1)"}, {"dist", "1"}};
    sig_.action = {{"ax", "1"}, {"ay", "1"}};
}

std::vector<double> GridReach::encode(int x, int y) const {
    double span = size_ - 1;
    int d = (size_ - 1 - x) + (size_ - 1 - y);
    return {x / span, y / span, d / (2.0 * span)};
}

std::pair<int, int> GridReach::decode(std::span<const double> s) const {
    double span = size_ - 1;
    return {static_cast<int>(std::lround(s[0] * span)), static_cast<int>(std::lround(s[1] * span))};
}

std::vector<double> GridReach::initial_state(std::uint64_t seed) const {
    std::mt19937_64 rng(derive_seed(seed, "init/grid-reach"));
    std::uniform_int_distribution<int> cell(0, std::max(0, size_ / 2 - 1));
    int x = cell(rng);
    int y = cell(rng);
    return encode(x, y);
}

StepResult GridReach::step(std::span<const double> s, std::span<const double> a) const {
    auto [x, y] = decode(s);
    if (std::abs(a[0]) >= std::abs(a[1])) {
        x += a[0] >= 0 ? 1 : -1;
    } else {
        y += a[1] >= 0 ? 1 : -1;
    }
    x = std::clamp(x, 0, size_ - 1);
    y = std::clamp(y, 0, size_ - 1);
    return {encode(x, y), x == size_ - 1 && y == size_ - 1};
}

double GridReach::aspect_metric(std::string_view aspect, const Trajectory& traj) const {
    if (aspect == "progress") return 1.0 - traj.states.back()[2];
    if (aspect == "efficiency") {
        if (fitness(traj) == 0.0) return 0.0;
        return 1.0 - static_cast<double>(traj.steps()) / horizon_;
    }
    unknown_aspect(name(), aspect);
}

double GridReach::fitness(const Trajectory& traj) const {
    for (std::size_t t = 1; t < traj.states.size(); ++t) {
        auto [x, y] = decode(traj.states[t]);
        if (x == size_ - 1 && y == size_ - 1) return 1.0;
    }
    return 0.0;
}

std::string_view GridReach::reference_source() const { return assets::get("rewards/grid-reach.dsl"); }

std::string GridReach::default_task() const {
    return "Move the agent from its start cell to the goal in the far corner of the grid using as few steps as "
           "possible.";
}

// ------------------------------------------------------------- cart-pole

namespace {
constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kHalfLength = 0.5;
constexpr double kForceScale = 10.0;
constexpr double kTrack = 2.4;
}  // namespace

BalancePole::BalancePole() {
    sig_.state = {{"x", "m"}, {"xd", "m/s"}, {"phi", "rad"}, {"phid", "rad/s"}, {"prev_f", "1"}};
    sig_.action = {{"f", "1"}};
}

std::vector<double> BalancePole::initial_state(std::uint64_t seed) const {
    std::mt19937_64 rng(derive_seed(seed, "init/balance-pole"));
    std::uniform_real_distribution<double> ux(-0.5, 0.5), uphi(-0.1, 0.1), urate(-0.05, 0.05);
    double x = ux(rng);
    double xd = urate(rng);
    double phi = uphi(rng);
    double phid = urate(rng);
    return {x, xd, phi, phid, 0.0};
}

StepResult BalancePole::step(std::span<const double> s, std::span<const double> a) const {
    const double total = kCartMass + kPoleMass;
    const double force = kForceScale * a[0];
    const double phidd = (kGravity * s[2] - force / total) / (kHalfLength * (4.0 / 3.0 - kPoleMass / total));
    const double xdd = (force - kPoleMass * kHalfLength * phidd) / total;
    if (std::abs(s[2]) >= kFailAngle) {
        // Fallen: the pole lies still and the cart is pushed as a free mass.
        const double xf = force / total;
        return {{s[0] + kDt * s[1], s[1] + kDt * xf, s[2], 0.0, a[0]}, false};
    }
    std::vector<double> next = {s[0] + kDt * s[1], s[1] + kDt * xdd, s[2] + kDt * s[3], s[3] + kDt * phidd, a[0]};
    if (std::abs(next[2]) >= kFailAngle) {
        next[2] = std::copysign(kFailAngle, next[2]);
        next[3] = 0.0;
    }
    return {std::move(next), false};
}

double BalancePole::aspect_metric(std::string_view aspect, const Trajectory& traj) const {
    const double T = horizon();
    const std::size_t steps = traj.actions.size();
    if (aspect == "stability" || aspect == "centering") {
        const bool angle = aspect == "stability";
        double sum = 0.0;
        for (std::size_t t = 1; t <= steps; ++t)
            sum += angle ? std::min(1.0, std::abs(traj.states[t][2]) / kFailAngle)
                         : std::min(1.0, std::abs(traj.states[t][0]) / kTrack);
        sum += T - static_cast<double>(steps);
        return clip01(1.0 - sum / T);
    }
    if (aspect == "smoothness") return 1.0 - std::min(1.0, mean_abs_change(traj, 0, traj.states[0][4]) / 2.0);
    unknown_aspect(name(), aspect);
}

double BalancePole::fitness(const Trajectory& traj) const {
    int upright = 0;
    for (std::size_t t = 1; t < traj.states.size(); ++t)
        if (std::abs(traj.states[t][2]) < 0.2) ++upright;
    return static_cast<double>(upright) / horizon();
}

std::string_view BalancePole::reference_source() const { return assets::get("rewards/balance-pole.dsl"); }

std::string BalancePole::default_task() const {
    return "Keep the pole balanced upright on the cart for the whole episode while keeping the cart near the "
           "centre of the track and the applied force smooth.";
}

// -------------------------------------------------------------- registry

std::vector<std::string> env_names() { return {"point-mass-velocity", "grid-reach", "balance-pole"}; }

std::shared_ptr<const ToyEnv> make_env(std::string_view name) {
    if (name == "point-mass-velocity") return std::make_shared<PointMassVelocity>();
    if (name == "grid-reach") return std::make_shared<GridReach>();
    if (name == "balance-pole") return std::make_shared<BalancePole>();
    throw ConfigError("unknown environment '" + std::string(name) + "'");
}

// -------------------------------------------------------------- policies

std::size_t LinearPolicy::param_count(const ToyEnv& env) {
    const auto& sig = env.signature();
    return sig.action.size() * (sig.state.size() + 1);
}

LinearPolicy LinearPolicy::zeros(const ToyEnv& env) {
    LinearPolicy p;
    p.n_action = env.signature().action.size();
    p.n_state = env.signature().state.size();
    p.weights.assign(p.n_action * p.n_state, 0.0);
    p.bias.assign(p.n_action, 0.0);
    return p;
}

LinearPolicy LinearPolicy::from_params(const ToyEnv& env, std::span<const double> params) {
    LinearPolicy p = zeros(env);
    if (params.size() != param_count(env)) throw ConfigError("policy parameter count does not match environment");
    std::copy(params.begin(), params.begin() + p.weights.size(), p.weights.begin());
    std::copy(params.begin() + p.weights.size(), params.end(), p.bias.begin());
    return p;
}

std::vector<double> LinearPolicy::params() const {
    std::vector<double> out = weights;
    out.insert(out.end(), bias.begin(), bias.end());
    return out;
}

std::vector<double> LinearPolicy::act(const ToyEnv& env, std::span<const double> s) const {
    std::vector<double> a(n_action);
    for (std::size_t i = 0; i < n_action; ++i) {
        double v = bias[i];
        for (std::size_t j = 0; j < n_state; ++j) v += weights[i * n_state + j] * s[j];
        if (!std::isfinite(v)) throw NonFinitePolicyOutput("policy produced a non-finite action");
        a[i] = std::clamp(v, env.action_lo(i), env.action_hi(i));
    }
    return a;
}

Trajectory rollout(const ToyEnv& env, const LinearPolicy& policy, std::uint64_t seed) {
    if (policy.n_state != env.signature().state.size() || policy.n_action != env.signature().action.size())
        throw ConfigError("policy dimensions do not match the environment signature");
    Trajectory traj;
    traj.states.reserve(env.horizon() + 1);
    traj.actions.reserve(env.horizon());
    traj.states.push_back(env.initial_state(seed));
    for (int t = 0; t < env.horizon(); ++t) {
        auto a = policy.act(env, traj.states.back());
        StepResult r = env.step(traj.states.back(), a);
        traj.actions.push_back(std::move(a));
        traj.states.push_back(std::move(r.next));
        if (r.done) {
            traj.terminal = true;
            break;
        }
    }
    return traj;
}

Trajectory replay(const ToyEnv& env, std::vector<double> s0, const std::vector<std::vector<double>>& actions) {
    Trajectory traj;
    traj.states.push_back(std::move(s0));
    for (const auto& a : actions) {
        StepResult r = env.step(traj.states.back(), a);
        traj.actions.push_back(a);
        traj.states.push_back(std::move(r.next));
        if (r.done) {
            traj.terminal = true;
            break;
        }
    }
    return traj;
}

double discounted_return(const ToyEnv& env, const Trajectory& traj, const StepReward& reward) {
    double total = 0.0;
    double discount = 1.0;
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
        total += discount * reward(traj.states[t], traj.actions[t]);
        discount *= env.gamma();
    }
    return total;
}

// ------------------------------------------------------------------- CEM

void CemConfig::validate() const {
    if (iters < 1) throw ConfigError("CEM needs iters >= 1");
    if (pop < 4) throw ConfigError("CEM needs pop >= 4");
    if (!(elite_frac > 0.0 && elite_frac <= 0.5)) throw ConfigError("CEM elite_frac must lie in (0, 0.5]");
    if (!(init_std > 0.0)) throw ConfigError("CEM init_std must be positive");
    if (!(min_std > 0.0)) throw ConfigError("CEM min_std must be positive");
}

int CemConfig::elite_count() const {
    return std::max(1, static_cast<int>(std::ceil(elite_frac * pop - 1e-9)));
}

CemResult cem_optimize(std::size_t dim, const std::function<double(const std::vector<double>&)>& score,
                       const CemConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    CemResult out;
    out.mean.assign(dim, 0.0);
    std::vector<double> stddev(dim, cfg.init_std);
    const int n_elite = cfg.elite_count();
    std::vector<std::vector<double>> samples(cfg.pop, std::vector<double>(dim));
    std::vector<double> scores(cfg.pop);
    std::vector<int> order(cfg.pop);
    for (int it = 0; it < cfg.iters; ++it) {
        for (int k = 0; k < cfg.pop; ++k) {
            for (std::size_t j = 0; j < dim; ++j) samples[k][j] = out.mean[j] + stddev[j] * normal(rng);
            double v = score(samples[k]);
            scores[k] = std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
        double elite_score = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            double m = 0.0;
            for (int e = 0; e < n_elite; ++e) m += samples[order[e]][j];
            m /= n_elite;
            double var = 0.0;
            for (int e = 0; e < n_elite; ++e) var += (samples[order[e]][j] - m) * (samples[order[e]][j] - m);
            var /= n_elite;
            out.mean[j] = m;
            stddev[j] = std::max(cfg.min_std, std::sqrt(var));
        }
        for (int e = 0; e < n_elite; ++e) elite_score += scores[order[e]];
        out.elite_score.push_back(elite_score / n_elite);
    }
    return out;
}

LinearPolicy cem_search(const ToyEnv& env, const std::function<double(const Trajectory&)>& reward_eval,
                        const CemConfig& cfg, std::uint64_t seed) {
    auto score = [&](const std::vector<double>& params) {
        return reward_eval(rollout(env, LinearPolicy::from_params(env, params), seed));
    };
    CemResult r = cem_optimize(LinearPolicy::param_count(env), score, cfg, derive_seed(seed, "cem"));
    return LinearPolicy::from_params(env, r.mean);
}

Trajectory train_and_rollout(const ToyEnv& env, const BoundReward& reward, const CemConfig& cfg,
                             std::uint64_t seed) {
    if (!reward.rf) throw ConfigError("no reward function bound");
    const dsl::RewardFunction& rf = *reward.rf;
    std::span<const std::vector<double>> thetas(reward.thetas);
    StepReward step = [&](std::span<const double> s, std::span<const double> a) {
        return dsl::evaluate_combined(rf, s, a, thetas);
    };
    try {
        LinearPolicy policy =
            cem_search(env, [&](const Trajectory& t) { return discounted_return(env, t, step); }, cfg, seed);
        return rollout(env, policy, seed);
    } catch (const SeedEvaluationError&) {
        throw;
    } catch (const dsl::NumericalDomainError& e) {
        throw SeedEvaluationError(seed, e);
    }
}

FitnessStats summarize(std::vector<double> values) {
    FitnessStats s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    s.per_seed = std::move(values);
    return s;
}

FitnessStats evaluate_reward(const ToyEnv& env, const BoundReward& reward, const CemConfig& cfg,
                             std::span<const std::uint64_t> seeds) {
    std::vector<double> values;
    values.reserve(seeds.size());
    for (std::uint64_t seed : seeds) values.push_back(env.fitness(train_and_rollout(env, reward, cfg, seed)));
    return summarize(std::move(values));
}

std::string trajectory_to_json(const Trajectory& traj) {
    std::ostringstream out;
    out.precision(17);
    auto rows = [&](const std::vector<std::vector<double>>& m) {
        out << "[";
        for (std::size_t i = 0; i < m.size(); ++i) {
            out << (i ? ",[" : "[");
            for (std::size_t j = 0; j < m[i].size(); ++j) out << (j ? "," : "") << m[i][j];
            out << "]";
        }
        out << "]";
    };
    out << "{\"states\":";
    rows(traj.states);
    out << ",\"actions\":";
    rows(traj.actions);
    out << ",\"terminal\":" << (traj.terminal ? "true" : "false") << "}";
    return out.str();
}

}  // namespace cour::env
