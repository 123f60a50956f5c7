#include "cour/bdo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cour/seed.hpp"

namespace cour::bdo {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- budget

std::vector<int> allocate_budget(std::span<const double> u, int total, int min_evals) {
    const int n = static_cast<int>(u.size());
    if (n == 0) throw ConfigError("allocate_budget needs at least one term");
    if (min_evals < 0) throw ConfigError("min_evals must be non-negative");
    if (total < n * min_evals)
        throw InsufficientBudget("budget " + std::to_string(total) + " cannot give " + std::to_string(n) +
                                 " terms " + std::to_string(min_evals) + " evaluations each");
    double sum = 0.0;
    for (double v : u) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("uncertainty scores must lie in [0, 1]");
        sum += v;
    }
    const int remainder = total - n * min_evals;
    std::vector<double> quota(n);
    for (int i = 0; i < n; ++i) quota[i] = sum > 0.0 ? remainder * (u[i] / sum) : remainder / double(n);
    std::vector<int> out(n);
    int given = 0;
    for (int i = 0; i < n; ++i) {
        int f = static_cast<int>(std::floor(quota[i]));
        out[i] = f;
        given += f;
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return quota[a] - std::floor(quota[a]) > quota[b] - std::floor(quota[b]);
    });
    for (int k = 0; given < remainder; ++k, ++given) ++out[order[k % n]];
    for (int& v : out) v += min_evals;
    return out;
}

std::map<std::string, int> allocate_budget(const std::vector<std::pair<std::string, double>>& u, int total,
                                           int min_evals) {
    std::vector<double> values;
    for (const auto& [name, v] : u) values.push_back(v);
    auto alloc = allocate_budget(values, total, min_evals);
    std::map<std::string, int> out;
    for (std::size_t i = 0; i < u.size(); ++i) out[u[i].first] = alloc[i];
    return out;
}

void BdoConfig::validate() const {
    if (total_budget < 1) throw ConfigError("total budget must be positive");
    if (min_evals < 1) throw ConfigError("min_evals must be positive");
    if (!(weight_fraction > 0.0 && weight_fraction < 1.0)) throw ConfigError("weight_fraction must lie in (0, 1)");
    cem.validate();
}

int BdoConfig::weight_budget(std::size_t n_terms) const {
    if (n_terms <= 1) return 0;
    return static_cast<int>(std::ceil(total_budget * weight_fraction - 1e-9));
}

int BdoPlan::total() const {
    int t = weight_budget;
    for (const auto& [name, b] : term_budgets) t += b;
    return t;
}

BdoPlan plan_budget(const dsl::RewardFunction& rf, const std::map<std::string, double>& u, const BdoConfig& cfg) {
    cfg.validate();
    BdoPlan plan;
    std::vector<std::pair<std::string, double>> tunable;
    for (const auto& t : rf.terms) {
        auto it = u.find(t.name);
        if (it == u.end()) throw ConfigError("no uncertainty score for term '" + t.name + "'");
        plan.term_budgets[t.name] = 0;
        if (!t.hypers.empty()) tunable.emplace_back(t.name, it->second);
    }
    const bool single = rf.terms.size() == 1;
    if (tunable.empty()) {
        if (single) throw InsufficientBudget("single term without hyperparameters: nothing to optimize");
        plan.weight_budget = cfg.total_budget;
    } else {
        plan.weight_budget = cfg.weight_budget(rf.terms.size());
        auto alloc = allocate_budget(tunable, cfg.total_budget - plan.weight_budget, cfg.min_evals);
        for (const auto& [name, b] : alloc) plan.term_budgets[name] = b;
    }
    if (!single && plan.weight_budget < cfg.min_evals)
        throw InsufficientBudget("weight stage budget below min_evals");
    std::stable_sort(tunable.begin(), tunable.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [name, v] : tunable) plan.order.push_back(name);
    return plan;
}

void EvaluationLog::record(std::string stage, bo::Point point, double objective, double fitness) {
    Evaluation e;
    e.index = static_cast<int>(entries_.size()) + 1;
    e.stage = std::move(stage);
    e.point = std::move(point);
    e.objective = objective;
    e.fitness = fitness;
    entries_.push_back(std::move(e));
}

// ------------------------------------------------------------ objectives

std::vector<double> normalize_weights(std::span<const double> w) {
    double sum = 0.0;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("weights must be finite and non-negative");
        sum += v;
    }
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = sum > 0.0 ? w[i] / sum : 1.0 / double(w.size());
    return out;
}

ObjectiveValue term_objective(const env::ToyEnv& env, const dsl::RewardTerm& term, std::span<const double> theta,
                              const env::CemConfig& cem, std::span<const std::uint64_t> seeds) {
    if (!env.has_aspect(term.aspect))
        throw ConfigError("environment '" + env.name() + "' has no aspect '" + term.aspect + "'");
    if (theta.size() != term.hypers.size()) throw ConfigError("theta size does not match term '" + term.name + "'");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto& h = term.hypers[i];
        if (!(theta[i] >= h.lo && theta[i] <= h.hi)) throw dsl::HyperOutOfBounds(h.name, theta[i]);
    }
    if (seeds.empty()) throw ConfigError("no evaluation seeds");
    dsl::RewardFunction single{{term}, {1.0}};
    env::BoundReward bound{&single, {std::vector<double>(theta.begin(), theta.end())}};
    ObjectiveValue out;
    for (std::uint64_t s : seeds) {
        env::Trajectory traj = env::train_and_rollout(env, bound, cem, s);
        out.objective += env.aspect_metric(term.aspect, traj);
        out.fitness += env.fitness(traj);
    }
    out.objective /= static_cast<double>(seeds.size());
    out.fitness /= static_cast<double>(seeds.size());
    return out;
}

ObjectiveValue combined_objective(const env::ToyEnv& env, const dsl::RewardFunction& rf,
                                  const std::vector<std::vector<double>>& thetas, std::span<const double> alpha,
                                  const env::CemConfig& cem, std::span<const std::uint64_t> seeds) {
    if (alpha.size() != rf.terms.size()) throw ConfigError("weight vector size does not match the terms");
    dsl::RewardFunction weighted = rf;
    weighted.weights = normalize_weights(alpha);
    auto stats = env::evaluate_reward(env, {&weighted, thetas}, cem, seeds);
    return {stats.mean, stats.mean};
}

// ---------------------------------------------------------------- tuners

Tuner bo_tuner(const bo::BOOptions& opts, int lhs_only_up_to) {
    bo::BOOptions o = opts;
    o.lhs_only_up_to = lhs_only_up_to;
    return [o](const bo::Objective& f, const bo::SearchSpace& space, const bo::Budget& budget, std::uint64_t seed,
               const std::string&, const bo::Point&) { return bo::bo_maximize(f, space, budget, seed, o); };
}

Tuner provider_tuner(llm::Gateway& gateway) {
    return [&gateway](const bo::Objective& f, const bo::SearchSpace& space, const bo::Budget& budget, std::uint64_t,
                      const std::string& context, const bo::Point& initial) {
        llm::ProposalRequest req;
        req.context = context;
        for (const auto& d : space.dims()) {
            req.names.push_back(d.name);
            req.lo.push_back(d.lo);
            req.hi.push_back(d.hi);
        }
        req.initial = initial;
        bo::BOTrace trace;
        for (int i = 0; i < budget.total_evals; ++i) {
            bo::Point x = gateway.propose_values(req);
            double v;
            try {
                v = f(x);
                if (!std::isfinite(v)) v = kNegInf;
            } catch (const dsl::NumericalDomainError&) {
                v = kNegInf;
            } catch (const env::NonFinitePolicyOutput&) {
                v = kNegInf;
            }
            req.history.emplace_back(x, v);
            trace.entries.push_back({x, v, i});
            if (v > trace.best_value) {
                trace.best_value = v;
                trace.best_point = x;
            }
        }
        trace.empty_improvement = !std::isfinite(trace.best_value);
        if (trace.empty_improvement && !trace.entries.empty()) trace.best_point = trace.entries.front().point;
        return trace;
    };
}

// ------------------------------------------------------------------- run

namespace {

bo::SearchSpace term_space(const dsl::RewardTerm& term, const std::string& prefix = {}) {
    std::vector<bo::Dim> dims;
    for (const auto& h : term.hypers) dims.push_back({prefix + h.name, h.lo, h.hi});
    return bo::SearchSpace(std::move(dims));
}

/// Wraps an objective so every call lands in the log, failures included.
bo::Objective logged(EvaluationLog& log, std::string stage, std::function<ObjectiveValue(const bo::Point&)> f) {
    return [&log, stage = std::move(stage), f = std::move(f)](const bo::Point& x) {
        try {
            ObjectiveValue v = f(x);
            log.record(stage, x, v.objective, v.fitness);
            return v.objective;
        } catch (const Error&) {
            log.record(stage, x, kNegInf, kNegInf);
            throw;
        }
    };
}

bo::Budget stage_budget(int evals, const BdoConfig& cfg) { return bo::Budget::for_total(evals, cfg.min_evals); }

}  // namespace

std::string OptimizedReward::canonical() const {
    dsl::RewardFunction out = rf;
    for (std::size_t i = 0; i < out.terms.size(); ++i) out.terms[i] = dsl::with_defaults(out.terms[i], thetas[i]);
    out.weights = alpha;
    return dsl::print_canonical(out);
}

OptimizedReward run_bdo(const dsl::RewardFunction& rf, const std::map<std::string, double>& u,
                        const env::ToyEnv& env, const BdoConfig& cfg, std::span<const std::uint64_t> eval_seeds,
                        std::uint64_t seed, const Tuner& tuner) {
    OptimizedReward out;
    out.rf = rf;
    out.plan = plan_budget(rf, u, cfg);
    for (const auto& t : rf.terms) {
        if (!env.has_aspect(t.aspect))
            throw ConfigError("environment '" + env.name() + "' has no aspect '" + t.aspect + "'");
        out.thetas.push_back(t.default_theta());
    }
    const std::vector<double> uniform(rf.terms.size(), 1.0 / double(rf.terms.size()));
    EvaluationLog log;

    for (const auto& name : out.plan.order) {
        const int idx = *rf.term_index(name);
        const dsl::RewardTerm& term = rf.terms[idx];
        TermResult res;
        res.name = name;
        res.budget = out.plan.term_budgets.at(name);
        for (const auto& h : term.hypers) res.dims.push_back(h.name);
        std::function<ObjectiveValue(const bo::Point&)> f;
        if (cfg.term_objective == TermObjectiveKind::Aspect) {
            // The objective is the aspect metric; the logged fitness is that of the
            // whole candidate reward at this point.
            f = [&, idx](const bo::Point& x) {
                ObjectiveValue v = term_objective(env, rf.terms[idx], x, cfg.cem, eval_seeds);
                auto thetas = out.thetas;
                thetas[idx] = x;
                try {
                    v.fitness = combined_objective(env, rf, thetas, uniform, cfg.cem, eval_seeds).fitness;
                } catch (const dsl::NumericalDomainError&) {
                    v.fitness = kNegInf;
                } catch (const env::NonFinitePolicyOutput&) {
                    v.fitness = kNegInf;
                }
                return v;
            };
        } else {
            f = [&, idx](const bo::Point& x) {
                auto thetas = out.thetas;
                thetas[idx] = x;
                return combined_objective(env, rf, thetas, uniform, cfg.cem, eval_seeds);
            };
        }
        res.trace = tuner(logged(log, "term:" + name, f), term_space(term), stage_budget(res.budget, cfg),
                          derive_seed(seed, "bdo/term/" + name), dsl::print_term(term), term.default_theta());
        res.theta = res.trace.empty_improvement ? term.default_theta() : res.trace.best_point;
        out.thetas[idx] = res.theta;
        out.terms.push_back(std::move(res));
    }

    if (out.plan.weight_budget == 0) {
        out.weight_stage_skipped = true;
        out.alpha = {1.0};
    } else {
        std::vector<bo::Dim> dims;
        for (const auto& t : rf.terms) dims.push_back({"alpha." + t.name, 0.0, 1.0});
        for (const auto& d : dims) out.weight_dims.push_back(d.name);
        auto f = [&](const bo::Point& w) { return combined_objective(env, rf, out.thetas, w, cfg.cem, eval_seeds); };
        dsl::RewardFunction context = rf;
        for (std::size_t i = 0; i < context.terms.size(); ++i)
            context.terms[i] = dsl::with_defaults(context.terms[i], out.thetas[i]);
        out.weight_trace = tuner(logged(log, "weights", f), bo::SearchSpace(std::move(dims)),
                                 stage_budget(out.plan.weight_budget, cfg), derive_seed(seed, "bdo/weights"),
                                 dsl::print_canonical(context), uniform);
        out.alpha = out.weight_trace.empty_improvement ? uniform : normalize_weights(out.weight_trace.best_point);
    }
    out.rf.weights = out.alpha;
    out.evaluations = log.entries();
    return out;
}

OptimizedReward run_monolithic(const dsl::RewardFunction& rf, const env::ToyEnv& env, const BdoConfig& cfg,
                               std::span<const std::uint64_t> eval_seeds, std::uint64_t seed, const Tuner& tuner) {
    cfg.validate();
    OptimizedReward out;
    out.rf = rf;
    std::vector<bo::Dim> dims;
    std::vector<double> initial;
    for (const auto& t : rf.terms) {
        for (const auto& h : t.hypers) {
            dims.push_back({t.name + "." + h.name, h.lo, h.hi});
            initial.push_back(h.default_value);
        }
        out.thetas.push_back(t.default_theta());
    }
    const std::size_t n_theta = dims.size();
    for (const auto& t : rf.terms) {
        dims.push_back({"alpha." + t.name, 0.0, 1.0});
        initial.push_back(1.0 / double(rf.terms.size()));
    }
    auto split = [&](const bo::Point& x) {
        std::vector<std::vector<double>> thetas;
        std::size_t k = 0;
        for (const auto& t : rf.terms) {
            thetas.emplace_back(x.begin() + k, x.begin() + k + t.hypers.size());
            k += t.hypers.size();
        }
        return thetas;
    };
    EvaluationLog log;
    auto f = [&](const bo::Point& x) {
        std::vector<double> alpha(x.begin() + n_theta, x.end());
        return combined_objective(env, rf, split(x), alpha, cfg.cem, eval_seeds);
    };
    out.plan.weight_budget = 0;
    out.plan.order = {"joint"};
    out.plan.term_budgets["joint"] = cfg.total_budget;
    TermResult joint;
    joint.name = "joint";
    joint.budget = cfg.total_budget;
    for (const auto& d : dims) joint.dims.push_back(d.name);
    joint.trace = tuner(logged(log, "joint", f), bo::SearchSpace(std::move(dims)), stage_budget(cfg.total_budget, cfg),
                        derive_seed(seed, "bdo/joint"), dsl::print_canonical(rf), initial);
    if (joint.trace.empty_improvement) {
        out.alpha = std::vector<double>(rf.terms.size(), 1.0 / double(rf.terms.size()));
    } else {
        out.thetas = split(joint.trace.best_point);
        out.alpha = normalize_weights(std::span(joint.trace.best_point).subspan(n_theta));
    }
    joint.theta = joint.trace.best_point;
    out.terms.push_back(std::move(joint));
    out.weight_stage_skipped = true;
    out.rf.weights = out.alpha;
    out.evaluations = log.entries();
    return out;
}

}  // namespace cour::bdo
