#include "cour/bayesopt.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "cour/seed.hpp"

namespace cour::bo {

// ------------------------------------------------------------------ space

SearchSpace::SearchSpace(std::vector<Dim> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > kMaxDims)
        throw ConfigError("search space needs between 1 and 16 dimensions, got " + std::to_string(dims_.size()));
    std::set<std::string> names;
    for (const auto& d : dims_) {
        if (!(d.lo < d.hi)) throw ConfigError("empty interval for dimension '" + d.name + "'");
        if (!names.insert(d.name).second) throw ConfigError("duplicate dimension '" + d.name + "'");
    }
}

Point SearchSpace::to_unit(const Point& x) const {
    Point u(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) u[i] = (x[i] - dims_[i].lo) / (dims_[i].hi - dims_[i].lo);
    return u;
}

Point SearchSpace::from_unit(const Point& u) const {
    Point x(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        x[i] = std::clamp(dims_[i].lo + u[i] * (dims_[i].hi - dims_[i].lo), dims_[i].lo, dims_[i].hi);
    return x;
}

bool SearchSpace::contains(const Point& x) const {
    if (x.size() != dims_.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] >= dims_[i].lo && x[i] <= dims_[i].hi)) return false;
    return true;
}

Budget Budget::for_total(int total, int lhs_only_up_to) {
    Budget b;
    b.total_evals = total;
    if (total <= lhs_only_up_to) {
        b.init_evals = total;
    } else {
        b.init_evals = std::min(total, std::max(2, (total + 3) / 4));
    }
    b.validate();
    return b;
}

void Budget::validate() const {
    if (total_evals < 1) throw ConfigError("optimization budget must be positive");
    if (init_evals < 1 || init_evals > total_evals)
        throw ConfigError("initial design size must lie in [1, budget]");
}

std::vector<Point> latin_hypercube(const SearchSpace& space, int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("latin_hypercube needs n >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t d = space.size();
    std::vector<Point> pts(n, Point(d));
    std::vector<int> perm(n);
    for (std::size_t k = 0; k < d; ++k) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Dim& dim = space.dims()[k];
        const double width = dim.hi - dim.lo;
        for (int i = 0; i < n; ++i) {
            double r = unif(rng);
            if (r == 0.0) r = 0.5;
            double x = dim.lo + width * ((perm[i] + r) / n);
            // Keep strictly interior even when the affine map rounds onto a bound.
            if (x <= dim.lo) x = std::nextafter(dim.lo, dim.hi);
            if (x >= dim.hi) x = std::nextafter(dim.hi, dim.lo);
            pts[i][k] = x;
        }
    }
    return pts;
}

// --------------------------------------------------------------------- GP

double se_kernel(const Point& a, const Point& b, double lengthscale, double signal_var) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        d2 += d * d;
    }
    return signal_var * std::exp(-0.5 * d2 / (lengthscale * lengthscale));
}

void GPModel::check_inputs(const std::vector<Point>& X, const std::vector<double>& y) {
    if (X.empty() || X.size() != y.size()) throw Error("GP needs |X| = |y| >= 1");
    const std::size_t d = X.front().size();
    for (const auto& x : X) {
        if (x.size() != d) throw Error("GP inputs have inconsistent dimension");
        for (double v : x)
            if (!std::isfinite(v)) throw NonFiniteInput("non-finite GP input");
    }
    for (double v : y)
        if (!std::isfinite(v)) throw NonFiniteInput("non-finite GP target");
}

Eigen::MatrixXd GPModel::kernel_matrix() const {
    const auto n = static_cast<Eigen::Index>(X_.size());
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            double k = se_kernel(X_[i], X_[j], params_.lengthscale, params_.signal_var);
            K(i, j) = k;
            K(j, i) = k;
        }
        K(i, i) += params_.noise_var + jitter_;
    }
    return K;
}

bool GPModel::factorize(const KernelParams& p) {
    params_ = p;
    for (double jitter = kJitterStart; jitter <= kJitterMax * (1 + 1e-12); jitter *= 2.0) {
        jitter_ = jitter;
        chol_.compute(kernel_matrix());
        if (chol_.info() == Eigen::Success) {
            alpha_ = chol_.solve(ys_);
            const Eigen::MatrixXd L = chol_.matrixL();
            double logdet = 0.0;
            for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += std::log(L(i, i));
            const double n = static_cast<double>(ys_.size());
            lml_ = -0.5 * ys_.dot(alpha_) - logdet - 0.5 * n * std::log(2.0 * M_PI);
            if (std::isfinite(lml_)) return true;
        }
    }
    lml_ = -std::numeric_limits<double>::infinity();
    return false;
}

static void standardize(const std::vector<double>& y, Eigen::VectorXd& ys, double& mean, double& scale) {
    const double n = static_cast<double>(y.size());
    mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    scale = std::sqrt(ss / n);
    if (!(scale > 1e-12)) scale = 1.0;
    ys.resize(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) ys(static_cast<Eigen::Index>(i)) = (y[i] - mean) / scale;
}

GPModel GPModel::fit_fixed(std::vector<Point> X, std::vector<double> y, KernelParams params) {
    check_inputs(X, y);
    if (!(params.lengthscale > 0) || !(params.signal_var > 0) || !(params.noise_var >= 0))
        throw ConfigError("invalid kernel parameters");
    GPModel m;
    m.X_ = std::move(X);
    m.y_ = std::move(y);
    standardize(m.y_, m.ys_, m.y_mean_, m.y_scale_);
    if (!m.factorize(params)) throw SingularKernel("kernel matrix not positive definite after jitter");
    return m;
}

GPModel GPModel::fit(std::vector<Point> X, std::vector<double> y, double noise_var) {
    check_inputs(X, y);
    if (!(noise_var >= 0)) throw ConfigError("noise variance must be non-negative");
    GPModel m;
    m.X_ = std::move(X);
    m.y_ = std::move(y);
    standardize(m.y_, m.ys_, m.y_mean_, m.y_scale_);

    std::optional<KernelParams> best;
    double best_lml = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kGridSize; ++i) {
        double ell = 0.05 * std::pow(2.0 / 0.05, i / double(kGridSize - 1));
        for (int j = 0; j < kGridSize; ++j) {
            double sf = 0.1 * std::pow(3.0 / 0.1, j / double(kGridSize - 1));
            KernelParams p{ell, sf * sf, noise_var};
            if (m.factorize(p) && m.lml_ > best_lml) {
                best_lml = m.lml_;
                best = p;
            }
        }
    }
    if (!best) throw SingularKernel("no kernel setting on the grid could be factorized");
    m.factorize(*best);
    return m;
}

Posterior GPModel::predict(const Point& x) const {
    const auto n = static_cast<Eigen::Index>(X_.size());
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks(i) = se_kernel(X_[i], x, params_.lengthscale, params_.signal_var);
    double mu = ks.dot(alpha_);
    Eigen::VectorXd v = chol_.matrixL().solve(ks);
    double var = params_.signal_var - v.squaredNorm();
    Posterior p;
    p.mean = y_mean_ + y_scale_ * mu;
    p.var = std::max(0.0, var) * y_scale_ * y_scale_;
    return p;
}

double GPModel::best_observed() const { return *std::max_element(y_.begin(), y_.end()); }

// -------------------------------------------------------------------- EI

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double expected_improvement(double mu, double sigma, double best_y) {
    double gain = mu - best_y;
    if (!(sigma > 1e-12)) return std::max(gain, 0.0);
    double z = gain / sigma;
    return std::max(0.0, gain * normal_cdf(z) + sigma * normal_pdf(z));
}

double expected_improvement(const GPModel& model, const Point& x, double best_y) {
    Posterior p = model.predict(x);
    return expected_improvement(p.mean, std::sqrt(p.var), best_y);
}

// -------------------------------------------------------------- proposals

static double radical_inverse(std::uint64_t i, unsigned base) {
    double inv = 1.0 / base;
    double f = inv;
    double r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

std::vector<Point> candidate_set(std::size_t dim, std::uint64_t seed, int count) {
    static constexpr std::array<unsigned, 16> primes = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
    if (dim == 0 || dim > primes.size()) throw ConfigError("candidate_set supports 1..16 dimensions");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> shift(dim);
    for (auto& s : shift) s = unif(rng);
    std::vector<Point> pts(count, Point(dim));
    for (int i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
            double v = radical_inverse(static_cast<std::uint64_t>(i) + 1, primes[k]) + shift[k];
            pts[i][k] = v - std::floor(v);
        }
    }
    return pts;
}

Point propose_next(const GPModel& model, std::size_t dim, std::uint64_t seed, double best_y) {
    auto cands = candidate_set(dim, seed);
    std::size_t best = 0;
    double best_ei = expected_improvement(model, cands[0], best_y);
    for (std::size_t i = 1; i < cands.size(); ++i) {
        double ei = expected_improvement(model, cands[i], best_y);
        if (ei > best_ei) {
            best_ei = ei;
            best = i;
        }
    }
    Point x = cands[best];
    double step = 0.5 / std::pow(static_cast<double>(kCandidates), 1.0 / static_cast<double>(dim));
    for (int round = 0; round < kLocalRounds; ++round, step *= 0.5) {
        for (std::size_t k = 0; k < dim; ++k) {
            for (double dir : {1.0, -1.0}) {
                Point y = x;
                y[k] = std::clamp(x[k] + dir * step, 0.0, 1.0);
                double ei = expected_improvement(model, y, best_y);
                if (ei > best_ei) {
                    best_ei = ei;
                    x = std::move(y);
                }
            }
        }
    }
    return x;
}

Point propose_next(const GPModel& model, std::size_t dim, std::uint64_t seed) {
    return propose_next(model, dim, seed, model.best_observed());
}

// ------------------------------------------------------------------- loop

std::vector<double> BOTrace::running_best() const {
    std::vector<double> out;
    out.reserve(entries.size());
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : entries) {
        best = std::max(best, e.value);
        out.push_back(best);
    }
    return out;
}

static double safe_eval(const Objective& f, const Point& x) {
    try {
        double v = f(x);
        return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const Error&) {
        return -std::numeric_limits<double>::infinity();
    }
}

static void finish(BOTrace& trace) {
    for (const auto& e : trace.entries) {
        if (e.value > trace.best_value) {
            trace.best_value = e.value;
            trace.best_point = e.point;
        }
    }
    trace.empty_improvement = !std::isfinite(trace.best_value);
    if (trace.empty_improvement && !trace.entries.empty()) trace.best_point = trace.entries.front().point;
}

BOTrace bo_maximize(const Objective& objective, const SearchSpace& space, const Budget& budget,
                    std::uint64_t seed, const BOOptions& opts) {
    budget.validate();
    if (space.size() == 0) throw ConfigError("bo_maximize needs a non-empty search space");
    BOTrace trace;
    auto record = [&](Point x) {
        double v = safe_eval(objective, x);
        trace.entries.push_back({std::move(x), v, static_cast<int>(trace.entries.size())});
    };
    for (auto& x : latin_hypercube(space, budget.init_evals, derive_seed(seed, "lhs"))) record(std::move(x));

    std::vector<Point> fallback;
    for (int it = budget.init_evals; it < budget.total_evals; ++it) {
        std::vector<Point> X;
        std::vector<double> y;
        for (const auto& e : trace.entries) {
            if (std::isfinite(e.value)) {
                X.push_back(space.to_unit(e.point));
                y.push_back(e.value);
            }
        }
        std::optional<Point> next;
        if (!X.empty()) {
            try {
                GPModel model = GPModel::fit(std::move(X), std::move(y), opts.noise_var);
                next = space.from_unit(propose_next(model, space.size(), derive_seed(seed, "propose", it)));
            } catch (const SingularKernel&) {
            }
        }
        if (!next) {
            if (fallback.empty())
                fallback = candidate_set(space.size(), derive_seed(seed, "fallback"), budget.total_evals);
            next = space.from_unit(fallback[it]);
        }
        record(std::move(*next));
    }
    finish(trace);
    return trace;
}

BOTrace random_search(const Objective& objective, const SearchSpace& space, int evals, std::uint64_t seed) {
    if (evals < 1) throw ConfigError("random_search needs a positive budget");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    BOTrace trace;
    for (int i = 0; i < evals; ++i) {
        Point u(space.size());
        for (auto& v : u) v = unif(rng);
        Point x = space.from_unit(u);
        double v = safe_eval(objective, x);
        trace.entries.push_back({std::move(x), v, i});
    }
    finish(trace);
    return trace;
}

}  // namespace cour::bo
