#pragma once

// Gaussian-process surrogate (squared-exponential kernel) and an
// expected-improvement Bayesian optimization loop that maximizes a
// black-box objective over a box.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cour/error.hpp"

namespace cour::bo {

using Point = std::vector<double>;

class SingularKernel : public Error {
public:
    using Error::Error;
};

class NonFiniteInput : public Error {
public:
    using Error::Error;
};

struct Dim {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
};

class SearchSpace {
public:
    SearchSpace() = default;
    explicit SearchSpace(std::vector<Dim> dims);

    static constexpr std::size_t kMaxDims = 16;

    const std::vector<Dim>& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return dims_.size(); }
    Point to_unit(const Point& x) const;
    Point from_unit(const Point& u) const;
    bool contains(const Point& x) const;

private:
    std::vector<Dim> dims_;
};

struct Budget {
    int total_evals = 1;
    int init_evals = 1;

    /// init = max(2, ceil(B/4)), clipped to B; budgets of at most
    /// `lhs_only_up_to` evaluations are spent on the initial design alone.
    static Budget for_total(int total, int lhs_only_up_to = 0);
    void validate() const;
};

/// Stratified design: one point per stratum per dimension, strictly inside
/// the bounds.
std::vector<Point> latin_hypercube(const SearchSpace& space, int n, std::uint64_t seed);

struct KernelParams {
    double lengthscale = 1.0;
    double signal_var = 1.0;
    double noise_var = 0.0;
};

struct Posterior {
    double mean = 0.0;
    double var = 0.0;
};

double se_kernel(const Point& a, const Point& b, double lengthscale, double signal_var);

/// GP over points supplied in whatever coordinates the caller uses
/// (the optimizer feeds unit-box coordinates). Targets are standardized
/// internally; predictions come back in the original units.
class GPModel {
public:
    static constexpr double kJitterStart = 1e-9;
    static constexpr double kJitterMax = 1e-5;
    static constexpr int kGridSize = 7;

    /// Chooses lengthscale and signal variance by maximizing the log
    /// marginal likelihood over a 7x7 log grid (lengthscale 0.05..2,
    /// signal std 0.1..3 of standardized targets).
    static GPModel fit(std::vector<Point> X, std::vector<double> y, double noise_var);

    static GPModel fit_fixed(std::vector<Point> X, std::vector<double> y, KernelParams params);

    Posterior predict(const Point& x) const;

    const KernelParams& params() const noexcept { return params_; }
    double log_marginal_likelihood() const noexcept { return lml_; }
    double jitter() const noexcept { return jitter_; }
    double y_mean() const noexcept { return y_mean_; }
    double y_scale() const noexcept { return y_scale_; }
    double best_observed() const;
    const std::vector<Point>& X() const noexcept { return X_; }
    const std::vector<double>& y() const noexcept { return y_; }
    /// K + (noise + jitter) I in standardized units.
    Eigen::MatrixXd kernel_matrix() const;

private:
    static void check_inputs(const std::vector<Point>& X, const std::vector<double>& y);
    /// Factorizes with escalating jitter; false when jitter is exhausted.
    bool factorize(const KernelParams& p);

    std::vector<Point> X_;
    std::vector<double> y_;
    Eigen::VectorXd ys_;  // standardized targets
    double y_mean_ = 0.0;
    double y_scale_ = 1.0;
    KernelParams params_;
    double jitter_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> chol_;
    Eigen::VectorXd alpha_;
    double lml_ = -std::numeric_limits<double>::infinity();
};

double normal_pdf(double z);
double normal_cdf(double z);

/// EI for maximization; zero-variance points give max(mu - best, 0).
double expected_improvement(const GPModel& model, const Point& x, double best_y);
double expected_improvement(double mu, double sigma, double best_y);

inline constexpr int kCandidates = 512;
inline constexpr int kLocalRounds = 8;

/// Shifted Halton points in the unit box.
std::vector<Point> candidate_set(std::size_t dim, std::uint64_t seed, int count = kCandidates);

/// Returns the proposal in the model's (unit-box) coordinates.
Point propose_next(const GPModel& model, std::size_t dim, std::uint64_t seed, double best_y);
Point propose_next(const GPModel& model, std::size_t dim, std::uint64_t seed);

struct TraceEntry {
    Point point;
    double value = -std::numeric_limits<double>::infinity();
    int iteration = 0;
};

struct BOTrace {
    std::vector<TraceEntry> entries;
    Point best_point;
    double best_value = -std::numeric_limits<double>::infinity();
    bool empty_improvement = false;

    /// Running maximum after each entry.
    std::vector<double> running_best() const;
};

using Objective = std::function<double(const Point&)>;

struct BOOptions {
    double noise_var = 1e-6;
    int lhs_only_up_to = 0;
};

/// Evaluates exactly budget.total_evals points: the Latin hypercube first,
/// then EI proposals. Points whose objective throws cour::Error or returns
/// a non-finite value score -inf and stay out of the GP.
BOTrace bo_maximize(const Objective& objective, const SearchSpace& space, const Budget& budget,
                    std::uint64_t seed, const BOOptions& opts = {});

/// Same number of uniformly random points, for comparison.
BOTrace random_search(const Objective& objective, const SearchSpace& space, int evals, std::uint64_t seed);

}  // namespace cour::bo
