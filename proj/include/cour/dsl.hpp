#pragma once

// Reward expression language.
//
//   term <name> [aspect <tag>] {
//     hyper <h> in [<lo>, <hi>] default <value>;
//     expr = <expression>;
//   }
//   combine = <w1> * <name1> + <w2> * <name2> ...;
//
// Expressions are built from number literals, `state.<feature>`,
// `action.<feature>`, hyperparameter names, the infix operators + - * /,
// unary minus, abs/exp/tanh/sqrt(x), min/max/pow(x, y) and
// clip(x, <lo>, <hi>) with literal bounds. `#` starts a line comment.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cour/error.hpp"

namespace cour::dsl {

// ---------------------------------------------------------------- errors

class SyntaxError : public Error {
public:
    SyntaxError(const std::string& what, int line, int column);
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

/// Raised for reference errors, carrying the offending name.
class NameError : public Error {
public:
    NameError(const std::string& what, std::string name) : Error(what), name_(std::move(name)) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class UnknownFeature : public NameError {
public:
    explicit UnknownFeature(const std::string& name);
};

class UndeclaredHyper : public NameError {
public:
    explicit UndeclaredHyper(const std::string& name);
};

class UnusedHyper : public NameError {
public:
    explicit UnusedHyper(const std::string& name);
};

class DuplicateTerm : public NameError {
public:
    explicit DuplicateTerm(const std::string& name);
};

class MissingHyper : public NameError {
public:
    explicit MissingHyper(const std::string& name);
};

class HyperOutOfBounds : public NameError {
public:
    HyperOutOfBounds(const std::string& name, double value);
};

class NumericalDomainError : public Error {
public:
    NumericalDomainError(const std::string& what, std::string path);
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Wraps an evaluation error raised inside a specific term.
class TermEvaluationError : public NumericalDomainError {
public:
    TermEvaluationError(const std::string& term, const NumericalDomainError& cause);
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

// ----------------------------------------------------------------- types

struct Feature {
    std::string name;
    std::string unit;
    bool operator==(const Feature&) const = default;
};

struct EnvSignature {
    std::vector<Feature> state;
    std::vector<Feature> action;

    /// Throws ConfigError on duplicate names or an empty state list.
    void validate() const;
    std::optional<int> state_index(std::string_view name) const;
    std::optional<int> action_index(std::string_view name) const;
    bool operator==(const EnvSignature&) const = default;
};

enum class NodeKind : std::uint8_t { Constant, StateRef, ActionRef, HyperRef, Unary, Binary, Clip };
enum class UnaryOp : std::uint8_t { Neg, Abs, Exp, Tanh, Sqrt };
enum class BinaryOp : std::uint8_t { Add, Sub, Mul, Div, Min, Max, Pow };

inline constexpr int kMaxDepth = 64;

struct Node {
    NodeKind kind = NodeKind::Constant;
    UnaryOp unary = UnaryOp::Neg;
    BinaryOp binary = BinaryOp::Add;
    double value = 0.0;  // Constant
    double lo = 0.0;     // Clip
    double hi = 0.0;     // Clip
    std::string name;    // StateRef / ActionRef / HyperRef
    int ref = -1;        // resolved feature or hyper index, -1 when unbound
    int lhs = -1;        // child index (Unary, Binary, Clip)
    int rhs = -1;        // second child (Binary)
};

/// Structural equality: same shape, names and bit-identical constants.
/// Resolved indices are ignored.
bool same_node(const Node& a, const Node& b);

/// Expression tree stored in post-order: every child precedes its parent
/// and the root is the last node. Immutable after construction.
class RewardExpr {
public:
    RewardExpr() = default;
    explicit RewardExpr(std::vector<Node> nodes);

    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    int root() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
    bool empty() const noexcept { return nodes_.empty(); }
    int depth() const;
    /// "root", "root.0", "root.1.0", ... for a node index.
    std::string path_of(int index) const;

    bool operator==(const RewardExpr& other) const;

private:
    std::vector<Node> nodes_;
};

struct HyperParam {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
    double default_value = 0.0;
    bool operator==(const HyperParam&) const = default;
};

struct RewardTerm {
    std::string name;
    std::string aspect;
    std::vector<HyperParam> hypers;
    RewardExpr expr;

    std::optional<int> hyper_index(std::string_view name) const;
    std::vector<double> default_theta() const;
    bool operator==(const RewardTerm&) const = default;
};

struct RewardFunction {
    std::vector<RewardTerm> terms;
    std::vector<double> weights;

    std::optional<int> term_index(std::string_view name) const;
    bool operator==(const RewardFunction&) const = default;
};

/// Hyperparameter values keyed by name, one map per term name.
using Theta = std::map<std::string, double>;
using ThetaByTerm = std::map<std::string, Theta>;

// ------------------------------------------------------------ operations

/// Parses a full reward function. Every state/action reference is
/// resolved against `sig`.
RewardFunction parse(std::string_view source, const EnvSignature& sig);

/// Parses a single `term` block. With a null signature feature names are
/// accepted unchecked and left unresolved (useful for tokenizing and
/// embedding text whose environment is unknown).
RewardTerm parse_term(std::string_view source, const EnvSignature* sig);

/// Full function without a signature (feature references left unresolved).
RewardFunction parse_unbound(std::string_view source);

/// Re-resolves feature references of an unbound term against `sig`.
RewardTerm bind(RewardTerm term, const EnvSignature& sig);

/// Nine significant digits, trailing zeros kept: 0.1 -> "0.100000000".
std::string format_number(double v);

std::string print_expr(const RewardExpr& expr);
std::string print_term(const RewardTerm& term);
std::string print_canonical(const RewardFunction& rf);

/// Validates a name->value map against the term's hyperparameters and
/// returns the values in declaration order.
std::vector<double> resolve_theta(const RewardTerm& term, const Theta& theta);

/// Fast path: `theta` is in declaration order and already validated.
double evaluate(const RewardTerm& term, std::span<const double> s, std::span<const double> a,
                std::span<const double> theta);

double evaluate(const RewardTerm& term, std::span<const double> s, std::span<const double> a,
                const Theta& theta);

double evaluate_combined(const RewardFunction& rf, std::span<const double> s,
                         std::span<const double> a, std::span<const std::vector<double>> thetas);

double evaluate_combined(const RewardFunction& rf, std::span<const double> s,
                         std::span<const double> a, const ThetaByTerm& thetas);

struct WeightedTerm {
    RewardTerm term;
    double weight;
};

std::vector<WeightedTerm> decompose(const RewardFunction& rf);
RewardFunction recombine(std::vector<WeightedTerm> parts);

/// Returns a copy of `term` with each hyperparameter default replaced by
/// the given value (used to inline optimized values into canonical text).
RewardTerm with_defaults(RewardTerm term, std::span<const double> theta);

}  // namespace cour::dsl
