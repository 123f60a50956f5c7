#include "support.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <numeric>

namespace testing_support {

using namespace cour::dsl;

double round9(double v) { return std::strtod(format_number(v).c_str(), nullptr); }

EnvSignature small_signature() {
    EnvSignature sig;
    sig.state = {{"x", "m"}, {"v", "m/s"}, {"w", ""}};
    sig.action = {{"u", ""}, {"f", "N"}};
    return sig;
}

namespace {

struct Builder {
    std::mt19937_64& rng;
    const EnvSignature& sig;
    const std::vector<std::string>& hypers;
    std::vector<Node> nodes;
    std::vector<bool> used;

    int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
    double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

    int push(Node n) {
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int leaf() {
        Node n;
        switch (uniform(0, 3)) {
            case 0:
                n.kind = NodeKind::Constant;
                n.value = round9(real(-5.0, 5.0));
                break;
            case 1:
                n.kind = NodeKind::StateRef;
                n.ref = uniform(0, int(sig.state.size()) - 1);
                n.name = sig.state[n.ref].name;
                break;
            case 2:
                n.kind = NodeKind::ActionRef;
                n.ref = uniform(0, int(sig.action.size()) - 1);
                n.name = sig.action[n.ref].name;
                break;
            default: {
                if (hypers.empty()) return leaf();
                int h = uniform(0, int(hypers.size()) - 1);
                used[h] = true;
                n.kind = NodeKind::HyperRef;
                n.ref = h;
                n.name = hypers[h];
            }
        }
        return push(n);
    }

    int build(int depth) {
        if (depth <= 0 || uniform(0, 9) < 3) return leaf();
        Node n;
        switch (uniform(0, 2)) {
            case 0: {
                int c = build(depth - 1);
                n.kind = NodeKind::Unary;
                n.unary = static_cast<UnaryOp>(uniform(0, 4));
                n.lhs = c;
                break;
            }
            case 1: {
                int l = build(depth - 1);
                int r = build(depth - 1);
                n.kind = NodeKind::Binary;
                n.binary = static_cast<BinaryOp>(uniform(0, 6));
                n.lhs = l;
                n.rhs = r;
                break;
            }
            default: {
                int c = build(depth - 1);
                double a = round9(real(-3.0, 3.0));
                double b = round9(real(-3.0, 3.0));
                n.kind = NodeKind::Clip;
                n.lo = std::min(a, b);
                n.hi = std::max(a, b);
                n.lhs = c;
            }
        }
        return push(n);
    }

    // Appends a sum of each unused hyperparameter so every declared name is referenced.
    void cover() {
        for (std::size_t h = 0; h < hypers.size(); ++h) {
            if (used[h]) continue;
            int root = static_cast<int>(nodes.size()) - 1;
            Node ref;
            ref.kind = NodeKind::HyperRef;
            ref.ref = static_cast<int>(h);
            ref.name = hypers[h];
            int r = push(ref);
            Node add;
            add.kind = NodeKind::Binary;
            add.binary = BinaryOp::Add;
            add.lhs = root;
            add.rhs = r;
            push(add);
            used[h] = true;
        }
    }
};

}  // namespace

RewardTerm random_term(std::mt19937_64& rng, const EnvSignature& sig, const std::string& name, int max_depth) {
    RewardTerm t;
    t.name = name;
    t.aspect = "aspect_" + name;
    std::vector<std::string> names;
    const int n_hyper = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int i = 0; i < n_hyper; ++i) {
        HyperParam h;
        h.name = name + "_h" + std::to_string(i);
        double a = round9(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
        double b = round9(a + std::uniform_real_distribution<double>(0.1, 4.0)(rng));
        h.lo = a;
        h.hi = std::max(a, b);
        if (h.hi <= h.lo) h.hi = round9(h.lo + 1.0);
        h.default_value = round9(std::uniform_real_distribution<double>(h.lo, h.hi)(rng));
        h.default_value = std::clamp(h.default_value, h.lo, h.hi);
        t.hypers.push_back(h);
        names.push_back(h.name);
    }
    Builder b{rng, sig, names, {}, std::vector<bool>(names.size(), false)};
    b.build(max_depth);
    b.cover();
    t.expr = RewardExpr(std::move(b.nodes));
    return t;
}

RewardFunction random_function(std::mt19937_64& rng, const EnvSignature& sig) {
    RewardFunction rf;
    const int n = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int i = 0; i < n; ++i) {
        rf.terms.push_back(random_term(rng, sig, "t" + std::to_string(i)));
        rf.weights.push_back(round9(std::uniform_real_distribution<double>(0.0, 2.0)(rng)));
    }
    return rf;
}

cour::sim::TokenStream random_stream(std::mt19937_64& rng, int max_len, int alphabet) {
    cour::sim::TokenStream s;
    const int len = std::uniform_int_distribution<int>(0, max_len)(rng);
    std::uniform_int_distribution<int> pick(0, alphabet - 1);
    for (int i = 0; i < len; ++i) {
        int k = pick(rng);
        s.tokens.push_back({static_cast<cour::sim::TokenKind>(k % 4), std::string(1, char('a' + k))});
    }
    return s;
}

std::size_t dp_levenshtein(const cour::sim::TokenStream& a, const cour::sim::TokenStream& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a.tokens[i - 1] == b.tokens[j - 1] ? 0 : 1)});
    return d[n][m];
}

}  // namespace testing_support

namespace testing_support {

std::vector<cour::cuq::ComponentSample> random_batch(std::mt19937_64& rng, const EnvSignature& sig) {
    using cour::cuq::ComponentSample;
    using cour::cuq::Origin;
    std::vector<ComponentSample> out;
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) {
        const int kind = out.empty() ? 0 : std::uniform_int_distribution<int>(0, 2)(rng);
        RewardTerm t;
        if (kind == 0) {
            t = random_term(rng, sig, "c", 4);
        } else {
            t = out[std::uniform_int_distribution<std::size_t>(0, out.size() - 1)(rng)].term;
            if (kind == 1) {
                auto nodes = t.expr.nodes();
                for (auto& node : nodes)
                    if (node.kind == NodeKind::Constant) {
                        node.value = round9(node.value + 0.5);
                        break;
                    }
                t.expr = RewardExpr(std::move(nodes));
            }
        }
        t.name = "c";
        t.aspect = "speed";
        out.push_back(ComponentSample::from_term(std::move(t), Origin::Generated));
    }
    return out;
}

}  // namespace testing_support

#include <Eigen/Dense>

namespace testing_support {

cour::bo::Posterior dense_posterior(const cour::bo::GPModel& model, const cour::bo::Point& x) {
    const auto& X = model.X();
    const auto& y = model.y();
    const auto n = static_cast<Eigen::Index>(X.size());
    const auto& p = model.params();
    auto k = [&](const cour::bo::Point& a, const cour::bo::Point& b) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
        return p.signal_var * std::exp(-0.5 * d2 / (p.lengthscale * p.lengthscale));
    };
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= double(y.size());
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    double scale = std::sqrt(ss / double(y.size()));
    if (!(scale > 1e-12)) scale = 1.0;

    Eigen::MatrixXd K(n, n);
    Eigen::VectorXd ks(n), ys(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) K(i, j) = k(X[i], X[j]);
        K(i, i) += p.noise_var + model.jitter();
        ks(i) = k(X[i], x);
        ys(i) = (y[i] - mean) / scale;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd a = lu.solve(ys);
    Eigen::VectorXd b = lu.solve(ks);
    cour::bo::Posterior out;
    out.mean = mean + scale * ks.dot(a);
    out.var = std::max(0.0, p.signal_var - ks.dot(b)) * scale * scale;
    return out;
}

}  // namespace testing_support
