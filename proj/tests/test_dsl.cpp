#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "cour/dsl.hpp"
#include "support.hpp"

using namespace cour::dsl;
using testing_support::small_signature;

namespace {

EnvSignature pm() {
    EnvSignature sig;
    sig.state = {{"x", "m"}, {"v", "m/s"}, {"prev_u", ""}};
    sig.action = {{"u", ""}};
    return sig;
}

const char* kSpeed = "term speed { expr = 1 - abs(state.v - 1.0)/1.0; } combine = 1.0*speed;";

}  // namespace

TEST_CASE("single term parses with weight one") {
    auto rf = parse(kSpeed, pm());
    REQUIRE(rf.terms.size() == 1);
    CHECK(rf.terms[0].name == "speed");
    CHECK(rf.weights == std::vector<double>{1.0});
}

TEST_CASE("two terms keep declared weights") {
    auto rf = parse(
        "term a { expr = state.v; }\n"
        "term b { expr = -abs(action.u); }\n"
        "combine = 0.5*a + 0.5*b;",
        pm());
    REQUIRE(rf.terms.size() == 2);
    CHECK(rf.weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("unknown feature is reported by name") {
    try {
        parse("term a { expr = state.q; } combine = 1*a;", pm());
        FAIL("expected UnknownFeature");
    } catch (const UnknownFeature& e) {
        CHECK(e.name() == "q");
    }
}

TEST_CASE("undeclared and unused hyperparameters") {
    CHECK_THROWS_AS(parse("term a { expr = k * state.v; } combine = 1*a;", pm()), UndeclaredHyper);
    CHECK_THROWS_AS(parse("term a { hyper k in [0, 1] default 0.5; expr = state.v; } combine = 1*a;", pm()),
                    UnusedHyper);
}

TEST_CASE("duplicate term") {
    CHECK_THROWS_AS(parse("term a { expr = 1; } term a { expr = 2; } combine = 1*a;", pm()), DuplicateTerm);
}

TEST_CASE("syntax errors carry a position") {
    try {
        parse("term a {\n  expr = 1 + ;\n} combine = 1*a;", pm());
        FAIL("expected SyntaxError");
    } catch (const SyntaxError& e) {
        CHECK(e.line() == 2);
        CHECK(e.column() > 1);
    }
}

TEST_CASE("whitespace does not change canonical text") {
    auto a = parse("term s { expr = 1-abs(state.v-1.0); } combine = 1*s;", pm());
    auto b = parse("term s { expr = 1 - abs( state.v - 1.0 ); }\ncombine = 1 * s;", pm());
    CHECK(print_canonical(a) == print_canonical(b));
}

TEST_CASE("constants print with nine significant digits") {
    CHECK(format_number(0.30000000000000004) == "0.300000000");
    // Oracle: printf with %.8e carries exactly nine significant digits.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> mant(1.0, 10.0);
    std::uniform_int_distribution<int> ex(-4, 7);
    for (int i = 0; i < 500; ++i) {
        double v = mant(rng) * std::pow(10.0, ex(rng));
        char ref[64];
        std::snprintf(ref, sizeof ref, "%.8e", v);
        CHECK(std::strtod(format_number(v).c_str(), nullptr) == std::strtod(ref, nullptr));
    }
}

TEST_CASE("speed term values") {
    auto rf = parse(kSpeed, pm());
    for (double v : {1.0, 0.5}) {
        std::vector<double> s{0.0, v, 0.0}, a{0.0};
        CHECK(evaluate(rf.terms[0], s, a, Theta{}) == 1.0 - std::abs(v - 1.0) / 1.0);
    }
}

TEST_CASE("division by zero is a domain error") {
    auto rf = parse("term a { expr = state.v / action.u; } combine = 1*a;", pm());
    std::vector<double> s{0.0, 1.0, 0.0}, a{0.0};
    CHECK_THROWS_AS(evaluate(rf.terms[0], s, a, Theta{}), NumericalDomainError);
    auto sq = parse("term a { expr = sqrt(state.v); } combine = 1*a;", pm());
    std::vector<double> neg{0.0, -1.0, 0.0};
    CHECK_THROWS_AS(evaluate(sq.terms[0], neg, a, Theta{}), NumericalDomainError);
}

TEST_CASE("missing and out-of-bounds hyperparameters") {
    auto rf = parse("term a { hyper k in [0, 2] default 1; expr = k * state.v; } combine = 1*a;", pm());
    std::vector<double> s{0.0, 1.0, 0.0}, a{0.0};
    CHECK_THROWS_AS(evaluate(rf.terms[0], s, a, Theta{}), MissingHyper);
    CHECK_THROWS_AS(evaluate(rf.terms[0], s, a, Theta{{"k", 3.0}}), HyperOutOfBounds);
    CHECK(evaluate(rf.terms[0], s, a, Theta{{"k", 1.5}}) == 1.5);
}

TEST_CASE("combined evaluation is a weighted sum") {
    const char* src = "term a { expr = 1; } term b { expr = 0; } combine = 0.5*a + 0.5*b;";
    auto rf = parse(src, pm());
    std::vector<double> s{0.0, 0.0, 0.0}, a{0.0};
    std::vector<std::vector<double>> th{{}, {}};
    CHECK(evaluate_combined(rf, s, a, th) == 0.5);
    rf.weights = {0.0, 1.0};
    CHECK(evaluate_combined(rf, s, a, th) == 0.0);
    auto ones = parse("term a { expr = 1; } term b { expr = 1; } combine = 2*a + 3*b;", pm());
    CHECK(evaluate_combined(ones, s, a, th) == 5.0);
}

TEST_CASE("errors in combined evaluation name the term") {
    auto rf = parse("term ok { expr = 1; } term bad { expr = 1 / action.u; } combine = 1*ok + 1*bad;", pm());
    std::vector<double> s{0.0, 0.0, 0.0}, a{0.0};
    try {
        evaluate_combined(rf, s, a, std::vector<std::vector<double>>{{}, {}});
        FAIL("expected TermEvaluationError");
    } catch (const TermEvaluationError& e) {
        CHECK(e.term() == "bad");
    }
}

TEST_CASE("decompose and recombine") {
    auto rf = parse("term a { expr = 1; } term b { expr = state.v; } term c { expr = action.u; }"
                    "combine = 1*a + 2*b + 3*c;",
                    pm());
    auto parts = decompose(rf);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].term.name == "a");
    CHECK(parts[2].weight == 3.0);
    CHECK(recombine(parts) == rf);
    CHECK(decompose(parse(kSpeed, pm())).size() == 1);
}

TEST_CASE("generated functions round-trip and evaluate identically") {
    const auto sig = small_signature();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    for (int i = 0; i < 200; ++i) {
        auto rf = testing_support::random_function(rng, sig);
        auto again = parse(print_canonical(rf), sig);
        REQUIRE(again == rf);
        std::vector<double> s{val(rng), val(rng), val(rng)}, a{val(rng), val(rng)};
        for (std::size_t t = 0; t < rf.terms.size(); ++t) {
            auto th = rf.terms[t].default_theta();
            double x = 0, y = 0;
            bool ex = false, ey = false;
            try { x = evaluate(rf.terms[t], s, a, th); } catch (const NumericalDomainError&) { ex = true; }
            try { y = evaluate(again.terms[t], s, a, th); } catch (const NumericalDomainError&) { ey = true; }
            CHECK(ex == ey);
            if (!ex && !ey) CHECK(x == y);
        }
    }
}

TEST_CASE("clip output stays inside its bounds") {
    auto rf = parse("term c { expr = clip(state.v * 100, -0.5, 0.25); } combine = 1*c;", pm());
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> s{0.0, n(rng), 0.0}, a{0.0};
        double r = evaluate(rf.terms[0], s, a, Theta{});
        CHECK(r >= -0.5);
        CHECK(r <= 0.25);
    }
}

TEST_CASE("evaluation is linear in the weights") {
    const auto sig = small_signature();
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    int checked = 0;
    for (int i = 0; i < 100; ++i) {
        auto rf = testing_support::random_function(rng, sig);
        std::vector<std::vector<double>> th;
        for (const auto& t : rf.terms) th.push_back(t.default_theta());
        std::vector<double> s{val(rng), val(rng), val(rng)}, a{val(rng), val(rng)};
        try {
            double base = evaluate_combined(rf, s, a, th);
            auto scaled = rf;
            for (auto& w : scaled.weights) w *= 4.0;
            CHECK(evaluate_combined(scaled, s, a, th) == doctest::Approx(4.0 * base).epsilon(1e-12));
            ++checked;
        } catch (const NumericalDomainError&) {
        }
    }
    CHECK(checked > 20);
}
