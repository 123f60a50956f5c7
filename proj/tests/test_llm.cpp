#include <doctest.h>

#include <cmath>
#include <set>

#include "cour/env.hpp"
#include "cour/llm.hpp"

using namespace cour;
using namespace cour::llm;

namespace {

TaskDescription pm_task() {
    env::PointMassVelocity pm;
    return {pm.default_task(), pm.name(), pm.signature(), pm.aspects()};
}

std::unique_ptr<Gateway> mock(double perturbation, std::uint64_t seed = 7) {
    ProviderConfig c;
    c.perturbation = perturbation;
    c.seed = seed;
    return make_gateway(c, 0);
}

// Replays a fixed list of responses and records what it was asked.
class Scripted final : public Backend {
public:
    explicit Scripted(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    Completion complete(const CompletionRequest& r) override {
        seen.push_back(r.messages);
        std::string t = replies_[std::min(next_, replies_.size() - 1)];
        ++next_;
        return {t, false};
    }
    sim::EmbeddingVector embed(std::string_view s) override { return offline_embedding(s); }
    std::string id() const override { return "scripted"; }
    std::string embedding_id() const override { return kOfflineEmbedderId; }

    std::vector<std::vector<Message>> seen;

private:
    std::vector<std::string> replies_;
    std::size_t next_ = 0;
};

const char* kGood =
    "```dsl\nterm speed aspect speed { expr = state.v; }\nterm stability aspect stability { expr = 0; }\n"
    "term smoothness aspect smoothness { expr = 0; }\ncombine = 1 * speed + 1 * stability + 1 * smoothness;\n```";

}  // namespace

TEST_CASE("mock generation is deterministic and parses") {
    auto task = pm_task();
    auto a = mock(0.05)->generate_reward(task, 5);
    auto b = mock(0.05)->generate_reward(task, 5);
    REQUIRE(a.sources.size() == 5);
    CHECK(a.sources == b.sources);
    for (const auto& s : a.sources) {
        auto rf = dsl::parse(s, task.signature);
        std::set<std::string> aspects;
        for (const auto& t : rf.terms) aspects.insert(t.aspect);
        CHECK(aspects == std::set<std::string>{"speed", "stability", "smoothness"});
    }
    CHECK(a.attempts == std::vector<int>(5, 1));
    CHECK(mock(0.05, 8)->generate_reward(task, 5).sources != a.sources);
}

TEST_CASE("zero perturbation returns corpus templates") {
    auto task = pm_task();
    std::set<std::string> templates;
    for (const auto& e : builtin_corpus()) {
        try {
            templates.insert(dsl::print_term(dsl::parse_term(e.dsl_source, &task.signature)));
        } catch (const Error&) {
        }
    }
    auto r = mock(0.0)->generate_reward(task, 4);
    for (const auto& s : r.sources)
        for (const auto& t : dsl::parse(s, task.signature).terms) CHECK(templates.count(dsl::print_term(t)) == 1);
}

TEST_CASE("alternatives") {
    auto task = pm_task();
    auto gw = mock(0.05);
    const std::string comp = "term speed aspect speed {\n  hyper k in [0.5, 2] default 1;\n  expr = -abs(state.v - k);\n}\n";
    auto alt = gw->generate_alternatives(comp, task, 3);
    CHECK(alt.sources.size() == 3);
    for (const auto& s : alt.sources) CHECK(dsl::parse_term(s, &task.signature).aspect == "speed");
    CHECK(gw->generate_alternatives(comp, task, 1).sources.size() == 1);
    CHECK(gw->generate_alternatives(comp, task, 3, 1).sources != alt.sources);

    auto odd = task;
    odd.aspects.push_back("speediness");
    ProviderConfig c;
    c.alternative_affinity = 0.0;
    auto fallback = make_gateway(c, 3)->generate_alternatives(
        "term speediness aspect speediness { expr = state.v; }", odd, 2);
    CHECK(fallback.aspect_fallback);
    CHECK_FALSE(alt.aspect_fallback);
}

TEST_CASE("parse failures are re-prompted then reported") {
    auto task = pm_task();
    auto* raw = new Scripted({"not a reward", "still not", kGood});
    Gateway gw{std::unique_ptr<Backend>(raw)};
    auto r = gw.generate_reward(task, 1);
    CHECK(r.attempts == std::vector<int>{3});
    REQUIRE(raw->seen.size() == 3);
    CHECK(raw->seen[1].size() == raw->seen[0].size() + 2);
    std::string parse_error;
    try {
        dsl::parse("not a reward\n", task.signature);
    } catch (const dsl::SyntaxError& e) {
        parse_error = e.what();
    }
    REQUIRE_FALSE(parse_error.empty());
    CHECK(raw->seen[1].back().content.find(parse_error) != std::string::npos);
    CHECK(raw->seen[1][raw->seen[1].size() - 2].content == "not a reward");

    auto* bad = new Scripted({"nope"});
    Gateway gw2{std::unique_ptr<Backend>(bad)};
    try {
        gw2.generate_reward(task, 2);
        FAIL("expected GenerationError");
    } catch (const GenerationError& e) {
        CHECK(e.sample_index() == 0);
        CHECK_FALSE(e.last_error().empty());
    }
    CHECK(bad->seen.size() == std::size_t(kParseAttempts));

    // A reward missing a requested aspect is rejected like a parse error.
    auto* partial = new Scripted({"term speed aspect speed { expr = state.v; }\ncombine = 1 * speed;"});
    Gateway gw3{std::unique_ptr<Backend>(partial)};
    CHECK_THROWS_AS(gw3.generate_reward(task, 1), GenerationError);
}

TEST_CASE("proposals stay in the box") {
    auto gw = mock(0.05);
    ProposalRequest p;
    p.names = {"a", "b"};
    p.lo = {0, -1};
    p.hi = {1, 1};
    p.initial = {0.5, 0.0};
    CHECK(gw->propose_values(p) == p.initial);
    for (int i = 0; i < 30; ++i) {
        auto v = gw->propose_values(p);
        CHECK(v.size() == 2);
        CHECK(v[0] >= 0);
        CHECK(v[0] <= 1);
        CHECK(v[1] >= -1);
        CHECK(v[1] <= 1);
        p.history.emplace_back(v, -std::abs(v[0] - 0.2));
    }
    CHECK(gw->calls() == 31);
}

TEST_CASE("offline embeddings") {
    auto a = offline_embedding("term s aspect speed { hyper k in [0, 1] default 0.5; expr = state.v * k; }");
    auto b = offline_embedding("term s aspect speed { hyper q in [0, 1] default 0.5; expr = state.v * q; }");
    CHECK(a.values.size() == kOfflineDim);
    CHECK(a == b);
    double n = 0.0;
    for (double v : a.values) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-12);
    CHECK(offline_embedding("state.v") == offline_embedding("state.v"));
}

TEST_CASE("provider config validation") {
    ProviderConfig c;
    CHECK_NOTHROW(c.validate());
    c.perturbation = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    ProviderConfig h;
    h.kind = ProviderConfig::Kind::Http;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h.endpoint = "http://127.0.0.1:9/v1/chat";
    h.model = "m";
    CHECK_NOTHROW(h.validate());
    h.max_in_flight = 0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h.max_in_flight = 2;
    h.embedding_endpoint = "http://127.0.0.1:9/v1/embed";
    CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("unreachable http provider") {
    ProviderConfig h;
    h.kind = ProviderConfig::Kind::Http;
    h.endpoint = "http://127.0.0.1:9/v1/chat";
    h.model = "m";
    h.timeout_s = 1.0;
    h.max_retries = 0;
    auto gw = make_gateway(h, 0);
    CHECK_THROWS_AS(gw->generate_reward(pm_task(), 1), ProviderError);
    // Embeddings fall back to the offline embedder.
    CHECK(gw->embed("state.v") == offline_embedding("state.v"));
}

TEST_CASE("code extraction") {
    CHECK(extract_code("```dsl\nterm a { }\n```") == "term a { }\n");
    CHECK(extract_code("Here:\n```\nx\n```\nthanks") == "x\n");
    CHECK(extract_code("  plain  ") == "plain\n");
    CHECK(extract_code("   ").empty());
}

TEST_CASE("corpus and prompts") {
    auto c = builtin_corpus();
    CHECK(c.size() >= 16);
    CHECK_THROWS_AS(parse_corpus("{}"), ConfigError);
    CHECK_THROWS_AS(parse_corpus("[]"), ConfigError);
    CHECK_THROWS_AS(parse_corpus("[{\"aspect\": \"a\"}]"), ConfigError);
    CHECK_THROWS_AS(parse_corpus("[oops"), ConfigError);
    CHECK(parse_corpus("[{\"aspect\": \"a\", \"dsl_source\": \"x\"}]").front().note.empty());
    auto h = prompt_hashes();
    CHECK_FALSE(h.empty());
    for (const auto& [name, digest] : h) CHECK(digest.size() == 16);
    CHECK(h == prompt_hashes());
}
