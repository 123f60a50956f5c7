#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "cour/pipeline.hpp"

using namespace cour;
using namespace cour::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig small(const std::string& env = "grid-reach", std::uint64_t seed = 3) {
    RunConfig c;
    c.env = env;
    c.seed = seed;
    c.eval_seeds = 2;
    c.cuq.n_samples = 3;
    c.bdo.total_budget = 15;
    c.bdo.min_evals = 2;
    c.bdo.cem = {4, 8, 0.25, 1.0, 1e-3};
    return c;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cour_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("offline runs are reproducible and validate") {
    for (const auto& env : {"grid-reach", "point-mass-velocity", "balance-pole"}) {
        CAPTURE(env);
        auto a = run_pipeline(small(env));
        auto b = run_pipeline(small(env));
        REQUIRE(a.complete);
        CHECK(strip_timing(a.doc) == strip_timing(b.doc));
        CHECK(a.doc.at("status") == "complete");
        CHECK(a.doc.at("total_evaluations") == 15);
        CHECK(a.doc.at("bdo").at("evaluations").size() == 15);
        auto v = validate_report(a.doc, false);
        CHECK_MESSAGE(v.ok, v.message);
    }
    CHECK(strip_timing(run_pipeline(small("grid-reach", 4)).doc) != strip_timing(run_pipeline(small()).doc));
}

TEST_CASE("tampered reports fail validation") {
    auto r = run_pipeline(small("point-mass-velocity"));
    REQUIRE(r.complete);
    auto doc = r.doc;
    doc["validation"]["mean"] = doc["validation"]["mean"].get<double>() + 0.25;
    CHECK_FALSE(validate_report(doc, false).ok);
    doc = r.doc;
    auto alpha = doc["final"]["alpha"];
    auto first = alpha.begin().key();
    doc["final"]["alpha"][first] = alpha[first].get<double>() * 0.1;
    doc["final"]["theta"] = json::object();
    auto v = validate_report(doc, false);
    CHECK_FALSE(v.ok);
    CHECK_FALSE(validate_report(json::object(), false).ok);
}

TEST_CASE("full validation replays against the stored library") {
    auto dir = scratch("full");
    auto cfg = small("grid-reach", 5);
    cfg.library_path = (dir / "lib.jsonl").string();
    auto first = run_pipeline(cfg);
    REQUIRE(first.complete);
    cfg.seed = 6;
    auto second = run_pipeline(cfg);
    REQUIRE(second.complete);
    CHECK(second.doc.at("library").at("records_used").get<int>() > 0);
    auto v = validate_report(second.doc, true);
    CHECK_MESSAGE(v.ok, v.message);
    auto doc = second.doc;
    doc["generation"]["n"] = 99;
    CHECK_FALSE(validate_report(doc, true).ok);
}

TEST_CASE("ablation modes are wired") {
    auto cfg = small("point-mass-velocity");
    cfg.mode = Mode::NoCuq;
    auto n = run_pipeline(cfg);
    REQUIRE(n.complete);
    CHECK(n.doc.at("uncertainty").empty());
    CHECK(n.doc.at("generation").at("n") == 1);
    CHECK(n.provider_calls == 1);
    for (const auto& c : n.doc.at("components")) {
        CHECK(c.at("sample_index") == 0);
        CHECK(n.doc.at("generation").at("sources")[0].get<std::string>().find(c.at("source").get<std::string>()) !=
              std::string::npos);
    }
    CHECK(n.doc.at("total_evaluations") == 15);

    cfg.mode = Mode::MonolithicBo;
    auto m = run_pipeline(cfg);
    REQUIRE(m.complete);
    REQUIRE(m.doc.at("bdo").at("terms").size() == 1);
    CHECK(m.doc.at("bdo").at("terms")[0].at("name") == "joint");
    CHECK(m.doc.at("bdo").at("weights").at("skipped") == true);
    CHECK(m.doc.at("total_evaluations") == 15);

    cfg.mode = Mode::LlmTune;
    auto l = run_pipeline(cfg);
    REQUIRE(l.complete);
    CHECK(l.doc.at("total_evaluations") == 15);
    CHECK(l.provider_calls > l.doc.at("generation").at("n").get<std::size_t>() + 15 - 1);

    cfg.mode = Mode::CoupledTheta;
    CHECK(run_pipeline(cfg).complete);
}

TEST_CASE("threshold censoring") {
    for (auto mode : all_modes()) {
        auto cfg = small("balance-pole", 2);
        cfg.mode = mode;
        auto r = run_pipeline(cfg);
        REQUIRE(r.complete);
        if (r.threshold_reached) {
            CHECK(r.evaluations_to_threshold >= 1);
            CHECK(r.evaluations_to_threshold <= 15);
        } else {
            CHECK(r.evaluations_to_threshold == 16);
        }
        CHECK(r.doc.at("threshold").get<double>() == kThresholdFraction * r.reference_fitness);
    }
}

TEST_CASE("configuration") {
    auto cfg = small();
    auto j = config_to_json(cfg);
    auto back = config_from_json(j);
    CHECK(config_to_json(back) == j);
    auto bad = j;
    bad["colour"] = "red";
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    bad = j;
    bad.erase("seed");
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    bad = j;
    bad["cuq"]["tau"] = 1.5;
    CHECK_THROWS_AS(config_from_json(bad).validate(), ConfigError);
    bad = j;
    bad["provider"]["kind"] = "carrier-pigeon";
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    bad = j;
    bad["bdo"]["cem"]["pop"] = "many";
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);

    cfg.aspects = {"flying"};
    auto r = run_pipeline(cfg);
    CHECK_FALSE(r.complete);
    CHECK(r.error_kind == "config");
    CHECK(r.failed_stage == "setup");
    CHECK(r.doc.at("status") == "incomplete");

    CHECK(eval_seeds(small()) != validation_seeds(small()));
    CHECK(eval_seeds(small()).size() == 2);
    CHECK(report_filename(small()) == "grid-reach_cour_3.json");
    CHECK(mode_from_string(to_string(Mode::LlmTune)) == Mode::LlmTune);
    CHECK_THROWS_AS(mode_from_string("telepathy"), ConfigError);
}

TEST_CASE("provider failures give incomplete reports") {
    auto cfg = small();
    cfg.provider.kind = llm::ProviderConfig::Kind::Http;
    cfg.provider.endpoint = "http://127.0.0.1:9/v1/chat";
    cfg.provider.model = "m";
    cfg.provider.timeout_s = 1.0;
    cfg.provider.max_retries = 0;
    cfg.provider.token_env = "COUR_TEST_TOKEN";
    ::setenv("COUR_TEST_TOKEN", "secret-value-123", 1);
    auto r = run_pipeline(cfg);
    CHECK_FALSE(r.complete);
    CHECK(r.failed_stage == "generate");
    CHECK(r.error_kind == "provider");
    CHECK(r.doc.dump().find("secret-value-123") == std::string::npos);
}

TEST_CASE("stopping after a stage") {
    RunOptions o;
    o.stop_after = "generate";
    auto g = run_pipeline(small(), o);
    CHECK(g.doc.at("status") == "stopped");
    CHECK(g.doc.at("generation").at("sources").size() == 3);
    CHECK_FALSE(g.doc.contains("final"));
    o.stop_after = "cuq";
    auto u = run_pipeline(small(), o);
    CHECK(u.doc.at("status") == "stopped");
    CHECK_FALSE(u.doc.at("uncertainty").empty());
    CHECK(u.doc.at("components").size() == 2);
}

TEST_CASE("ablation table accounting") {
    auto dir = scratch("ablation");
    auto base = small();
    auto t = run_ablation_suite(base, {"grid-reach", "point-mass-velocity"}, {Mode::Cour, Mode::MonolithicBo}, {1, 2},
                                {dir.string(), 2});
    CHECK(t.cells.size() == 8);
    for (const auto& c : t.cells) {
        CHECK(c.complete);
        CHECK(fs::exists(c.report_file));
        auto doc = read_json(c.report_file);
        CHECK(doc.at("final_fitness").get<double>() == c.final_fitness);
        CHECK(doc.at("evaluations_to_threshold").get<int>() == c.evaluations_to_threshold);
    }
    CHECK(t.select("grid-reach", Mode::Cour).size() == 2);
    CHECK(fs::exists(dir / "ablation.csv"));
    CHECK(fs::exists(dir / "ablation_summary.json"));
    std::ifstream csv(dir / "ablation.csv");
    int lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 9);
    auto s = t.summary();
    CHECK(s.at("grid-reach").at("modes").at("cour").at("cells") == 2);
    CHECK(s.at("grid-reach").at("cour_versus").at("monolithic-bo").at("paired") == 2);

    auto serial = run_ablation_suite(base, {"grid-reach", "point-mass-velocity"}, {Mode::Cour, Mode::MonolithicBo},
                                     {1, 2});
    CHECK(serial.to_csv().size() > 0);
    for (std::size_t i = 0; i < serial.cells.size(); ++i) CHECK(serial.cells[i].final_fitness == t.cells[i].final_fitness);
}

TEST_CASE("sampling sweep rows") {
    auto dir = scratch("sweep");
    auto t = sampling_sweep(small(), {"grid-reach"}, {1, 2, 4}, {1, 2}, {dir.string(), 1});
    CHECK(t.rows.size() == 6);
    std::set<int> ns;
    for (const auto& r : t.rows) {
        ns.insert(r.n_samples);
        CHECK(fs::exists(r.report_file));
        auto doc = read_json(r.report_file);
        if (r.n_samples == 1)
            for (const auto& row : doc.at("uncertainty"))
                if (row.at("round") == 0) CHECK(row.at("u") == 1.0);
    }
    CHECK(ns == std::set<int>{1, 2, 4});
    auto s = t.summary();
    CHECK(s.dump().find("1->2") != std::string::npos);
    CHECK(fs::exists(dir / "sweep.csv"));
}
