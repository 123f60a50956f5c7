#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cour/bdo.hpp"
#include "cour/pipeline.hpp"
#include "cour/seed.hpp"

namespace pl = cour::pipeline;
using pl::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kProvider = 3, kIncomplete = 4 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::string env;
    std::string out;
    bool offline = false;
    bool dump = false;
    int jobs = 1;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON run config");
    app->add_option("--seed", c.seed, "master seed (overrides the config)");
    app->add_option("--mode", c.mode, "cour | monolithic-bo | no-cuq | llm-tune | coupled-theta");
    app->add_option("--env", c.env, "environment name");
    app->add_option("--out", c.out, "output directory");
    app->add_flag("--offline", c.offline, "force the mock provider");
    app->add_flag("--dump-trajectories", c.dump, "store validation trajectories in the report");
}

pl::RunConfig build_config(const Common& c) {
    pl::RunConfig cfg;
    json j = c.config.empty() ? json::object() : pl::read_json(c.config);
    if (c.seed) j["seed"] = *c.seed;
    if (!j.contains("seed")) throw cour::ConfigError("a master seed is required (--seed or \"seed\" in the config)");
    if (!c.env.empty() && j.value("env", std::string()) != c.env) {
        j["env"] = c.env;
        j.erase("aspects");
        j.erase("task");
    }
    if (!c.mode.empty()) j["mode"] = c.mode;
    if (c.offline) {
        json p = j.value("provider", json::object());
        json mock = json::object();
        for (const char* k : {"corpus_path", "perturbation", "seed", "alternative_affinity"})
            if (p.contains(k)) mock[k] = p[k];
        mock["kind"] = "mock";
        j["provider"] = mock;
    }
    return pl::config_from_json(j);
}

int exit_for(const pl::RunReport& r) {
    if (r.complete) return kOk;
    std::cerr << "run incomplete at stage '" << r.failed_stage << "': " << r.error << "\n";
    if (r.error_kind == "config") return kConfig;
    if (r.error_kind == "provider") return kProvider;
    return kIncomplete;
}

std::string out_path(const std::string& dir, const std::string& name) {
    if (dir.empty()) return {};
    return (std::filesystem::path(dir) / name).string();
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_run(const Common& c, const std::string& stop_after) {
    pl::RunConfig cfg = build_config(c);
    pl::RunOptions opts;
    opts.dump_trajectories = c.dump;
    opts.stop_after = stop_after;
    pl::RunReport r = pl::run_pipeline(cfg, opts);
    if (std::string path = out_path(c.out, pl::report_filename(cfg)); !path.empty()) {
        pl::write_json(path, r.doc);
        std::cerr << "report: " << path << "\n";
    }
    if (stop_after == "generate" && r.complete) {
        for (const auto& src : r.doc["generation"]["sources"]) std::cout << src.get<std::string>() << "\n";
    } else if (stop_after == "cuq" && r.complete) {
        std::printf("%-14s %5s %7s %8s %8s %8s  %s\n", "component", "round", "samples", "s_text", "s_sem", "u",
                    "library");
        for (const auto& row : r.doc["uncertainty"]) {
            std::printf("%-14s %5d %7d %8.4f %8.4f %8.4f  %s\n", row["component"].get<std::string>().c_str(),
                        row["round"].get<int>(), row["samples"].get<int>(), row["s_text"].get<double>(),
                        row["s_semantic"].get<double>(), row["u"].get<double>(),
                        row["library_match"].is_null() ? "-" : row["library_match"].get<std::string>().c_str());
        }
        std::cout << "\n" << r.doc["assembled"].get<std::string>();
    } else if (r.complete) {
        std::cout << r.final_reward;
        std::printf("final fitness %.6f (reference %.6f), %d evaluations, threshold %s at %d\n", r.final_fitness,
                    r.reference_fitness, r.evaluations, r.threshold_reached ? "reached" : "not reached",
                    r.evaluations_to_threshold);
    }
    return exit_for(r);
}

int cmd_optimize(const Common& c, const std::string& reward_file) {
    pl::RunConfig cfg = build_config(c);
    auto environment = cour::env::make_env(cfg.env);
    std::ifstream in(reward_file);
    if (!in) throw cour::ConfigError("cannot read " + reward_file);
    std::stringstream buf;
    buf << in.rdbuf();
    cour::dsl::RewardFunction rf = cour::dsl::parse(buf.str(), environment->signature());
    std::map<std::string, double> u;
    for (const auto& t : rf.terms) u[t.name] = 0.0;

    auto gateway = cour::llm::make_gateway(cfg.provider, cour::derive_seed(cfg.seed, "provider"));
    cour::bdo::BdoConfig bcfg = cfg.bdo;
    if (cfg.mode == pl::Mode::CoupledTheta) bcfg.term_objective = cour::bdo::TermObjectiveKind::Coupled;
    auto tuner = cfg.mode == pl::Mode::LlmTune ? cour::bdo::provider_tuner(*gateway)
                                               : cour::bdo::bo_tuner(bcfg.bo, bcfg.min_evals);
    const auto seeds = pl::eval_seeds(cfg);
    const std::uint64_t seed = cour::derive_seed(cfg.seed, "bdo");
    auto opt = cfg.mode == pl::Mode::MonolithicBo ? cour::bdo::run_monolithic(rf, *environment, bcfg, seeds, seed, tuner)
                                                  : cour::bdo::run_bdo(rf, u, *environment, bcfg, seeds, seed, tuner);
    auto stats = cour::env::evaluate_reward(*environment, {&opt.rf, opt.thetas}, bcfg.cem, pl::validation_seeds(cfg));
    std::cout << opt.canonical();
    std::printf("validation fitness %.6f over %zu seeds, %zu evaluations\n", stats.mean, stats.per_seed.size(),
                opt.evaluations.size());
    if (std::string path = out_path(c.out, "optimize_" + cfg.env + "_" + std::to_string(cfg.seed) + ".json");
        !path.empty()) {
        json theta = json::object();
        for (std::size_t i = 0; i < opt.rf.terms.size(); ++i)
            for (std::size_t k = 0; k < opt.rf.terms[i].hypers.size(); ++k)
                theta[opt.rf.terms[i].name][opt.rf.terms[i].hypers[k].name] = opt.thetas[i][k];
        pl::write_json(path, {{"config", pl::config_to_json(cfg)},
                              {"reward", opt.canonical()},
                              {"theta", theta},
                              {"alpha", opt.alpha},
                              {"evaluations", opt.evaluations.size()},
                              {"validation", {{"mean", stats.mean}, {"per_seed", stats.per_seed}}}});
    }
    return kOk;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, int n) {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < n; ++i) out.push_back(base + static_cast<std::uint64_t>(i));
    return out;
}

int cmd_ablate(const Common& c, const std::string& modes_s, const std::string& envs_s, int n_seeds) {
    pl::RunConfig cfg = build_config(c);
    std::vector<pl::Mode> modes;
    for (const auto& m : split(modes_s)) modes.push_back(pl::mode_from_string(m));
    if (modes.empty()) modes = pl::all_modes();
    if (modes.size() < 2) throw cour::ConfigError("an ablation needs at least two modes");
    if (n_seeds < 3) throw cour::ConfigError("an ablation needs at least three seeds");
    auto envs = split(envs_s);
    if (envs.empty()) envs = cour::env::env_names();
    auto table = pl::run_ablation_suite(cfg, envs, modes, seed_list(cfg.seed, n_seeds), {c.out, c.jobs});
    std::cout << table.to_csv() << table.summary().dump(2) << "\n";
    for (const auto& cell : table.cells)
        if (!cell.complete) return kIncomplete;
    return kOk;
}

int cmd_sweep(const Common& c, const std::string& n_s, const std::string& envs_s, int n_seeds) {
    pl::RunConfig cfg = build_config(c);
    std::vector<int> ns;
    for (const auto& s : split(n_s)) {
        int n = std::stoi(s);
        if (n < 1) throw cour::ConfigError("sample counts must be at least 1");
        ns.push_back(n);
    }
    if (ns.empty()) throw cour::ConfigError("no sample counts given");
    auto envs = split(envs_s);
    if (envs.empty()) envs = cour::env::env_names();
    auto table = pl::sampling_sweep(cfg, envs, ns, seed_list(cfg.seed, n_seeds), {c.out, c.jobs});
    std::cout << table.to_csv() << table.summary().dump(2) << "\n";
    for (const auto& cell : table.rows)
        if (!cell.complete) return kIncomplete;
    return kOk;
}

int cmd_validate(const std::string& report, bool full) {
    auto result = pl::validate_report(pl::read_json(report), full);
    std::cout << (result.ok ? "ok: " : "FAILED: ") << result.message << "\n";
    return result.ok ? kOk : kIncomplete;
}

int cmd_library(const std::string& path, const std::string& aspect, const std::string& query, std::size_t k) {
    if (path.empty()) throw cour::ConfigError("--path is required");
    auto lib = cour::cuq::ComponentLibrary::open(path);
    if (!query.empty()) {
        if (aspect.empty()) throw cour::ConfigError("--query needs --aspect");
        std::ifstream in(query);
        if (!in) throw cour::ConfigError("cannot read " + query);
        std::stringstream buf;
        buf << in.rdbuf();
        auto hits = lib.query(aspect, cour::llm::offline_embedding(buf.str()), k);
        for (const auto& r : hits) std::cout << r.id << "\t" << r.aspect << "\t" << r.source << "\n";
        return kOk;
    }
    std::cout << lib.size() << " records\n";
    for (const auto& r : lib.records()) {
        if (!aspect.empty() && r.aspect != aspect) continue;
        std::cout << r.id << "\t" << r.aspect << "\tuses=" << r.uses << "\t" << r.created_at << "\n" << r.source;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reward design from generated code: uncertainty-guided selection and decoupled tuning"};
    app.require_subcommand(1);
    Common common;

    auto* run = app.add_subcommand("run", "full pipeline");
    add_common(run, common);
    auto* gen = app.add_subcommand("generate", "sample candidate reward functions");
    add_common(gen, common);
    auto* unc = app.add_subcommand("uncertainty", "score and refine components, print the report table");
    add_common(unc, common);

    std::string reward_file;
    auto* opt = app.add_subcommand("optimize", "tune a given reward file");
    add_common(opt, common);
    opt->add_option("reward", reward_file, "DSL reward file")->required();

    std::string modes, envs, ns = "1,3,5,8";
    int n_seeds = 5;
    auto* abl = app.add_subcommand("ablate", "ablation suite over modes, seeds and environments");
    add_common(abl, common);
    abl->add_option("--modes", modes, "comma-separated modes (default all)");
    abl->add_option("--envs", envs, "comma-separated environments (default all)");
    abl->add_option("--seeds", n_seeds, "number of consecutive seeds from --seed");
    abl->add_option("--jobs", common.jobs, "concurrent cells")->check(CLI::PositiveNumber);

    auto* swp = app.add_subcommand("sweep", "vary the number of samples per component");
    add_common(swp, common);
    swp->add_option("--n", ns, "comma-separated sample counts");
    swp->add_option("--envs", envs, "comma-separated environments (default all)");
    swp->add_option("--seeds", n_seeds, "number of consecutive seeds from --seed");
    swp->add_option("--jobs", common.jobs, "concurrent cells")->check(CLI::PositiveNumber);

    std::string report;
    bool full = false;
    auto* val = app.add_subcommand("validate", "re-check a report's reproducibility");
    val->add_option("report", report, "report JSON")->required();
    val->add_flag("--full", full, "re-run the whole pipeline and compare reports");

    std::string lib_path, aspect, query;
    std::size_t k = 5;
    auto* lib = app.add_subcommand("library", "inspect or query the component library");
    lib->add_option("--path", lib_path, "library JSONL file");
    lib->add_option("--aspect", aspect, "restrict to one aspect");
    lib->add_option("--query", query, "DSL term file to look up");
    lib->add_option("--k", k, "neighbours to return");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*run) return cmd_run(common, "");
        if (*gen) return cmd_run(common, "generate");
        if (*unc) return cmd_run(common, "cuq");
        if (*opt) return cmd_optimize(common, reward_file);
        if (*abl) return cmd_ablate(common, modes, envs, n_seeds);
        if (*swp) return cmd_sweep(common, ns, envs, n_seeds);
        if (*val) return cmd_validate(report, full);
        if (*lib) return cmd_library(lib_path, aspect, query, k);
    } catch (const cour::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const cour::ProviderError& e) {
        std::cerr << "provider error: " << e.what() << "\n";
        return kProvider;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIncomplete;
    }
    return kOk;
}
