#include "cour/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cour/seed.hpp"

namespace cour::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

json num(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}


std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json trace_to_json(const bo::BOTrace& trace, const std::vector<std::string>& dims) {
    json entries = json::array();
    for (const auto& e : trace.entries) {
        json point = json::object();
        for (std::size_t i = 0; i < dims.size() && i < e.point.size(); ++i) point[dims[i]] = e.point[i];
        entries.push_back({{"point", point}, {"value", num(e.value)}, {"iteration", e.iteration}});
    }
    return entries;
}

const char* const kinds[] = {"mock", "http"};

}  // namespace

// ---------------------------------------------------------------- modes

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Cour: return "cour";
        case Mode::MonolithicBo: return "monolithic-bo";
        case Mode::NoCuq: return "no-cuq";
        case Mode::LlmTune: return "llm-tune";
        case Mode::CoupledTheta: return "coupled-theta";
    }
    return "cour";
}

Mode mode_from_string(std::string_view s) {
    for (Mode m : all_modes())
        if (to_string(m) == s) return m;
    throw ConfigError("unknown mode '" + std::string(s) + "'");
}

std::vector<Mode> all_modes() {
    return {Mode::Cour, Mode::MonolithicBo, Mode::NoCuq, Mode::LlmTune, Mode::CoupledTheta};
}

// --------------------------------------------------------------- config

void RunConfig::validate() const {
    auto e = env::make_env(env);
    for (const auto& a : aspects)
        if (!e->has_aspect(a)) throw ConfigError("environment '" + env + "' has no aspect '" + a + "'");
    if (cuq.n_samples < 1) throw ConfigError("cuq.n_samples must be at least 1");
    if (!(cuq.tau > 0.0 && cuq.tau < 1.0)) throw ConfigError("cuq.tau must lie in (0, 1)");
    if (cuq.n_alt < 1) throw ConfigError("cuq.n_alt must be at least 1");
    if (cuq.max_refine_rounds < 0) throw ConfigError("cuq.max_refine_rounds must be non-negative");
    if (cuq.library_k < 1) throw ConfigError("cuq.library_k must be at least 1");
    if (eval_seeds < 1) throw ConfigError("eval_seeds must be at least 1");
    bdo.validate();
    provider.validate();
}

json config_to_json(const RunConfig& c) {
    const auto& p = c.provider;
    json provider = {{"kind", kinds[static_cast<int>(p.kind)]},
                     {"endpoint", p.endpoint},
                     {"embedding_endpoint", p.embedding_endpoint},
                     {"model", p.model},
                     {"embedding_model", p.embedding_model},
                     {"token_env", p.token_env},
                     {"timeout_s", p.timeout_s},
                     {"max_retries", p.max_retries},
                     {"max_in_flight", p.max_in_flight},
                     {"temperature", p.temperature},
                     {"corpus_path", p.corpus_path},
                     {"perturbation", p.perturbation},
                     {"seed", p.seed ? json(*p.seed) : json(nullptr)},
                     {"alternative_affinity", p.alternative_affinity}};
    const auto& cem = c.bdo.cem;
    return {{"schema_version", kConfigSchemaVersion},
            {"env", c.env},
            {"task", c.task},
            {"aspects", c.aspects},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"provider", provider},
            {"cuq",
             {{"n_samples", c.cuq.n_samples},
              {"tau", c.cuq.tau},
              {"n_alt", c.cuq.n_alt},
              {"max_refine_rounds", c.cuq.max_refine_rounds},
              {"library_k", c.cuq.library_k}}},
            {"bdo",
             {{"total_budget", c.bdo.total_budget},
              {"min_evals", c.bdo.min_evals},
              {"weight_fraction", c.bdo.weight_fraction},
              {"noise_var", c.bdo.bo.noise_var},
              {"cem",
               {{"iters", cem.iters},
                {"pop", cem.pop},
                {"elite_frac", cem.elite_frac},
                {"init_std", cem.init_std},
                {"min_std", cem.min_std}}}}},
            {"eval_seeds", c.eval_seeds},
            {"library", {{"path", c.library_path}, {"update", c.update_library}}}};
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
        if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

}  // namespace

RunConfig config_from_json(const json& j) {
    try {
        check_keys(j, {"schema_version", "env", "task", "aspects", "seed", "mode", "provider", "cuq", "bdo",
                       "eval_seeds", "library"},
                   "config");
        if (j.value("schema_version", kConfigSchemaVersion) != kConfigSchemaVersion)
            throw ConfigError("unsupported config schema version");
        if (!j.contains("seed") || !j.at("seed").is_number_integer() || j.at("seed").is_number_float())
            throw ConfigError("config needs an integer master 'seed'");
        RunConfig c;
        c.seed = j.at("seed").get<std::uint64_t>();
        c.env = j.value("env", c.env);
        c.task = j.value("task", c.task);
        c.aspects = j.value("aspects", c.aspects);
        c.mode = mode_from_string(j.value("mode", std::string("cour")));
        c.eval_seeds = j.value("eval_seeds", c.eval_seeds);
        if (j.contains("provider")) {
            const json& p = j.at("provider");
            check_keys(p, {"kind", "endpoint", "embedding_endpoint", "model", "embedding_model", "token_env",
                           "timeout_s", "max_retries", "max_in_flight", "temperature", "corpus_path", "perturbation",
                           "seed", "alternative_affinity"},
                       "provider");
            auto& o = c.provider;
            std::string kind = p.value("kind", std::string("mock"));
            if (kind == "mock") {
                o.kind = llm::ProviderConfig::Kind::Mock;
            } else if (kind == "http") {
                o.kind = llm::ProviderConfig::Kind::Http;
            } else {
                throw ConfigError("unknown provider kind '" + kind + "'");
            }
            o.endpoint = p.value("endpoint", o.endpoint);
            o.embedding_endpoint = p.value("embedding_endpoint", o.embedding_endpoint);
            o.model = p.value("model", o.model);
            o.embedding_model = p.value("embedding_model", o.embedding_model);
            o.token_env = p.value("token_env", o.token_env);
            o.timeout_s = p.value("timeout_s", o.timeout_s);
            o.max_retries = p.value("max_retries", o.max_retries);
            o.max_in_flight = p.value("max_in_flight", o.max_in_flight);
            o.temperature = p.value("temperature", o.temperature);
            o.corpus_path = p.value("corpus_path", o.corpus_path);
            o.perturbation = p.value("perturbation", o.perturbation);
            if (p.contains("seed") && !p.at("seed").is_null()) o.seed = p.at("seed").get<std::uint64_t>();
            o.alternative_affinity = p.value("alternative_affinity", o.alternative_affinity);
        }
        if (j.contains("cuq")) {
            const json& q = j.at("cuq");
            check_keys(q, {"n_samples", "tau", "n_alt", "max_refine_rounds", "library_k"}, "cuq");
            c.cuq.n_samples = q.value("n_samples", c.cuq.n_samples);
            c.cuq.tau = q.value("tau", c.cuq.tau);
            c.cuq.n_alt = q.value("n_alt", c.cuq.n_alt);
            c.cuq.max_refine_rounds = q.value("max_refine_rounds", c.cuq.max_refine_rounds);
            c.cuq.library_k = q.value("library_k", c.cuq.library_k);
        }
        if (j.contains("bdo")) {
            const json& b = j.at("bdo");
            check_keys(b, {"total_budget", "min_evals", "weight_fraction", "noise_var", "cem"}, "bdo");
            c.bdo.total_budget = b.value("total_budget", c.bdo.total_budget);
            c.bdo.min_evals = b.value("min_evals", c.bdo.min_evals);
            c.bdo.weight_fraction = b.value("weight_fraction", c.bdo.weight_fraction);
            c.bdo.bo.noise_var = b.value("noise_var", c.bdo.bo.noise_var);
            if (b.contains("cem")) {
                const json& m = b.at("cem");
                check_keys(m, {"iters", "pop", "elite_frac", "init_std", "min_std"}, "bdo.cem");
                auto& cem = c.bdo.cem;
                cem.iters = m.value("iters", cem.iters);
                cem.pop = m.value("pop", cem.pop);
                cem.elite_frac = m.value("elite_frac", cem.elite_frac);
                cem.init_std = m.value("init_std", cem.init_std);
                cem.min_std = m.value("min_std", cem.min_std);
            }
        }
        if (j.contains("library")) {
            const json& l = j.at("library");
            check_keys(l, {"path", "update"}, "library");
            c.library_path = l.value("path", c.library_path);
            c.update_library = l.value("update", c.update_library);
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
}

RunConfig load_config(const std::string& path) { return config_from_json(read_json(path)); }

void write_json(const std::string& path, const json& doc) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw StoreIOError("cannot write " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw StoreIOError("failed writing " + path);
}

std::vector<std::uint64_t> eval_seeds(const RunConfig& cfg) {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < cfg.eval_seeds; ++i) out.push_back(derive_seed(cfg.seed, "eval", i));
    return out;
}

std::vector<std::uint64_t> validation_seeds(const RunConfig& cfg) {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < cfg.eval_seeds; ++i) out.push_back(derive_seed(cfg.seed, "validate", i));
    return out;
}

double reference_fitness(const env::ToyEnv& env, const env::CemConfig& cem, const std::vector<std::uint64_t>& seeds) {
    static std::mutex mutex;
    static std::map<std::string, double> cache;
    std::ostringstream key;
    key.precision(17);
    key << env.name() << '|' << cem.iters << '|' << cem.pop << '|' << cem.elite_frac << '|' << cem.init_std << '|'
        << cem.min_std;
    for (auto s : seeds) key << '|' << s;
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find(key.str()); it != cache.end()) return it->second;
    }
    auto rf = dsl::parse(env.reference_source(), env.signature());
    std::vector<std::vector<double>> thetas;
    for (const auto& t : rf.terms) thetas.push_back(t.default_theta());
    double f = env::evaluate_reward(env, {&rf, thetas}, cem, seeds).mean;
    std::lock_guard lock(mutex);
    cache[key.str()] = f;
    return f;
}

std::string report_filename(const RunConfig& cfg) {
    return cfg.env + "_" + to_string(cfg.mode) + "_" + std::to_string(cfg.seed) + ".json";
}

json strip_timing(json doc) {
    if (doc.is_object()) {
        doc.erase("wall_clock_s");
        doc.erase("latency_s");
        for (auto& [key, value] : doc.items()) value = strip_timing(value);
    } else if (doc.is_array()) {
        for (auto& value : doc) value = strip_timing(value);
    }
    return doc;
}

// ------------------------------------------------------------------ run

namespace {

struct Component {
    std::string aspect;
    std::vector<cuq::ComponentSample> samples;
    std::size_t chosen = 0;
    double u = 0.0;
};

json report_to_json(const cuq::UncertaintyReport& r, int round, std::size_t n) {
    return {{"component", r.component_name},
            {"round", round},
            {"samples", n},
            {"s_text", r.s_text},
            {"s_semantic", r.s_semantic},
            {"u", r.u},
            {"peer_count", r.peer_count},
            {"library_match", r.library_match ? json(*r.library_match) : json(nullptr)}};
}

json optimized_to_json(const bdo::OptimizedReward& o) {
    json terms = json::array();
    for (const auto& t : o.terms) {
        json theta = json::object();
        for (std::size_t i = 0; i < t.dims.size() && i < t.theta.size(); ++i) theta[t.dims[i]] = t.theta[i];
        terms.push_back({{"name", t.name},
                         {"budget", t.budget},
                         {"theta", theta},
                         {"best_value", num(t.trace.best_value)},
                         {"empty_improvement", t.trace.empty_improvement},
                         {"trace", trace_to_json(t.trace, t.dims)}});
    }
    json evals = json::array();
    for (const auto& e : o.evaluations)
        evals.push_back({{"index", e.index}, {"stage", e.stage}, {"objective", num(e.objective)},
                         {"fitness", num(e.fitness)}});
    json plan = {{"order", o.plan.order}, {"term_budgets", o.plan.term_budgets}, {"weight_budget", o.plan.weight_budget}};
    return {{"plan", plan},
            {"terms", terms},
            {"weights",
             {{"skipped", o.weight_stage_skipped},
              {"best_value", num(o.weight_trace.best_value)},
              {"trace", trace_to_json(o.weight_trace, o.weight_dims)}}},
            {"evaluations", evals}};
}

struct StopRun {};

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const ProviderError*>(&e)) return "provider";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    return "runtime";
}

}  // namespace

RunReport run_pipeline(const RunConfig& cfg, const RunOptions& opts) {
    const auto t0 = Clock::now();
    RunReport out;
    json& doc = out.doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["status"] = "incomplete";
    doc["config"] = config_to_json(cfg);
    doc["config_hash"] = hex64(fnv1a(doc["config"].dump()));
    json prompts = json::object();
    for (const auto& [name, hash] : llm::prompt_hashes()) prompts[name] = hash;
    doc["prompts"] = prompts;

    std::string stage = "setup";
    std::unique_ptr<llm::Gateway> gateway;
    try {
        cfg.validate();
        auto environment = env::make_env(cfg.env);
        const env::ToyEnv& E = *environment;
        llm::TaskDescription task;
        task.text = cfg.task.empty() ? E.default_task() : cfg.task;
        task.env_name = E.name();
        task.signature = E.signature();
        task.aspects = cfg.aspects.empty() ? E.aspects() : cfg.aspects;
        task.validate();

        gateway = llm::make_gateway(cfg.provider, derive_seed(cfg.seed, "provider"));
        doc["provider"] = {{"id", gateway->backend().id()}, {"embedder", gateway->embedder_id()}};
        if (cfg.provider.kind == llm::ProviderConfig::Kind::Mock) {
            auto* mock = dynamic_cast<llm::MockBackend*>(&gateway->backend());
            json corpus = json::array();
            for (const auto& e : mock->corpus()) corpus.push_back({{"aspect", e.aspect}, {"dsl_source", e.dsl_source}});
            doc["provider"]["corpus_hash"] = hex64(fnv1a(corpus.dump()));
        }

        cuq::ComponentLibrary owned;
        cuq::ComponentLibrary* library = opts.library;
        if (!library) {
            owned = cuq::ComponentLibrary::open(cfg.library_path);
            library = &owned;
        }
        const std::size_t snapshot = std::min(opts.library_snapshot.value_or(library->size()), library->size());
        const cuq::ComponentLibrary view = library->prefix(snapshot);
        doc["library"] = {{"path", cfg.library_path}, {"records_used", snapshot}, {"inserted", json::array()}};

        const auto seeds = eval_seeds(cfg);
        const auto vseeds = validation_seeds(cfg);
        doc["seeds"] = {{"eval", seeds}, {"validation", vseeds}};

        // Step 1: candidate generation.
        stage = "generate";
        const bool use_cuq = cfg.mode != Mode::NoCuq;
        const int n = use_cuq ? cfg.cuq.n_samples : 1;
        llm::GenerationResult gen = gateway->generate_reward(task, n);
        doc["generation"] = {{"n", n},
                             {"sources", gen.sources},
                             {"attempts", gen.attempts},
                             {"aspect_fallback", gen.aspect_fallback},
                             {"latency_s", gen.latency_s}};

        std::vector<Component> components;
        for (const auto& aspect : task.aspects) components.push_back({aspect, {}, 0, 0.0});
        for (const auto& src : gen.sources) {
            dsl::RewardFunction rf = dsl::parse(src, task.signature);
            for (auto& c : components) {
                for (const auto& t : rf.terms) {
                    if (t.aspect != c.aspect) continue;
                    dsl::RewardTerm term = t;
                    term.name = c.aspect;
                    c.samples.push_back(cuq::ComponentSample::from_term(std::move(term), cuq::Origin::Generated));
                    break;
                }
            }
        }

        if (opts.stop_after == "generate") {
            out.complete = true;
            doc["status"] = "stopped";
            doc["stopped_after"] = stage;
            throw StopRun{};
        }

        // Step 2: uncertainty scoring, refinement and selection.
        stage = "cuq";
        json rounds = json::array();
        if (use_cuq) {
            cuq::ScoreOptions so{static_cast<std::size_t>(cfg.cuq.library_k), gateway->fallback_embedder()};
            cuq::RefineOptions ro{cfg.cuq.tau, cfg.cuq.n_alt, cfg.cuq.max_refine_rounds};
            for (auto& c : components) {
                for (int round = 0;; ++round) {
                    cuq::UncertaintyReport r = cuq::score_component(c.samples, view, *gateway, so);
                    rounds.push_back(report_to_json(r, round, c.samples.size()));
                    c.u = r.u;
                    auto refined = cuq::refine(c.samples, r, *gateway, task, ro, round);
                    if (refined.size() == c.samples.size()) break;
                    c.samples = std::move(refined);
                }
                c.chosen = cuq::select_representative_index(c.samples);
            }
        }
        doc["uncertainty"] = rounds;

        dsl::RewardFunction rf;
        std::map<std::string, double> u;
        json chosen = json::array();
        for (const auto& c : components) {
            const auto& s = c.samples.at(c.chosen);
            rf.terms.push_back(s.term);
            rf.weights.push_back(1.0);
            u[c.aspect] = use_cuq ? c.u : 0.0;
            chosen.push_back({{"aspect", c.aspect},
                              {"source", s.source},
                              {"origin", cuq::to_string(s.origin)},
                              {"sample_index", c.chosen},
                              {"u", use_cuq ? json(c.u) : json(nullptr)}});
        }
        doc["components"] = chosen;
        doc["assembled"] = dsl::print_canonical(rf);
        if (opts.stop_after == "cuq") {
            out.complete = true;
            doc["status"] = "stopped";
            doc["stopped_after"] = stage;
            throw StopRun{};
        }

        // Step 3: decoupled optimization (or its ablations).
        stage = "bdo";
        bdo::BdoConfig bcfg = cfg.bdo;
        if (cfg.mode == Mode::CoupledTheta) bcfg.term_objective = bdo::TermObjectiveKind::Coupled;
        bdo::Tuner tuner = cfg.mode == Mode::LlmTune ? bdo::provider_tuner(*gateway)
                                                     : bdo::bo_tuner(bcfg.bo, bcfg.min_evals);
        const std::uint64_t bdo_seed = derive_seed(cfg.seed, "bdo");
        bdo::OptimizedReward opt = cfg.mode == Mode::MonolithicBo
                                       ? bdo::run_monolithic(rf, E, bcfg, seeds, bdo_seed, tuner)
                                       : bdo::run_bdo(rf, u, E, bcfg, seeds, bdo_seed, tuner);
        doc["bdo"] = optimized_to_json(opt);
        doc["bdo"]["mode"] = to_string(cfg.mode);
        out.evaluations = static_cast<int>(opt.evaluations.size());

        json theta = json::object();
        json alpha = json::object();
        for (std::size_t i = 0; i < opt.rf.terms.size(); ++i) {
            const auto& t = opt.rf.terms[i];
            json th = json::object();
            for (std::size_t k = 0; k < t.hypers.size(); ++k) th[t.hypers[k].name] = opt.thetas[i][k];
            theta[t.name] = th;
            alpha[t.name] = opt.alpha[i];
        }
        out.final_reward = opt.canonical();
        doc["final"] = {{"reward", out.final_reward}, {"theta", theta}, {"alpha", alpha}};

        // Step 4: validation on fresh seeds.
        stage = "validate";
        std::vector<double> fits;
        json trajectories = json::array();
        for (std::uint64_t s : vseeds) {
            env::Trajectory traj = env::train_and_rollout(E, {&opt.rf, opt.thetas}, bcfg.cem, s);
            fits.push_back(E.fitness(traj));
            if (opts.dump_trajectories) trajectories.push_back(json::parse(env::trajectory_to_json(traj)));
        }
        env::FitnessStats stats = env::summarize(fits);
        out.final_fitness = stats.mean;
        doc["validation"] = {{"mean", stats.mean}, {"min", stats.min}, {"max", stats.max}, {"per_seed", stats.per_seed}};
        if (opts.dump_trajectories) doc["trajectories"] = trajectories;

        out.reference_fitness = reference_fitness(E, bcfg.cem, seeds);
        const double threshold = kThresholdFraction * out.reference_fitness;
        double best = -std::numeric_limits<double>::infinity();
        out.evaluations_to_threshold = bcfg.total_budget + 1;
        for (const auto& e : opt.evaluations) {
            best = std::max(best, e.fitness);
            if (best >= threshold) {
                out.evaluations_to_threshold = e.index;
                out.threshold_reached = true;
                break;
            }
        }
        doc["reference_fitness"] = out.reference_fitness;
        doc["threshold"] = threshold;
        doc["evaluations_to_threshold"] = out.evaluations_to_threshold;
        doc["threshold_reached"] = out.threshold_reached;
        doc["total_evaluations"] = out.evaluations;

        stage = "library";
        if (use_cuq && cfg.update_library) {
            const std::string now = utc_now();
            for (auto& c : components) {
                auto& s = c.samples.at(c.chosen);
                if (!s.embedding) s.embedding = gateway->embed(s.source);
                doc["library"]["inserted"].push_back(library->insert(s, 1, now));
            }
        }
        out.complete = true;
        doc["status"] = "complete";
    } catch (const StopRun&) {
    } catch (const std::exception& e) {
        out.failed_stage = stage;
        out.error = e.what();
        out.error_kind = error_kind(e);
        doc["failed_stage"] = stage;
        doc["error"] = e.what();
        doc["error_kind"] = out.error_kind;
    }
    doc["final_fitness"] = out.final_fitness;
    out.provider_calls = gateway ? gateway->calls() : 0;
    doc["provider_calls"] = out.provider_calls;
    doc["wall_clock_s"] = std::chrono::duration<double>(Clock::now() - t0).count();
    return out;
}

}  // namespace cour::pipeline

namespace cour::pipeline {

ValidationResult validate_report(const json& report, bool full) {
    try {
        if (report.value("status", std::string()) != "complete") return {false, "report is not complete"};
        RunConfig cfg = config_from_json(report.at("config"));
        auto environment = env::make_env(cfg.env);
        const json& fin = report.at("final");
        dsl::RewardFunction rf = dsl::parse(fin.at("reward").get<std::string>(), environment->signature());
        std::vector<std::vector<double>> thetas;
        for (std::size_t i = 0; i < rf.terms.size(); ++i) {
            const auto& t = rf.terms[i];
            const json& th = fin.at("theta").at(t.name);
            std::vector<double> v;
            for (const auto& h : t.hypers) v.push_back(th.at(h.name).get<double>());
            thetas.push_back(std::move(v));
            rf.weights[i] = fin.at("alpha").at(t.name).get<double>();
        }
        const auto vseeds = report.at("seeds").at("validation").get<std::vector<std::uint64_t>>();
        const auto stored = report.at("validation").at("per_seed").get<std::vector<double>>();
        if (vseeds.size() != stored.size()) return {false, "validation seed count mismatch"};
        std::vector<double> recomputed;
        for (std::size_t i = 0; i < vseeds.size(); ++i) {
            env::Trajectory traj = env::train_and_rollout(*environment, {&rf, thetas}, cfg.bdo.cem, vseeds[i]);
            const double f = environment->fitness(traj);
            if (f != stored[i]) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "validation seed " << vseeds[i] << ": stored fitness " << stored[i] << ", recomputed " << f;
                return {false, msg.str()};
            }
            recomputed.push_back(f);
        }
        const env::FitnessStats stats = env::summarize(recomputed);
        const json& val = report.at("validation");
        if (val.at("mean").get<double>() != stats.mean || val.at("min").get<double>() != stats.min ||
            val.at("max").get<double>() != stats.max)
            return {false, "validation summary does not match the per-seed fitness"};
        if (report.at("final_fitness").get<double>() != stats.mean)
            return {false, "final_fitness does not match the validation mean"};
        if (!full) return {true, "final fitness reproduced on " + std::to_string(vseeds.size()) + " seeds"};

        const auto used = report.at("library").at("records_used").get<std::size_t>();
        cuq::ComponentLibrary source = cuq::ComponentLibrary::open(cfg.library_path);
        if (source.size() < used)
            return {false, "library holds " + std::to_string(source.size()) + " records, report used " +
                               std::to_string(used)};
        cuq::ComponentLibrary snapshot = source.prefix(used);
        RunOptions opts;
        opts.library = &snapshot;
        opts.dump_trajectories = report.contains("trajectories");
        RunReport again = run_pipeline(cfg, opts);
        json a = strip_timing(report);
        json b = strip_timing(again.doc);
        if (a != b) {
            for (const auto& [key, value] : a.items())
                if (!b.contains(key) || b.at(key) != value) return {false, "rerun differs in '" + key + "'"};
            return {false, "rerun differs"};
        }
        return {true, "full rerun reproduced the report"};
    } catch (const std::exception& e) {
        return {false, e.what()};
    }
}

// -------------------------------------------------------------- harness

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

Cell run_cell(RunConfig cfg, const HarnessOptions& opts, bool sweep) {
    cfg.library_path.clear();
    cuq::ComponentLibrary library;
    RunOptions ro;
    ro.library = &library;
    RunReport r = run_pipeline(cfg, ro);
    Cell c;
    c.env = cfg.env;
    c.mode = cfg.mode;
    c.seed = cfg.seed;
    c.n_samples = cfg.mode == Mode::NoCuq ? 1 : cfg.cuq.n_samples;
    c.complete = r.complete;
    c.final_fitness = r.final_fitness;
    c.evaluations_to_threshold = r.evaluations_to_threshold;
    c.threshold_reached = r.threshold_reached;
    c.provider_calls = r.provider_calls;
    c.error = r.error;
    if (!opts.out_dir.empty()) {
        std::string name = report_filename(cfg);
        if (sweep) name = cfg.env + "_n" + std::to_string(c.n_samples) + "_" + std::to_string(cfg.seed) + ".json";
        c.report_file = (std::filesystem::path(opts.out_dir) / name).string();
        write_json(c.report_file, r.doc);
    }
    return c;
}

std::vector<Cell> run_cells(const std::vector<RunConfig>& cfgs, const HarnessOptions& opts, bool sweep) {
    std::vector<Cell> cells(cfgs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cfgs.size();) cells[i] = run_cell(cfgs[i], opts, sweep);
    };
    const int jobs = std::clamp(opts.jobs, 1, static_cast<int>(std::max<std::size_t>(cfgs.size(), 1)));
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return cells;
}

std::string cell_csv_header() {
    return "env,mode,seed,n_samples,complete,final_fitness,evaluations_to_threshold,threshold_reached,"
           "provider_calls,report_file\n";
}

std::string cell_csv_row(const Cell& c) {
    std::ostringstream o;
    o.precision(10);
    o << c.env << ',' << to_string(c.mode) << ',' << c.seed << ',' << c.n_samples << ',' << (c.complete ? 1 : 0)
      << ',' << c.final_fitness << ',' << c.evaluations_to_threshold << ',' << (c.threshold_reached ? 1 : 0) << ','
      << c.provider_calls << ',' << c.report_file << '\n';
    return o.str();
}

std::vector<std::string> envs_of(const std::vector<Cell>& cells) {
    std::vector<std::string> out;
    for (const auto& c : cells)
        if (std::find(out.begin(), out.end(), c.env) == out.end()) out.push_back(c.env);
    return out;
}

}  // namespace

std::vector<Cell> AblationTable::select(const std::string& env, Mode mode) const {
    std::vector<Cell> out;
    for (const auto& c : cells)
        if (c.env == env && c.mode == mode) out.push_back(c);
    return out;
}

std::string AblationTable::to_csv() const {
    std::string s = cell_csv_header();
    for (const auto& c : cells) s += cell_csv_row(c);
    return s;
}

json AblationTable::summary() const {
    json out = json::object();
    for (const auto& e : envs_of(cells)) {
        json per_mode = json::object();
        for (Mode m : all_modes()) {
            auto sel = select(e, m);
            if (sel.empty()) continue;
            std::vector<double> fit, ett;
            int complete = 0, reached = 0;
            for (const auto& c : sel) {
                fit.push_back(c.final_fitness);
                ett.push_back(c.evaluations_to_threshold);
                complete += c.complete;
                reached += c.threshold_reached;
            }
            per_mode[to_string(m)] = {{"cells", sel.size()},
                                      {"complete", complete},
                                      {"threshold_reached", reached},
                                      {"median_final_fitness", median(fit)},
                                      {"median_evaluations_to_threshold", median(ett)}};
        }
        json versus = json::object();
        auto base = select(e, Mode::Cour);
        for (Mode m : all_modes()) {
            if (m == Mode::Cour) continue;
            auto other = select(e, m);
            int faster = 0, slower = 0, tied = 0, paired = 0;
            std::vector<double> gains;
            for (const auto& a : base) {
                for (const auto& b : other) {
                    if (a.seed != b.seed) continue;
                    ++paired;
                    if (a.evaluations_to_threshold < b.evaluations_to_threshold) ++faster;
                    else if (a.evaluations_to_threshold > b.evaluations_to_threshold) ++slower;
                    else ++tied;
                    gains.push_back(a.final_fitness - b.final_fitness);
                }
            }
            if (paired == 0) continue;
            versus[to_string(m)] = {{"paired", paired},
                                    {"cour_faster", faster},
                                    {"cour_slower", slower},
                                    {"tied", tied},
                                    {"median_fitness_gain", median(gains)}};
        }
        out[e] = {{"modes", per_mode}, {"cour_versus", versus}};
    }
    return out;
}

AblationTable run_ablation_suite(const RunConfig& base, const std::vector<std::string>& envs,
                                 const std::vector<Mode>& modes, const std::vector<std::uint64_t>& seeds,
                                 const HarnessOptions& opts) {
    std::vector<RunConfig> cfgs;
    for (const auto& e : envs) {
        for (Mode m : modes) {
            for (auto s : seeds) {
                RunConfig c = base;
                c.env = e;
                c.aspects.clear();
                c.task.clear();
                c.mode = m;
                c.seed = s;
                c.provider.seed.reset();
                cfgs.push_back(c);
            }
        }
    }
    AblationTable table{run_cells(cfgs, opts, false)};
    if (!opts.out_dir.empty()) {
        std::ofstream(std::filesystem::path(opts.out_dir) / "ablation.csv") << table.to_csv();
        write_json((std::filesystem::path(opts.out_dir) / "ablation_summary.json").string(), table.summary());
    }
    return table;
}

std::string SweepTable::to_csv() const {
    std::string s = cell_csv_header();
    for (const auto& c : rows) s += cell_csv_row(c);
    return s;
}

json SweepTable::summary() const {
    json out = json::object();
    for (const auto& e : envs_of(rows)) {
        std::map<int, std::vector<double>> by_n;
        std::map<int, std::map<std::uint64_t, double>> by_n_seed;
        for (const auto& c : rows) {
            if (c.env != e) continue;
            by_n[c.n_samples].push_back(c.final_fitness);
            by_n_seed[c.n_samples][c.seed] = c.final_fitness;
        }
        json medians = json::object();
        for (const auto& [n, v] : by_n) medians[std::to_string(n)] = median(v);
        json gains = json::object();
        std::vector<int> ns;
        for (const auto& [n, v] : by_n) ns.push_back(n);
        for (std::size_t i = 0; i + 1 < ns.size(); ++i) {
            std::vector<double> g;
            for (const auto& [seed, f] : by_n_seed[ns[i]])
                if (auto it = by_n_seed[ns[i + 1]].find(seed); it != by_n_seed[ns[i + 1]].end())
                    g.push_back(it->second - f);
            gains[std::to_string(ns[i]) + "->" + std::to_string(ns[i + 1])] = median(g);
        }
        out[e] = {{"median_final_fitness", medians}, {"median_paired_gain", gains}};
    }
    return out;
}

SweepTable sampling_sweep(const RunConfig& base, const std::vector<std::string>& envs,
                          const std::vector<int>& n_values, const std::vector<std::uint64_t>& seeds,
                          const HarnessOptions& opts) {
    std::vector<RunConfig> cfgs;
    for (const auto& e : envs) {
        for (int n : n_values) {
            for (auto s : seeds) {
                RunConfig c = base;
                c.env = e;
                c.aspects.clear();
                c.task.clear();
                c.mode = Mode::Cour;
                c.cuq.n_samples = n;
                c.seed = s;
                c.provider.seed.reset();
                cfgs.push_back(c);
            }
        }
    }
    SweepTable table{run_cells(cfgs, opts, true)};
    if (!opts.out_dir.empty()) {
        std::ofstream(std::filesystem::path(opts.out_dir) / "sweep.csv") << table.to_csv();
        write_json((std::filesystem::path(opts.out_dir) / "sweep_summary.json").string(), table.summary());
    }
    return table;
}

}  // namespace cour::pipeline
