#include "cour/llm.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "assets.hpp"
#include "cour/seed.hpp"

namespace cour::llm {

using nlohmann::json;

// -------------------------------------------------------- offline embedding

std::uint64_t offline_hash_basis() {
    static const std::uint64_t basis = fnv1a("cour/offline-embedding/v1");
    return basis;
}

int node_kind_slot(const dsl::Node& n) {
    switch (n.kind) {
        case dsl::NodeKind::Constant: return 0;
        case dsl::NodeKind::StateRef: return 1;
        case dsl::NodeKind::ActionRef: return 2;
        case dsl::NodeKind::HyperRef: return 3;
        case dsl::NodeKind::Unary: return 4 + static_cast<int>(n.unary);
        case dsl::NodeKind::Binary: return 9 + static_cast<int>(n.binary);
        case dsl::NodeKind::Clip: return 16;
    }
    return 0;
}

static void add_histogram(const dsl::RewardExpr& expr, std::vector<double>& v) {
    const auto& nodes = expr.nodes();
    if (nodes.empty()) return;
    std::vector<int> depth(nodes.size(), 0);
    for (int i = expr.root(); i >= 0; --i) {
        const auto& n = nodes[i];
        if (n.lhs >= 0) depth[n.lhs] = depth[i] + 1;
        if (n.rhs >= 0) depth[n.rhs] = depth[i] + 1;
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        v[kOfflineTfDim + node_kind_slot(nodes[i])] += 1.0;
        v[kOfflineTfDim + 17 + std::min(depth[i], 15)] += 1.0;
    }
}

sim::EmbeddingVector offline_embedding(std::string_view source) {
    sim::EmbeddingVector out;
    out.provider_id = kOfflineEmbedderId;
    out.values.assign(kOfflineDim, 0.0);
    auto stream = sim::tokenize_canonical(source);
    if (stream.empty()) throw ProviderError("cannot embed empty text");
    static constexpr char kinds[] = {'i', 'n', 'o', 'k'};
    for (const auto& tok : stream.tokens) {
        std::string key;
        key += kinds[static_cast<int>(tok.kind)];
        key += ':';
        key += tok.lexeme;
        out.values[fnv1a(key, offline_hash_basis()) % kOfflineTfDim] += 1.0;
    }
    try {
        add_histogram(dsl::parse_term(source, nullptr).expr, out.values);
    } catch (const Error&) {
        try {
            for (const auto& t : dsl::parse_unbound(source).terms) add_histogram(t.expr, out.values);
        } catch (const Error&) {
        }
    }
    double norm = 0.0;
    for (double x : out.values) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : out.values) x /= norm;
    return out;
}

// ---------------------------------------------------------------- config

GenerationError::GenerationError(int sample_index, std::string last_error)
    : ProviderError("generation failed for sample " + std::to_string(sample_index) + ": " + last_error),
      sample_index_(sample_index),
      last_error_(std::move(last_error)) {}

void TaskDescription::validate() const {
    if (text.empty()) throw ConfigError("task description text is empty");
    if (aspects.empty()) throw ConfigError("task requests no aspects");
    signature.validate();
    std::set<std::string> seen;
    for (const auto& a : aspects)
        if (!seen.insert(a).second) throw ConfigError("aspect '" + a + "' requested twice");
}

void ProviderConfig::validate() const {
    if (kind == Kind::Http) {
        if (endpoint.empty()) throw ConfigError("http provider needs an endpoint");
        if (model.empty()) throw ConfigError("http provider needs a model name");
        if (!embedding_endpoint.empty() && embedding_model.empty())
            throw ConfigError("embedding endpoint configured without an embedding model");
        if (!(timeout_s > 0)) throw ConfigError("timeout must be positive");
        if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
        if (max_in_flight < 1 || max_in_flight > 64) throw ConfigError("max_in_flight must lie in [1, 64]");
    } else {
        if (!(perturbation >= 0.0 && perturbation < 1.0)) throw ConfigError("perturbation must lie in [0, 1)");
        if (!(alternative_affinity >= 0.0 && alternative_affinity <= 1.0))
            throw ConfigError("alternative_affinity must lie in [0, 1]");
    }
}

// ---------------------------------------------------------------- corpus

std::vector<CorpusEntry> parse_corpus(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("mock corpus is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ConfigError("mock corpus must be a JSON array");
    std::vector<CorpusEntry> out;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("aspect") || !item.contains("dsl_source"))
            throw ConfigError("mock corpus entries need 'aspect' and 'dsl_source'");
        out.push_back({item.at("aspect").get<std::string>(), item.at("dsl_source").get<std::string>(),
                       item.value("note", std::string{})});
    }
    if (out.empty()) throw ConfigError("mock corpus is empty");
    return out;
}

std::vector<CorpusEntry> builtin_corpus() { return parse_corpus(assets::get("corpus/mock_corpus.json")); }

std::vector<CorpusEntry> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read mock corpus " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str());
}

// --------------------------------------------------------------- prompts

static const char* const kPromptNames[] = {"prompts/system_v1.txt", "prompts/reward_user_v1.txt",
                                           "prompts/alternative_user_v1.txt", "prompts/proposal_user_v1.txt",
                                           "prompts/repair_v1.txt"};

std::vector<std::pair<std::string, std::string>> prompt_hashes() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const char* name : kPromptNames) out.emplace_back(name, hex64(fnv1a(assets::get(name))));
    return out;
}

static std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out(tmpl);
    for (const auto& [key, value] : vars) {
        const std::string pat = "{{" + key + "}}";
        for (std::size_t pos = out.find(pat); pos != std::string::npos; pos = out.find(pat, pos + value.size()))
            out.replace(pos, pat.size(), value);
    }
    return out;
}

static std::string join_features(const std::vector<dsl::Feature>& fs) {
    std::string out;
    for (const auto& f : fs) {
        if (!out.empty()) out += ", ";
        out += f.name;
        if (!f.unit.empty()) out += " [" + f.unit + "]";
    }
    return out;
}

static Message system_message(const TaskDescription& task) {
    return {"system", fill(assets::get("prompts/system_v1.txt"), {{"env", task.env_name},
                                                                  {"state", join_features(task.signature.state)},
                                                                  {"action", join_features(task.signature.action)}})};
}

static std::uint64_t digest(const std::vector<Message>& messages, std::string_view extra) {
    std::uint64_t h = kFnvOffset;
    for (const auto& m : messages) {
        h = fnv1a(m.role, h);
        h = fnv1a("\x1f", h);
        h = fnv1a(m.content, h);
        h = fnv1a("\x1e", h);
    }
    return fnv1a(extra, h);
}

std::string extract_code(std::string_view text) {
    auto fence = text.find("```");
    if (fence != std::string_view::npos) {
        auto line_end = text.find('\n', fence);
        if (line_end != std::string_view::npos) {
            auto close = text.find("```", line_end + 1);
            return std::string(text.substr(line_end + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                         : close - line_end - 1));
        }
    }
    auto b = text.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(b, e - b + 1)) + "\n";
}

// ------------------------------------------------------------------ mock

namespace {

constexpr const char* kNamePool[] = {"k", "c", "w", "scale", "gain", "target", "tol", "beta", "sigma", "rate", "lam", "eta"};

double round9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.8e", v);
    return std::strtod(buf, nullptr);
}

std::size_t char_levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

struct Templates {
    std::vector<dsl::RewardTerm> terms;
    bool fallback = false;
};

Templates templates_for(const std::vector<CorpusEntry>& corpus, const std::string& aspect,
                        const dsl::EnvSignature& sig) {
    std::map<std::string, std::vector<dsl::RewardTerm>> by_aspect;
    for (const auto& e : corpus) {
        try {
            by_aspect[e.aspect].push_back(dsl::parse_term(e.dsl_source, &sig));
        } catch (const Error&) {
        }
    }
    Templates out;
    if (auto it = by_aspect.find(aspect); it != by_aspect.end()) {
        out.terms = it->second;
        return out;
    }
    if (by_aspect.empty()) throw ProviderError("mock corpus has no template usable with this environment");
    const std::string* nearest = nullptr;
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (const auto& [name, terms] : by_aspect) {
        std::size_t d = char_levenshtein(name, aspect);
        if (d < best) {
            best = d;
            nearest = &name;
        }
    }
    out.terms = by_aspect.at(*nearest);
    out.fallback = true;
    return out;
}

dsl::RewardTerm perturb(dsl::RewardTerm term, double magnitude, std::mt19937_64& rng) {
    if (magnitude == 0.0) return term;
    std::uniform_real_distribution<double> jitter(-magnitude, magnitude);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    std::map<std::string, std::string> rename;
    std::set<std::string> taken;
    for (const auto& h : term.hypers) taken.insert(h.name);
    for (auto& h : term.hypers) {
        if (coin(rng) < 0.5) {
            std::vector<std::string> free;
            for (const char* n : kNamePool)
                if (!taken.count(n)) free.push_back(n);
            if (!free.empty()) {
                std::string fresh = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
                taken.insert(fresh);
                rename[h.name] = fresh;
                h.name = fresh;
            }
        }
        h.default_value = std::clamp(round9(h.default_value * (1.0 + jitter(rng))), h.lo, h.hi);
    }
    std::vector<dsl::Node> nodes = term.expr.nodes();
    for (auto& n : nodes) {
        if (n.kind == dsl::NodeKind::HyperRef) {
            if (auto it = rename.find(n.name); it != rename.end()) n.name = it->second;
        } else if (n.kind == dsl::NodeKind::Constant) {
            n.value = round9(n.value * (1.0 + jitter(rng)));
        }
    }
    term.expr = dsl::RewardExpr(std::move(nodes));
    return term;
}

std::string format_json_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

MockBackend::MockBackend(std::vector<CorpusEntry> corpus, std::uint64_t seed, double perturbation,
                         double alternative_affinity)
    : corpus_(std::move(corpus)), seed_(seed), perturbation_(perturbation), affinity_(alternative_affinity) {}

Completion MockBackend::complete(const CompletionRequest& request) {
    switch (request.purpose) {
        case CompletionRequest::Purpose::Reward: return reward(request);
        case CompletionRequest::Purpose::Alternative: return alternative(request);
        case CompletionRequest::Purpose::Proposal: return proposal(request);
    }
    throw ProviderError("unknown request purpose");
}

sim::EmbeddingVector MockBackend::embed(std::string_view source) { return offline_embedding(source); }

Completion MockBackend::reward(const CompletionRequest& r) const {
    if (!r.task) throw ProviderError("reward request without a task");
    std::mt19937_64 rng(splitmix64(seed_ ^ r.request_key));
    Completion out;
    dsl::RewardFunction rf;
    for (const auto& aspect : r.task->aspects) {
        Templates t = templates_for(corpus_, aspect, r.task->signature);
        out.aspect_fallback = out.aspect_fallback || t.fallback;
        auto pick = std::uniform_int_distribution<std::size_t>(0, t.terms.size() - 1)(rng);
        dsl::RewardTerm term = perturb(t.terms[pick], perturbation_, rng);
        term.name = aspect;
        term.aspect = aspect;
        rf.terms.push_back(std::move(term));
        rf.weights.push_back(1.0);
    }
    if (perturbation_ > 0.0) std::shuffle(rf.terms.begin(), rf.terms.end(), rng);
    out.text = dsl::print_canonical(rf);
    return out;
}

Completion MockBackend::alternative(const CompletionRequest& r) const {
    if (!r.task) throw ProviderError("alternative request without a task");
    std::mt19937_64 rng(splitmix64(seed_ ^ r.request_key));
    Completion out;
    dsl::RewardTerm term;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < affinity_) {
        term = perturb(dsl::parse_term(r.component_source, &r.task->signature), perturbation_, rng);
    } else {
        Templates t = templates_for(corpus_, r.component_aspect, r.task->signature);
        out.aspect_fallback = t.fallback;
        auto pick = std::uniform_int_distribution<std::size_t>(0, t.terms.size() - 1)(rng);
        term = perturb(t.terms[pick], perturbation_, rng);
    }
    term.name = r.component_aspect;
    term.aspect = r.component_aspect;
    out.text = dsl::print_term(term);
    return out;
}

Completion MockBackend::proposal(const CompletionRequest& r) const {
    if (!r.proposal) throw ProviderError("proposal request without parameters");
    const ProposalRequest& p = *r.proposal;
    std::vector<double> values = p.initial;
    if (!p.history.empty()) {
        std::mt19937_64 rng(splitmix64(seed_ ^ r.request_key));
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.history.size(); ++i)
            if (p.history[i].second > p.history[best].second) best = i;
        values = p.history[best].first;
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::normal_distribution<double> step(0.0, 0.15 * (p.hi[i] - p.lo[i]));
            values[i] = std::clamp(values[i] + step(rng), p.lo[i], p.hi[i]);
        }
    }
    std::string text = "{\"values\": {";
    for (std::size_t i = 0; i < p.names.size(); ++i) {
        if (i) text += ", ";
        text += "\"" + p.names[i] + "\": " + format_json_number(values[i]);
    }
    text += "}}";
    return {text, false};
}

// ------------------------------------------------------------------ http

namespace {

struct Url {
    std::string scheme_host;
    std::string path;
};

Url split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint is not an absolute URL: " + url);
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

HttpBackend::HttpBackend(ProviderConfig cfg) : cfg_(std::move(cfg)), in_flight_(cfg_.max_in_flight) {
    cfg_.validate();
}

std::string HttpBackend::id() const { return "http:" + cfg_.model; }

std::string HttpBackend::embedding_id() const {
    return cfg_.embedding_endpoint.empty() ? std::string(kOfflineEmbedderId) : "http:" + cfg_.embedding_model;
}

std::string HttpBackend::post_json(const std::string& url, const std::string& body) {
    Url u = split_url(url);
    httplib::Headers headers;
    if (!cfg_.token_env.empty()) {
        if (const char* token = std::getenv(cfg_.token_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(500LL << (attempt - 1)));
        in_flight_.acquire();
        httplib::Result res;
        {
            httplib::Client client(u.scheme_host);
            auto secs = static_cast<time_t>(cfg_.timeout_s);
            auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
            client.set_connection_timeout(secs, usecs);
            client.set_read_timeout(secs, usecs);
            client.set_write_timeout(secs, usecs);
            res = client.Post(u.path, headers, body, "application/json");
        }
        in_flight_.release();
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) return res->body;
        last_error = "HTTP status " + std::to_string(res->status);
        if (res->status != 429 && res->status < 500) throw ProviderError(last_error + " from " + url);
    }
    throw ProviderUnavailable("provider at " + u.scheme_host + " unavailable: " + last_error);
}

Completion HttpBackend::complete(const CompletionRequest& request) {
    json body;
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    body["messages"] = json::array();
    for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    std::string raw = post_json(cfg_.endpoint, body.dump());
    try {
        auto doc = json::parse(raw);
        return {doc.at("choices").at(0).at("message").at("content").get<std::string>(), false};
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed completion response: ") + e.what());
    }
}

sim::EmbeddingVector HttpBackend::embed(std::string_view source) {
    if (cfg_.embedding_endpoint.empty()) return offline_embedding(source);
    json body = {{"model", cfg_.embedding_model}, {"input", std::string(source)}};
    std::string raw = post_json(cfg_.embedding_endpoint, body.dump());
    sim::EmbeddingVector out;
    out.provider_id = embedding_id();
    try {
        out.values = json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed embedding response: ") + e.what());
    }
    for (double v : out.values)
        if (!std::isfinite(v)) throw ProviderError("embedding contains non-finite values");
    std::lock_guard lock(dim_mutex_);
    if (!dimension_) {
        dimension_ = out.values.size();
    } else if (*dimension_ != out.values.size()) {
        throw DimensionDrift("embedding dimension changed from " + std::to_string(*dimension_) + " to " +
                             std::to_string(out.values.size()));
    }
    return out;
}

// --------------------------------------------------------------- gateway

Gateway::Gateway(std::unique_ptr<Backend> backend, bool offline_embedding_fallback)
    : backend_(std::move(backend)), offline_fallback_(offline_embedding_fallback) {
    if (!backend_) throw ConfigError("gateway needs a backend");
}

const sim::Embedder* Gateway::fallback_embedder() const noexcept {
    static const OfflineEmbedder offline;
    return offline_fallback_ ? &offline : nullptr;
}

Completion Gateway::ask(CompletionRequest& request) {
    ++calls_;
    return backend_->complete(request);
}

sim::EmbeddingVector Gateway::embed(std::string_view source) const {
    ++calls_;
    return backend_->embed(source);
}

std::string Gateway::embedder_id() const { return backend_->embedding_id(); }

namespace {

using Clock = std::chrono::steady_clock;

void check_aspects(const dsl::RewardFunction& rf, const TaskDescription& task) {
    for (const auto& aspect : task.aspects) {
        bool found = false;
        for (const auto& t : rf.terms) found = found || t.aspect == aspect;
        if (!found) throw dsl::NameError("no term carries the requested aspect '" + aspect + "'", aspect);
    }
}

Message repair_message(const std::string& error) {
    return {"user", fill(assets::get("prompts/repair_v1.txt"), {{"error", error}})};
}

}  // namespace

GenerationResult Gateway::generate_reward(const TaskDescription& task, int n) {
    task.validate();
    if (n < 1) throw ConfigError("need at least one sample");
    GenerationResult out;
    auto t0 = Clock::now();
    std::string aspects;
    for (const auto& a : task.aspects) aspects += (aspects.empty() ? "" : ", ") + a;
    for (int i = 0; i < n; ++i) {
        CompletionRequest req;
        req.purpose = CompletionRequest::Purpose::Reward;
        req.task = &task;
        req.sample = i;
        req.messages = {system_message(task),
                        {"user", fill(assets::get("prompts/reward_user_v1.txt"), {{"task", task.text}, {"aspects", aspects}})}};
        req.request_key = digest(req.messages, "reward/" + std::to_string(i));
        std::string last_error;
        bool ok = false;
        for (int attempt = 0; attempt < kParseAttempts && !ok; ++attempt) {
            req.attempt = attempt;
            Completion c = ask(req);
            std::string code = extract_code(c.text);
            try {
                check_aspects(dsl::parse(code, task.signature), task);
                out.sources.push_back(code);
                out.attempts.push_back(attempt + 1);
                out.aspect_fallback = out.aspect_fallback || c.aspect_fallback;
                ok = true;
            } catch (const Error& e) {
                last_error = e.what();
                req.messages.push_back({"assistant", c.text});
                req.messages.push_back(repair_message(last_error));
            }
        }
        if (!ok) throw GenerationError(i, last_error);
    }
    out.latency_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return out;
}

GenerationResult Gateway::generate_alternatives(std::string_view component_source, const TaskDescription& task,
                                                int n_alt, int nonce) {
    task.validate();
    if (n_alt < 1) throw ConfigError("need at least one alternative");
    const dsl::RewardTerm component = dsl::parse_term(component_source, &task.signature);
    GenerationResult out;
    auto t0 = Clock::now();
    for (int i = 0; i < n_alt; ++i) {
        CompletionRequest req;
        req.purpose = CompletionRequest::Purpose::Alternative;
        req.task = &task;
        req.component_source = std::string(component_source);
        req.component_aspect = component.aspect;
        req.sample = i;
        req.messages = {system_message(task),
                        {"user", fill(assets::get("prompts/alternative_user_v1.txt"),
                                      {{"task", task.text}, {"aspect", component.aspect},
                                       {"component", req.component_source}})}};
        req.request_key = digest(req.messages, "alternative/" + std::to_string(nonce) + "/" + std::to_string(i));
        std::string last_error;
        bool ok = false;
        for (int attempt = 0; attempt < kParseAttempts && !ok; ++attempt) {
            req.attempt = attempt;
            Completion c = ask(req);
            std::string code = extract_code(c.text);
            try {
                dsl::parse_term(code, &task.signature);
                out.sources.push_back(code);
                out.attempts.push_back(attempt + 1);
                out.aspect_fallback = out.aspect_fallback || c.aspect_fallback;
                ok = true;
            } catch (const Error& e) {
                last_error = e.what();
                req.messages.push_back({"assistant", c.text});
                req.messages.push_back(repair_message(last_error));
            }
        }
        if (!ok) throw GenerationError(i, last_error);
    }
    out.latency_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return out;
}

std::vector<double> Gateway::propose_values(const ProposalRequest& request) {
    const std::size_t d = request.names.size();
    if (d == 0 || request.lo.size() != d || request.hi.size() != d || request.initial.size() != d)
        throw ConfigError("malformed proposal request");
    std::string ranges;
    for (std::size_t i = 0; i < d; ++i)
        ranges += "  " + request.names[i] + " in [" + dsl::format_number(request.lo[i]) + ", " +
                  dsl::format_number(request.hi[i]) + "], currently " + dsl::format_number(request.initial[i]) + "\n";
    std::string history;
    for (const auto& [point, value] : request.history) {
        history += " ";
        for (std::size_t i = 0; i < d; ++i) history += " " + request.names[i] + "=" + dsl::format_number(point[i]);
        history += " -> " + (std::isfinite(value) ? dsl::format_number(value) : std::string("failed")) + "\n";
    }
    if (history.empty()) history = "  (none yet)\n";

    CompletionRequest req;
    req.purpose = CompletionRequest::Purpose::Proposal;
    req.proposal = &request;
    req.messages = {{"system", "You tune numeric parameters of reward functions."},
                    {"user", fill(assets::get("prompts/proposal_user_v1.txt"),
                                  {{"task", request.context}, {"context", request.context},
                                   {"ranges", ranges}, {"history", history}})}};
    req.request_key = digest(req.messages, "proposal");
    std::string last_error;
    for (int attempt = 0; attempt < kParseAttempts; ++attempt) {
        req.attempt = attempt;
        Completion c = ask(req);
        try {
            std::string body = c.text;
            if (body.find("```") != std::string::npos) body = extract_code(body);
            auto doc = json::parse(body);
            const auto& values = doc.at("values");
            std::vector<double> out(d);
            for (std::size_t i = 0; i < d; ++i) {
                if (!values.contains(request.names[i]))
                    throw ConfigError("missing value for '" + request.names[i] + "'");
                double v = values.at(request.names[i]).get<double>();
                if (!std::isfinite(v) || v < request.lo[i] || v > request.hi[i])
                    throw ConfigError("value for '" + request.names[i] + "' outside its range");
                out[i] = v;
            }
            return out;
        } catch (const json::exception& e) {
            last_error = e.what();
        } catch (const ConfigError& e) {
            last_error = e.what();
        }
        req.messages.push_back({"assistant", c.text});
        req.messages.push_back({"user", "Your previous reply could not be used: " + last_error +
                                             "\nReply again with JSON only."});
    }
    throw GenerationError(0, last_error);
}

std::unique_ptr<Gateway> make_gateway(const ProviderConfig& cfg, std::uint64_t default_seed) {
    cfg.validate();
    if (cfg.kind == ProviderConfig::Kind::Http) return std::make_unique<Gateway>(std::make_unique<HttpBackend>(cfg));
    auto corpus = cfg.corpus_path.empty() ? builtin_corpus() : load_corpus(cfg.corpus_path);
    return std::make_unique<Gateway>(std::make_unique<MockBackend>(std::move(corpus), cfg.seed.value_or(default_seed),
                                                                   cfg.perturbation, cfg.alternative_affinity));
}

}  // namespace cour::llm
