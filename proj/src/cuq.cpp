#include "cour/cuq.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

namespace cour::cuq {

using nlohmann::json;

const char* to_string(Origin o) {
    switch (o) {
        case Origin::Generated: return "generated";
        case Origin::Library: return "library";
        case Origin::Refined: return "refined";
    }
    return "generated";
}

Origin origin_from_string(std::string_view s) {
    if (s == "library") return Origin::Library;
    if (s == "refined") return Origin::Refined;
    return Origin::Generated;
}

ComponentSample ComponentSample::from_term(dsl::RewardTerm term, Origin origin) {
    ComponentSample s;
    s.source = dsl::print_term(term);
    s.term = std::move(term);
    s.origin = origin;
    return s;
}

// ---------------------------------------------------------------- library

std::string record_to_json_line(const LibraryRecord& r) {
    json j = {{"id", r.id},
              {"aspect", r.aspect},
              {"source", r.source},
              {"embedding", r.embedding},
              {"provider_id", r.provider_id},
              {"created_at", r.created_at},
              {"uses", r.uses}};
    return j.dump();
}

LibraryRecord record_from_json_line(std::string_view line) {
    try {
        json j = json::parse(line);
        LibraryRecord r;
        r.id = j.at("id").get<std::string>();
        r.aspect = j.at("aspect").get<std::string>();
        r.source = j.at("source").get<std::string>();
        r.embedding = j.at("embedding").get<std::vector<double>>();
        r.provider_id = j.at("provider_id").get<std::string>();
        r.created_at = j.value("created_at", std::string());
        r.uses = j.value("uses", 0);
        return r;
    } catch (const json::exception& e) {
        throw StoreIOError(std::string("malformed library record: ") + e.what());
    }
}

ComponentLibrary::ComponentLibrary(ComponentLibrary&& other) noexcept {
    std::lock_guard lock(other.mutex_);
    path_ = std::move(other.path_);
    records_ = std::move(other.records_);
}

ComponentLibrary& ComponentLibrary::operator=(ComponentLibrary&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        path_ = std::move(other.path_);
        records_ = std::move(other.records_);
    }
    return *this;
}

static std::string sidecar(const std::string& path) { return path + ".count"; }

ComponentLibrary ComponentLibrary::open(const std::string& path) {
    ComponentLibrary lib;
    lib.path_ = path;
    if (path.empty()) return lib;
    namespace fs = std::filesystem;
    if (!fs::exists(path)) {
        if (fs::exists(sidecar(path))) throw StoreIOError("library count file exists without " + path);
        return lib;
    }
    std::ifstream in(path);
    if (!in) throw StoreIOError("cannot read library " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        lib.records_.push_back(record_from_json_line(line));
    }
    std::ifstream cnt(sidecar(path));
    std::size_t expected = 0;
    if (!cnt || !(cnt >> expected)) throw StoreIOError("missing or unreadable " + sidecar(path));
    if (expected != lib.records_.size())
        throw StoreIOError("library " + path + " has " + std::to_string(lib.records_.size()) +
                           " records but its count file says " + std::to_string(expected));
    return lib;
}

void ComponentLibrary::append_line(const LibraryRecord& rec) {
    if (path_.empty()) return;
    auto parent = std::filesystem::path(path_).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    {
        std::ofstream out(path_, std::ios::app);
        if (!out) throw StoreIOError("cannot append to " + path_);
        out << record_to_json_line(rec) << '\n';
        if (!out) throw StoreIOError("write failed for " + path_);
    }
    std::ofstream cnt(sidecar(path_), std::ios::trunc);
    cnt << records_.size() << '\n';
    if (!cnt) throw StoreIOError("cannot update " + sidecar(path_));
}

std::string ComponentLibrary::insert(const ComponentSample& sample, int uses, std::string created_at) {
    if (!sample.embedding) throw Error("library insert needs an embedded sample");
    std::lock_guard lock(mutex_);
    LibraryRecord rec;
    rec.id = "c" + std::to_string(records_.size() + 1);
    rec.aspect = sample.term.aspect;
    rec.source = sample.source;
    rec.embedding = sample.embedding->values;
    rec.provider_id = sample.embedding->provider_id;
    rec.created_at = std::move(created_at);
    rec.uses = uses;
    records_.push_back(rec);
    try {
        append_line(rec);
    } catch (...) {
        records_.pop_back();
        throw;
    }
    return rec.id;
}

std::vector<LibraryRecord> ComponentLibrary::query(const std::string& aspect,
                                                   const sim::EmbeddingVector& embedding,
                                                   std::size_t k) const {
    if (k == 0) throw Error("library query needs k >= 1");
    std::lock_guard lock(mutex_);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.aspect != aspect || r.provider_id != embedding.provider_id) continue;
        if (r.embedding.size() != embedding.values.size()) continue;
        sim::EmbeddingVector v{r.embedding, r.provider_id};
        scored.emplace_back(sim::semantic_from_embeddings(embedding, v), i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<LibraryRecord> out;
    for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(records_[scored[i].second]);
    return out;
}

ComponentLibrary ComponentLibrary::prefix(std::size_t n) const {
    std::lock_guard lock(mutex_);
    ComponentLibrary lib;
    lib.records_.assign(records_.begin(), records_.begin() + std::min(n, records_.size()));
    return lib;
}

std::vector<LibraryRecord> ComponentLibrary::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t ComponentLibrary::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

// ---------------------------------------------------------------- scoring

void ensure_embeddings(std::vector<ComponentSample>& samples, const sim::Embedder& embedder,
                       const sim::Embedder* fallback) {
    auto fill = [&](const sim::Embedder& e, bool overwrite) {
        for (auto& s : samples)
            if (overwrite || !s.embedding) s.embedding = e.embed(s.source);
    };
    try {
        fill(embedder, false);
    } catch (const ProviderError&) {
        if (!fallback) throw;
        // Never mix spaces within a batch.
        fill(*fallback, true);
    }
}

double pair_similarity(const ComponentSample& a, const ComponentSample& b) {
    double t = sim::textual_similarity(sim::tokenize_canonical(a.source), sim::tokenize_canonical(b.source));
    double s = sim::semantic_from_embeddings(*a.embedding, *b.embedding);
    return std::max(t, s);
}

UncertaintyReport score_component(std::vector<ComponentSample>& samples, const ComponentLibrary& library,
                                  const sim::Embedder& embedder, const ScoreOptions& opts) {
    if (samples.empty()) throw Error("score_component needs at least one sample");
    ensure_embeddings(samples, embedder, opts.fallback);

    UncertaintyReport rep;
    rep.component_name = samples.front().term.name;
    const std::string& aspect = samples.front().term.aspect;

    std::vector<sim::TokenStream> toks;
    toks.reserve(samples.size());
    for (const auto& s : samples) toks.push_back(sim::tokenize_canonical(s.source));

    // Library candidates: same aspect and embedding space, ranked by their
    // best semantic match against any sample.
    struct Candidate {
        double rank;
        std::size_t order;
        LibraryRecord rec;
    };
    std::vector<Candidate> cands;
    {
        auto all = library.records();
        for (std::size_t i = 0; i < all.size(); ++i) {
            auto& r = all[i];
            if (r.aspect != aspect) continue;
            sim::EmbeddingVector v{r.embedding, r.provider_id};
            double best = -1.0;
            bool usable = true;
            for (const auto& s : samples) {
                if (s.embedding->provider_id != r.provider_id ||
                    s.embedding->values.size() != r.embedding.size()) {
                    usable = false;
                    break;
                }
                best = std::max(best, sim::semantic_from_embeddings(*s.embedding, v));
            }
            if (usable) cands.push_back({best, i, std::move(r)});
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.rank > b.rank; });
        if (cands.size() > opts.library_k) cands.resize(opts.library_k);
    }

    double best_peer = -1.0;
    double best_lib = -1.0;
    std::optional<std::string> best_lib_id;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            double t = sim::textual_similarity(toks[i], toks[j]);
            double s = sim::semantic_from_embeddings(*samples[i].embedding, *samples[j].embedding);
            rep.s_text = std::max(rep.s_text, t);
            rep.s_semantic = std::max(rep.s_semantic, s);
            best_peer = std::max(best_peer, std::max(t, s));
        }
        for (const auto& c : cands) {
            double t = sim::textual_similarity(toks[i], sim::tokenize_canonical(c.rec.source));
            double s = sim::semantic_from_embeddings(*samples[i].embedding,
                                                     sim::EmbeddingVector{c.rec.embedding, c.rec.provider_id});
            rep.s_text = std::max(rep.s_text, t);
            rep.s_semantic = std::max(rep.s_semantic, s);
            if (std::max(t, s) > best_lib) {
                best_lib = std::max(t, s);
                best_lib_id = c.rec.id;
            }
        }
    }
    rep.peer_count = static_cast<int>(samples.size() - 1 + cands.size());
    if (best_lib > best_peer) rep.library_match = best_lib_id;
    rep.u = 1.0 - std::max(rep.s_text, rep.s_semantic);
    return rep;
}

std::size_t select_representative_index(std::span<const ComponentSample> samples) {
    if (samples.empty()) throw Error("select_representative needs at least one sample");
    const std::size_t n = samples.size();
    if (n == 1) return 0;
    std::vector<sim::TokenStream> toks;
    toks.reserve(n);
    for (const auto& s : samples) toks.push_back(sim::tokenize_canonical(s.source));
    std::vector<double> sum(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double t = sim::textual_similarity(toks[i], toks[j]);
            double s = sim::semantic_from_embeddings(*samples[i].embedding, *samples[j].embedding);
            double m = std::max(t, s);
            sum[i] += m;
            sum[j] += m;
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (sum[i] > sum[best]) best = i;
    return best;
}

const ComponentSample& select_representative(std::span<const ComponentSample> samples) {
    return samples[select_representative_index(samples)];
}

// ------------------------------------------------------------- refinement

std::vector<ComponentSample> refine(const std::vector<ComponentSample>& samples, const UncertaintyReport& report,
                                    llm::Gateway& gateway, const llm::TaskDescription& task,
                                    const RefineOptions& opts, int rounds_done) {
    if (!(opts.tau > 0.0 && opts.tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    if (opts.n_alt < 1) throw ConfigError("n_alt must be at least 1");
    if (samples.empty()) throw Error("refine needs at least one sample");
    if (report.u <= opts.tau || rounds_done >= opts.max_refine_rounds) return samples;

    bool embedded = std::all_of(samples.begin(), samples.end(), [](const auto& s) { return s.embedding; });
    const ComponentSample& anchor = embedded ? select_representative(samples) : samples.front();
    auto alts = gateway.generate_alternatives(anchor.source, task, opts.n_alt, rounds_done);

    std::vector<ComponentSample> out = samples;
    for (const auto& src : alts.sources) {
        dsl::RewardTerm t = dsl::parse_term(src, &task.signature);
        t.name = anchor.term.name;
        t.aspect = anchor.term.aspect;
        out.push_back(ComponentSample::from_term(std::move(t), Origin::Refined));
    }
    return out;
}

}  // namespace cour::cuq
