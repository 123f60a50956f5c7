#pragma once

// Code uncertainty quantification: U(R_i) = 1 - max(S_text, S_semantic)
// over the samples generated for one reward component, plus medoid
// selection, refinement and a persistent component library.

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cour/dsl.hpp"
#include "cour/llm.hpp"
#include "cour/similarity.hpp"

namespace cour::cuq {

enum class Origin { Generated, Library, Refined };

const char* to_string(Origin o);
Origin origin_from_string(std::string_view s);

struct ComponentSample {
    dsl::RewardTerm term;
    std::string source;  // print_term(term)
    Origin origin = Origin::Generated;
    std::optional<sim::EmbeddingVector> embedding;

    static ComponentSample from_term(dsl::RewardTerm term, Origin origin);
};

struct UncertaintyReport {
    std::string component_name;
    double s_text = 0.0;
    double s_semantic = 0.0;
    double u = 1.0;
    int peer_count = 0;
    std::optional<std::string> library_match;
};

struct LibraryRecord {
    std::string id;
    std::string aspect;
    std::string source;
    std::vector<double> embedding;
    std::string provider_id;
    std::string created_at;
    int uses = 0;

    bool operator==(const LibraryRecord&) const = default;
};

/// Append-only store of accepted components. Persisted as JSON lines with a
/// `<path>.count` sidecar holding the line count, checked on open. An empty
/// path gives an in-memory library.
class ComponentLibrary {
public:
    ComponentLibrary() = default;
    static ComponentLibrary open(const std::string& path);

    /// Returns the fresh id. Records are written through immediately.
    std::string insert(const ComponentSample& sample, int uses = 1, std::string created_at = {});
    std::vector<LibraryRecord> query(const std::string& aspect, const sim::EmbeddingVector& embedding,
                                     std::size_t k) const;

    /// Library restricted to its first `n` records (the state a past run saw).
    ComponentLibrary prefix(std::size_t n) const;

    std::vector<LibraryRecord> records() const;
    std::size_t size() const;
    const std::string& path() const noexcept { return path_; }

private:
    void append_line(const LibraryRecord& rec);

    std::string path_;
    std::vector<LibraryRecord> records_;
    mutable std::mutex mutex_;

public:
    ComponentLibrary(ComponentLibrary&& other) noexcept;
    ComponentLibrary& operator=(ComponentLibrary&& other) noexcept;
};

std::string record_to_json_line(const LibraryRecord& rec);
LibraryRecord record_from_json_line(std::string_view line);

struct ScoreOptions {
    std::size_t library_k = 16;
    /// Used when the primary embedder fails; null means fail with ProviderError.
    const sim::Embedder* fallback = nullptr;
};

/// Fills in missing embeddings of `samples` using `embedder` (or the
/// fallback on provider failure) so later calls reuse them.
void ensure_embeddings(std::vector<ComponentSample>& samples, const sim::Embedder& embedder,
                       const sim::Embedder* fallback);

UncertaintyReport score_component(std::vector<ComponentSample>& samples, const ComponentLibrary& library,
                                  const sim::Embedder& embedder, const ScoreOptions& opts = {});

/// Pairwise similarity max(textual, semantic); samples must carry embeddings.
double pair_similarity(const ComponentSample& a, const ComponentSample& b);

/// Index of the medoid (max mean pairwise similarity, earliest on ties).
std::size_t select_representative_index(std::span<const ComponentSample> samples);
const ComponentSample& select_representative(std::span<const ComponentSample> samples);

struct RefineOptions {
    double tau = 0.3;
    int n_alt = 3;
    int max_refine_rounds = 2;
};

/// Returns `samples` extended with n_alt alternatives when report.u > tau and
/// fewer than max_refine_rounds rounds have been spent; otherwise `samples`.
std::vector<ComponentSample> refine(const std::vector<ComponentSample>& samples, const UncertaintyReport& report,
                                    llm::Gateway& gateway, const llm::TaskDescription& task,
                                    const RefineOptions& opts, int rounds_done);

}  // namespace cour::cuq
