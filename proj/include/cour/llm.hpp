#pragma once

// Reward-code generation and embedding providers.
//
// The Gateway owns the request protocol (prompt assembly, validation of
// every response, bounded re-prompting with the parser error appended).
// Backends only turn one request into one text response or one vector.

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "cour/dsl.hpp"
#include "cour/error.hpp"
#include "cour/similarity.hpp"

namespace cour::llm {

inline constexpr int kParseAttempts = 3;
inline constexpr std::size_t kOfflineDim = 256;
inline constexpr std::size_t kOfflineTfDim = 192;
inline constexpr const char* kOfflineEmbedderId = "offline-tfhash-v1";

/// Basis of the FNV-1a hash that assigns tokens to TF buckets.
std::uint64_t offline_hash_basis();

/// Hashed token frequencies over the canonical token stream (192 dims)
/// followed by an AST histogram (64 dims: 17 node-kind counts, 16 depth
/// counts, zero padding), L2-normalized.
sim::EmbeddingVector offline_embedding(std::string_view source);

/// Index of the histogram slot for a node (0..16).
int node_kind_slot(const dsl::Node& n);

class OfflineEmbedder final : public sim::Embedder {
public:
    sim::EmbeddingVector embed(std::string_view source) const override { return offline_embedding(source); }
    std::string embedder_id() const override { return kOfflineEmbedderId; }
};

class GenerationError : public ProviderError {
public:
    GenerationError(int sample_index, std::string last_error);
    int sample_index() const noexcept { return sample_index_; }
    const std::string& last_error() const noexcept { return last_error_; }

private:
    int sample_index_;
    std::string last_error_;
};

class DimensionDrift : public ProviderError {
public:
    using ProviderError::ProviderError;
};

struct TaskDescription {
    std::string text;
    std::string env_name;
    dsl::EnvSignature signature;
    std::vector<std::string> aspects;

    void validate() const;
};

struct ProviderConfig {
    enum class Kind { Mock, Http };
    Kind kind = Kind::Mock;

    // http
    std::string endpoint;            // chat-completion URL
    std::string embedding_endpoint;  // embedding URL; empty -> offline embeddings
    std::string model;
    std::string embedding_model;
    std::string token_env;  // name of the environment variable holding the token
    double timeout_s = 60.0;
    int max_retries = 3;
    int max_in_flight = 4;
    double temperature = 0.7;

    // mock
    std::string corpus_path;  // empty -> built-in corpus
    double perturbation = 0.05;
    std::optional<std::uint64_t> seed;
    double alternative_affinity = 0.5;

    void validate() const;
};

struct Message {
    std::string role;
    std::string content;
};

struct ProposalRequest {
    std::string context;
    std::vector<std::string> names;
    std::vector<double> lo;
    std::vector<double> hi;
    std::vector<double> initial;
    std::vector<std::pair<std::vector<double>, double>> history;
};

struct CompletionRequest {
    enum class Purpose { Reward, Alternative, Proposal };
    Purpose purpose = Purpose::Reward;
    std::vector<Message> messages;
    const TaskDescription* task = nullptr;
    std::string component_source;  // Alternative
    std::string component_aspect;  // Alternative
    const ProposalRequest* proposal = nullptr;
    std::uint64_t request_key = 0;  // stable digest of the request contents
    int sample = 0;
    int attempt = 0;
};

struct Completion {
    std::string text;
    bool aspect_fallback = false;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual Completion complete(const CompletionRequest& request) = 0;
    virtual sim::EmbeddingVector embed(std::string_view source) = 0;
    virtual std::string id() const = 0;
    virtual std::string embedding_id() const = 0;
};

struct CorpusEntry {
    std::string aspect;
    std::string dsl_source;
    std::string note;
};

std::vector<CorpusEntry> builtin_corpus();
std::vector<CorpusEntry> load_corpus(const std::string& path);
std::vector<CorpusEntry> parse_corpus(std::string_view json_text);

/// Deterministic stand-in for a language model: a pure function of
/// (corpus, seed, request).
class MockBackend final : public Backend {
public:
    MockBackend(std::vector<CorpusEntry> corpus, std::uint64_t seed, double perturbation,
                double alternative_affinity);

    Completion complete(const CompletionRequest& request) override;
    sim::EmbeddingVector embed(std::string_view source) override;
    std::string id() const override { return "mock"; }
    std::string embedding_id() const override { return kOfflineEmbedderId; }

    const std::vector<CorpusEntry>& corpus() const noexcept { return corpus_; }

private:
    Completion reward(const CompletionRequest& r) const;
    Completion alternative(const CompletionRequest& r) const;
    Completion proposal(const CompletionRequest& r) const;

    std::vector<CorpusEntry> corpus_;
    std::uint64_t seed_;
    double perturbation_;
    double affinity_;
};

/// Chat-completion / embedding client speaking the common JSON shape:
/// {model, messages:[{role, content}], temperature} -> {choices:[{message:{content}}]}
/// and {model, input} -> {data:[{embedding:[...]}]}.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(ProviderConfig cfg);

    Completion complete(const CompletionRequest& request) override;
    sim::EmbeddingVector embed(std::string_view source) override;
    std::string id() const override;
    std::string embedding_id() const override;

private:
    std::string post_json(const std::string& url, const std::string& body);

    ProviderConfig cfg_;
    std::counting_semaphore<64> in_flight_;
    std::mutex dim_mutex_;
    std::optional<std::size_t> dimension_;
};

struct GenerationResult {
    std::vector<std::string> sources;
    std::vector<int> attempts;  // per sample
    double latency_s = 0.0;
    bool aspect_fallback = false;
};

/// Names of the shipped prompt templates with their FNV-1a digests.
std::vector<std::pair<std::string, std::string>> prompt_hashes();

class Gateway final : public sim::Embedder {
public:
    Gateway(std::unique_ptr<Backend> backend, bool offline_embedding_fallback = true);

    GenerationResult generate_reward(const TaskDescription& task, int n);
    GenerationResult generate_alternatives(std::string_view component_source, const TaskDescription& task,
                                           int n_alt, int nonce = 0);
    std::vector<double> propose_values(const ProposalRequest& request);

    sim::EmbeddingVector embed(std::string_view source) const override;
    std::string embedder_id() const override;

    Backend& backend() noexcept { return *backend_; }
    /// Offline embedder to fall back on when the provider's embedding
    /// endpoint fails, or null when the fallback is disabled.
    const sim::Embedder* fallback_embedder() const noexcept;
    std::size_t calls() const noexcept { return calls_.load(); }

private:
    Completion ask(CompletionRequest& request);

    std::unique_ptr<Backend> backend_;
    bool offline_fallback_;
    mutable std::atomic<std::size_t> calls_{0};
};

std::unique_ptr<Gateway> make_gateway(const ProviderConfig& cfg, std::uint64_t default_seed);

/// Pulls DSL text out of a chat response (strips Markdown code fences).
std::string extract_code(std::string_view text);

}  // namespace cour::llm
