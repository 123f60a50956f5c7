#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cour/error.hpp"

namespace cour::sim {

enum class TokenKind { Ident, Number, Op, Keyword };

struct Token {
    TokenKind kind = TokenKind::Op;
    std::string lexeme;
    bool operator==(const Token&) const = default;
};

/// Normalized token sequence of a DSL text. Free identifiers (term,
/// aspect and hyperparameter names) are renamed v0, v1, ... in order of
/// first occurrence; feature references such as `state.v` keep their name
/// because they denote fixed environment quantities. Numbers are rounded
/// to six significant digits.
struct TokenStream {
    std::vector<Token> tokens;

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }
    bool operator==(const TokenStream&) const = default;
};

class LexError : public Error {
public:
    LexError(const std::string& what, std::size_t position)
        : Error(what + " at offset " + std::to_string(position)), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

TokenStream tokenize_canonical(std::string_view source);

/// Unit-cost edit distance over tokens.
std::size_t levenshtein(const TokenStream& a, const TokenStream& b);

/// 1 - levenshtein / max(|a|, |b|); two empty streams are identical.
double textual_similarity(const TokenStream& a, const TokenStream& b);

struct EmbeddingVector {
    std::vector<double> values;
    std::string provider_id;
    bool operator==(const EmbeddingVector&) const = default;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class ZeroVector : public Error {
public:
    using Error::Error;
};

double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

/// Cosine mapped affinely from [-1, 1] onto [0, 1].
double semantic_from_embeddings(const EmbeddingVector& u, const EmbeddingVector& v);

/// Anything that can place DSL text in an embedding space.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbeddingVector embed(std::string_view source) const = 0;
    virtual std::string embedder_id() const = 0;
};

double semantic_similarity(std::string_view a, std::string_view b, const Embedder& embedder);

}  // namespace cour::sim
