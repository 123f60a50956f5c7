#include "cour/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "cour/dsl.hpp"
#include "lexer.hpp"

namespace cour::sim {

namespace {

std::size_t offset_of(std::string_view src, int line, int column) {
    std::size_t off = 0;
    int l = 1;
    while (off < src.size() && l < line) {
        if (src[off] == '\n') ++l;
        ++off;
    }
    return std::min(src.size(), off + static_cast<std::size_t>(column - 1));
}

std::string round6(double v) {
    if (v == 0.0) return "0.00000e+00";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.5e", v);
    return buf;
}

}  // namespace

TokenStream tokenize_canonical(std::string_view source) {
    std::vector<dsl::detail::Token> raw;
    try {
        raw = dsl::detail::lex(source);
    } catch (const dsl::SyntaxError& e) {
        throw LexError(e.what(), offset_of(source, e.line(), e.column()));
    }
    TokenStream out;
    std::map<std::string, std::string> renamed;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& t = raw[i];
        switch (t.kind) {
            case dsl::detail::Tok::End: break;
            case dsl::detail::Tok::Number: out.tokens.push_back({TokenKind::Number, round6(t.number)}); break;
            case dsl::detail::Tok::Punct: out.tokens.push_back({TokenKind::Op, t.text}); break;
            case dsl::detail::Tok::Ident: {
                bool feature_prefix = (t.text == "state" || t.text == "action") && i + 2 < raw.size() &&
                                      raw[i + 1].kind == dsl::detail::Tok::Punct && raw[i + 1].text == "." &&
                                      raw[i + 2].kind == dsl::detail::Tok::Ident;
                if (feature_prefix) {
                    out.tokens.push_back({TokenKind::Ident, t.text + "." + raw[i + 2].text});
                    i += 2;
                } else if (dsl::detail::is_keyword(t.text)) {
                    out.tokens.push_back({TokenKind::Keyword, t.text});
                } else {
                    auto [it, fresh] = renamed.try_emplace(t.text, "v" + std::to_string(renamed.size()));
                    out.tokens.push_back({TokenKind::Ident, it->second});
                }
                break;
            }
        }
    }
    return out;
}

std::size_t levenshtein(const TokenStream& a, const TokenStream& b) {
    const auto& x = a.tokens;
    const auto& y = b.tokens;
    if (x.empty()) return y.size();
    if (y.empty()) return x.size();
    std::vector<std::size_t> prev(y.size() + 1);
    std::vector<std::size_t> cur(y.size() + 1);
    for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= x.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= y.size(); ++j) {
            std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[y.size()];
}

double textual_similarity(const TokenStream& a, const TokenStream& b) {
    std::size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.provider_id != v.provider_id)
        throw DimensionMismatch("embeddings from different providers ('" + u.provider_id + "' vs '" +
                                v.provider_id + "')");
    if (u.values.size() != v.values.size())
        throw DimensionMismatch("embedding dimensions differ (" + std::to_string(u.values.size()) + " vs " +
                                std::to_string(v.values.size()) + ")");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    bool identical = u.values == v.values;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        dot += u.values[i] * v.values[i];
        nu += u.values[i] * u.values[i];
        nv += v.values[i] * v.values[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ZeroVector("cosine of a zero vector");
    if (identical) return 1.0;  // roundoff would otherwise leave 1 - 1ulp
    double c = dot / (std::sqrt(nu) * std::sqrt(nv));
    return std::clamp(c, -1.0, 1.0);
}

double semantic_from_embeddings(const EmbeddingVector& u, const EmbeddingVector& v) {
    return (cosine(u, v) + 1.0) / 2.0;
}

double semantic_similarity(std::string_view a, std::string_view b, const Embedder& embedder) {
    return semantic_from_embeddings(embedder.embed(a), embedder.embed(b));
}

}  // namespace cour::sim
