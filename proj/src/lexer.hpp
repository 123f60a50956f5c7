#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cour::dsl::detail {

enum class Tok { Ident, Number, Punct, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    double number = 0.0;
    int line = 1;
    int column = 1;
    std::size_t offset = 0;
};

/// Splits DSL text into tokens. Throws SyntaxError on a character that
/// cannot start a token or a malformed number.
std::vector<Token> lex(std::string_view source);

bool is_keyword(std::string_view word);
bool is_function(std::string_view word);

}  // namespace cour::dsl::detail
