#include "cour/dsl.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <set>
#include <sstream>

#include "lexer.hpp"

namespace cour::dsl {

// ---------------------------------------------------------------- errors

SyntaxError::SyntaxError(const std::string& what, int line, int column)
    : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

UnknownFeature::UnknownFeature(const std::string& name)
    : NameError("unknown feature '" + name + "'", name) {}

UndeclaredHyper::UndeclaredHyper(const std::string& name)
    : NameError("undeclared hyperparameter '" + name + "'", name) {}

UnusedHyper::UnusedHyper(const std::string& name)
    : NameError("hyperparameter '" + name + "' is declared but never used", name) {}

DuplicateTerm::DuplicateTerm(const std::string& name)
    : NameError("duplicate term '" + name + "'", name) {}

MissingHyper::MissingHyper(const std::string& name)
    : NameError("missing value for hyperparameter '" + name + "'", name) {}

HyperOutOfBounds::HyperOutOfBounds(const std::string& name, double value)
    : NameError("hyperparameter '" + name + "' = " + format_number(value) + " is outside its bounds",
                name) {}

NumericalDomainError::NumericalDomainError(const std::string& what, std::string path)
    : Error(what + " at " + path), path_(std::move(path)) {}

TermEvaluationError::TermEvaluationError(const std::string& term, const NumericalDomainError& cause)
    : NumericalDomainError("term '" + term + "': " + cause.what(), cause.path()), term_(term) {}

// -------------------------------------------------------------- signature

void EnvSignature::validate() const {
    if (state.empty()) throw ConfigError("signature has no state features");
    auto check = [](const std::vector<Feature>& list, const char* what) {
        std::set<std::string> seen;
        for (const auto& f : list) {
            if (!seen.insert(f.name).second)
                throw ConfigError(std::string("duplicate ") + what + " feature '" + f.name + "'");
        }
    };
    check(state, "state");
    check(action, "action");
}

static std::optional<int> find_feature(const std::vector<Feature>& list, std::string_view name) {
    for (std::size_t i = 0; i < list.size(); ++i)
        if (list[i].name == name) return static_cast<int>(i);
    return std::nullopt;
}

std::optional<int> EnvSignature::state_index(std::string_view name) const {
    return find_feature(state, name);
}

std::optional<int> EnvSignature::action_index(std::string_view name) const {
    return find_feature(action, name);
}

// ----------------------------------------------------------------- nodes

bool same_node(const Node& a, const Node& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case NodeKind::Constant: return a.value == b.value;
        case NodeKind::StateRef:
        case NodeKind::ActionRef:
        case NodeKind::HyperRef: return a.name == b.name;
        case NodeKind::Unary: return a.unary == b.unary;
        case NodeKind::Binary: return a.binary == b.binary;
        case NodeKind::Clip: return a.lo == b.lo && a.hi == b.hi;
    }
    return false;
}

RewardExpr::RewardExpr(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

int RewardExpr::depth() const {
    std::vector<int> d(nodes_.size(), 1);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.lhs >= 0) d[i] = std::max(d[i], d[n.lhs] + 1);
        if (n.rhs >= 0) d[i] = std::max(d[i], d[n.rhs] + 1);
    }
    return nodes_.empty() ? 0 : d.back();
}

std::string RewardExpr::path_of(int index) const {
    std::vector<int> parent(nodes_.size(), -1);
    std::vector<int> slot(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].lhs >= 0) {
            parent[nodes_[i].lhs] = static_cast<int>(i);
            slot[nodes_[i].lhs] = 0;
        }
        if (nodes_[i].rhs >= 0) {
            parent[nodes_[i].rhs] = static_cast<int>(i);
            slot[nodes_[i].rhs] = 1;
        }
    }
    std::vector<int> steps;
    for (int i = index; i >= 0 && parent[i] >= 0; i = parent[i]) steps.push_back(slot[i]);
    std::string path = "root";
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) path += "." + std::to_string(*it);
    return path;
}

bool RewardExpr::operator==(const RewardExpr& other) const {
    if (nodes_.size() != other.nodes_.size()) return false;
    // Post-order layout is canonical for a given tree shape, so a pairwise
    // comparison of nodes and child links is a full structural comparison.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& a = nodes_[i];
        const Node& b = other.nodes_[i];
        if (!same_node(a, b) || a.lhs != b.lhs || a.rhs != b.rhs) return false;
    }
    return true;
}

std::optional<int> RewardTerm::hyper_index(std::string_view n) const {
    for (std::size_t i = 0; i < hypers.size(); ++i)
        if (hypers[i].name == n) return static_cast<int>(i);
    return std::nullopt;
}

std::vector<double> RewardTerm::default_theta() const {
    std::vector<double> out;
    out.reserve(hypers.size());
    for (const auto& h : hypers) out.push_back(h.default_value);
    return out;
}

std::optional<int> RewardFunction::term_index(std::string_view n) const {
    for (std::size_t i = 0; i < terms.size(); ++i)
        if (terms[i].name == n) return static_cast<int>(i);
    return std::nullopt;
}

// ------------------------------------------------------------------ lexer

namespace detail {

bool is_function(std::string_view w) {
    static const std::array<std::string_view, 8> fns = {"abs", "exp", "tanh", "sqrt",
                                                        "min", "max", "pow",  "clip"};
    return std::find(fns.begin(), fns.end(), w) != fns.end();
}

bool is_keyword(std::string_view w) {
    static const std::array<std::string_view, 9> kws = {"term",    "aspect", "hyper", "in",    "default",
                                                        "expr",    "combine", "state", "action"};
    return std::find(kws.begin(), kws.end(), w) != kws.end() || is_function(w);
}

static bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
static bool digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    int line = 1;
    int col = 1;
    std::size_t i = 0;
    auto advance = [&](std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
            ++i;
        }
    };
    while (i < src.size()) {
        char c = src[i];
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') advance(1);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance(1);
            continue;
        }
        Token t;
        t.line = line;
        t.column = col;
        t.offset = i;
        if (ident_start(c)) {
            std::size_t j = i;
            while (j < src.size() && ident_char(src[j])) ++j;
            t.kind = Tok::Ident;
            t.text = std::string(src.substr(i, j - i));
            advance(j - i);
        } else if (digit(c) || (c == '.' && i + 1 < src.size() && digit(src[i + 1]))) {
            std::size_t j = i;
            while (j < src.size() && digit(src[j])) ++j;
            if (j < src.size() && src[j] == '.') {
                ++j;
                while (j < src.size() && digit(src[j])) ++j;
            }
            if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
                if (k >= src.size() || !digit(src[k]))
                    throw SyntaxError("malformed exponent in number", line, col);
                while (k < src.size() && digit(src[k])) ++k;
                j = k;
            }
            if (j < src.size() && ident_char(src[j]))
                throw SyntaxError("unexpected character after number", line, col);
            t.kind = Tok::Number;
            t.text = std::string(src.substr(i, j - i));
            const char* first = t.text.data();
            const char* last = first + t.text.size();
            auto res = std::from_chars(first, last, t.number);
            if (res.ec != std::errc() || res.ptr != last || !std::isfinite(t.number))
                throw SyntaxError("number out of range: " + t.text, line, col);
            advance(j - i);
        } else if (std::string_view("{}[](),;=+-*/.").find(c) != std::string_view::npos) {
            t.kind = Tok::Punct;
            t.text = std::string(1, c);
            advance(1);
        } else {
            throw SyntaxError(std::string("unexpected character '") + c + "'", line, col);
        }
        out.push_back(std::move(t));
    }
    Token end;
    end.kind = Tok::End;
    end.line = line;
    end.column = col;
    end.offset = src.size();
    out.push_back(end);
    return out;
}

}  // namespace detail

// ----------------------------------------------------------------- parser

namespace {

using detail::Tok;
using detail::Token;

constexpr int kMaxNesting = 256;

class Parser {
public:
    Parser(std::string_view src, const EnvSignature* sig) : toks_(detail::lex(src)), sig_(sig) {}


    RewardFunction function() {
        RewardFunction rf;
        std::vector<std::pair<std::string, double>> combine;
        bool have_combine = false;
        while (!at_end()) {
            if (peek_word("term")) {
                RewardTerm t = term();
                if (rf.term_index(t.name)) throw DuplicateTerm(t.name);
                rf.terms.push_back(std::move(t));
            } else if (peek_word("combine")) {
                if (have_combine) fail("combine clause given twice");
                combine = combine_clause();
                have_combine = true;
            } else {
                fail("expected 'term' or 'combine'");
            }
        }
        if (rf.terms.empty()) fail("reward function declares no terms");
        if (!have_combine) fail("missing combine clause");
        rf.weights.assign(rf.terms.size(), 0.0);
        std::vector<bool> seen(rf.terms.size(), false);
        for (const auto& [name, w] : combine) {
            auto idx = rf.term_index(name);
            if (!idx) throw NameError("combine references unknown term '" + name + "'", name);
            if (seen[*idx]) throw NameError("term '" + name + "' weighted twice in combine", name);
            seen[*idx] = true;
            rf.weights[*idx] = w;
        }
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (!seen[i])
                throw NameError("term '" + rf.terms[i].name + "' has no weight in combine",
                                rf.terms[i].name);
        }
        if (std::none_of(rf.weights.begin(), rf.weights.end(), [](double w) { return w > 0; }))
            throw SyntaxError("combine needs at least one positive weight", last_line_, last_col_);
        return rf;
    }

    RewardTerm single_term() {
        RewardTerm t = term();
        if (!at_end()) fail("trailing input after term");
        return t;
    }

private:
    const Token& peek() const { return toks_[pos_]; }
    bool at_end() const { return peek().kind == Tok::End; }
    bool peek_word(std::string_view w) const { return peek().kind == Tok::Ident && peek().text == w; }
    bool peek_punct(char c) const {
        return peek().kind == Tok::Punct && peek().text[0] == c;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        const Token& t = peek();
        std::string near = t.kind == Tok::End ? "end of input" : "'" + t.text + "'";
        throw SyntaxError(msg + " near " + near, t.line, t.column);
    }

    Token take() {
        Token t = toks_[pos_];
        if (t.kind != Tok::End) ++pos_;
        last_line_ = t.line;
        last_col_ = t.column;
        return t;
    }

    void expect_punct(char c) {
        if (!peek_punct(c)) fail(std::string("expected '") + c + "'");
        take();
    }

    void expect_word(std::string_view w) {
        if (!peek_word(w)) fail("expected '" + std::string(w) + "'");
        take();
    }

    std::string identifier(const char* what) {
        if (peek().kind != Tok::Ident) fail(std::string("expected ") + what);
        if (detail::is_keyword(peek().text)) fail(std::string("keyword used as ") + what);
        return take().text;
    }

    double signed_number() {
        bool neg = false;
        if (peek_punct('-')) {
            take();
            neg = true;
        }
        if (peek().kind != Tok::Number) fail("expected number");
        double v = take().number;
        return neg ? -v : v;
    }

    RewardTerm term() {
        expect_word("term");
        const Token& start = peek();
        int line = start.line;
        int col = start.column;
        RewardTerm t;
        t.name = identifier("term name");
        t.aspect = t.name;
        if (peek_word("aspect")) {
            take();
            t.aspect = identifier("aspect tag");
        }
        expect_punct('{');
        while (peek_word("hyper")) {
            take();
            const Token& ht = peek();
            HyperParam h;
            h.name = identifier("hyperparameter name");
            if (t.hyper_index(h.name))
                throw SyntaxError("duplicate hyperparameter '" + h.name + "'", ht.line, ht.column);
            expect_word("in");
            expect_punct('[');
            h.lo = signed_number();
            expect_punct(',');
            h.hi = signed_number();
            expect_punct(']');
            expect_word("default");
            h.default_value = signed_number();
            expect_punct(';');
            if (!(h.lo < h.hi))
                throw SyntaxError("empty bounds for hyperparameter '" + h.name + "'", ht.line, ht.column);
            if (h.default_value < h.lo || h.default_value > h.hi)
                throw SyntaxError("default of '" + h.name + "' outside its bounds", ht.line, ht.column);
            t.hypers.push_back(h);
        }
        expect_word("expr");
        expect_punct('=');
        nodes_.clear();
        hyper_used_.assign(t.hypers.size(), false);
        current_ = &t;
        expression(0);
        current_ = nullptr;
        expect_punct(';');
        expect_punct('}');
        t.expr = RewardExpr(std::move(nodes_));
        nodes_ = {};
        if (t.expr.depth() > kMaxDepth)
            throw SyntaxError("expression deeper than " + std::to_string(kMaxDepth), line, col);
        for (std::size_t i = 0; i < t.hypers.size(); ++i)
            if (!hyper_used_[i]) throw UnusedHyper(t.hypers[i].name);
        return t;
    }

    std::vector<std::pair<std::string, double>> combine_clause() {
        expect_word("combine");
        expect_punct('=');
        std::vector<std::pair<std::string, double>> out;
        while (true) {
            if (peek().kind != Tok::Number) fail("expected non-negative weight");
            double w = take().number;
            expect_punct('*');
            std::string name = identifier("term name");
            out.emplace_back(std::move(name), w);
            if (peek_punct('+')) {
                take();
                continue;
            }
            break;
        }
        expect_punct(';');
        return out;
    }

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void guard(int nesting) {
        if (nesting > kMaxNesting) fail("expression nested too deeply");
    }

    // expression := product (('+' | '-') product)*
    int expression(int nesting) {
        guard(nesting);
        int lhs = product(nesting + 1);
        while (peek_punct('+') || peek_punct('-')) {
            BinaryOp op = take().text[0] == '+' ? BinaryOp::Add : BinaryOp::Sub;
            int rhs = product(nesting + 1);
            Node n;
            n.kind = NodeKind::Binary;
            n.binary = op;
            n.lhs = lhs;
            n.rhs = rhs;
            lhs = push(std::move(n));
        }
        return lhs;
    }

    // product := unary (('*' | '/') unary)*
    int product(int nesting) {
        guard(nesting);
        int lhs = unary(nesting + 1);
        while (peek_punct('*') || peek_punct('/')) {
            BinaryOp op = take().text[0] == '*' ? BinaryOp::Mul : BinaryOp::Div;
            int rhs = unary(nesting + 1);
            Node n;
            n.kind = NodeKind::Binary;
            n.binary = op;
            n.lhs = lhs;
            n.rhs = rhs;
            lhs = push(std::move(n));
        }
        return lhs;
    }

    // unary := '-' number | '-' unary | primary
    int unary(int nesting) {
        guard(nesting);
        if (peek_punct('-')) {
            take();
            if (peek().kind == Tok::Number) {
                Node n;
                n.kind = NodeKind::Constant;
                n.value = -take().number;
                return push(std::move(n));
            }
            int child = unary(nesting + 1);
            Node n;
            n.kind = NodeKind::Unary;
            n.unary = UnaryOp::Neg;
            n.lhs = child;
            return push(std::move(n));
        }
        return primary(nesting + 1);
    }

    int primary(int nesting) {
        guard(nesting);
        const Token& t = peek();
        if (t.kind == Tok::Number) {
            Node n;
            n.kind = NodeKind::Constant;
            n.value = take().number;
            return push(std::move(n));
        }
        if (peek_punct('(')) {
            take();
            int inner = expression(nesting + 1);
            expect_punct(')');
            return inner;
        }
        if (t.kind != Tok::Ident) fail("expected expression");
        std::string word = take().text;
        if (word == "state" || word == "action") {
            expect_punct('.');
            if (peek().kind != Tok::Ident) fail("expected feature name");
            std::string feature = take().text;
            Node n;
            n.kind = word == "state" ? NodeKind::StateRef : NodeKind::ActionRef;
            n.name = feature;
            if (sig_) {
                auto idx = word == "state" ? sig_->state_index(feature) : sig_->action_index(feature);
                if (!idx) throw UnknownFeature(feature);
                n.ref = *idx;
            }
            return push(std::move(n));
        }
        if (detail::is_function(word)) return call(word, nesting);
        if (detail::is_keyword(word)) fail("unexpected keyword '" + word + "'");
        auto idx = current_->hyper_index(word);
        if (!idx) throw UndeclaredHyper(word);
        hyper_used_[*idx] = true;
        Node n;
        n.kind = NodeKind::HyperRef;
        n.name = word;
        n.ref = *idx;
        return push(std::move(n));
    }

    int call(const std::string& fn, int nesting) {
        expect_punct('(');
        Node n;
        if (fn == "clip") {
            n.kind = NodeKind::Clip;
            n.lhs = expression(nesting + 1);
            expect_punct(',');
            const Token& bt = peek();
            n.lo = signed_number();
            expect_punct(',');
            n.hi = signed_number();
            if (n.lo > n.hi) throw SyntaxError("clip bounds out of order", bt.line, bt.column);
        } else if (fn == "min" || fn == "max" || fn == "pow") {
            n.kind = NodeKind::Binary;
            n.binary = fn == "min" ? BinaryOp::Min : fn == "max" ? BinaryOp::Max : BinaryOp::Pow;
            n.lhs = expression(nesting + 1);
            expect_punct(',');
            n.rhs = expression(nesting + 1);
        } else {
            n.kind = NodeKind::Unary;
            n.unary = fn == "abs"    ? UnaryOp::Abs
                      : fn == "exp"  ? UnaryOp::Exp
                      : fn == "tanh" ? UnaryOp::Tanh
                                     : UnaryOp::Sqrt;
            n.lhs = expression(nesting + 1);
        }
        expect_punct(')');
        return push(std::move(n));
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    const EnvSignature* sig_;
    std::vector<Node> nodes_;
    std::vector<bool> hyper_used_;
    const RewardTerm* current_ = nullptr;
    int last_line_ = 1;
    int last_col_ = 1;
};

}  // namespace

RewardFunction parse(std::string_view source, const EnvSignature& sig) {
    return Parser(source, &sig).function();
}

RewardFunction parse_unbound(std::string_view source) {
    return Parser(source, nullptr).function();
}

RewardTerm parse_term(std::string_view source, const EnvSignature* sig) {
    return Parser(source, sig).single_term();
}

RewardTerm bind(RewardTerm term, const EnvSignature& sig) {
    std::vector<Node> nodes = term.expr.nodes();
    for (Node& n : nodes) {
        if (n.kind == NodeKind::StateRef || n.kind == NodeKind::ActionRef) {
            auto idx = n.kind == NodeKind::StateRef ? sig.state_index(n.name) : sig.action_index(n.name);
            if (!idx) throw UnknownFeature(n.name);
            n.ref = *idx;
        }
    }
    term.expr = RewardExpr(std::move(nodes));
    return term;
}

// ---------------------------------------------------------------- printer

std::string format_number(double v) {
    if (v == 0.0) return "0.00000000";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.8e", v);
    const char* e = std::strchr(buf, 'e');
    int exponent = std::atoi(e + 1);
    if (exponent >= -5 && exponent < 9) {
        std::snprintf(buf, sizeof buf, "%.*f", 8 - exponent, v);
    }
    return buf;
}

namespace {

int precedence(const Node& n) {
    switch (n.kind) {
        case NodeKind::Binary:
            if (n.binary == BinaryOp::Add || n.binary == BinaryOp::Sub) return 1;
            if (n.binary == BinaryOp::Mul || n.binary == BinaryOp::Div) return 2;
            return 4;
        case NodeKind::Unary: return n.unary == UnaryOp::Neg ? 3 : 4;
        case NodeKind::Constant: return n.value < 0 || std::signbit(n.value) ? 3 : 4;
        default: return 4;
    }
}

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::Neg: return "-";
        case UnaryOp::Abs: return "abs";
        case UnaryOp::Exp: return "exp";
        case UnaryOp::Tanh: return "tanh";
        case UnaryOp::Sqrt: return "sqrt";
    }
    return "?";
}

const char* binary_name(BinaryOp op) {
    switch (op) {
        case BinaryOp::Add: return " + ";
        case BinaryOp::Sub: return " - ";
        case BinaryOp::Mul: return " * ";
        case BinaryOp::Div: return " / ";
        case BinaryOp::Min: return "min";
        case BinaryOp::Max: return "max";
        case BinaryOp::Pow: return "pow";
    }
    return "?";
}

void print_node(const std::vector<Node>& nodes, int i, std::string& out) {
    const Node& n = nodes[i];
    switch (n.kind) {
        case NodeKind::Constant: out += format_number(n.value); return;
        case NodeKind::StateRef: out += "state." + n.name; return;
        case NodeKind::ActionRef: out += "action." + n.name; return;
        case NodeKind::HyperRef: out += n.name; return;
        case NodeKind::Unary: {
            if (n.unary == UnaryOp::Neg) {
                const Node& c = nodes[n.lhs];
                bool wrap = c.kind == NodeKind::Constant || precedence(c) < 3;
                out += wrap ? "-(" : "-";
                print_node(nodes, n.lhs, out);
                if (wrap) out += ")";
            } else {
                out += unary_name(n.unary);
                out += "(";
                print_node(nodes, n.lhs, out);
                out += ")";
            }
            return;
        }
        case NodeKind::Binary: {
            int p = precedence(n);
            if (p == 4) {
                out += binary_name(n.binary);
                out += "(";
                print_node(nodes, n.lhs, out);
                out += ", ";
                print_node(nodes, n.rhs, out);
                out += ")";
                return;
            }
            bool wrap_l = precedence(nodes[n.lhs]) < p;
            bool wrap_r = precedence(nodes[n.rhs]) <= p;
            if (wrap_l) out += "(";
            print_node(nodes, n.lhs, out);
            if (wrap_l) out += ")";
            out += binary_name(n.binary);
            if (wrap_r) out += "(";
            print_node(nodes, n.rhs, out);
            if (wrap_r) out += ")";
            return;
        }
        case NodeKind::Clip:
            out += "clip(";
            print_node(nodes, n.lhs, out);
            out += ", " + format_number(n.lo) + ", " + format_number(n.hi) + ")";
            return;
    }
}

}  // namespace

std::string print_expr(const RewardExpr& expr) {
    std::string out;
    if (!expr.empty()) print_node(expr.nodes(), expr.root(), out);
    return out;
}

std::string print_term(const RewardTerm& t) {
    std::string out = "term " + t.name + " aspect " + t.aspect + " {\n";
    for (const auto& h : t.hypers) {
        out += "  hyper " + h.name + " in [" + format_number(h.lo) + ", " + format_number(h.hi) +
               "] default " + format_number(h.default_value) + ";\n";
    }
    out += "  expr = " + print_expr(t.expr) + ";\n}\n";
    return out;
}

std::string print_canonical(const RewardFunction& rf) {
    std::string out;
    for (const auto& t : rf.terms) out += print_term(t) + "\n";
    out += "combine = ";
    for (std::size_t i = 0; i < rf.terms.size(); ++i) {
        if (i) out += " + ";
        out += format_number(rf.weights[i]) + " * " + rf.terms[i].name;
    }
    out += ";\n";
    return out;
}

// -------------------------------------------------------------- evaluator

std::vector<double> resolve_theta(const RewardTerm& term, const Theta& theta) {
    std::vector<double> out;
    out.reserve(term.hypers.size());
    for (const auto& h : term.hypers) {
        auto it = theta.find(h.name);
        if (it == theta.end()) throw MissingHyper(h.name);
        if (!(it->second >= h.lo && it->second <= h.hi)) throw HyperOutOfBounds(h.name, it->second);
        out.push_back(it->second);
    }
    return out;
}

namespace {

[[noreturn]] void domain_error(const RewardExpr& e, int i, const char* what) {
    throw NumericalDomainError(what, e.path_of(i));
}

double eval_nodes(const RewardExpr& expr, std::span<const double> s, std::span<const double> a,
                  std::span<const double> theta, double* v) {
    const auto& nodes = expr.nodes();
    const int count = static_cast<int>(nodes.size());
    for (int i = 0; i < count; ++i) {
        const Node& n = nodes[i];
        double r = 0.0;
        switch (n.kind) {
            case NodeKind::Constant: r = n.value; break;
            case NodeKind::StateRef:
                if (n.ref < 0 || static_cast<std::size_t>(n.ref) >= s.size())
                    domain_error(expr, i, "unbound state feature");
                r = s[n.ref];
                break;
            case NodeKind::ActionRef:
                if (n.ref < 0 || static_cast<std::size_t>(n.ref) >= a.size())
                    domain_error(expr, i, "unbound action feature");
                r = a[n.ref];
                break;
            case NodeKind::HyperRef:
                if (n.ref < 0 || static_cast<std::size_t>(n.ref) >= theta.size())
                    throw MissingHyper(n.name);
                r = theta[n.ref];
                break;
            case NodeKind::Unary: {
                double x = v[n.lhs];
                switch (n.unary) {
                    case UnaryOp::Neg: r = -x; break;
                    case UnaryOp::Abs: r = std::fabs(x); break;
                    case UnaryOp::Exp: r = std::exp(x); break;
                    case UnaryOp::Tanh: r = std::tanh(x); break;
                    case UnaryOp::Sqrt:
                        if (x < 0) domain_error(expr, i, "sqrt of negative value");
                        r = std::sqrt(x);
                        break;
                }
                break;
            }
            case NodeKind::Binary: {
                double x = v[n.lhs];
                double y = v[n.rhs];
                switch (n.binary) {
                    case BinaryOp::Add: r = x + y; break;
                    case BinaryOp::Sub: r = x - y; break;
                    case BinaryOp::Mul: r = x * y; break;
                    case BinaryOp::Div:
                        if (y == 0.0) domain_error(expr, i, "division by zero");
                        r = x / y;
                        break;
                    case BinaryOp::Min: r = std::min(x, y); break;
                    case BinaryOp::Max: r = std::max(x, y); break;
                    case BinaryOp::Pow: r = std::pow(x, y); break;
                }
                break;
            }
            case NodeKind::Clip: r = std::clamp(v[n.lhs], n.lo, n.hi); break;
        }
        if (!std::isfinite(r)) domain_error(expr, i, "non-finite value");
        v[i] = r;
    }
    return v[count - 1];
}

}  // namespace

double evaluate(const RewardTerm& term, std::span<const double> s, std::span<const double> a,
                std::span<const double> theta) {
    const std::size_t n = term.expr.nodes().size();
    if (n == 0) throw Error("term '" + term.name + "' has an empty expression");
    if (n <= 256) {
        std::array<double, 256> buf;
        return eval_nodes(term.expr, s, a, theta, buf.data());
    }
    std::vector<double> buf(n);
    return eval_nodes(term.expr, s, a, theta, buf.data());
}

double evaluate(const RewardTerm& term, std::span<const double> s, std::span<const double> a,
                const Theta& theta) {
    std::vector<double> values = resolve_theta(term, theta);
    return evaluate(term, s, a, std::span<const double>(values));
}

double evaluate_combined(const RewardFunction& rf, std::span<const double> s, std::span<const double> a,
                         std::span<const std::vector<double>> thetas) {
    if (thetas.size() != rf.terms.size()) throw Error("one theta vector per term is required");
    double total = 0.0;
    for (std::size_t i = 0; i < rf.terms.size(); ++i) {
        try {
            total += rf.weights[i] * evaluate(rf.terms[i], s, a, std::span<const double>(thetas[i]));
        } catch (const TermEvaluationError&) {
            throw;
        } catch (const NumericalDomainError& e) {
            throw TermEvaluationError(rf.terms[i].name, e);
        }
    }
    return total;
}

double evaluate_combined(const RewardFunction& rf, std::span<const double> s, std::span<const double> a,
                         const ThetaByTerm& thetas) {
    std::vector<std::vector<double>> resolved;
    resolved.reserve(rf.terms.size());
    static const Theta empty;
    for (const auto& t : rf.terms) {
        auto it = thetas.find(t.name);
        resolved.push_back(resolve_theta(t, it == thetas.end() ? empty : it->second));
    }
    return evaluate_combined(rf, s, a, std::span<const std::vector<double>>(resolved));
}

// ---------------------------------------------------------- decomposition

std::vector<WeightedTerm> decompose(const RewardFunction& rf) {
    std::vector<WeightedTerm> out;
    out.reserve(rf.terms.size());
    for (std::size_t i = 0; i < rf.terms.size(); ++i) out.push_back({rf.terms[i], rf.weights[i]});
    return out;
}

RewardFunction recombine(std::vector<WeightedTerm> parts) {
    RewardFunction rf;
    for (auto& p : parts) {
        if (rf.term_index(p.term.name)) throw DuplicateTerm(p.term.name);
        if (!(p.weight >= 0.0)) throw Error("negative weight for term '" + p.term.name + "'");
        rf.terms.push_back(std::move(p.term));
        rf.weights.push_back(p.weight);
    }
    if (rf.terms.empty()) throw Error("cannot recombine zero terms");
    if (std::none_of(rf.weights.begin(), rf.weights.end(), [](double w) { return w > 0; }))
        throw Error("recombined function needs at least one positive weight");
    return rf;
}

RewardTerm with_defaults(RewardTerm term, std::span<const double> theta) {
    if (theta.size() != term.hypers.size()) throw Error("theta size mismatch for '" + term.name + "'");
    for (std::size_t i = 0; i < theta.size(); ++i) term.hypers[i].default_value = theta[i];
    return term;
}

}  // namespace cour::dsl
