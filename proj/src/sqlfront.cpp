#include "predaqp/sqlfront.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>

#include "predaqp/error.hpp"

namespace predaqp {

const char* to_string(Aggregate agg) {
  switch (agg) {
    case Aggregate::kAvg: return "AVG";
    case Aggregate::kSum: return "SUM";
    case Aggregate::kCount: return "COUNT";
  }
  return "?";
}

Predicate Predicate::equals(std::size_t column, std::string value) {
  Predicate p;
  p.kind = Kind::kEquals;
  p.column = column;
  p.values.push_back(std::move(value));
  return p;
}

Predicate Predicate::equals_number(std::size_t column, double value) {
  Predicate p;
  p.kind = Kind::kEquals;
  p.column = column;
  p.numbers.push_back(value);
  return p;
}

Predicate Predicate::in(std::size_t column, std::vector<std::string> values) {
  Predicate p;
  p.kind = Kind::kIn;
  p.column = column;
  p.values = std::move(values);
  return p;
}

Predicate Predicate::between(std::size_t column, double lo, double hi) {
  Predicate p;
  p.kind = Kind::kBetween;
  p.column = column;
  p.numbers = {lo, hi};
  return p;
}

namespace {

Predicate make_nary(Predicate::Kind kind, std::vector<Predicate> children) {
  if (children.size() == 1) return std::move(children.front());
  Predicate p;
  p.kind = kind;
  for (auto& c : children) {
    if (c.kind == kind) {
      for (auto& g : c.children) p.children.push_back(std::move(g));
    } else {
      p.children.push_back(std::move(c));
    }
  }
  return p;
}

}  // namespace

Predicate Predicate::conjunction(std::vector<Predicate> children) { return make_nary(Kind::kAnd, std::move(children)); }
Predicate Predicate::disjunction(std::vector<Predicate> children) { return make_nary(Kind::kOr, std::move(children)); }

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok { kIdent, kQuotedIdent, kString, kNumber, kSymbol, kEnd };

struct Token {
  Tok type = Tok::kEnd;
  std::string text;  // identifier/string payload, number source text, or symbol
  double number = 0.0;
  std::size_t pos = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::vector<Token> lex(const std::string& sql) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = sql.size();
  while (true) {
    while (i < n && std::isspace(static_cast<unsigned char>(sql[i]))) ++i;
    if (i + 1 < n && sql[i] == '-' && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
      continue;
    }
    Token t;
    t.pos = i;
    if (i >= n) {
      out.push_back(t);
      return out;
    }
    const char c = sql[i];
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < n && ident_char(sql[j])) ++j;
      t.type = Tok::kIdent;
      t.text = sql.substr(i, j - i);
      i = j;
    } else if (c == '\'' || c == '"' || c == '`') {
      std::string payload;
      std::size_t j = i + 1;
      bool closed = false;
      while (j < n) {
        if (sql[j] == c) {
          if (j + 1 < n && sql[j + 1] == c) {
            payload.push_back(c);
            j += 2;
            continue;
          }
          closed = true;
          ++j;
          break;
        }
        payload.push_back(sql[j++]);
      }
      if (!closed) throw SyntaxError(i, "unterminated quoted text");
      t.type = c == '`' ? Tok::kQuotedIdent : Tok::kString;
      t.text = std::move(payload);
      i = j;
    } else if (digit(c) || ((c == '-' || c == '+' || c == '.') && i + 1 < n &&
                            (digit(sql[i + 1]) || (sql[i + 1] == '.' && i + 2 < n && digit(sql[i + 2]))))) {
      std::size_t j = i;
      if (sql[j] == '-' || sql[j] == '+') ++j;
      while (j < n && digit(sql[j])) ++j;
      if (j < n && sql[j] == '.') {
        ++j;
        while (j < n && digit(sql[j])) ++j;
      }
      if (j < n && (sql[j] == 'e' || sql[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < n && (sql[k] == '+' || sql[k] == '-')) ++k;
        if (k < n && digit(sql[k])) {
          while (k < n && digit(sql[k])) ++k;
          j = k;
        }
      }
      if (j < n && ident_char(sql[j])) throw SyntaxError(j, "malformed number");
      t.type = Tok::kNumber;
      t.text = sql.substr(i, j - i);
      const char* first = t.text.data() + (t.text[0] == '+' ? 1 : 0);
      const auto res = std::from_chars(first, t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc() || !std::isfinite(t.number)) throw SyntaxError(i, "number out of range");
      i = j;
    } else {
      static const std::string two[] = {"<=", ">=", "<>", "!=", "||"};
      t.type = Tok::kSymbol;
      bool matched = false;
      for (const auto& s : two) {
        if (sql.compare(i, 2, s) == 0) {
          t.text = s;
          i += 2;
          matched = true;
          break;
        }
      }
      if (!matched) {
        static const std::string one = "(),*=;<>+-/%.";
        if (one.find(c) == std::string::npos) throw SyntaxError(i, std::string("unexpected character '") + c + "'");
        t.text = std::string(1, c);
        ++i;
      }
    }
    out.push_back(std::move(t));
  }
}

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = {
      "SELECT", "FROM",  "WHERE", "AND",   "OR",     "IN",      "BETWEEN", "GROUP",     "BY",     "ORDER",
      "ASC",    "DESC",  "LIMIT", "AS",    "AVG",    "SUM",     "COUNT",   "JOIN",      "INNER",  "LEFT",
      "RIGHT",  "FULL",  "OUTER", "CROSS", "NATURAL", "ON",     "USING",   "HAVING",    "UNION",  "INTERSECT",
      "EXCEPT", "NOT",   "LIKE",  "IS",    "NULL",   "DISTINCT", "WITH",   "OFFSET",    "MIN",    "MAX",
      "CASE",   "EXISTS", "ALL",  "ANY",   "WINDOW", "OVER"};
  return words;
}

const std::set<std::string>& unsupported_words() {
  static const std::set<std::string> words = {"JOIN",  "INNER",     "LEFT",   "RIGHT", "FULL",     "OUTER", "CROSS",
                                              "NATURAL", "HAVING",  "UNION",  "INTERSECT", "EXCEPT", "NOT", "LIKE",
                                              "IS",    "DISTINCT",  "WITH",   "OFFSET", "CASE",    "EXISTS", "OVER",
                                              "WINDOW", "ON",       "USING",  "ALL",    "ANY"};
  return words;
}

class Parser {
 public:
  Parser(const std::string& sql, const Schema& schema) : tokens_(lex(sql)), schema_(schema) {}

  QueryAst parse_query() {
    QueryAst ast;
    expect_keyword("SELECT");
    parse_select_list(ast);
    expect_keyword("FROM");
    if (peek_symbol("(")) unsupported("subqueries are not supported");
    ast.table = expect_identifier("table name");
    if (peek_symbol(",")) unsupported("joins are not supported");
    if (peek().type == Tok::kIdent && !is_keyword(peek())) {
      next();  // table alias
    } else if (accept_keyword("AS")) {
      expect_identifier("table alias");
    }
    check_unsupported();
    if (accept_keyword("WHERE")) ast.where = parse_or();
    check_unsupported();
    if (accept_keyword("GROUP")) {
      expect_keyword("BY");
      do {
        const auto col = parse_column();
        if (!schema_.is_categorical(col))
          throw Error(ErrorCode::kTypeMismatch, "GROUP BY column '" + schema_[col].name + "' is not categorical");
        if (std::find(ast.group_by.begin(), ast.group_by.end(), col) == ast.group_by.end()) ast.group_by.push_back(col);
      } while (accept_symbol(","));
    }
    check_unsupported();
    for (const auto c : ast.select_columns)
      if (std::find(ast.group_by.begin(), ast.group_by.end(), c) == ast.group_by.end())
        unsupported("selected column '" + schema_[c].name + "' is not a GROUP BY column");
    if (accept_keyword("ORDER")) {
      expect_keyword("BY");
      ast.order_by = parse_order_key(ast);
      if (accept_keyword("DESC")) {
        ast.order_by->descending = true;
      } else {
        accept_keyword("ASC");
      }
      if (peek_symbol(",")) unsupported("ORDER BY accepts a single key");
    }
    check_unsupported();
    if (accept_keyword("LIMIT")) {
      const Token t = next();
      if (t.type != Tok::kNumber || t.number < 1 || t.number != std::floor(t.number) || t.number > 1e15)
        throw SyntaxError(t.pos, "LIMIT expects a positive integer");
      ast.limit = static_cast<std::size_t>(t.number);
    }
    check_unsupported();
    accept_symbol(";");
    if (peek().type != Tok::kEnd) throw SyntaxError(peek().pos, "unexpected '" + describe(peek()) + "'");
    return ast;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const { return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)]; }
  Token next() {
    Token t = peek();
    if (pos_ < tokens_.size() - 1) ++pos_;
    return t;
  }

  static std::string describe(const Token& t) { return t.type == Tok::kEnd ? "end of input" : t.text; }

  bool is_keyword(const Token& t, const std::string& kw) const {
    return t.type == Tok::kIdent && upper(t.text) == kw;
  }
  bool is_keyword(const Token& t) const { return t.type == Tok::kIdent && reserved_words().count(upper(t.text)) > 0; }

  bool accept_keyword(const std::string& kw) {
    if (!is_keyword(peek(), kw)) return false;
    next();
    return true;
  }
  void expect_keyword(const std::string& kw) {
    check_unsupported();
    if (!accept_keyword(kw)) throw SyntaxError(peek().pos, "expected " + kw + ", found '" + describe(peek()) + "'");
  }
  bool peek_symbol(const std::string& s) const { return peek().type == Tok::kSymbol && peek().text == s; }
  bool accept_symbol(const std::string& s) {
    if (!peek_symbol(s)) return false;
    next();
    return true;
  }
  void expect_symbol(const std::string& s) {
    if (!accept_symbol(s)) throw SyntaxError(peek().pos, "expected '" + s + "', found '" + describe(peek()) + "'");
  }

  [[noreturn]] void unsupported(const std::string& what) const { throw Error(ErrorCode::kUnsupportedQuery, what); }

  void check_unsupported() const {
    const Token& t = peek();
    if (t.type == Tok::kIdent && unsupported_words().count(upper(t.text)))
      unsupported(upper(t.text) + " is not supported");
  }

  std::string expect_identifier(const std::string& what) {
    check_unsupported();
    const Token t = next();
    if (t.type == Tok::kQuotedIdent || (t.type == Tok::kIdent && !is_keyword(t))) return t.text;
    throw SyntaxError(t.pos, "expected " + what + ", found '" + describe(t) + "'");
  }

  std::size_t resolve(const std::string& name) const {
    if (auto c = schema_.find(name)) return *c;
    std::optional<std::size_t> hit;
    for (const auto& spec : schema_.columns()) {
      if (upper(spec.name) == upper(name)) {
        if (hit) throw Error(ErrorCode::kUnknownColumn, "column name '" + name + "' is ambiguous");
        hit = spec.position;
      }
    }
    if (!hit) throw Error(ErrorCode::kUnknownColumn, "unknown column '" + name + "'");
    return *hit;
  }

  std::size_t parse_column() { return resolve(expect_identifier("column name")); }

  bool at_aggregate() const {
    return (is_keyword(peek(), "AVG") || is_keyword(peek(), "SUM") || is_keyword(peek(), "COUNT") ||
            is_keyword(peek(), "MIN") || is_keyword(peek(), "MAX")) &&
           peek(1).type == Tok::kSymbol && peek(1).text == "(";
  }

  struct AggCall {
    Aggregate agg;
    std::optional<std::size_t> target;
  };

  AggCall parse_aggregate_call() {
    const Token name = next();
    const std::string kw = upper(name.text);
    if (kw == "MIN" || kw == "MAX") unsupported(kw + " is not supported");
    expect_symbol("(");
    if (is_keyword(peek(), "DISTINCT")) unsupported("COUNT DISTINCT is not supported");
    AggCall call{kw == "AVG" ? Aggregate::kAvg : kw == "SUM" ? Aggregate::kSum : Aggregate::kCount, std::nullopt};
    if (call.agg == Aggregate::kCount) {
      if (!accept_symbol("*")) parse_column();
    } else {
      if (peek_symbol("*")) throw SyntaxError(peek().pos, kw + " needs a column");
      const auto col = parse_column();
      if (schema_.is_categorical(col))
        throw Error(ErrorCode::kTypeMismatch, kw + " target '" + schema_[col].name + "' is not numerical");
      call.target = col;
    }
    if (peek().type == Tok::kSymbol && peek().text != ")" && peek().text != ",")
      unsupported("expressions in SELECT are not supported");
    expect_symbol(")");
    return call;
  }

  void parse_select_list(QueryAst& ast) {
    bool have_agg = false;
    do {
      check_unsupported();
      if (peek_symbol("*")) unsupported("SELECT * is not supported");
      if (at_aggregate()) {
        if (have_agg) unsupported("only one aggregate per query is supported");
        const auto call = parse_aggregate_call();
        ast.aggregate = call.agg;
        ast.target = call.target;
        have_agg = true;
        if ((peek().type == Tok::kSymbol && peek().text != ",") || peek().type == Tok::kNumber)
          unsupported("expressions in SELECT are not supported");
        if (accept_keyword("AS")) {
          ast.alias = expect_identifier("alias");
        } else if ((peek().type == Tok::kIdent && !is_keyword(peek())) || peek().type == Tok::kQuotedIdent) {
          ast.alias = next().text;
        }
      } else {
        const Token t = peek();
        if (t.type != Tok::kIdent && t.type != Tok::kQuotedIdent)
          throw SyntaxError(t.pos, "expected column or aggregate, found '" + describe(t) + "'");
        if (t.type == Tok::kIdent && is_keyword(t))
          throw SyntaxError(t.pos, "expected column or aggregate, found '" + describe(t) + "'");
        if (peek(1).type == Tok::kSymbol && peek(1).text == "(") unsupported("function '" + t.text + "' is not supported");
        const auto col = parse_column();
        if (peek().type == Tok::kSymbol && peek().text != "," ) unsupported("expressions in SELECT are not supported");
        ast.select_columns.push_back(col);
      }
    } while (accept_symbol(","));
    if (!have_agg) unsupported("query has no aggregate");
  }

  OrderBy parse_order_key(const QueryAst& ast) {
    OrderBy key;
    if (at_aggregate()) {
      const auto call = parse_aggregate_call();
      if (call.agg != ast.aggregate || call.target != ast.target) unsupported("ORDER BY aggregate differs from SELECT");
      return key;
    }
    const Token t = peek();
    const std::string name = expect_identifier("ORDER BY key");
    if (!ast.alias.empty() && (name == ast.alias || upper(name) == upper(ast.alias))) return key;
    const auto col = resolve(name);
    if (std::find(ast.group_by.begin(), ast.group_by.end(), col) == ast.group_by.end())
      unsupported("ORDER BY key '" + t.text + "' is neither a GROUP BY column nor the aggregate");
    key.column = col;
    return key;
  }

  Predicate parse_or() {
    std::vector<Predicate> terms;
    terms.push_back(parse_and());
    while (accept_keyword("OR")) terms.push_back(parse_and());
    return Predicate::disjunction(std::move(terms));
  }

  Predicate parse_and() {
    std::vector<Predicate> terms;
    terms.push_back(parse_primary());
    while (true) {
      check_unsupported();
      if (!accept_keyword("AND")) break;
      terms.push_back(parse_primary());
    }
    return Predicate::conjunction(std::move(terms));
  }

  struct Literal {
    bool is_string = false;
    std::string text;
    double number = 0.0;
    std::size_t pos = 0;
  };

  Literal parse_literal() {
    const Token t = next();
    if (t.type == Tok::kString) return {true, t.text, 0.0, t.pos};
    if (t.type == Tok::kNumber) return {false, t.text, t.number, t.pos};
    if (t.type == Tok::kIdent && upper(t.text) == "NULL") unsupported("NULL literals are not supported");
    throw SyntaxError(t.pos, "expected literal, found '" + describe(t) + "'");
  }

  double numeric_literal(const Literal& lit, std::size_t col) const {
    if (lit.is_string)
      throw Error(ErrorCode::kTypeMismatch, "string literal compared with numerical column '" + schema_[col].name + "'");
    return lit.number;
  }

  Predicate parse_primary() {
    check_unsupported();
    if (accept_symbol("(")) {
      if (is_keyword(peek(), "SELECT")) unsupported("subqueries are not supported");
      Predicate p = parse_or();
      expect_symbol(")");
      return p;
    }
    const auto col = parse_column();
    const bool categorical = schema_.is_categorical(col);
    check_unsupported();
    if (accept_symbol("=")) {
      const Literal lit = parse_literal();
      if (categorical) return Predicate::equals(col, lit.text);
      return Predicate::equals_number(col, numeric_literal(lit, col));
    }
    if (accept_keyword("IN")) {
      expect_symbol("(");
      if (is_keyword(peek(), "SELECT")) unsupported("subqueries are not supported");
      std::vector<Literal> lits;
      do lits.push_back(parse_literal());
      while (accept_symbol(","));
      expect_symbol(")");
      Predicate p;
      p.kind = Predicate::Kind::kIn;
      p.column = col;
      for (const auto& l : lits) {
        if (categorical) {
          p.values.push_back(l.text);
        } else {
          p.numbers.push_back(numeric_literal(l, col));
        }
      }
      return p;
    }
    if (accept_keyword("BETWEEN")) {
      if (categorical)
        throw Error(ErrorCode::kTypeMismatch, "BETWEEN on categorical column '" + schema_[col].name + "'");
      const double lo = numeric_literal(parse_literal(), col);
      expect_keyword("AND");
      const double hi = numeric_literal(parse_literal(), col);
      return Predicate::between(col, lo, hi);
    }
    const Token t = peek();
    if (t.type == Tok::kSymbol && (t.text == "<" || t.text == ">" || t.text == "<=" || t.text == ">=" ||
                                   t.text == "<>" || t.text == "!="))
      unsupported("comparison operator '" + t.text + "' is not supported; use BETWEEN");
    throw SyntaxError(t.pos, "expected '=', IN or BETWEEN, found '" + describe(t) + "'");
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  const Schema& schema_;
};

// ---------------------------------------------------------------------------
// Rendering

std::string render_identifier(const std::string& name) {
  bool bare = !name.empty() && ident_start(name[0]) && reserved_words().count(upper(name)) == 0;
  for (char c : name) bare = bare && ident_char(c);
  if (bare) return name;
  std::string out = "`";
  for (char c : name) {
    if (c == '`') out.push_back('`');
    out.push_back(c);
  }
  return out + "`";
}

std::string render_string(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out.push_back('\'');
    out.push_back(c);
  }
  return out + "'";
}

std::string render_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string render_node(const Predicate& p, const Schema& schema, bool parenthesize) {
  const std::string col = render_identifier(schema[p.column].name);
  switch (p.kind) {
    case Predicate::Kind::kEquals:
      return col + " = " + (p.values.empty() ? render_number(p.numbers.at(0)) : render_string(p.values.at(0)));
    case Predicate::Kind::kIn: {
      std::string out = col + " IN (";
      const std::size_t n = p.values.empty() ? p.numbers.size() : p.values.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ", ";
        out += p.values.empty() ? render_number(p.numbers[i]) : render_string(p.values[i]);
      }
      return out + ")";
    }
    case Predicate::Kind::kBetween:
      return col + " BETWEEN " + render_number(p.numbers.at(0)) + " AND " + render_number(p.numbers.at(1));
    case Predicate::Kind::kAnd:
    case Predicate::Kind::kOr: {
      const bool is_and = p.kind == Predicate::Kind::kAnd;
      std::string out;
      for (std::size_t i = 0; i < p.children.size(); ++i) {
        if (i) out += is_and ? " AND " : " OR ";
        out += render_node(p.children[i], schema, !p.children[i].is_leaf());
      }
      return parenthesize ? "(" + out + ")" : out;
    }
  }
  return {};
}

}  // namespace

QueryAst parse(const std::string& sql, const Schema& schema) {
  Parser parser(sql, schema);
  return parser.parse_query();
}

std::string render(const Predicate& predicate, const Schema& schema) { return render_node(predicate, schema, false); }

std::string render(const QueryAst& ast, const Schema& schema) {
  std::string out = "SELECT ";
  for (const auto c : ast.select_columns) out += render_identifier(schema[c].name) + ", ";
  std::string call = std::string(to_string(ast.aggregate)) + "(";
  call += ast.target ? render_identifier(schema[*ast.target].name) : "*";
  call += ")";
  out += call;
  if (!ast.alias.empty()) out += " AS " + render_identifier(ast.alias);
  out += " FROM " + render_identifier(ast.table);
  if (ast.where) out += " WHERE " + render(*ast.where, schema);
  if (!ast.group_by.empty()) {
    out += " GROUP BY ";
    for (std::size_t i = 0; i < ast.group_by.size(); ++i) {
      if (i) out += ", ";
      out += render_identifier(schema[ast.group_by[i]].name);
    }
  }
  if (ast.order_by) {
    out += " ORDER BY ";
    if (ast.order_by->column) {
      out += render_identifier(schema[*ast.order_by->column].name);
    } else {
      out += ast.alias.empty() ? call : render_identifier(ast.alias);
    }
    out += ast.order_by->descending ? " DESC" : " ASC";
  }
  if (ast.limit) out += " LIMIT " + std::to_string(*ast.limit);
  return out;
}

bool evaluate(const Predicate& p, const Table& table, std::size_t row) {
  switch (p.kind) {
    case Predicate::Kind::kEquals:
    case Predicate::Kind::kIn:
      if (table.schema().is_categorical(p.column)) {
        const auto& cell = table.categorical(row, p.column);
        return std::find(p.values.begin(), p.values.end(), cell) != p.values.end();
      } else {
        const double v = table.numerical(row, p.column);
        return std::find(p.numbers.begin(), p.numbers.end(), v) != p.numbers.end();
      }
    case Predicate::Kind::kBetween: {
      const double v = table.numerical(row, p.column);
      return v >= p.numbers[0] && v <= p.numbers[1];
    }
    case Predicate::Kind::kAnd:
      return std::all_of(p.children.begin(), p.children.end(), [&](const Predicate& c) { return evaluate(c, table, row); });
    case Predicate::Kind::kOr:
      return std::any_of(p.children.begin(), p.children.end(), [&](const Predicate& c) { return evaluate(c, table, row); });
  }
  return false;
}

// ---------------------------------------------------------------------------
// DNF

std::optional<Conjunction> Conjunction::intersect(const Conjunction& other) const {
  Conjunction out;
  std::size_t i = 0, j = 0;
  while (i < equalities.size() || j < other.equalities.size()) {
    if (j == other.equalities.size() || (i < equalities.size() && equalities[i].column < other.equalities[j].column)) {
      out.equalities.push_back(equalities[i++]);
    } else if (i == equalities.size() || other.equalities[j].column < equalities[i].column) {
      out.equalities.push_back(other.equalities[j++]);
    } else {
      if (equalities[i].value != other.equalities[j].value) return std::nullopt;
      out.equalities.push_back(equalities[i]);
      ++i;
      ++j;
    }
  }
  i = j = 0;
  while (i < ranges.size() || j < other.ranges.size()) {
    if (j == other.ranges.size() || (i < ranges.size() && ranges[i].column < other.ranges[j].column)) {
      out.ranges.push_back(ranges[i++]);
    } else if (i == ranges.size() || other.ranges[j].column < ranges[i].column) {
      out.ranges.push_back(other.ranges[j++]);
    } else {
      RangeTerm r{ranges[i].column, std::max(ranges[i].lo, other.ranges[j].lo), std::min(ranges[i].hi, other.ranges[j].hi)};
      if (r.lo > r.hi) return std::nullopt;
      out.ranges.push_back(r);
      ++i;
      ++j;
    }
  }
  return out;
}

bool Conjunction::matches_equalities(const Table& table, std::size_t row) const {
  for (const auto& e : equalities)
    if (table.categorical(row, e.column) != e.value) return false;
  return true;
}

bool Conjunction::matches(const Table& table, std::size_t row) const {
  if (!matches_equalities(table, row)) return false;
  for (const auto& r : ranges)
    if (!r.contains(table.numerical(row, r.column))) return false;
  return true;
}

bool Conjunction::contradicts(const Conjunction& other) const {
  std::size_t i = 0, j = 0;
  while (i < equalities.size() && j < other.equalities.size()) {
    if (equalities[i].column < other.equalities[j].column) {
      ++i;
    } else if (other.equalities[j].column < equalities[i].column) {
      ++j;
    } else {
      if (equalities[i].value != other.equalities[j].value) return true;
      ++i;
      ++j;
    }
  }
  return false;
}

bool DnfPredicate::matches(const Table& table, std::size_t row) const {
  return std::any_of(conjunctions.begin(), conjunctions.end(),
                     [&](const Conjunction& c) { return c.matches(table, row); });
}

namespace {

void push_unique(std::vector<Conjunction>& out, Conjunction c, std::size_t cap) {
  if (std::find(out.begin(), out.end(), c) != out.end()) return;
  if (out.size() >= cap)
    throw Error(ErrorCode::kDnfBlowup, "DNF exceeds " + std::to_string(cap) + " conjunctions");
  out.push_back(std::move(c));
}

std::vector<Conjunction> dnf_of(const Predicate& p, std::size_t cap) {
  std::vector<Conjunction> out;
  switch (p.kind) {
    case Predicate::Kind::kEquals:
    case Predicate::Kind::kIn:
      for (const auto& v : p.values) push_unique(out, Conjunction{{EqTerm{p.column, v}}, {}}, cap);
      for (const double v : p.numbers) push_unique(out, Conjunction{{}, {RangeTerm{p.column, v, v}}}, cap);
      return out;
    case Predicate::Kind::kBetween:
      if (p.numbers[0] <= p.numbers[1]) out.push_back(Conjunction{{}, {RangeTerm{p.column, p.numbers[0], p.numbers[1]}}});
      return out;
    case Predicate::Kind::kOr:
      for (const auto& c : p.children)
        for (auto& conj : dnf_of(c, cap)) push_unique(out, std::move(conj), cap);
      return out;
    case Predicate::Kind::kAnd: {
      out.push_back(Conjunction{});
      for (const auto& c : p.children) {
        const auto rhs = dnf_of(c, cap);
        std::vector<Conjunction> next;
        for (const auto& a : out)
          for (const auto& b : rhs)
            if (auto m = a.intersect(b)) push_unique(next, std::move(*m), cap);
        out = std::move(next);
        if (out.empty()) break;
      }
      return out;
    }
  }
  return out;
}

}  // namespace

DnfPredicate to_dnf(const Predicate& predicate, std::size_t cap) { return DnfPredicate{dnf_of(predicate, cap)}; }

DnfPredicate to_dnf(const std::optional<Predicate>& predicate, std::size_t cap) {
  if (!predicate) return DnfPredicate{{Conjunction{}}};
  return to_dnf(*predicate, cap);
}

std::string render(const Conjunction& c, const Schema& schema) {
  if (c.empty()) return "TRUE";
  std::string out;
  for (const auto& e : c.equalities) {
    if (!out.empty()) out += " AND ";
    out += render_identifier(schema[e.column].name) + " = " + render_string(e.value);
  }
  for (const auto& r : c.ranges) {
    if (!out.empty()) out += " AND ";
    out += render_identifier(schema[r.column].name) + " BETWEEN " + render_number(r.lo) + " AND " + render_number(r.hi);
  }
  return out;
}

}  // namespace predaqp
