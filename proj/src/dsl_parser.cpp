#include "vidq/dsl/parser.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace vidq::dsl {

namespace {

enum class Tok { Ident, Number, String, Punct, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double number = 0;
  SourceLoc loc;
};

class Lexer {
 public:
  Lexer(std::string_view src, const std::string& file) : src_(src), file_(file) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      Token t;
      t.loc = {line_, col_};
      if (pos_ >= src_.size()) {
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        t.kind = Tok::Ident;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
          t.text += advance();
        }
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        t.kind = Tok::Number;
        lex_number(t);
      } else if (c == '"') {
        t.kind = Tok::String;
        lex_string(t);
      } else {
        t.kind = Tok::Punct;
        static const char* two[] = {"==", "!=", "<=", ">="};
        bool matched = false;
        for (const char* op : two) {
          if (src_.substr(pos_, 2) == op) {
            t.text = op;
            advance();
            advance();
            matched = true;
            break;
          }
        }
        if (!matched) {
          if (std::string_view("{}()[];:,.=<>!&|@-").find(c) == std::string_view::npos) {
            throw SyntaxError(file_, line_, col_, std::string("unexpected character '") + c + "'");
          }
          t.text = std::string(1, advance());
        }
      }
      out.push_back(std::move(t));
    }
  }

 private:
  char advance() {
    const char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '#' || (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '/')) {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else {
        return;
      }
    }
  }

  void lex_number(Token& t) {
    std::string digits;
    while (pos_ < src_.size() &&
           (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.' || src_[pos_] == 'e' ||
            src_[pos_] == 'E' ||
            ((src_[pos_] == '-' || src_[pos_] == '+') && !digits.empty() &&
             (digits.back() == 'e' || digits.back() == 'E')))) {
      digits += advance();
    }
    std::size_t used = 0;
    try {
      t.number = std::stod(digits, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != digits.size()) throw SyntaxError(file_, t.loc.line, t.loc.col, "malformed number '" + digits + "'");
    t.text = digits;
  }

  void lex_string(Token& t) {
    advance();  // opening quote
    for (;;) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        throw SyntaxError(file_, t.loc.line, t.loc.col, "unterminated string literal");
      }
      const char c = advance();
      if (c == '"') return;
      if (c == '\\') {
        if (pos_ >= src_.size()) throw SyntaxError(file_, line_, col_, "unterminated escape");
        const char e = advance();
        switch (e) {
          case 'n': t.text += '\n'; break;
          case 't': t.text += '\t'; break;
          case '"': t.text += '"'; break;
          case '\\': t.text += '\\'; break;
          default: throw SyntaxError(file_, line_, col_ - 1, std::string("unknown escape '\\") + e + "'");
        }
      } else {
        t.text += c;
      }
    }
  }

  std::string_view src_;
  const std::string& file_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, std::string file) : toks_(std::move(toks)), file_(std::move(file)) {}

  Program program() {
    Program p;
    std::set<std::string> vobj_names, relation_names, query_names;
    while (!at_end()) {
      const Token& t = peek();
      if (is_kw("vobj")) {
        auto v = vobj();
        if (!vobj_names.insert(v.name).second) fail(v.loc, "duplicate declaration of vobj '" + v.name + "'");
        p.vobjs.push_back(std::move(v));
      } else if (is_kw("relation")) {
        auto r = relation();
        if (!relation_names.insert(r.name).second) fail(r.loc, "duplicate declaration of relation '" + r.name + "'");
        p.relations.push_back(std::move(r));
      } else if (is_kw("query")) {
        auto q = query();
        if (!query_names.insert(q.name).second) fail(q.loc, "duplicate declaration of query '" + q.name + "'");
        p.queries.push_back(std::move(q));
      } else if (is_kw("duration") || is_kw("spatial") || is_kw("temporal")) {
        auto h = higher_order();
        if (!query_names.insert(h.name).second) fail(h.loc, "duplicate declaration of query '" + h.name + "'");
        p.higher_order.push_back(std::move(h));
      } else {
        fail(t.loc, "expected a declaration (vobj, relation, query, duration/spatial/temporal query), found " +
                        describe(t));
      }
    }
    return p;
  }

  PredicateExpr standalone_expr() {
    auto e = expr();
    if (!at_end()) fail(peek().loc, "unexpected " + describe(peek()) + " after expression");
    return e;
  }

 private:
  [[noreturn]] void fail(SourceLoc loc, const std::string& msg) const {
    throw SyntaxError(file_, loc.line, loc.col, msg);
  }

  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[i];
  }
  bool at_end() const { return peek().kind == Tok::End; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (t.kind != Tok::End) ++pos_;
    return t;
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::End: return "end of input";
      case Tok::String: return "string \"" + t.text + "\"";
      default: return "'" + t.text + "'";
    }
  }

  bool is_kw(const char* kw, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == Tok::Ident && t.text == kw;
  }
  bool is_punct(const char* p, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == Tok::Punct && t.text == p;
  }

  void expect_punct(const char* p) {
    if (!is_punct(p)) fail(peek().loc, std::string("expected '") + p + "', found " + describe(peek()));
    next();
  }
  void expect_kw(const char* kw) {
    if (!is_kw(kw)) fail(peek().loc, std::string("expected '") + kw + "', found " + describe(peek()));
    next();
  }
  bool accept_punct(const char* p) {
    if (!is_punct(p)) return false;
    next();
    return true;
  }

  std::string ident(const char* what) {
    if (peek().kind != Tok::Ident) fail(peek().loc, std::string("expected ") + what + ", found " + describe(peek()));
    return next().text;
  }

  double number(const char* what) {
    bool neg = accept_punct("-");
    if (peek().kind != Tok::Number) fail(peek().loc, std::string("expected ") + what + ", found " + describe(peek()));
    const double v = next().number;
    return neg ? -v : v;
  }

  std::size_t count(const char* what) {
    const SourceLoc loc = peek().loc;
    const double v = number(what);
    if (v < 0 || v != std::floor(v)) fail(loc, std::string(what) + " must be a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  Value literal() {
    const Token& t = peek();
    if (t.kind == Tok::String) return Value(next().text);
    if (t.kind == Tok::Number || is_punct("-")) return Value(number("a literal"));
    if (is_kw("true")) {
      next();
      return Value(true);
    }
    if (is_kw("false")) {
      next();
      return Value(false);
    }
    if (accept_punct("[")) {
      std::vector<double> xs;
      if (!is_punct("]")) {
        do {
          xs.push_back(number("a number"));
        } while (accept_punct(","));
      }
      expect_punct("]");
      return Value(std::move(xs));
    }
    fail(t.loc, "expected a literal, found " + describe(t));
  }

  PropertyDef property_def() {
    PropertyDef p;
    p.loc = peek().loc;
    expect_punct("@");
    const SourceLoc ann_loc = peek().loc;
    const std::string ann = ident("'stateless' or 'stateful'");
    if (ann == "stateless") {
      p.kind = PropertyKind::Stateless;
    } else if (ann == "stateful") {
      p.kind = PropertyKind::Stateful;
    } else {
      fail(ann_loc, "unknown annotation '@" + ann + "'");
    }
    bool saw_window = false;
    if (accept_punct("(")) {
      if (!is_punct(")")) {
        do {
          const SourceLoc loc = peek().loc;
          const std::string key = ident("annotation argument");
          if (key == "deps") {
            expect_punct("=");
            expect_punct("[");
            if (!is_punct("]")) {
              do {
                std::string dep = ident("dependency name");
                if (accept_punct(".")) dep += "." + ident("property name");
                p.deps.push_back(std::move(dep));
              } while (accept_punct(","));
            }
            expect_punct("]");
          } else if (key == "window") {
            expect_punct("=");
            p.window = count("window");
            saw_window = true;
          } else if (key == "intrinsic") {
            p.intrinsic = true;
          } else {
            fail(loc, "unknown annotation argument '" + key + "'");
          }
        } while (accept_punct(","));
      }
      expect_punct(")");
    }
    if (p.kind == PropertyKind::Stateful && !saw_window) fail(ann_loc, "@stateful requires window=<frames>");
    if (p.kind == PropertyKind::Stateless && saw_window) fail(ann_loc, "@stateless does not take a window");
    expect_kw("property");
    p.name = ident("property name");
    expect_punct("=");
    p.impl = ident("property function name");
    if (accept_punct("(")) {
      if (!is_punct(")")) {
        do {
          const SourceLoc loc = peek().loc;
          const std::string key = ident("argument name");
          expect_punct("=");
          if (!p.args.emplace(key, literal()).second) fail(loc, "duplicate argument '" + key + "'");
        } while (accept_punct(","));
      }
      expect_punct(")");
    }
    expect_punct(";");
    return p;
  }

  VObjDecl vobj() {
    VObjDecl v;
    v.loc = peek().loc;
    expect_kw("vobj");
    v.name = ident("vobj name");
    if (is_kw("extends")) {
      next();
      v.parent = ident("parent vobj name");
    }
    expect_punct("{");
    while (!accept_punct("}")) {
      if (at_end()) fail(peek().loc, "unterminated vobj body");
      if (is_kw("detector")) {
        const SourceLoc loc = next().loc;
        if (v.detector) fail(loc, "vobj '" + v.name + "' declares more than one detector");
        v.detector = ident("detector name");
        expect_punct(";");
      } else if (is_kw("where")) {
        next();
        v.where.push_back(expr());
        expect_punct(";");
      } else if (is_kw("filter")) {
        next();
        v.filters.push_back(ident("filter name"));
        expect_punct(";");
      } else if (is_punct("@")) {
        v.properties.push_back(property_def());
      } else {
        fail(peek().loc, "expected detector, where, filter or property in vobj body, found " + describe(peek()));
      }
    }
    return v;
  }

  RelationDecl relation() {
    RelationDecl r;
    r.loc = peek().loc;
    expect_kw("relation");
    r.name = ident("relation name");
    if (is_kw("extends")) {
      next();
      r.parent = ident("parent relation name");
    }
    if (accept_punct("(")) {
      do {
        Participant part;
        part.role = ident("participant role");
        expect_punct(":");
        part.type = ident("participant type");
        r.participants.push_back(std::move(part));
      } while (accept_punct(","));
      expect_punct(")");
    }
    expect_punct("{");
    while (!accept_punct("}")) {
      if (at_end()) fail(peek().loc, "unterminated relation body");
      r.properties.push_back(property_def());
    }
    return r;
  }

  Binding binding() {
    Binding b;
    b.loc = peek().loc;
    expect_kw("bind");
    b.name = ident("binding name");
    expect_punct(":");
    b.type = ident("type name");
    if (accept_punct("(")) {
      do {
        b.args.push_back(ident("participant binding"));
      } while (accept_punct(","));
      expect_punct(")");
    }
    expect_punct(";");
    return b;
  }

  PropertyRef ref() {
    PropertyRef r;
    r.loc = peek().loc;
    const std::string first = ident("property reference");
    if (accept_punct(".")) {
      r.binding = first;
      r.property = ident("property name");
    } else {
      r.property = first;
    }
    return r;
  }

  std::vector<PropertyRef> outputs() {
    std::vector<PropertyRef> out;
    do {
      auto r = ref();
      if (r.binding.empty()) fail(r.loc, "frame_output entries must be written binding.property");
      out.push_back(std::move(r));
    } while (accept_punct(","));
    expect_punct(";");
    return out;
  }

  QueryDecl query() {
    QueryDecl q;
    q.loc = peek().loc;
    expect_kw("query");
    q.name = ident("query name");
    if (is_kw("extends")) {
      next();
      q.parent = ident("parent query name");
    }
    expect_punct("{");
    while (!accept_punct("}")) {
      if (at_end()) fail(peek().loc, "unterminated query body");
      const SourceLoc loc = peek().loc;
      if (is_kw("bind")) {
        q.bindings.push_back(binding());
      } else if (is_kw("frame_constraint")) {
        next();
        if (q.frame_constraint) fail(loc, "frame_constraint given twice");
        q.frame_constraint = expr();
        expect_punct(";");
      } else if (is_kw("frame_output")) {
        next();
        auto outs = outputs();
        q.frame_output.insert(q.frame_output.end(), outs.begin(), outs.end());
      } else if (is_kw("video_constraint")) {
        next();
        if (q.video_constraint) fail(loc, "video_constraint given twice");
        VideoConstraint vc;
        const std::string quant = ident("'all' or 'any'");
        if (quant == "all") {
          vc.quantifier = Quantifier::All;
        } else if (quant == "any") {
          vc.quantifier = Quantifier::Any;
        } else {
          fail(loc, "video_constraint must use all(...) or any(...)");
        }
        expect_punct("(");
        vc.predicate = expr();
        expect_punct(")");
        expect_punct(";");
        q.video_constraint = std::move(vc);
      } else if (is_kw("video_output")) {
        next();
        VideoOutput vo;
        vo.loc = peek().loc;
        vo.aggregate = ident("aggregate name");
        expect_punct("(");
        vo.binding = ident("binding name");
        expect_punct(")");
        expect_punct(";");
        q.video_output = std::move(vo);
      } else {
        fail(loc, "unexpected " + describe(peek()) + " in query body");
      }
    }
    return q;
  }

  HigherOrderDecl higher_order() {
    HigherOrderDecl h;
    h.loc = peek().loc;
    const std::string kind = next().text;
    h.kind = kind == "duration" ? HigherOrderKind::Duration
             : kind == "spatial" ? HigherOrderKind::Spatial
                                 : HigherOrderKind::Temporal;
    expect_kw("query");
    h.name = ident("query name");
    expect_punct("(");
    h.inputs_loc = peek().loc;
    do {
      h.inputs.push_back(ident("input query name"));
    } while (accept_punct(","));
    expect_punct(")");
    expect_punct("{");
    while (!accept_punct("}")) {
      if (at_end()) fail(peek().loc, "unterminated query body");
      const SourceLoc loc = peek().loc;
      const bool duration = h.kind == HigherOrderKind::Duration;
      const bool spatial = h.kind == HigherOrderKind::Spatial;
      const bool temporal = h.kind == HigherOrderKind::Temporal;
      if (duration && is_kw("min_frames")) {
        next();
        h.min_frames = static_cast<double>(count("min_frames"));
        expect_punct(";");
      } else if (duration && is_kw("min_seconds")) {
        next();
        h.min_seconds = number("seconds");
        expect_punct(";");
      } else if (duration && is_kw("gap_tolerance")) {
        next();
        h.gap_tolerance = count("gap_tolerance");
        expect_punct(";");
      } else if (spatial && is_kw("bind")) {
        h.bindings.push_back(binding());
      } else if (spatial && is_kw("constraint")) {
        next();
        h.constraint = expr();
        expect_punct(";");
      } else if (spatial && is_kw("frame_output")) {
        next();
        auto outs = outputs();
        h.frame_output.insert(h.frame_output.end(), outs.begin(), outs.end());
      } else if (temporal && is_kw("max_interval")) {
        next();
        h.max_interval = static_cast<double>(count("max_interval"));
        expect_punct(";");
      } else if (temporal && is_kw("max_interval_seconds")) {
        next();
        h.max_interval_seconds = number("seconds");
        expect_punct(";");
      } else {
        fail(loc, "unexpected " + describe(peek()) + " in " + kind + " query body");
      }
    }
    return h;
  }

  // Precedence: | < & < ! ; `and`/`or`/`not` are aliases.
  PredicateExpr expr() {
    std::vector<PredicateExpr> parts;
    parts.push_back(and_expr());
    while (is_punct("|") || is_kw("or")) {
      next();
      parts.push_back(and_expr());
    }
    return PredicateExpr::disj(std::move(parts));
  }

  PredicateExpr and_expr() {
    std::vector<PredicateExpr> parts;
    parts.push_back(unary());
    while (is_punct("&") || is_kw("and")) {
      next();
      parts.push_back(unary());
    }
    return PredicateExpr::conj(std::move(parts));
  }

  PredicateExpr unary() {
    const SourceLoc loc = peek().loc;
    if (is_punct("!") || is_kw("not")) {
      next();
      auto e = PredicateExpr::negate(unary());
      e.loc = loc;
      return e;
    }
    if (accept_punct("(")) {
      auto e = expr();
      expect_punct(")");
      return e;
    }
    if (is_kw("holds") && is_punct("(", 1)) {
      next();
      next();
      const std::string rel = ident("relation binding");
      expect_punct(",");
      auto inner = expr();
      expect_punct(")");
      auto e = PredicateExpr::holds(rel, std::move(inner));
      e.loc = loc;
      return e;
    }
    auto r = ref();
    if (is_kw("in")) {
      next();
      expect_punct("[");
      std::vector<Value> set;
      if (!is_punct("]")) {
        do {
          set.push_back(literal());
        } while (accept_punct(","));
      }
      expect_punct("]");
      return PredicateExpr::in_set(std::move(r), std::move(set));
    }
    static const std::pair<const char*, CmpOp> ops[] = {{"==", CmpOp::Eq}, {"!=", CmpOp::Ne}, {"<=", CmpOp::Le},
                                                        {">=", CmpOp::Ge}, {"<", CmpOp::Lt},  {">", CmpOp::Gt}};
    for (const auto& [text, op] : ops) {
      if (is_punct(text)) {
        next();
        return PredicateExpr::compare(std::move(r), op, literal());
      }
    }
    fail(peek().loc, "expected a comparison operator after '" + r.text() + "', found " + describe(peek()));
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::string file_;
};

}  // namespace

Program parse(std::string_view source, const std::string& filename) {
  Lexer lex(source, filename);
  Parser parser(lex.run(), filename);
  return parser.program();
}

Program parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open program " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

PredicateExpr parse_predicate(std::string_view source) {
  const std::string file = "<predicate>";
  Lexer lex(source, file);
  Parser parser(lex.run(), file);
  return parser.standalone_expr();
}

}  // namespace vidq::dsl
