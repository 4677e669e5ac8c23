#include "arti/toml.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace arti::toml {

double Value::as_number() const {
  if (kind == Kind::Integer) return static_cast<double>(integer);
  if (kind == Kind::Float) return number;
  throw ParseError(line, "expected a number");
}

long long Value::as_integer() const {
  if (kind == Kind::Integer) return integer;
  throw ParseError(line, "expected an integer");
}

const std::string& Value::as_string() const {
  if (kind == Kind::String) return str;
  throw ParseError(line, "expected a string");
}

bool Value::as_boolean() const {
  if (kind == Kind::Boolean) return boolean;
  throw ParseError(line, "expected a boolean");
}

const std::vector<Value>& Value::as_array() const {
  if (kind == Kind::Array) return items;
  throw ParseError(line, "expected an array");
}

const Value* Table::find(std::string_view key) const {
  for (const auto& [k, v] : kv)
    if (k == key) return &v;
  return nullptr;
}

const Table* Document::find_table(std::string_view name) const {
  for (const auto& s : sections)
    if (!s.from_array && s.name == name) return &s.table;
  return nullptr;
}

std::vector<const Table*> Document::find_array(std::string_view name) const {
  std::vector<const Table*> out;
  for (const auto& s : sections)
    if (s.from_array && s.name == name) out.push_back(&s.table);
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Strips a trailing comment, respecting quoted strings.
std::string_view strip_comment(std::string_view s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
    } else if (c == '"') {
      in_str = true;
    } else if (c == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

struct Cursor {
  std::string_view s;
  std::size_t pos = 0;
  int line;
  bool done() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }
  void skip_ws() {
    while (!done() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
};

std::string parse_quoted(Cursor& c) {
  std::string out;
  ++c.pos;  // opening quote
  while (true) {
    if (c.done()) throw ParseError(c.line, "unterminated string");
    const char ch = c.s[c.pos++];
    if (ch == '"') return out;
    if (ch == '\\') {
      if (c.done()) throw ParseError(c.line, "bad escape");
      const char e = c.s[c.pos++];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: throw ParseError(c.line, std::string("bad escape \\") + e);
      }
    } else {
      out += ch;
    }
  }
}

Value parse_value(Cursor& c);

Value parse_scalar_token(Cursor& c) {
  Value v;
  v.line = c.line;
  const std::size_t start = c.pos;
  while (!c.done()) {
    const char ch = c.peek();
    if (ch == ',' || ch == ']' || std::isspace(static_cast<unsigned char>(ch))) break;
    ++c.pos;
  }
  std::string tok(c.s.substr(start, c.pos - start));
  if (tok.empty()) throw ParseError(c.line, "expected a value");
  if (tok == "true" || tok == "false") {
    v.kind = Value::Kind::Boolean;
    v.boolean = (tok == "true");
    return v;
  }
  const bool looks_float = tok.find_first_of(".eE") != std::string::npos ||
                           tok.find("inf") != std::string::npos ||
                           tok.find("nan") != std::string::npos;
  errno = 0;
  char* end = nullptr;
  if (!looks_float) {
    const long long i = std::strtoll(tok.c_str(), &end, 10);
    if (errno == 0 && end && *end == '\0') {
      v.kind = Value::Kind::Integer;
      v.integer = i;
      return v;
    }
  }
  errno = 0;
  const double d = std::strtod(tok.c_str(), &end);
  if (end && *end == '\0' && end != tok.c_str()) {
    v.kind = Value::Kind::Float;
    v.number = d;
    return v;
  }
  throw ParseError(c.line, "cannot parse value '" + tok + "'");
}

Value parse_value(Cursor& c) {
  c.skip_ws();
  if (c.done()) throw ParseError(c.line, "expected a value");
  if (c.peek() == '"') {
    Value v;
    v.line = c.line;
    v.kind = Value::Kind::String;
    v.str = parse_quoted(c);
    return v;
  }
  if (c.peek() == '[') {
    Value v;
    v.line = c.line;
    v.kind = Value::Kind::Array;
    ++c.pos;
    c.skip_ws();
    if (!c.done() && c.peek() == ']') {
      ++c.pos;
      return v;
    }
    while (true) {
      v.items.push_back(parse_value(c));
      c.skip_ws();
      if (c.done()) throw ParseError(c.line, "unterminated array");
      if (c.peek() == ',') {
        ++c.pos;
        continue;
      }
      if (c.peek() == ']') {
        ++c.pos;
        return v;
      }
      throw ParseError(c.line, "expected ',' or ']' in array");
    }
  }
  return parse_scalar_token(c);
}

std::string parse_key(Cursor& c) {
  c.skip_ws();
  if (c.done()) throw ParseError(c.line, "expected a key");
  if (c.peek() == '"') return parse_quoted(c);
  const std::size_t start = c.pos;
  while (!c.done()) {
    const char ch = c.peek();
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.')
      ++c.pos;
    else
      break;
  }
  if (c.pos == start) throw ParseError(c.line, "expected a key");
  return std::string(c.s.substr(start, c.pos - start));
}

}  // namespace

Document parse(std::string_view text) {
  Document doc;
  doc.sections.push_back(Section{});  // root
  std::size_t current = 0;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos
                                                                         : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string_view linev = trim(strip_comment(raw));
    if (linev.empty()) continue;
    if (linev.front() == '[') {
      const bool is_array = linev.size() > 1 && linev[1] == '[';
      const std::string_view close = is_array ? "]]" : "]";
      const std::size_t end = linev.find(close);
      if (end == std::string_view::npos || trim(linev.substr(end + close.size())) != "")
        throw ParseError(line_no, "malformed table header");
      std::string name(trim(linev.substr(is_array ? 2 : 1, end - (is_array ? 2 : 1))));
      if (name.empty()) throw ParseError(line_no, "empty table name");
      Section s;
      s.name = name;
      s.from_array = is_array;
      s.table.line = line_no;
      doc.sections.push_back(std::move(s));
      current = doc.sections.size() - 1;
      continue;
    }
    Cursor c{linev, 0, line_no};
    std::string key = parse_key(c);
    c.skip_ws();
    if (c.done() || c.peek() != '=') throw ParseError(line_no, "expected '=' after key");
    ++c.pos;
    Value v = parse_value(c);
    c.skip_ws();
    if (!c.done()) throw ParseError(line_no, "trailing characters after value");
    auto& tbl = doc.sections[current].table;
    if (tbl.find(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
    tbl.kv.emplace_back(std::move(key), std::move(v));
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace arti::toml
