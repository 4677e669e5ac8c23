#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace arti::toml {

// Line-oriented TOML subset: [table], [[array-of-table]], key = value with
// string / integer / float / boolean / single-line array values. That covers
// every file this project reads or writes.

struct ParseError : std::runtime_error {
  ParseError(int line, const std::string& msg)
      : std::runtime_error("toml line " + std::to_string(line) + ": " + msg), line(line) {}
  int line;
};

struct Value {
  enum class Kind { String, Integer, Float, Boolean, Array };
  Kind kind = Kind::String;
  std::string str;
  long long integer = 0;
  double number = 0.0;
  bool boolean = false;
  std::vector<Value> items;
  int line = 0;

  bool is_number() const { return kind == Kind::Integer || kind == Kind::Float; }
  double as_number() const;
  long long as_integer() const;
  const std::string& as_string() const;
  bool as_boolean() const;
  const std::vector<Value>& as_array() const;
};

struct Table {
  std::vector<std::pair<std::string, Value>> kv;  // file order
  int line = 0;
  const Value* find(std::string_view key) const;
  bool has(std::string_view key) const { return find(key) != nullptr; }
};

struct Section {
  std::string name;  // empty for the root table
  bool from_array = false;
  Table table;
};

struct Document {
  std::vector<Section> sections;  // root first, then file order
  const Table* find_table(std::string_view name) const;
  std::vector<const Table*> find_array(std::string_view name) const;
};

Document parse(std::string_view text);
Document parse_file(const std::string& path);

}  // namespace arti::toml
