#include "lanhar/toml.hpp"

#include <cctype>
#include <cstdlib>
#include <string>

#include "lanhar/error.hpp"
#include "lanhar/util.hpp"

namespace lanhar::toml {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void fail(int line, const std::string& msg) {
  raise(ErrorCode::Parse, "toml line " + std::to_string(line) + ": " + msg);
}

bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

struct Cursor {
  std::string_view s;
  size_t pos = 0;
  int line;

  bool eol() {
    skip_ws();
    return pos >= s.size() || s[pos] == '#';
  }
  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  char peek() const { return pos < s.size() ? s[pos] : '\0'; }
};

std::string parse_basic_string(Cursor& c) {
  // c.peek() == '"'
  ++c.pos;
  std::string out;
  while (c.pos < c.s.size()) {
    char ch = c.s[c.pos++];
    if (ch == '"') return out;
    if (ch == '\\') {
      if (c.pos >= c.s.size()) fail(c.line, "dangling escape");
      char e = c.s[c.pos++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: fail(c.line, std::string("unsupported escape \\") + e);
      }
    } else {
      out.push_back(ch);
    }
  }
  fail(c.line, "unterminated string");
}

ordered_json parse_scalar(Cursor& c);

ordered_json parse_array(Cursor& c) {
  // c.peek() == '['
  ++c.pos;
  ordered_json arr = ordered_json::array();
  c.skip_ws();
  if (c.peek() == ']') {
    ++c.pos;
    return arr;
  }
  while (true) {
    c.skip_ws();
    arr.push_back(parse_scalar(c));
    c.skip_ws();
    if (c.peek() == ',') {
      ++c.pos;
      c.skip_ws();
      if (c.peek() == ']') {  // trailing comma
        ++c.pos;
        return arr;
      }
      continue;
    }
    if (c.peek() == ']') {
      ++c.pos;
      return arr;
    }
    fail(c.line, "expected ',' or ']' in array");
  }
}

ordered_json parse_scalar(Cursor& c) {
  const char ch = c.peek();
  if (ch == '"') return parse_basic_string(c);
  if (ch == '[') return parse_array(c);

  size_t start = c.pos;
  while (c.pos < c.s.size() && c.s[c.pos] != ',' && c.s[c.pos] != ']' && c.s[c.pos] != '#' &&
         c.s[c.pos] != ' ' && c.s[c.pos] != '\t') {
    ++c.pos;
  }
  const std::string tok(c.s.substr(start, c.pos - start));
  if (tok.empty()) fail(c.line, "expected a value");
  if (tok == "true") return true;
  if (tok == "false") return false;

  const bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                           tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
  char* end = nullptr;
  if (!looks_float) {
    errno = 0;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (end == tok.c_str() + tok.size() && errno == 0) return v;
  }
  errno = 0;
  const double d = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() + tok.size() && errno == 0) return d;
  fail(c.line, "invalid value '" + tok + "'");
}

std::vector<std::string> parse_dotted_key(Cursor& c, char terminator) {
  std::vector<std::string> parts;
  while (true) {
    c.skip_ws();
    size_t start = c.pos;
    while (c.pos < c.s.size() && is_bare_key_char(c.s[c.pos])) ++c.pos;
    if (c.pos == start) fail(c.line, "expected key");
    parts.emplace_back(c.s.substr(start, c.pos - start));
    c.skip_ws();
    if (c.peek() == '.') {
      ++c.pos;
      continue;
    }
    break;
  }
  if (terminator != '\0') {
    if (c.peek() != terminator) fail(c.line, std::string("expected '") + terminator + "'");
  }
  return parts;
}

ordered_json* descend(ordered_json* root, const std::vector<std::string>& parts, int line) {
  ordered_json* node = root;
  for (const auto& p : parts) {
    if (!node->contains(p)) (*node)[p] = ordered_json::object();
    node = &(*node)[p];
    if (node->is_array()) {
      if (node->empty()) fail(line, "empty table array '" + p + "'");
      node = &node->back();
    }
    if (!node->is_object()) fail(line, "key '" + p + "' is not a table");
  }
  return node;
}

}  // namespace

ordered_json parse(std::string_view text) {
  ordered_json root = ordered_json::object();
  ordered_json* current = &root;

  int line_no = 0;
  for (const auto& raw_line : split(text, '\n')) {
    ++line_no;
    std::string_view sv(raw_line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    Cursor c{sv, 0, line_no};
    if (c.eol()) continue;

    if (c.peek() == '[') {
      ++c.pos;
      const bool table_array = c.peek() == '[';
      if (table_array) ++c.pos;
      auto parts = parse_dotted_key(c, ']');
      ++c.pos;
      if (table_array) {
        if (c.peek() != ']') fail(line_no, "expected ']]'");
        ++c.pos;
      }
      if (!c.eol()) fail(line_no, "trailing content after table header");

      if (table_array) {
        auto* parent =
            parts.size() > 1
                ? descend(&root, {parts.begin(), parts.end() - 1}, line_no)
                : &root;
        const std::string& name = parts.back();
        if (!parent->contains(name)) (*parent)[name] = ordered_json::array();
        if (!(*parent)[name].is_array()) fail(line_no, "'" + name + "' is not a table array");
        (*parent)[name].push_back(ordered_json::object());
        current = &(*parent)[name].back();
      } else {
        current = descend(&root, parts, line_no);
      }
      continue;
    }

    auto parts = parse_dotted_key(c, '\0');
    c.skip_ws();
    if (c.peek() != '=') fail(line_no, "expected '=' after key");
    ++c.pos;
    c.skip_ws();
    ordered_json value = parse_scalar(c);
    if (!c.eol()) fail(line_no, "trailing content after value");

    ordered_json* node = current;
    if (parts.size() > 1) node = descend(current, {parts.begin(), parts.end() - 1}, line_no);
    const std::string& key = parts.back();
    if (node->contains(key)) fail(line_no, "duplicate key '" + key + "'");
    (*node)[key] = std::move(value);
  }
  return root;
}

ordered_json parse_file(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

}  // namespace lanhar::toml
