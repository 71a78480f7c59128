#include "roadsense/json_locator.hpp"

#include <cctype>
#include <vector>

namespace roadsense {

std::string pointer_token(const std::string& key) {
  std::string out;
  for (char ch : key) {
    if (ch == '~') out += "~0";
    else if (ch == '/') out += "~1";
    else out += ch;
  }
  return out;
}

std::pair<int, int> line_column(const std::string& text, std::size_t offset) {
  int line = 1;
  int col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

namespace {

struct Frame {
  bool is_array = false;
  std::string pointer;
  int index = 0;             // next array element
  std::string pending_key;   // object key awaiting its value
  bool expecting_key = true;
};

}  // namespace

JsonLocator::JsonLocator(const std::string& text) {
  std::vector<Frame> stack;
  int line = 1;
  std::size_t i = 0;
  const std::size_t n = text.size();

  auto read_string = [&]() {
    std::string s;
    ++i;  // opening quote
    while (i < n && text[i] != '"') {
      if (text[i] == '\\' && i + 1 < n) {
        s += text[i + 1];
        i += 2;
        continue;
      }
      if (text[i] == '\n') ++line;
      s += text[i++];
    }
    ++i;  // closing quote
    return s;
  };

  // Pointer of the value that starts at the current position.
  auto value_pointer = [&]() -> std::string {
    if (stack.empty()) return "";
    Frame& top = stack.back();
    if (top.is_array) return top.pointer + "/" + std::to_string(top.index++);
    return top.pointer + "/" + pointer_token(top.pending_key);
  };

  while (i < n) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',' || ch == ':') {
      if (ch == ',' && !stack.empty() && !stack.back().is_array) stack.back().expecting_key = true;
      ++i;
      continue;
    }
    if (!stack.empty() && !stack.back().is_array && stack.back().expecting_key) {
      if (ch == '"') {
        stack.back().pending_key = read_string();
        stack.back().expecting_key = false;
        continue;
      }
      if (ch == '}') {
        stack.pop_back();
        ++i;
        continue;
      }
      ++i;  // not valid JSON; skip
      continue;
    }
    if (ch == ']' || ch == '}') {
      if (!stack.empty()) stack.pop_back();
      ++i;
      continue;
    }

    const std::string ptr = value_pointer();
    lines_.emplace(ptr, line);
    if (ch == '{' || ch == '[') {
      Frame f;
      f.is_array = ch == '[';
      f.pointer = ptr;
      stack.push_back(f);
      ++i;
      continue;
    }
    if (ch == '"') {
      read_string();
      continue;
    }
    while (i < n && text[i] != ',' && text[i] != ']' && text[i] != '}' &&
           !std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
  }
}

int JsonLocator::line_of(std::string pointer) const {
  for (;;) {
    auto it = lines_.find(pointer);
    if (it != lines_.end()) return it->second;
    if (pointer.empty()) return 0;
    const auto slash = pointer.rfind('/');
    pointer = slash == std::string::npos ? "" : pointer.substr(0, slash);
  }
}

}  // namespace roadsense
