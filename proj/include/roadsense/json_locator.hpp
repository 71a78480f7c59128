#pragma once

#include <map>
#include <string>

namespace roadsense {

/// Maps JSON pointers ("/network/cells/3/length_km") to the 1-based line on
/// which the value starts, so schema errors can name a line. Built by a
/// light scan of already-valid JSON text.
class JsonLocator {
 public:
  JsonLocator() = default;
  explicit JsonLocator(const std::string& text);

  /// Line of the pointer, or of its closest located ancestor; 0 if unknown.
  int line_of(std::string pointer) const;

 private:
  std::map<std::string, int> lines_;
};

/// Escapes a key for use as a JSON pointer token.
std::string pointer_token(const std::string& key);

/// 1-based line/column of a byte offset.
std::pair<int, int> line_column(const std::string& text, std::size_t offset);

}  // namespace roadsense
