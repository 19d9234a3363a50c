#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lowdens/error.hpp"

namespace lowdens {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

double parse_double(std::string_view s, std::size_t line);

template <class Int>
Int parse_int(std::string_view s, std::size_t line) {
  Int v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("invalid integer '" + std::string(s) + "'", line);
  }
  return v;
}

std::string_view trim(std::string_view s);
std::vector<std::string_view> split_fields(std::string_view line);

// Iterates over lines of a buffer, tracking 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}
  std::optional<std::string_view> next_line();
  // Skips blank lines and lines starting with '#'.
  std::optional<std::string_view> next_content_line();
  std::size_t line_number() const noexcept { return line_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace lowdens
