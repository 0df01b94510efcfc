#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

namespace pgrad {

/// Locale-independent, fixed "%.12g" rendering; NaN prints as "nan".
std::string format_number(double v);

/// FNV-1a 64-bit hash, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

/// Small row builder: fields joined with commas.
class CsvRow {
 public:
  CsvRow& add(std::string_view field);
  CsvRow& add(double v);
  CsvRow& add(std::size_t v);

  const std::string& str() const noexcept { return text_; }

 private:
  void separator();
  std::string text_;
  bool first_ = true;
};

}  // namespace pgrad
