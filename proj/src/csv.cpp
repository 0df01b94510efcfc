#include "pgrad/csv.hpp"

#include <cmath>
#include <cstdio>

namespace pgrad {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void CsvRow::separator() {
  if (!first_) text_.push_back(',');
  first_ = false;
}

CsvRow& CsvRow::add(std::string_view field) {
  separator();
  text_.append(field);
  return *this;
}

CsvRow& CsvRow::add(double v) {
  separator();
  text_.append(format_number(v));
  return *this;
}

CsvRow& CsvRow::add(std::size_t v) {
  separator();
  text_.append(std::to_string(v));
  return *this;
}

}  // namespace pgrad
