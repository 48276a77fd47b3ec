#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "fedctx/errors.hpp"

namespace fedctx::csv {

// 17 significant digits round-trip any double exactly, so files written with
// this format compare byte-for-byte across reruns.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& field, const std::string& context) {
  if (field.empty()) throw ParseError(context + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size())
    throw ParseError(context + ": bad numeric field '" + field + "'");
  return v;
}

inline long parse_long(const std::string& field, const std::string& context) {
  if (field.empty()) throw ParseError(context + ": empty integer field");
  char* end = nullptr;
  const long v = std::strtol(field.c_str(), &end, 10);
  if (end != field.c_str() + field.size())
    throw ParseError(context + ": bad integer field '" + field + "'");
  return v;
}

}  // namespace fedctx::csv
