#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace smanet {

// Error taxonomy used across the library. Shape/ConfigError indicate caller
// mistakes, NumericError indicates a non-finite value reached a checked
// boundary, IoError covers file formats and the filesystem.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

namespace detail {

inline void str_cat_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void str_cat_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  str_cat_into(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string str_cat(const Args&... args) {
  std::ostringstream os;
  detail::str_cat_into(os, args...);
  return os.str();
}

template <typename E = Error, typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) throw E(str_cat(args...));
}

}  // namespace smanet
