#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace ipreid {

using Scalar = double;
using Span = std::span<Scalar>;
using ConstSpan = std::span<const Scalar>;

// Configuration / argument problems the caller can fix. The CLI maps these
// to exit code 2, everything else to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace ipreid
