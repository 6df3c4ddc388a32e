#pragma once
#include <stdexcept>
#include <string>

namespace nep {

enum class ErrorKind {
  Input,       // malformed user input (sizes, vocabulary, images)
  Config,      // inconsistent configuration or shapes
  Layout,      // sequence layout construction failure
  Corruption,  // damaged file or out-of-range stored value
  Undefined,   // quantity undefined for the given input (zero-norm cosine)
  NonFinite,   // training produced NaN/Inf
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace nep
