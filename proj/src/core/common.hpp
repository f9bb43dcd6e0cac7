// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace isogcn {

/// Error categories shared by the C++ core and the C API status codes.
enum class ErrorCode : int {
  InvalidArgument = 1,
  Shape = 2,
  Rank = 3,
  Io = 4,
  Parse = 5,
  Resource = 6,
  Numeric = 7,
  Construction = 8,
  NotFound = 9,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

/// Integer power for small tensor ranks, d^p.
constexpr std::size_t ipow(std::size_t base, int exponent) {
  std::size_t r = 1;
  for (int i = 0; i < exponent; ++i) r *= base;
  return r;
}

/// Worker count used by row-parallel kernels. Row kernels never share
/// accumulators, so results are identical for every thread count.
void set_num_threads(int n);
int num_threads();

}  // namespace isogcn
