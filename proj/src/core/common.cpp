// SPDX-License-Identifier: Apache-2.0
#include "core/common.hpp"

#include <algorithm>
#include <atomic>

namespace isogcn {

namespace {
std::atomic<int> g_threads{1};
}

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Rank: return "rank";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Resource: return "resource";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Construction: return "construction";
    case ErrorCode::NotFound: return "not_found";
  }
  return "unknown";
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

int num_threads() { return g_threads.load(); }

}  // namespace isogcn
