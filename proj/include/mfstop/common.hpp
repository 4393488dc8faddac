#pragma once

#include <stdexcept>
#include <string>

namespace mfstop {

inline constexpr const char* kVersion = "0.1.0";

// Caller violated a precondition (bad sizes, incompatible grids, out-of-range query).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// A model callback or numeric routine produced something unusable (NaN, Inf, singular fit).
struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

// Config file / CLI input failed validation; message names the offending field.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace mfstop
