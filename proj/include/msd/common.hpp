#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace msd {

// Error taxonomy. Everything derives from Error so callers can catch broadly;
// the subtypes separate "your config is wrong" from "the program misbehaved".
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Invalid configuration, rejected before any compute.
struct ConfigError : Error {
    using Error::Error;
};
// A precondition of an operation was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};
// Token/checkpoint decoding failures.
struct DecodeError : Error {
    using Error::Error;
};
// Operation attempted in an invalid lifecycle state (e.g. unfitted normalizer).
struct StateError : Error {
    using Error::Error;
};
// A required upstream artifact (checkpoint, sample file) is missing.
struct DependencyError : Error {
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <class... Args>
[[noreturn]] inline void fail_contract(Args&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    throw ContractError(os.str());
}

template <class... Args>
[[noreturn]] inline void fail_config(Args&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    throw ConfigError(os.str());
}

}  // namespace msd
