#pragma once

#include <stdexcept>
#include <string>

namespace dip {

// Thrown for malformed user input: bad shapes, bad config values, bad file
// contents. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an internal invariant breaks (tape corruption, shape bug past
// validation). Exit code 1: it is our bug, not the user's.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

// Thrown when training hits a non-finite loss. Carries the step so the CLI
// can report where the run died after dumping diagnostics.
struct NumericError : std::runtime_error {
    NumericError(const std::string& what, long step_)
        : std::runtime_error(what), step(step_) {}
    long step;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace dip
