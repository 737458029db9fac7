#pragma once

#include <stdexcept>
#include <string>

namespace detrad {

// Invalid caller input: bad ids, malformed files, shape mismatches.
struct InputError : std::invalid_argument {
    explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

// Violated numeric or state contract: non-finite values, backward without
// forward, missing scaling table.
struct StateError : std::runtime_error {
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace detrad
