#pragma once

#include <stdexcept>
#include <string>

namespace pamm {

// Bad input: malformed data, unresolved names, violated preconditions.
class InputError : public std::invalid_argument {
public:
    explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failure: non-convergence, singular systems, non-finite values.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace pamm
