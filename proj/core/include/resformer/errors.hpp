#pragma once

#include <stdexcept>
#include <string>

namespace resformer {

// Shape/dimension mismatches between tensors.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid model/experiment configuration.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Non-finite values encountered during training/evaluation.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace resformer
