#pragma once

#include <stdexcept>
#include <string>

namespace lidkit {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when the nominal parameters fail a LID constraint before any
// optimization starts; no invariant domain can exist in that case.
struct InfeasibleNominal : std::runtime_error {
    explicit InfeasibleNominal(std::size_t constraint_index, double value, double delta)
        : std::runtime_error("nominal parameters infeasible for constraint " +
                             std::to_string(constraint_index) + ": spec value " +
                             std::to_string(value) + " > delta " + std::to_string(delta)),
          constraint_index(constraint_index),
          value(value),
          delta(delta) {}
    std::size_t constraint_index;
    double value;
    double delta;
};

struct HeldOutViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}
    std::size_t byte_offset;
};

}  // namespace lidkit
