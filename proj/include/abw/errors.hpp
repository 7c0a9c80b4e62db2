#pragma once

#include <stdexcept>
#include <string>

namespace abw {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed arguments: dimension mismatches, non-finite values, bad ranges.
struct InvalidInputError : Error {
    using Error::Error;
};

// Inputs that are well-formed but degenerate (zero vectors, all-zero basis).
struct DegenerateInputError : Error {
    using Error::Error;
};

struct EmptyPoolError : Error {
    using Error::Error;
};

struct InvalidConfigError : Error {
    using Error::Error;
};

// World generation could not satisfy its constraints (centroid spacing).
struct GenerationError : Error {
    using Error::Error;
};

// Model construction failed validation (propagation gain out of bounds).
struct ConstructionError : Error {
    using Error::Error;
};

// Score distributions too entangled to calibrate a classifier.
struct CalibrationError : Error {
    using Error::Error;
};

// Evaluation protocol misuse (missing calibration, missing solo baselines).
struct ProtocolError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& msg, int line)
        : Error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    int line_number;
};

// Corrupt or malformed binary files.
struct FileFormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace abw
