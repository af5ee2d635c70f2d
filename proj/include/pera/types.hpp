#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pera {

// All numerics are double precision; tolerances throughout assume this.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    std::size_t byte_offset;
    ParseError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (byte " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    long step;
    DivergenceError(long at_step)
        : std::runtime_error("loss diverged at step " + std::to_string(at_step)),
          step(at_step) {}
};

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite())
        throw std::domain_error(std::string(what) + ": non-finite entries");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": shape mismatch (" +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

}  // namespace pera
