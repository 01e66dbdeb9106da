#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace usnav {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated files.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Structurally invalid inputs: length mismatches, non-finite values,
// frame mismatches, empty inputs.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Degenerate geometry: rank-deficient point sets, ill-conditioned systems,
// parallel rays, singular transforms, missing volume overlap.
struct GeometryError : Error {
    explicit GeometryError(const std::string& msg) : Error(msg) {}
};

inline bool almost_equal(double a, double b, double tol) {
    return std::abs(a - b) <= tol;
}

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace usnav
