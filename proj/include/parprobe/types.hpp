#ifndef PARPROBE_TYPES_HPP
#define PARPROBE_TYPES_HPP

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace parprobe {

// Spatial point in R^n, n in {1, 2}; stack storage, no heap traffic.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2, 1>;

inline Point make_point(double a) {
    Point p(1);
    p << a;
    return p;
}

inline Point make_point(double a, double b) {
    Point p(2);
    p << a, b;
    return p;
}

// Bad input that makes an operation meaningless (empty set, wrong side, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// A documented precondition of an operation does not hold.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Quadrature or linear solve did not reach its target.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, double achieved = 0.0)
        : std::runtime_error(what), achieved_error(achieved) {}
    double achieved_error;
};

constexpr double kPi = 3.14159265358979323846;

} // namespace parprobe

#endif
