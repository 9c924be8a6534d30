#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace csd {

/// Base of every exception thrown by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite or malformed numeric input.
class InvalidInputError : public Error {
public:
    using Error::Error;
};

/// An assumption of the demand model is violated (e.g. M not positive definite).
class ModelAssumptionError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: ill-conditioned systems, failed decompositions.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Iterative solver hit its iteration cap. Carries the best iterate found.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, Eigen::VectorXd best, int iterations)
        : NumericalError(what), best_(std::move(best)), iterations_(iterations) {}

    const Eigen::VectorXd& best_iterate() const noexcept { return best_; }
    int iterations() const noexcept { return iterations_; }

private:
    Eigen::VectorXd best_;
    int iterations_;
};

/// Input data cannot support the requested computation.
class DataError : public Error {
public:
    using Error::Error;
};

/// Too few usable observations.
class InsufficientDataError : public DataError {
public:
    using DataError::DataError;
};

/// Elasticity requested where some demand is zero.
class DivisionDomainError : public Error {
public:
    DivisionDomainError(const std::string& what, std::vector<int> goods)
        : Error(what), goods_(std::move(goods)) {}
    const std::vector<int>& goods() const noexcept { return goods_; }

private:
    std::vector<int> goods_;
};

/// First-stage rank deficiency in an IV fit.
class IdentificationError : public Error {
public:
    IdentificationError(const std::string& what, std::vector<std::string> columns)
        : Error(what), columns_(std::move(columns)) {}
    const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
    std::vector<std::string> columns_;
};

/// Bad configuration value or unknown key.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace csd
