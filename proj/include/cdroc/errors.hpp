#pragma once

#include <stdexcept>
#include <string>

namespace cdroc {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid discretization or solver parameters.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Evaluation point outside the parameter domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Singular or orientation-reversing geometry map.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// A matrix that must be symmetric positive definite is not.
class NotSpdError : public Error {
public:
    using Error::Error;
};

/// Smoother cannot be applied (zero diagonal, singular patch).
class SmootherError : public Error {
public:
    using Error::Error;
};

template <class E>
inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw E(message);
    }
}

} // namespace cdroc
