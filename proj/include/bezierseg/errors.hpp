#pragma once

#include <stdexcept>
#include <string>

namespace bezierseg {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can separate library failures from std::bad_alloc and friends.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain (basis index, degree, parameter).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Shape mismatch, invalid index, non-finite input, or a violated precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Rational denominator vanished or went negative.
class DegenerateWeightsError : public Error {
public:
    using Error::Error;
};

/// Partials are (nearly) parallel; the surface normal is undefined.
class DegenerateNormalError : public Error {
public:
    using Error::Error;
};

/// A primitive has zero total membership.
class EmptyPrimitiveError : public Error {
public:
    using Error::Error;
};

/// Point set has insufficient rank for the requested operation.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class SizeError : public Error {
public:
    using Error::Error;
};

class NormalizationError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

/// Finite-difference oracle produced a non-finite function value.
class OracleError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public IoError {
public:
    using IoError::IoError;
};

class VersionError : public ParseError {
public:
    using ParseError::ParseError;
};

namespace detail {

template <class E>
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw E(msg);
}

}  // namespace detail

}  // namespace bezierseg
