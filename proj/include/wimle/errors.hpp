#pragma once

#include <stdexcept>
#include <string>

namespace wimle {

/// Operand shapes do not conform.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An API was called out of order (e.g. backward without a recorded forward pass).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A documented precondition on argument values was violated.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A loss or gradient became NaN/Inf; the offending update was not applied.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what)
{
    if (!ok) throw DimensionError(what);
}

inline void require(bool ok, const std::string& what)
{
    if (!ok) throw ContractError(what);
}

}  // namespace detail
}  // namespace wimle
