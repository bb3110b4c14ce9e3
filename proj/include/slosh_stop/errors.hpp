#pragma once

#include <stdexcept>
#include <string>

namespace slosh_stop {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// cos(theta) of the pendulum came too close to zero for the phi equation.
class GimbalSingularity : public Error {
 public:
  using Error::Error;
};

class UnsupportedShape : public Error {
 public:
  using Error::Error;
};

class HorizonMismatch : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// A QP did not reach an optimal solution; carries the solver status text.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace slosh_stop
