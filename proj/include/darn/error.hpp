#pragma once

#include <stdexcept>
#include <string>

namespace darn {

class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Operand shapes disagree (inner dims, channel counts, rank).
class DimensionError : public Error {
   public:
    using Error::Error;
};

// Spatial arithmetic does not work out (non-integral extents, bad multiples).
class GeometryError : public Error {
   public:
    using Error::Error;
};

// A value is outside the domain of the function (log of <= 0, p outside (0,1), ...).
class DomainError : public Error {
   public:
    using Error::Error;
};

// Misuse of the tape (double backward, non-scalar root, empty tape).
class TapeError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class FormatError : public Error {
   public:
    using Error::Error;
};

class TrainingError : public Error {
   public:
    using Error::Error;
};

}  // namespace darn
