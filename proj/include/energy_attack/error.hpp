#pragma once

#include <stdexcept>
#include <string>

namespace ea {

// Every failure raised by the library derives from Error so the CLI can map
// categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DegenerateBasis : public Error {
 public:
  using Error::Error;
};

class EmptyAccumulator : public Error {
 public:
  using Error::Error;
};

}  // namespace ea
