#pragma once

#include <stdexcept>
#include <string>

namespace lrc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Rejection sampler exhausted its retry and restart budget.
class InfeasiblePacking : public Error {
 public:
  using Error::Error;
};

class ParticlesTooClose : public Error {
 public:
  using Error::Error;
};

/// Spectral kernel grid does not resolve the kernel's Fourier tail.
class GridTooCoarse : public Error {
 public:
  using Error::Error;
};

/// NUFFT spreading stencil does not fit in the grid.
class GridTooSmall : public Error {
 public:
  using Error::Error;
};

class ImagResidueTooLarge : public Error {
 public:
  using Error::Error;
};

class NeighborOverflow : public Error {
 public:
  NeighborOverflow(const std::string& what, int required)
      : Error(what), required_(required) {}
  int required() const { return required_; }

 private:
  int required_;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class ZeroDenominator : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset / checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; `key()` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace lrc
