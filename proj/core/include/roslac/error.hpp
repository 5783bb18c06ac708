#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace roslac {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid scenario, rig or grid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Query too close to a singular point (e.g. a dipole source).
class DegenerateQueryError : public Error {
 public:
  using Error::Error;
};

/// Training data that cannot define a model (duplicates, empty set, failed factorization).
class DegenerateTrainingError : public Error {
 public:
  using Error::Error;
};

/// Geometry that cannot be aligned (collinear or too few points).
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Map query outside the gridded region. Carries the offending point.
class OutOfBoundsError : public Error {
 public:
  explicit OutOfBoundsError(const Eigen::Vector3d& point);
  const Eigen::Vector3d& point() const noexcept { return point_; }

 private:
  Eigen::Vector3d point_;
};

}  // namespace roslac
