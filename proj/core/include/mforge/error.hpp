#pragma once

#include <stdexcept>
#include <string>

namespace mforge {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Median heuristic on a sample whose pairwise distances are all zero.
class DegenerateBandwidth : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of a convex conjugate (LOG at t >= 1).
class DomainError : public Error {
 public:
  DomainError(const std::string& what, double argument)
      : Error(what), argument_(argument) {}
  double argument() const noexcept { return argument_; }

 private:
  double argument_;
};

// Some reference point violated the log barrier; carries max_j t_j.
class BarrierViolation : public Error {
 public:
  explicit BarrierViolation(double max_t)
      : Error("log-barrier violated: max t_j = " + std::to_string(max_t)),
        max_t_(max_t) {}
  double max_t() const noexcept { return max_t_; }

 private:
  double max_t_;
};

class Diverged : public Error {
 public:
  using Error::Error;
};

class Infeasible : public Error {
 public:
  using Error::Error;
};

// Configuration problems; key and line are empty/0 when unknown.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key = {}, int line = 0)
      : Error(what), key_(std::move(key)), line_(line) {}
  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

 private:
  std::string key_;
  int line_;
};

}  // namespace mforge
