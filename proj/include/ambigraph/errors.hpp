#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ambigraph {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed files, invalid flags, schema violations.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class NonPositiveDepth : public Error {
 public:
  using Error::Error;
};

class DegenerateMatrix : public Error {
 public:
  using Error::Error;
};

class DegenerateCorners : public Error {
 public:
  using Error::Error;
};

class PlaneBehindCamera : public Error {
 public:
  using Error::Error;
};

class DisconnectedGraph : public Error {
 public:
  DisconnectedGraph(const std::string& what, std::vector<std::vector<int>> components)
      : Error(what), components_(std::move(components)) {}

  /// Marker ids of each connected component, sorted.
  const std::vector<std::vector<int>>& components() const { return components_; }

 private:
  std::vector<std::vector<int>> components_;
};

class TooLarge : public Error {
 public:
  using Error::Error;
};

class UnobservedImage : public Error {
 public:
  using Error::Error;
};

class DegenerateAlignment : public Error {
 public:
  using Error::Error;
};

class NoDecisions : public Error {
 public:
  using Error::Error;
};

class DisconnectedScene : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class MissingGroundTruth : public Error {
 public:
  using Error::Error;
};

}  // namespace ambigraph
