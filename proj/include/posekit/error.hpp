#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posekit {

enum class ErrorKind {
  EmptyInput,
  InvalidParameter,
  InvalidRotation,
  ParseError,
  DuplicateId,
  DegenerateVectors,
  UnsupportedForFiniteGroup,
  ShapeError,
  StateError,
  LabelRequired,
  CategoryMismatch,
  MissingGroundTruth,
  SegmentationEmpty,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace posekit
