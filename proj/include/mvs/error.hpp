#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvs {

enum class ErrorKind {
  MissingFile,
  SchemaViolation,
  DuplicateSubject,
  UnreadableImage,
  TooFewSubjectsInClass,
  UnknownBackbone,
  PretrainedWeightsUnavailable,
  BackboneNotExecutable,
  ShapeMismatch,
  EmptyClass,
  NonFiniteLoss,
  EmptyMatrix,
  DegenerateLabels,
  InfeasibleRates,
  IOFailure,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so the CLI can map it
/// onto a stable exit code.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// 0 ok, 2 config/schema, 3 I/O, 4 numerical failure.
int exit_code(ErrorKind kind);

}  // namespace mvs
