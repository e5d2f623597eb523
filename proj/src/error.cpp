#include "mvs/error.hpp"

namespace mvs {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::DuplicateSubject: return "DuplicateSubject";
    case ErrorKind::UnreadableImage: return "UnreadableImage";
    case ErrorKind::TooFewSubjectsInClass: return "TooFewSubjectsInClass";
    case ErrorKind::UnknownBackbone: return "UnknownBackbone";
    case ErrorKind::PretrainedWeightsUnavailable: return "PretrainedWeightsUnavailable";
    case ErrorKind::BackboneNotExecutable: return "BackboneNotExecutable";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::InfeasibleRates: return "InfeasibleRates";
    case ErrorKind::IOFailure: return "IOFailure";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile:
    case ErrorKind::IOFailure:
    case ErrorKind::UnreadableImage:
      return 3;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::EmptyMatrix:
    case ErrorKind::DegenerateLabels:
    case ErrorKind::InfeasibleRates:
      return 4;
    default:
      return 2;
  }
}

}  // namespace mvs
