#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ace {

enum class ErrorKind {
  MissingColumn,
  NonNumericCell,
  InconsistentWDelta,
  EmptyDataset,
  InvalidDataset,
  ZeroVariance,
  DomainError,
  SingularJacobian,
  MaxIterationsExceeded,
  DivergedNonFinite,
  NoEvents,
  ConstantCovariate,
  NonConvergence,
  MonotoneLikelihood,
  NonPDCovariance,
  SingularN,
  DegenerateColumn,
  NegativeSigma2,
  TooFewUncensored,
  LayoutMismatch,
  InvalidArgument,
  IoError,
};

inline constexpr std::string_view to_string(ErrorKind k) noexcept {
  switch (k) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::InconsistentWDelta: return "InconsistentWDelta";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::MaxIterationsExceeded: return "MaxIterationsExceeded";
    case ErrorKind::DivergedNonFinite: return "DivergedNonFinite";
    case ErrorKind::NoEvents: return "NoEvents";
    case ErrorKind::ConstantCovariate: return "ConstantCovariate";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::MonotoneLikelihood: return "MonotoneLikelihood";
    case ErrorKind::NonPDCovariance: return "NonPDCovariance";
    case ErrorKind::SingularN: return "SingularN";
    case ErrorKind::DegenerateColumn: return "DegenerateColumn";
    case ErrorKind::NegativeSigma2: return "NegativeSigma2";
    case ErrorKind::TooFewUncensored: return "TooFewUncensored";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library exception. `kind()` identifies the failure; `what()` carries a
/// human-readable diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ace
