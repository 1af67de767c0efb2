#pragma once

#include <stdexcept>
#include <string>

namespace nestlearn {

enum class Errc {
  MissingColumn,
  DuplicateChoice,
  NoChoice,
  ChosenUnavailable,
  NonNumericAttribute,
  DimensionMismatch,
  EmptyChoiceSet,
  ScaleViolation,
  TooLarge,
  DegeneratePartition,
  InvalidTree,
  InfeasibleRegularization,
  Infeasible,
  Unbounded,
  IterLimit,
  NumericalFailure,
  SingularInformation,
  ParseError,
};

const char* errc_name(Errc c);

/// Library-wide exception; carries a machine-readable code plus context.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace nestlearn
