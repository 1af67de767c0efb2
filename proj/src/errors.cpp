#include "nestlearn/errors.hpp"

namespace nestlearn {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::DuplicateChoice: return "DuplicateChoice";
    case Errc::NoChoice: return "NoChoice";
    case Errc::ChosenUnavailable: return "ChosenUnavailable";
    case Errc::NonNumericAttribute: return "NonNumericAttribute";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyChoiceSet: return "EmptyChoiceSet";
    case Errc::ScaleViolation: return "ScaleViolation";
    case Errc::TooLarge: return "TooLarge";
    case Errc::DegeneratePartition: return "DegeneratePartition";
    case Errc::InvalidTree: return "InvalidTree";
    case Errc::InfeasibleRegularization: return "InfeasibleRegularization";
    case Errc::Infeasible: return "Infeasible";
    case Errc::Unbounded: return "Unbounded";
    case Errc::IterLimit: return "IterLimit";
    case Errc::NumericalFailure: return "NumericalFailure";
    case Errc::SingularInformation: return "SingularInformation";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace nestlearn
