#pragma once

#include <stdexcept>
#include <string>

namespace roadsense {

/// Coarse failure classes. The CLI maps each one to a stable exit code.
enum class ErrorCategory {
  Schema,      // malformed input documents or network descriptions
  Data,        // inputs that are well-formed but unusable (no samples, ...)
  Solver,      // numerical routines that failed to converge
  Infeasible,  // placement problems with too few candidates / sensors
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define ROADSENSE_DEFINE_ERROR(Name, Category)                       \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what)                           \
        : Error(ErrorCategory::Category, #Name ": " + what) {}       \
  }

ROADSENSE_DEFINE_ERROR(MalformedSpec, Schema);
ROADSENSE_DEFINE_ERROR(RowSumViolation, Schema);
ROADSENSE_DEFINE_ERROR(ConnectivityViolation, Schema);
ROADSENSE_DEFINE_ERROR(RankDeficiency, Data);
ROADSENSE_DEFINE_ERROR(OutOfRange, Data);
ROADSENSE_DEFINE_ERROR(EmptyLearningSet, Data);
ROADSENSE_DEFINE_ERROR(NonFiniteGradient, Data);
ROADSENSE_DEFINE_ERROR(NoCalibratedNeighbor, Data);
ROADSENSE_DEFINE_ERROR(BudgetExceeded, Data);
ROADSENSE_DEFINE_ERROR(NegativeDensity, Solver);
ROADSENSE_DEFINE_ERROR(SolverFailure, Solver);
ROADSENSE_DEFINE_ERROR(SingularInformation, Infeasible);
ROADSENSE_DEFINE_ERROR(InfeasibleCandidateSet, Infeasible);

#undef ROADSENSE_DEFINE_ERROR

}  // namespace roadsense
