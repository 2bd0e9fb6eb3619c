#pragma once

#include <stdexcept>
#include <string>

namespace sdidml {

// Base class for every error raised by the library. Each condition named in
// an operation contract gets its own type so callers can catch precisely.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SDIDML_DEFINE_ERROR(Name)                                          \
    class Name : public Error {                                            \
    public:                                                                 \
        explicit Name(const std::string& msg) : Error(#Name ": " + msg) {}  \
    }

// panel-core
SDIDML_DEFINE_ERROR(MissingColumn);
SDIDML_DEFINE_ERROR(ParseError);
SDIDML_DEFINE_ERROR(DuplicateKey);
SDIDML_DEFINE_ERROR(EmptyData);
SDIDML_DEFINE_ERROR(RoleOverlap);
SDIDML_DEFINE_ERROR(NonBinaryTreatment);
SDIDML_DEFINE_ERROR(UnknownUnit);
SDIDML_DEFINE_ERROR(TimingOutOfRange);
SDIDML_DEFINE_ERROR(ZeroVariance);
SDIDML_DEFINE_ERROR(NameCollision);
SDIDML_DEFINE_ERROR(InconsistentGroup);
SDIDML_DEFINE_ERROR(EmptySubgroup);

// learners
SDIDML_DEFINE_ERROR(SingularDesign);
SDIDML_DEFINE_ERROR(InsufficientData);
SDIDML_DEFINE_ERROR(ShapeMismatch);
SDIDML_DEFINE_ERROR(ZeroVarianceTarget);

// crossfit
SDIDML_DEFINE_ERROR(TooFewUnits);
SDIDML_DEFINE_ERROR(NoResidualTreatmentVariation);

// estimators
SDIDML_DEFINE_ERROR(DegenerateClusters);
SDIDML_DEFINE_ERROR(WeakDenominator);
SDIDML_DEFINE_ERROR(CollinearAfterDemeaning);
SDIDML_DEFINE_ERROR(NonConvergence);

// diagnostics
SDIDML_DEFINE_ERROR(UnknownVariable);
SDIDML_DEFINE_ERROR(PerfectCollinearity);
SDIDML_DEFINE_ERROR(NotPositiveSemiDefinite);
SDIDML_DEFINE_ERROR(SingularCorrelation);

// robustness
SDIDML_DEFINE_ERROR(NoPrePeriods);
SDIDML_DEFINE_ERROR(NoControlUnits);
SDIDML_DEFINE_ERROR(TooManyFailedReps);

// mechanisms
SDIDML_DEFINE_ERROR(ConstantModerator);
SDIDML_DEFINE_ERROR(ConstantMediator);
SDIDML_DEFINE_ERROR(GroupTooSmall);

// simulator / cli
SDIDML_DEFINE_ERROR(ConfigInvalid);
SDIDML_DEFINE_ERROR(ConfigError);
SDIDML_DEFINE_ERROR(StepFailure);
SDIDML_DEFINE_ERROR(IoError);

#undef SDIDML_DEFINE_ERROR

} // namespace sdidml
