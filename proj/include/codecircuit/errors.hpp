#pragma once

#include <stdexcept>
#include <string>

namespace codecircuit {

// Base of every error raised by the library. `kind()` is a stable
// machine-readable tag used in CLI error reports.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define CODECIRCUIT_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                         \
    public:                                                             \
        explicit Name(const std::string& what) : Error(#Name, what) {} \
    }

// graph-core
CODECIRCUIT_DEFINE_ERROR(SyntaxError);
CODECIRCUIT_DEFINE_ERROR(SchemaError);
CODECIRCUIT_DEFINE_ERROR(IOError);
CODECIRCUIT_DEFINE_ERROR(DuplicateStepError);

// pruner
CODECIRCUIT_DEFINE_ERROR(CyclicGraphError);
CODECIRCUIT_DEFINE_ERROR(EmptyLogitError);

// features
CODECIRCUIT_DEFINE_ERROR(LayerMismatchError);
CODECIRCUIT_DEFINE_ERROR(DegenerateInputError);

// baselines
CODECIRCUIT_DEFINE_ERROR(EmptyTraceError);
CODECIRCUIT_DEFINE_ERROR(MissingTemperatureError);
CODECIRCUIT_DEFINE_ERROR(InsufficientLabelsError);

// classifier / eval
CODECIRCUIT_DEFINE_ERROR(SingleClassError);
CODECIRCUIT_DEFINE_ERROR(NonFiniteError);
CODECIRCUIT_DEFINE_ERROR(ShapeMismatchError);
CODECIRCUIT_DEFINE_ERROR(ManifestMismatchError);

// sandbox
CODECIRCUIT_DEFINE_ERROR(InvalidConfigError);
CODECIRCUIT_DEFINE_ERROR(NoActiveFeatureError);
CODECIRCUIT_DEFINE_ERROR(TargetNotFoundError);

// synth
CODECIRCUIT_DEFINE_ERROR(InfeasibleKnobError);

#undef CODECIRCUIT_DEFINE_ERROR

}  // namespace codecircuit
