#ifndef TCINET_ERRORS_HPP
#define TCINET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tcinet {

// Validation errors: the caller handed us something malformed (bad config,
// bad schema, bad shapes). The CLI maps these to exit code 1.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};
struct SchemaError : ValidationError {
    using ValidationError::ValidationError;
};
struct DataError : ValidationError {
    using ValidationError::ValidationError;
};
struct OrderingError : ValidationError {
    using ValidationError::ValidationError;
};
struct SplitError : ValidationError {
    using ValidationError::ValidationError;
};
struct WindowError : ValidationError {
    using ValidationError::ValidationError;
};
struct ShapeError : ValidationError {
    using ValidationError::ValidationError;
};
struct MetricError : ValidationError {
    using ValidationError::ValidationError;
};
struct DegenerateTreatmentError : ValidationError {
    using ValidationError::ValidationError;
};

// Execution errors: the inputs looked fine but a stage failed while running.
// The CLI maps these (and any other std::exception) to exit code 2.
struct ExecutionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitError : ExecutionError {
    using ExecutionError::ExecutionError;
};
struct WeightError : ExecutionError {
    using ExecutionError::ExecutionError;
};
struct StateError : ExecutionError {
    using ExecutionError::ExecutionError;
};
struct DivergenceError : ExecutionError {
    using ExecutionError::ExecutionError;
};
struct IoError : ExecutionError {
    using ExecutionError::ExecutionError;
};

} // namespace tcinet

#endif
