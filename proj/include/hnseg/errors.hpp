#pragma once

#include <stdexcept>
#include <string>

namespace hnseg {

// Error taxonomy for the whole pipeline. Everything derives from
// PipelineError so the CLI can map failures onto exit codes in one place.
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : PipelineError { using PipelineError::PipelineError; };
struct ShapeError : PipelineError { using PipelineError::PipelineError; };
struct StateError : PipelineError { using PipelineError::PipelineError; };
struct ConfigError : PipelineError { using PipelineError::PipelineError; };

// File I/O and parsing
struct IoError : PipelineError { using PipelineError::PipelineError; };
struct FormatError : PipelineError { using PipelineError::PipelineError; };
struct UnsupportedError : PipelineError { using PipelineError::PipelineError; };
struct OrientationError : PipelineError { using PipelineError::PipelineError; };

// Domain-specific failures
struct DetectionError : PipelineError { using PipelineError::PipelineError; };
struct NormalizationError : PipelineError { using PipelineError::PipelineError; };
struct CaseError : PipelineError { using PipelineError::PipelineError; };

}  // namespace hnseg
