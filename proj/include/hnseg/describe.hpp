#pragma once

#include <string>

#include "hnseg/config.hpp"

namespace hnseg {

// Human-readable summary of the resolved configuration plus the network
// layer table with output shapes and parameter counts. Stable output; the
// acceptance suite diffs it against a golden file.
std::string describe_text(const PipelineConfig& cfg);

}  // namespace hnseg
