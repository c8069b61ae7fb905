#pragma once

#include <string>

#include "datta/model.hpp"

namespace datta::harness {

/// Container file: a text manifest (version tag, layer list, named parameter
/// shapes) followed by one blob of little-endian 32-bit floats in manifest
/// order. Source BN statistics travel with the parameters. Round-trip load
/// reproduces bitwise-identical forward outputs.
void save_checkpoint(const adapt::Model& model, const std::string& path);

/// Throws std::runtime_error on IO failure, bad magic/version, or manifest
/// inconsistencies.
adapt::Model load_checkpoint(const std::string& path);

}  // namespace datta::harness
