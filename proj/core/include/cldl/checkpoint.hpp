#pragma once

#include <string>

#include "cldl/lcm.hpp"
#include "cldl/nn.hpp"

namespace cldl {

// A trained ensemble plus its confusion model and identifying tags.
struct ModelBundle {
  Ensemble ensemble;
  LabelConfusionModel lcm;
  std::string arch;
  std::string dataset;
};

// Binary container: magic "CLDL", a little-endian u32 format version, the
// arch and dataset tags, model dimensions, then every parameter tensor with
// its name, extents, and row-major f64 payload (all little-endian). Writing
// the same bundle twice produces byte-identical files.
void save_checkpoint(const std::string& path, const ModelBundle& bundle);

// Throws config_error on bad magic, unsupported version, truncation, or
// parameter names/shapes that do not match the declared architecture.
ModelBundle load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace cldl
