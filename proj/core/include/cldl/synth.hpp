#pragma once

#include <cstdint>
#include <string>

#include "cldl/dataset.hpp"

namespace cldl {

// Renders a deterministic labelled digit dataset: 28x28 grayscale images of
// the glyphs 0-9 drawn from a 5x7 pixel font under random affine jitter
// (shift, scale, rotation, shear), per-example stroke intensity, and additive
// background noise. Pixel values are quantised to the k/255 grid so the
// dataset round-trips bit-exactly through the IDX container. The same
// (n_examples, seed) pair always yields byte-identical data.
Dataset make_synthetic_digits(std::int64_t n_examples, std::uint64_t seed,
                              const std::string& split);

}  // namespace cldl
