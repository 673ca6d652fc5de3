#pragma once

#include <string>

#include "bra/tensor.hpp"

namespace bra {

/// Load an input map for the CLI. Accepts binary PPM (P6) and PGM (P5) with
/// 8-bit samples, scaled to [0, 1], and the tensor binary container (rank-3;
/// channel-first files are transposed to (H, W, C) at this boundary).
Tensor<float> read_image(const std::string& path);

/// Write a map as an 8-bit grayscale PGM, min-max normalized.
void write_pgm(const std::string& path, const Tensor<double>& map);

}  // namespace bra
