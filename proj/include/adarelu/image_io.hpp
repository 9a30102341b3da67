#pragma once

#include "adarelu/tensor.hpp"

#include <cstdint>
#include <string>

namespace adarelu {

/// [-1, 1] -> [0, 255], round half up, clamped.
std::uint8_t to_byte(float value);
float from_byte(std::uint8_t value);

/// Writes a (1, 3, H, W) tensor as 8-bit RGB.
void save_png(const Tensor<float>& image, const std::string& path);

/// Reads an 8-bit RGB file into (1, 3, H, W). Any other layout (gray, alpha, palette,
/// 16-bit) is rejected.
Tensor<float> load_png(const std::string& path);

/// Tiles a batch (N, 3, H, W) into a grid image (1, 3, rows*H, cols*W) with `cols` columns.
/// Unused cells are filled with -1.
Tensor<float> tile_grid(const Tensor<float>& batch, Index cols);

}  // namespace adarelu
