#pragma once

#include "mvs/image.hpp"

#include <filesystem>

namespace mvs {

/// Decode a PNG (8/16-bit) or JPEG file. Pixel values are left in the file's
/// native range; `value_max` records that range (255 or 65535). Grey and
/// alpha channels are expanded/dropped to give RGB.
Image read_image(const std::filesystem::path& path);

/// Encode a [0,1] image as an RGB PNG with the given bit depth (8 or 16).
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

}  // namespace mvs
