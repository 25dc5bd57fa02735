#pragma once

#include "autosame/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace autosame::png {

/// 8-bit image buffer, row-major, channels interleaved (1 = gray, 3 = RGB).
struct Image8 {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int r, int c, int ch = 0) {
        return pixels[static_cast<std::size_t>((r * width + c) * channels + ch)];
    }
    std::uint8_t at(int r, int c, int ch = 0) const {
        return pixels[static_cast<std::size_t>((r * width + c) * channels + ch)];
    }
};

/// Reads any PNG, converted to 8-bit gray or RGB depending on the source.
Image8 read(const std::string& path);

void write(const std::string& path, const Image8& img);

/// Strict binary mask codec: pixels must be exactly 0 or 255.
MaskGrid read_mask(const std::string& path);
void write_mask(const std::string& path, const MaskGrid& mask);

/// Gray float image in [0,1] <-> 8-bit PNG.
MatrixF read_gray(const std::string& path);
void write_gray(const std::string& path, const MatrixF& img);

}  // namespace autosame::png
