#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace seglm::png {

struct Raster {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (gray) or 3 (RGB)
    std::vector<std::uint8_t> data;
};

/// Reads 8-bit gray/RGB/RGBA/palette PNGs; alpha is dropped and palettes expanded.
Raster read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Raster& raster);

}  // namespace seglm::png
