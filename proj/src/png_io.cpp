#include "seglm/png_io.hpp"

#include <png.h>

#include <cstring>

#include "seglm/errors.hpp"

namespace seglm::png {

Raster read(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw DataError("cannot read PNG " + path.string() + ": " + image.message);
    }
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Raster r;
    r.width = static_cast<int>(image.width);
    r.height = static_cast<int>(image.height);
    r.channels = gray ? 1 : 3;
    r.data.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, r.data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return r;
}

void write(const std::filesystem::path& path, const Raster& raster) {
    if (raster.channels != 1 && raster.channels != 3) throw UsageError("PNG writer supports 1 or 3 channels");
    if (raster.data.size() != static_cast<std::size_t>(raster.width) * raster.height * raster.channels) {
        throw UsageError("PNG raster size mismatch");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, raster.data.data(), 0, nullptr)) {
        throw DataError("cannot write PNG " + path.string() + ": " + image.message);
    }
}

}  // namespace seglm::png
