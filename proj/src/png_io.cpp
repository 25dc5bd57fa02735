#include "autosame/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace autosame::png {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("png: cannot open for reading: " + path);

    png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png_ptr) throw DataError("png: read struct allocation failed");
    png_infop info_ptr = png_create_info_struct(png_ptr);
    if (!info_ptr) {
        png_destroy_read_struct(&png_ptr, nullptr, nullptr);
        throw DataError("png: info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png_ptr))) {
        png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
        throw DataError("png: decode failed: " + path);
    }

    png_init_io(png_ptr, fp.get());
    png_read_info(png_ptr, info_ptr);

    const png_uint_32 w = png_get_image_width(png_ptr, info_ptr);
    const png_uint_32 h = png_get_image_height(png_ptr, info_ptr);
    const int color = png_get_color_type(png_ptr, info_ptr);
    const int depth = png_get_bit_depth(png_ptr, info_ptr);

    if (depth == 16) png_set_strip_16(png_ptr);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
    if (png_get_valid(png_ptr, info_ptr, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png_ptr);
    png_set_strip_alpha(png_ptr);
    png_read_update_info(png_ptr, info_ptr);

    const int channels = png_get_channels(png_ptr, info_ptr);

    Image8 img;
    img.height = static_cast<int>(h);
    img.width = static_cast<int>(w);
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(h) * w * static_cast<std::size_t>(channels));

    std::vector<png_bytep> rows(h);
    for (png_uint_32 r = 0; r < h; ++r)
        rows[r] = img.pixels.data() + static_cast<std::size_t>(r) * w * static_cast<std::size_t>(channels);
    png_read_image(png_ptr, rows.data());
    png_read_end(png_ptr, nullptr);
    png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
    return img;
}

void write(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("png: only 1- or 3-channel images are written");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("png: cannot open for writing: " + path);

    png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png_ptr) throw DataError("png: write struct allocation failed");
    png_infop info_ptr = png_create_info_struct(png_ptr);
    if (!info_ptr) {
        png_destroy_write_struct(&png_ptr, nullptr);
        throw DataError("png: info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png_ptr))) {
        png_destroy_write_struct(&png_ptr, &info_ptr);
        throw DataError("png: encode failed: " + path);
    }

    png_init_io(png_ptr, fp.get());
    png_set_IHDR(png_ptr, info_ptr, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png_ptr, info_ptr);

    std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.height));
    for (int r = 0; r < img.height; ++r)
        rows[static_cast<std::size_t>(r)] =
            img.pixels.data() + static_cast<std::size_t>(r) * img.width * static_cast<std::size_t>(img.channels);
    png_write_rows(png_ptr, const_cast<png_bytepp>(rows.data()),
                   static_cast<png_uint_32>(img.height));
    png_write_end(png_ptr, nullptr);
    png_destroy_write_struct(&png_ptr, &info_ptr);
}

MaskGrid read_mask(const std::string& path) {
    const Image8 img = read(path);
    if (img.channels != 1) throw DataError("mask png must be single-channel: " + path);
    MaskGrid m(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const std::uint8_t v = img.at(r, c);
            if (v != 0 && v != 255)
                throw DataError("mask png has non-binary pixel value " + std::to_string(int(v)) +
                                " in " + path);
            m(r, c) = v == 255 ? 1 : 0;
        }
    return m;
}

void write_mask(const std::string& path, const MaskGrid& mask) {
    Image8 img;
    img.height = static_cast<int>(mask.rows());
    img.width = static_cast<int>(mask.cols());
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) img.at(r, c) = mask(r, c) ? 255 : 0;
    write(path, img);
}

MatrixF read_gray(const std::string& path) {
    const Image8 img = read(path);
    MatrixF m(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            float v = 0.f;
            for (int ch = 0; ch < img.channels; ++ch) v += static_cast<float>(img.at(r, c, ch));
            m(r, c) = v / (255.f * static_cast<float>(img.channels));
        }
    return m;
}

void write_gray(const std::string& path, const MatrixF& img) {
    Image8 out;
    out.height = static_cast<int>(img.rows());
    out.width = static_cast<int>(img.cols());
    out.channels = 1;
    out.pixels.resize(static_cast<std::size_t>(out.height) * out.width);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) {
            const float v = std::min(1.f, std::max(0.f, img(r, c)));
            out.at(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.f));
        }
    write(path, out);
}

}  // namespace autosame::png
