#include "tinyema/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "tinyema/errors.hpp"

namespace tinyema {
namespace {

int max_value_for(int bit_depth, const std::filesystem::path& path) {
    if (bit_depth == 8) return 255;
    if (bit_depth == 16) return 65535;
    throw IoError(path.string(), "unsupported bit depth " + std::to_string(bit_depth));
}

std::uint16_t quantize(double v, int maxval) {
    return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string token;
    int c = in.get();
    while (in) {
        if (c == '#') {
            while (in && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!token.empty()) return token;
        } else {
            token.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return token;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const ImageBuffer& image, int bit_depth) {
    const int maxval = max_value_for(bit_depth, path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << "P5\n" << image.width() << ' ' << image.height() << '\n' << maxval << '\n';
    std::vector<unsigned char> bytes;
    bytes.reserve(image.size() * (bit_depth == 16 ? 2 : 1));
    for (double v : image.pixels()) {
        const std::uint16_t q = quantize(v, maxval);
        if (bit_depth == 16) {
            bytes.push_back(static_cast<unsigned char>(q >> 8));
            bytes.push_back(static_cast<unsigned char>(q & 0xFF));
        } else {
            bytes.push_back(static_cast<unsigned char>(q));
        }
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string(), "write failed");
}

ImageBuffer read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    if (header_token(in) != "P5") throw IoError(path.string(), "not a binary PGM (P5)");
    int width = 0;
    int height = 0;
    int maxval = 0;
    try {
        width = std::stoi(header_token(in));
        height = std::stoi(header_token(in));
        maxval = std::stoi(header_token(in));
    } catch (const std::exception&) {
        throw IoError(path.string(), "malformed PGM header");
    }
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
        throw IoError(path.string(), "invalid PGM dimensions or maxval");
    }
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(n * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw IoError(path.string(), "truncated pixel data");
    }
    std::vector<double> data(n);
    const double inv = 1.0 / maxval;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned v = bytes_per == 2 ? (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
        data[i] = std::min(1.0, v * inv);
    }
    return ImageBuffer(width, height, std::move(data));
}

void write_png(const std::filesystem::path& path, const ImageBuffer& image, int bit_depth) {
    const int maxval = max_value_for(bit_depth, path);
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!file) throw IoError(path.string(), "cannot open for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string(), "libpng initialization failed");
    }
    const std::size_t row_bytes = static_cast<std::size_t>(image.width()) * (bit_depth == 16 ? 2 : 1);
    std::vector<unsigned char> row(row_bytes);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string(), "PNG encoding failed");
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()),
                 bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const std::uint16_t q = quantize(image.at(x, y), maxval);
            if (bit_depth == 16) {
                row[2 * static_cast<std::size_t>(x)] = static_cast<unsigned char>(q >> 8);
                row[2 * static_cast<std::size_t>(x) + 1] = static_cast<unsigned char>(q & 0xFF);
            } else {
                row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(q);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace tinyema
