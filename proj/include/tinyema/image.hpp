#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tinyema {

/// Single-channel raster with intensities in [0,1], row-major.
class ImageBuffer {
public:
    ImageBuffer() = default;
    /// Throws ArgumentError when either extent is zero.
    ImageBuffer(int width, int height, double fill = 0.0);
    ImageBuffer(int width, int height, std::vector<double> data);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double at(int x, int y) const { return data_[index(x, y)]; }
    double& at(int x, int y) { return data_[index(x, y)]; }

    std::span<const double> pixels() const noexcept { return data_; }
    std::span<double> pixels() noexcept { return data_; }

    void clamp_unit() noexcept;

    bool operator==(const ImageBuffer&) const = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Region {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    static Region full(const ImageBuffer& image) {
        return {0, 0, image.width(), image.height()};
    }
    int area() const noexcept { return (x1 - x0) * (y1 - y0); }
};

}  // namespace tinyema
