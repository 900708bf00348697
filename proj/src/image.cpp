#include "tinyema/image.hpp"

#include <algorithm>

#include "tinyema/errors.hpp"

namespace tinyema {

ImageBuffer::ImageBuffer(int width, int height, double fill) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
        throw ArgumentError("image extents must be positive");
    }
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

ImageBuffer::ImageBuffer(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width < 1 || height < 1) {
        throw ArgumentError("image extents must be positive");
    }
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ArgumentError("image data length does not match width x height");
    }
}

void ImageBuffer::clamp_unit() noexcept {
    for (double& v : data_) {
        v = std::clamp(v, 0.0, 1.0);
    }
}

}  // namespace tinyema
