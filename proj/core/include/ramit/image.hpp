#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramit/tensor.hpp"

namespace ramit {

// 8-bit raster image, interleaved row-major samples. channels is 1 (gray,
// PGM P5) or 3 (RGB, PPM P6); maxval is always 255.
struct ImageBuffer {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::int64_t channels = 0;
    std::vector<std::uint8_t> samples;

    std::int64_t sample_count() const { return width * height * channels; }
};

ImageBuffer load_image(const std::string& path);
void save_image(const ImageBuffer& img, const std::string& path);

// Encode without touching the filesystem (exposed for tests).
std::vector<std::uint8_t> encode_netpbm(const ImageBuffer& img);
ImageBuffer decode_netpbm(const std::uint8_t* bytes, std::size_t size, const std::string& origin);

// [0,255] bytes <-> planar (C,H,W) floats in [0,1].
template <typename T>
TensorT<T> image_to_tensor(const ImageBuffer& img) {
    TensorT<T> t = TensorT<T>::zeros({img.channels, img.height, img.width});
    T* d = t.mutable_data();
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x)
            for (std::int64_t c = 0; c < img.channels; ++c)
                d[(c * img.height + y) * img.width + x] =
                    static_cast<T>(img.samples[static_cast<std::size_t>((y * img.width + x) * img.channels + c)]) /
                    T(255);
    return t;
}

template <typename T>
ImageBuffer tensor_to_image(const TensorT<T>& t) {
    if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
        throw ShapeMismatch("tensor_to_image expects (1|3,H,W), got " + shape_str(t.shape()));
    ImageBuffer img;
    img.channels = t.dim(0);
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.samples.resize(static_cast<std::size_t>(img.sample_count()));
    const T* d = t.data();
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x)
            for (std::int64_t c = 0; c < img.channels; ++c) {
                T v = d[(c * img.height + y) * img.width + x];
                v = std::min(T(1), std::max(T(0), v));
                img.samples[static_cast<std::size_t>((y * img.width + x) * img.channels + c)] =
                    static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
            }
    return img;
}

}  // namespace ramit
