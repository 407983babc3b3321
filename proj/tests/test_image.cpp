#include <doctest.h>

#include "ramit/image.hpp"
#include "testutil.hpp"

using namespace ramit;

namespace {
ImageBuffer random_image(std::int64_t w, std::int64_t h, std::int64_t c, std::uint64_t seed) {
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.samples.resize(static_cast<std::size_t>(w * h * c));
    Rng rng(seed);
    for (auto& s : img.samples) s = static_cast<std::uint8_t>(rng.below(256));
    return img;
}
}  // namespace

TEST_CASE("ppm save/load round trip is byte identical") {
    ImageBuffer img = random_image(13, 7, 3, 1);
    std::string path = testutil::temp_path("round.ppm");
    save_image(img, path);
    ImageBuffer back = load_image(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == 3);
    CHECK(back.samples == img.samples);

    // saving the decoded image reproduces the file byte for byte
    std::string path2 = testutil::temp_path("round2.ppm");
    save_image(back, path2);
    CHECK(testutil::read_file_bytes(path) == testutil::read_file_bytes(path2));
}

TEST_CASE("pgm round trip") {
    ImageBuffer img = random_image(5, 9, 1, 2);
    std::string path = testutil::temp_path("round.pgm");
    save_image(img, path);
    ImageBuffer back = load_image(path);
    CHECK(back.channels == 1);
    CHECK(back.samples == img.samples);
}

TEST_CASE("2x1 white ppm encodes to the exact documented bytes") {
    ImageBuffer img;
    img.width = 2;
    img.height = 1;
    img.channels = 3;
    img.samples.assign(6, 0xFF);
    auto bytes = encode_netpbm(img);
    const std::string header = "P6\n2 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 0xFF);
}

TEST_CASE("16-bit maxval is rejected as unsupported") {
    std::string text = "P6\n2 1\n65535\n";
    text.resize(text.size() + 12, '\0');
    CHECK_THROWS_AS(
        (void)decode_netpbm(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), "mem"),
        UnsupportedFormat);
}

TEST_CASE("ascii pnm variants are rejected") {
    std::string text = "P3\n1 1\n255\n255 255 255\n";
    CHECK_THROWS_AS(
        (void)decode_netpbm(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), "mem"),
        UnsupportedFormat);
}

TEST_CASE("header comments are skipped") {
    std::string text = "P5\n# a comment\n2 2\n# another\n255\nabcd";
    ImageBuffer img =
        decode_netpbm(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), "mem");
    CHECK(img.width == 2);
    CHECK(img.height == 2);
    CHECK(img.samples == std::vector<std::uint8_t>{'a', 'b', 'c', 'd'});
}

TEST_CASE("truncated raster reports the shortfall") {
    std::string text = "P6\n2 2\n255\n0123";  // needs 12 bytes, has 4
    CHECK_THROWS_AS(
        (void)decode_netpbm(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), "mem"),
        TruncatedData);
}

TEST_CASE("garbage headers are rejected") {
    std::string text = "Px\n2 2\n255\n";
    CHECK_THROWS_AS(
        (void)decode_netpbm(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), "mem"),
        CorruptHeader);
    std::string missing = "P6\n2\n";
    CHECK_THROWS_AS(
        (void)decode_netpbm(reinterpret_cast<const std::uint8_t*>(missing.data()), missing.size(), "mem"),
        CorruptHeader);
}

TEST_CASE("image/tensor conversion is lossless for 8-bit data") {
    ImageBuffer img = random_image(6, 4, 3, 3);
    Tensor t = image_to_tensor<float>(img);
    CHECK(t.shape() == Shape{3, 4, 6});
    ImageBuffer back = tensor_to_image(t);
    CHECK(back.samples == img.samples);
}

TEST_CASE("tensor_to_image clamps out-of-range values") {
    Tensor t({1, 1, 2}, {-0.5f, 1.5f});
    ImageBuffer img = tensor_to_image(t);
    CHECK(img.samples[0] == 0);
    CHECK(img.samples[1] == 255);
}
