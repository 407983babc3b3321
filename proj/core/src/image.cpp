#include "ramit/image.hpp"

#include <cctype>
#include <cstring>
#include <fstream>

#include "ramit/checkpoint.hpp"
#include "ramit/errors.hpp"

namespace ramit {

namespace {

// Netpbm token scanner: skips whitespace and '#' comments between header
// fields.
struct HeaderScanner {
    const std::uint8_t* p;
    const std::uint8_t* end;
    const std::string& origin;

    void skip_space_and_comments() {
        while (p < end) {
            if (std::isspace(*p)) {
                ++p;
            } else if (*p == '#') {
                while (p < end && *p != '\n') ++p;
            } else {
                break;
            }
        }
    }

    std::int64_t next_int() {
        skip_space_and_comments();
        if (p >= end || !std::isdigit(*p)) throw CorruptHeader("expected integer in header of " + origin);
        std::int64_t v = 0;
        while (p < end && std::isdigit(*p)) {
            v = v * 10 + (*p - '0');
            if (v > (1 << 30)) throw CorruptHeader("absurd dimension in " + origin);
            ++p;
        }
        return v;
    }
};

}  // namespace

ImageBuffer decode_netpbm(const std::uint8_t* bytes, std::size_t size, const std::string& origin) {
    if (size < 2) throw CorruptHeader("file too short: " + origin);
    char m0 = static_cast<char>(bytes[0]), m1 = static_cast<char>(bytes[1]);
    if (m0 != 'P' || (m1 != '5' && m1 != '6')) {
        if (m0 == 'P' && (m1 == '1' || m1 == '2' || m1 == '3' || m1 == '4'))
            throw UnsupportedFormat("only binary P5/P6 supported: " + origin);
        throw CorruptHeader("not a PGM/PPM file: " + origin);
    }
    ImageBuffer img;
    img.channels = (m1 == '6') ? 3 : 1;

    HeaderScanner sc{bytes + 2, bytes + size, origin};
    img.width = sc.next_int();
    img.height = sc.next_int();
    std::int64_t maxval = sc.next_int();
    if (maxval != 255)
        throw UnsupportedFormat("maxval " + std::to_string(maxval) + " (only 255 supported): " + origin);
    if (img.width <= 0 || img.height <= 0) throw CorruptHeader("bad dimensions in " + origin);
    // exactly one whitespace byte separates the header from the raster
    if (sc.p >= sc.end || !std::isspace(*sc.p)) throw CorruptHeader("missing raster separator in " + origin);
    ++sc.p;

    std::size_t need = static_cast<std::size_t>(img.sample_count());
    std::size_t have = static_cast<std::size_t>(sc.end - sc.p);
    if (have < need)
        throw TruncatedData(origin + ": raster has " + std::to_string(have) + " bytes, needs " +
                            std::to_string(need));
    img.samples.assign(sc.p, sc.p + need);
    return img;
}

ImageBuffer load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_netpbm(bytes.data(), bytes.size(), path);
}

std::vector<std::uint8_t> encode_netpbm(const ImageBuffer& img) {
    if (img.channels != 1 && img.channels != 3) throw UnsupportedFormat("image must have 1 or 3 channels");
    if (static_cast<std::int64_t>(img.samples.size()) != img.sample_count())
        throw ShapeMismatch("image sample count");
    std::string header = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                         std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.samples.begin(), img.samples.end());
    return out;
}

void save_image(const ImageBuffer& img, const std::string& path) {
    std::vector<std::uint8_t> bytes = encode_netpbm(img);
    write_file_atomic(path, bytes.data(), bytes.size());
}

}  // namespace ramit
