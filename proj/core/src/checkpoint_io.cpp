#include "ramit/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ramit/errors.hpp"

namespace ramit {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'M', 'I', 'T', 'C', 'K', 'P'};

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64_be(std::string& out, std::uint64_t v) {
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64_be(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

void write_file_atomic(const std::string& path, const void* bytes, std::size_t size) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(size));
        if (!out) throw IoError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot rename " + tmp + " to " + path);
}

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
    nlohmann::json manifest;
    manifest["format_version"] = data.version;
    nlohmann::json params = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& rec : data.records) {
        nlohmann::json p;
        p["name"] = rec.name;
        p["shape"] = rec.shape;
        p["offset"] = offset;
        params.push_back(std::move(p));
        offset += rec.data.size() * sizeof(float);
    }
    manifest["params"] = std::move(params);
    if (!data.norm.empty()) {
        manifest["norm_stats"] = {{"mean", data.norm.mean}, {"std", data.norm.std_dev}};
    }
    std::string mtext = manifest.dump();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32_le(out, data.version);
    put_u64_be(out, mtext.size());
    out += mtext;
    for (const auto& rec : data.records) {
        // serialize f32 little-endian
        for (float v : rec.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            put_u32_le(out, bits);
        }
    }
    write_file_atomic(path, out.data(), out.size());
}

CheckpointData read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 20) throw IoError("checkpoint too short for header");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("bad checkpoint magic in " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    CheckpointData data;
    data.version = get_u32_le(p + 8);
    if (data.version != 1) throw IoError("unsupported checkpoint version " + std::to_string(data.version));
    std::uint64_t mlen = get_u64_be(p + 12);
    if (20 + mlen > bytes.size()) throw IoError("manifest extends past end of file");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(20, mlen));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }

    const std::size_t blob_start = 20 + static_cast<std::size_t>(mlen);
    const std::size_t blob_size = bytes.size() - blob_start;
    const auto* blob = reinterpret_cast<const unsigned char*>(bytes.data()) + blob_start;

    try {
        std::uint64_t expect_offset = 0;
        for (const auto& jp : manifest.at("params")) {
            CheckpointData::Record rec;
            rec.name = jp.at("name").get<std::string>();
            rec.shape = jp.at("shape").get<Shape>();
            std::uint64_t offset = jp.at("offset").get<std::uint64_t>();
            if (offset != expect_offset)
                throw IoError("record " + rec.name + " offset " + std::to_string(offset) +
                              " is not contiguous (expected " + std::to_string(expect_offset) + ")");
            std::uint64_t count = static_cast<std::uint64_t>(shape_numel(rec.shape));
            if (offset + count * sizeof(float) > blob_size)
                throw IoError("record " + rec.name + " is incomplete: blob holds " +
                              std::to_string(blob_size) + " bytes, record needs bytes [" +
                              std::to_string(offset) + ", " + std::to_string(offset + count * 4) + ")");
            rec.data.resize(count);
            for (std::uint64_t i = 0; i < count; ++i) {
                std::uint32_t bits = get_u32_le(blob + offset + i * 4);
                float v;
                std::memcpy(&v, &bits, sizeof(v));
                rec.data[i] = v;
            }
            expect_offset = offset + count * sizeof(float);
            data.records.push_back(std::move(rec));
        }
        if (manifest.contains("norm_stats")) {
            data.norm.mean = manifest["norm_stats"].at("mean").get<std::vector<double>>();
            data.norm.std_dev = manifest["norm_stats"].at("std").get<std::vector<double>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    return data;
}

}  // namespace ramit
