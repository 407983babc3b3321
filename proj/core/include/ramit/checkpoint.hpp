#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramit/tensor.hpp"

namespace ramit {

// Per-channel normalization applied to model inputs and undone on outputs.
// Persisted with checkpoints so restore matches training.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std_dev;

    bool empty() const { return mean.empty(); }

    static NormStats identity(std::int64_t channels) {
        NormStats s;
        s.mean.assign(static_cast<std::size_t>(channels), 0.0);
        s.std_dev.assign(static_cast<std::size_t>(channels), 1.0);
        return s;
    }
};

// On-disk checkpoint, decoded. Layout: 8-byte magic "RAMITCKP", 4-byte
// little-endian version, 8-byte big-endian manifest length, UTF-8 JSON
// manifest (ordered parameter records with byte offsets), then a raw
// little-endian f32 blob.
struct CheckpointData {
    struct Record {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };
    std::uint32_t version = 1;
    std::vector<Record> records;
    NormStats norm;
};

CheckpointData read_checkpoint_file(const std::string& path);
void write_checkpoint_file(const std::string& path, const CheckpointData& data);

// Atomic write used for every artifact the tools produce (temp file +
// rename).
void write_file_atomic(const std::string& path, const void* bytes, std::size_t size);

}  // namespace ramit
