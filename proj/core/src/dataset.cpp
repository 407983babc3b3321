#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ramit/pipeline.hpp"

namespace ramit {

namespace {
std::string dirname_of(const std::string& path) {
    auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string() : path.substr(0, pos + 1);
}
}  // namespace

Dataset Dataset::load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset manifest " + path);
    std::ostringstream ss;
    ss << in.rdbuf();

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("manifest JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (!j.is_array()) throw IoError("manifest must be a JSON list of entries");

    std::string base = dirname_of(path);
    Dataset ds;
    for (const auto& item : j) {
        if (!item.is_object() || !item.contains("hq_path"))
            throw IoError("manifest entries need at least hq_path");
        DatasetEntry e;
        e.hq_path = base + item.at("hq_path").get<std::string>();
        if (item.contains("lq_path")) e.lq_path = base + item.at("lq_path").get<std::string>();
        ds.entries.push_back(std::move(e));
    }
    if (ds.entries.empty()) throw EmptyDataset("manifest " + path + " lists no images");
    return ds;
}

void Dataset::load_images() {
    hq_images.clear();
    lq_images.clear();
    for (const auto& e : entries) {
        hq_images.push_back(load_image(e.hq_path));
        lq_images.push_back(e.lq_path.empty() ? ImageBuffer{} : load_image(e.lq_path));
    }
}

NormStats compute_norm_stats(const std::vector<ImageBuffer>& images) {
    if (images.empty()) throw EmptyDataset("no images for normalization statistics");
    std::int64_t channels = images.front().channels;
    std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
    std::vector<double> sumsq(static_cast<std::size_t>(channels), 0.0);
    std::int64_t count = 0;
    for (const auto& img : images) {
        if (img.channels != channels) throw ShapeMismatch("mixed channel counts in dataset");
        for (std::int64_t i = 0; i < img.width * img.height; ++i)
            for (std::int64_t c = 0; c < channels; ++c) {
                double v = img.samples[static_cast<std::size_t>(i * channels + c)] / 255.0;
                sum[static_cast<std::size_t>(c)] += v;
                sumsq[static_cast<std::size_t>(c)] += v * v;
            }
        count += img.width * img.height;
    }
    NormStats stats;
    for (std::int64_t c = 0; c < channels; ++c) {
        double mean = sum[static_cast<std::size_t>(c)] / static_cast<double>(count);
        double var = sumsq[static_cast<std::size_t>(c)] / static_cast<double>(count) - mean * mean;
        stats.mean.push_back(mean);
        stats.std_dev.push_back(std::max(std::sqrt(std::max(var, 0.0)), 1e-6));
    }
    return stats;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream os;
    os << "step,epoch,lr,loss\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.10g,%.10g\n", static_cast<long long>(r.step),
                      static_cast<long long>(r.epoch), r.lr, r.loss);
        os << buf;
    }
    return os.str();
}

}  // namespace ramit
