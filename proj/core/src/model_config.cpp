#include "ramit/model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ramit {

const char* task_name(Task t) {
    switch (t) {
        case Task::sr: return "sr";
        case Task::color_dn: return "color_dn";
        case Task::gray_dn: return "gray_dn";
        case Task::lle: return "lle";
        case Task::derain: return "derain";
    }
    return "sr";
}

Task task_from_name(const std::string& name) {
    if (name == "sr") return Task::sr;
    if (name == "color_dn") return Task::color_dn;
    if (name == "gray_dn") return Task::gray_dn;
    if (name == "lle") return Task::lle;
    if (name == "derain") return Task::derain;
    throw BadConfig("unknown task \"" + name + "\"");
}

namespace {

MobiVariSpec mobivari_from_json(const nlohmann::json& j) {
    MobiVariSpec spec;
    spec.groups = j.at("groups").get<std::int64_t>();
    spec.expansion = j.at("expansion").get<double>();
    return spec;
}

}  // namespace

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw BadConfig("config JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    ModelConfig cfg;
    try {
        if (j.contains("C")) cfg.channels = j.at("C").get<std::int64_t>();
        if (j.contains("depths")) {
            auto v = j.at("depths").get<std::vector<std::int64_t>>();
            if (v.size() != 4) throw BadConfig("depths must list 4 stages");
            std::copy(v.begin(), v.end(), cfg.depths.begin());
        }
        if (j.contains("heads")) {
            auto v = j.at("heads").get<std::vector<std::int64_t>>();
            if (v.size() != 4) throw BadConfig("heads must list 4 stages");
            std::copy(v.begin(), v.end(), cfg.heads.begin());
        }
        if (j.contains("chsa_ratio")) cfg.chsa_ratio = j.at("chsa_ratio").get<double>();
        if (j.contains("window")) cfg.window = j.at("window").get<std::int64_t>();
        if (j.contains("task")) cfg.task = task_from_name(j.at("task").get<std::string>());
        if (j.contains("scale")) cfg.scale = j.at("scale").get<std::int64_t>();
        if (j.contains("helper_enabled") && !j.at("helper_enabled").is_null())
            cfg.helper_enabled = j.at("helper_enabled").get<bool>();
        if (j.contains("ffn_ratio")) cfg.ffn_ratio = j.at("ffn_ratio").get<double>();
        if (j.contains("mobivari")) cfg.mobivari = mobivari_from_json(j.at("mobivari"));
        if (j.contains("fusion_mobivari") && !j.at("fusion_mobivari").is_null())
            cfg.fusion_mobivari = mobivari_from_json(j.at("fusion_mobivari"));
    } catch (const nlohmann::json::exception& e) {
        throw BadConfig(std::string("config JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string ModelConfig::to_json_text() const {
    nlohmann::json j;
    j["C"] = channels;
    j["depths"] = depths;
    j["heads"] = heads;
    j["chsa_ratio"] = chsa_ratio;
    j["window"] = window;
    j["task"] = task_name(task);
    if (task == Task::sr) j["scale"] = scale;
    if (helper_enabled.has_value()) j["helper_enabled"] = *helper_enabled;
    j["ffn_ratio"] = ffn_ratio;
    j["mobivari"] = {{"groups", mobivari.groups}, {"expansion", mobivari.expansion}};
    if (fusion_mobivari.has_value())
        j["fusion_mobivari"] = {{"groups", fusion_mobivari->groups},
                                {"expansion", fusion_mobivari->expansion}};
    return j.dump(2) + "\n";
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    auto slim = [&cfg](std::array<std::int64_t, 4> depths, MobiVariSpec fusion) {
        cfg.channels = 48;
        cfg.depths = depths;
        cfg.fusion_mobivari = fusion;
    };
    if (name == "sr_x2" || name == "sr_x3" || name == "sr_x4") {
        cfg.task = Task::sr;
        cfg.scale = name.back() - '0';
    } else if (name == "slim_sr_x2" || name == "slim_sr_x3" || name == "slim_sr_x4") {
        cfg.task = Task::sr;
        cfg.scale = name.back() - '0';
        slim({8, 2, 2, 8}, MobiVariSpec{1, 2.0});
    } else if (name == "color_dn") {
        cfg.task = Task::color_dn;
    } else if (name == "gray_dn") {
        cfg.task = Task::gray_dn;
    } else if (name == "lle") {
        cfg.task = Task::lle;
    } else if (name == "slim_lle") {
        cfg.task = Task::lle;
        slim({4, 2, 2, 4}, MobiVariSpec{3, 1.2});
    } else if (name == "derain") {
        cfg.task = Task::derain;
    } else {
        throw BadConfig("unknown preset \"" + name + "\"");
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Budget accounting
// ---------------------------------------------------------------------------

std::int64_t count_params(const ModelConfig& cfg) {
    RamitModelT<float> model(cfg);
    return model.params.scalar_count();
}

namespace {

std::int64_t mobivari_macs(std::int64_t c_in, std::int64_t c_out, const MobiVariSpec& spec,
                           std::int64_t h, std::int64_t w) {
    std::int64_t ce = mobivari_expanded_channels(c_in, spec);
    std::int64_t n = h * w;
    return ce * (c_in / spec.groups) * n + 9 * ce * n + ce * c_out * n;
}

}  // namespace

MacBreakdown count_mult_adds_breakdown(const ModelConfig& cfg, std::int64_t hq_w, std::int64_t hq_h) {
    cfg.validate();
    std::int64_t r = cfg.upscale();
    std::int64_t lq_h = hq_h / r, lq_w = hq_w / r;
    std::int64_t mul = cfg.pad_multiple();
    std::int64_t h = (lq_h + mul - 1) / mul * mul;
    std::int64_t w = (lq_w + mul - 1) / mul * mul;

    const std::int64_t c = cfg.channels;
    const std::int64_t hidden = cfg.hidden();
    MacBreakdown mb;

    mb.conv += 9 * cfg.in_channels() * c * h * w;  // shallow 3x3

    const std::array<std::int64_t, 4> sh{h, h / 2, h / 4, h};
    const std::array<std::int64_t, 4> sw{w, w / 2, w / 4, w};
    for (int s = 0; s < 4; ++s) {
        auto si = static_cast<std::size_t>(s);
        std::int64_t n = sh[si] * sw[si];
        std::int64_t per_block_core =
            dramit_core_macs(sh[si], sw[si], c, cfg.window, cfg.heads[si], cfg.heads_ch(s));
        std::int64_t per_block_conv =
            mobivari_macs(c, c, cfg.mobivari, sh[si], sw[si]) + n * (c * hidden + hidden * c);
        mb.attention_core += cfg.depths[si] * per_block_core;
        mb.conv += cfg.depths[si] * per_block_conv;
    }

    mb.conv += mobivari_macs(4 * c, c, cfg.mobivari, h / 2, w / 2);  // downsize 1
    mb.conv += mobivari_macs(4 * c, c, cfg.mobivari, h / 4, w / 4);  // downsize 2
    mb.conv += 2 * mobivari_macs(cfg.fusion_in_channels(), c, cfg.fusion_spec(), h, w);  // bottleneck + H-RAMi
    mb.conv += 2 * mobivari_macs(c, c, cfg.mobivari, h, w);  // reconstruction MobiVari pair
    mb.conv += 9 * c * (cfg.out_channels() * r * r) * h * w;  // reconstruction conv (pre-shuffle)
    return mb;
}

}  // namespace ramit
