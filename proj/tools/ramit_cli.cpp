// Command-line surface: train, restore, count, gradcheck, metrics,
// attribution. Machine-readable results go to stdout as JSON lines;
// diagnostics go to stderr. Exit codes are stable and documented in the
// README.

#include <atomic>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ramit/gradcheck.hpp"
#include "ramit/image.hpp"
#include "ramit/model.hpp"
#include "ramit/pipeline.hpp"
#include "ramit/threads.hpp"

namespace {

constexpr int kExitGradcheckFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitImageIo = 4;
constexpr int kExitMetrics = 5;
constexpr int kExitDataset = 6;
constexpr int kExitRegion = 7;
constexpr int kExitUsage = 64;

volatile std::sig_atomic_t g_interrupted = 0;
void handle_sigint(int) { g_interrupted = 1; }

struct KeyValue {
    std::string key;
    std::string value;
};

std::vector<KeyValue> parse_overrides(const std::vector<std::string>& raw) {
    std::vector<KeyValue> out;
    for (const auto& item : raw) {
        auto pos = item.find('=');
        if (pos == std::string::npos)
            throw ramit::BadConfig("override \"" + item + "\" is not key=value");
        out.push_back(KeyValue{item.substr(0, pos), item.substr(pos + 1)});
    }
    return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& s) {
    std::vector<std::int64_t> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto pos = s.find(',', start);
        std::string tok = s.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
        if (!tok.empty()) out.push_back(std::stoll(tok));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

// Applies key=value overrides to the model config and schedule. Unknown keys
// are errors.
void apply_overrides(const std::vector<KeyValue>& kvs, ramit::ModelConfig& cfg,
                     ramit::TrainSchedule* sched) {
    for (const auto& kv : kvs) {
        if (kv.key == "C") cfg.channels = std::stoll(kv.value);
        else if (kv.key == "window") cfg.window = std::stoll(kv.value);
        else if (kv.key == "scale") cfg.scale = std::stoll(kv.value);
        else if (kv.key == "task") cfg.task = ramit::task_from_name(kv.value);
        else if (kv.key == "chsa_ratio") cfg.chsa_ratio = std::stod(kv.value);
        else if (kv.key == "ffn_ratio") cfg.ffn_ratio = std::stod(kv.value);
        else if (kv.key == "helper_enabled") cfg.helper_enabled = kv.value == "true" || kv.value == "1";
        else if (kv.key == "depths") {
            auto v = parse_int_list(kv.value);
            if (v.size() != 4) throw ramit::BadConfig("depths override needs 4 values");
            std::copy(v.begin(), v.end(), cfg.depths.begin());
        } else if (kv.key == "heads") {
            auto v = parse_int_list(kv.value);
            if (v.size() != 4) throw ramit::BadConfig("heads override needs 4 values");
            std::copy(v.begin(), v.end(), cfg.heads.begin());
        } else if (kv.key == "fusion_groups") {
            ramit::MobiVariSpec spec = cfg.fusion_spec();
            spec.groups = std::stoll(kv.value);
            cfg.fusion_mobivari = spec;
        } else if (kv.key == "fusion_expansion") {
            ramit::MobiVariSpec spec = cfg.fusion_spec();
            spec.expansion = std::stod(kv.value);
            cfg.fusion_mobivari = spec;
        } else if (sched && kv.key == "total_epochs") sched->total_epochs = std::stoll(kv.value);
        else if (sched && kv.key == "warmup_epochs") sched->warmup_epochs = std::stoll(kv.value);
        else if (sched && kv.key == "halve_epochs") sched->halve_epochs = parse_int_list(kv.value);
        else if (sched && kv.key == "patch") {
            for (auto& p : sched->phases) p.patch = std::stoll(kv.value);
        } else if (sched && kv.key == "batch_size") {
            for (auto& p : sched->phases) p.batch = std::stoll(kv.value);
        } else if (sched && kv.key == "progressive") {
            if (kv.value == "false" || kv.value == "0") {
                sched->phases = {sched->phases.front()};
                sched->phase_switch_epochs.clear();
            }
        } else if (sched && kv.key == "repeat") sched->repeat = std::stod(kv.value);
        else if (sched && kv.key == "checkpoint_every") sched->checkpoint_every = std::stoll(kv.value);
        else throw ramit::BadConfig("unknown override key \"" + kv.key + "\"");
    }
    cfg.validate();
}

bool parse_wxh(const std::string& s, std::int64_t& w, std::int64_t& h) {
    auto pos = s.find('x');
    if (pos == std::string::npos) return false;
    try {
        w = std::stoll(s.substr(0, pos));
        h = std::stoll(s.substr(pos + 1));
    } catch (...) {
        return false;
    }
    return w > 0 && h > 0;
}

bool parse_region(const std::string& s, ramit::Region& r) {
    auto v = parse_int_list(s);
    if (v.size() != 4) return false;
    r = ramit::Region{v[0], v[1], v[2], v[3]};
    return true;
}

int cmd_count(const std::string& config_path, const std::string& hq,
              const std::vector<std::string>& overrides) {
    ramit::ModelConfig cfg;
    try {
        cfg = ramit::ModelConfig::from_json_file(config_path);
        apply_overrides(parse_overrides(overrides), cfg, nullptr);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }
    std::int64_t w = 1280, h = 720;
    if (!hq.empty() && !parse_wxh(hq, w, h)) {
        std::cerr << "bad --hq, expected WxH\n";
        return kExitUsage;
    }
    auto mb = ramit::count_mult_adds_breakdown(cfg, w, h);
    nlohmann::json out;
    out["task"] = ramit::task_name(cfg.task);
    out["hq"] = std::to_string(w) + "x" + std::to_string(h);
    out["params"] = ramit::count_params(cfg);
    out["mult_adds"] = mb.total();
    out["mult_adds_attention_core"] = mb.attention_core;
    out["mult_adds_conv"] = mb.conv;
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_restore(const std::string& config_path, const std::string& ckpt, const std::string& in_path,
                const std::string& out_path, const std::vector<std::string>& overrides) {
    ramit::ModelConfig cfg;
    try {
        cfg = ramit::ModelConfig::from_json_file(config_path);
        apply_overrides(parse_overrides(overrides), cfg, nullptr);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }
    ramit::RamitModel model(cfg);
    ramit::NormStats stats;
    try {
        stats = ramit::load_checkpoint(model, ckpt);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitCheckpoint;
    }
    if (stats.empty()) stats = ramit::NormStats::identity(cfg.in_channels());
    try {
        ramit::ImageBuffer img = ramit::load_image(in_path);
        ramit::Tensor lq = ramit::image_to_tensor<float>(img);
        if (lq.dim(0) != cfg.in_channels())
            throw ramit::IoError("image has " + std::to_string(lq.dim(0)) + " channels, task needs " +
                                 std::to_string(cfg.in_channels()));
        ramit::Tensor restored = ramit::restore_image(model, lq, stats);
        ramit::save_image(ramit::tensor_to_image(restored), out_path);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitImageIo;
    }
    return 0;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed, const std::string& corrupt) {
    if (scope == "ops" || scope == "all") {
        auto reports = ramit::gradcheck::run_op_suite(seed, 10, 1e-3, corrupt);
        bool ok = true;
        for (const auto& r : reports) {
            std::printf("%-18s worst_rel_err %.3e %s\n", r.op.c_str(), r.worst,
                        r.pass ? "ok" : "FAIL");
            ok = ok && r.pass;
        }
        if (!ok) {
            for (const auto& r : reports)
                if (!r.pass) std::cerr << "gradcheck failed for op " << r.op << "\n";
            return kExitGradcheckFail;
        }
    }
    if (scope == "model" || scope == "all") {
        auto rep = ramit::gradcheck::run_model_check(seed, 1e-2);
        std::printf("model              worst_rel_err %.3e (%s) %s\n", rep.worst,
                    rep.worst_param.c_str(), rep.pass ? "ok" : "FAIL");
        if (!rep.pass) {
            std::cerr << "gradcheck failed for model parameter " << rep.worst_param << "\n";
            return kExitGradcheckFail;
        }
    }
    return 0;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path, const std::string& mode) {
    ramit::ImageBuffer a, b;
    try {
        a = ramit::load_image(a_path);
        b = ramit::load_image(b_path);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitImageIo;
    }
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        std::cerr << "image sizes differ: " << a.width << "x" << a.height << "c" << a.channels
                  << " vs " << b.width << "x" << b.height << "c" << b.channels << "\n";
        return kExitMetrics;
    }
    double psnr_v = 0.0, ssim_v = 0.0;
    try {
        ramit::Tensor ta = ramit::image_to_tensor<float>(a);
        ramit::Tensor tb = ramit::image_to_tensor<float>(b);
        if (mode == "y") {
            if (a.channels != 3) {
                std::cerr << "mode y needs RGB inputs (Y conversion requires RGB)\n";
                return kExitMetrics;
            }
            ramit::Tensor ya = ramit::rgb_to_y(ta), yb = ramit::rgb_to_y(tb);
            psnr_v = ramit::psnr(ya, yb, 255.0);
            ssim_v = ramit::ssim(ya, yb, 255.0);
        } else {
            psnr_v = ramit::psnr(ta, tb, 1.0);
            ssim_v = ramit::ssim(ta, tb, 1.0);
        }
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitMetrics;
    }
    char buf[128];
    if (std::isinf(psnr_v))
        std::snprintf(buf, sizeof(buf), "{\"psnr\":\"inf\",\"ssim\":%.4f}", ssim_v);
    else
        std::snprintf(buf, sizeof(buf), "{\"psnr\":%.4f,\"ssim\":%.4f}", psnr_v, ssim_v);
    std::cout << buf << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& ckpt_out,
              const std::string& trace_out, std::uint64_t seed,
              const std::vector<std::string>& overrides) {
    ramit::ModelConfig cfg;
    ramit::TrainSchedule sched;
    try {
        cfg = ramit::ModelConfig::from_json_file(config_path);
        sched = ramit::TrainSchedule::for_task(cfg.task);
        apply_overrides(parse_overrides(overrides), cfg, &sched);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }

    ramit::Dataset data;
    try {
        data = ramit::Dataset::load_manifest(data_path);
        data.load_images();
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitDataset;
    }

    ramit::RamitModel model(cfg);
    model.init_weights(seed);

    std::signal(SIGINT, handle_sigint);
    ramit::TrainHooks hooks;
    hooks.should_stop = [] { return g_interrupted != 0; };

    ramit::TrainResultT<float> result;
    try {
        result = ramit::train_loop(model, data, sched, seed, &hooks);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitDataset;
    }

    // checkpoint and trace land atomically even on interrupt
    ramit::save_checkpoint(model, result.stats, ckpt_out);
    std::string csv = ramit::trace_to_csv(result.rows);
    ramit::write_file_atomic(trace_out, csv.data(), csv.size());
    if (result.interrupted) std::cerr << "interrupted; partial trace and checkpoint written\n";

    if (!result.rows.empty()) {
        nlohmann::json out;
        out["steps"] = result.rows.size();
        out["first_loss"] = result.rows.front().loss;
        out["final_loss"] = result.rows.back().loss;
        std::cout << out.dump() << "\n";
    }
    return 0;
}

int cmd_attribution(const std::string& config_path, const std::string& ckpt, const std::string& in_path,
                    const std::string& out_path, const std::string& region_str,
                    const std::vector<std::string>& overrides) {
    ramit::ModelConfig cfg;
    try {
        cfg = ramit::ModelConfig::from_json_file(config_path);
        apply_overrides(parse_overrides(overrides), cfg, nullptr);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }
    ramit::Region region;
    if (!parse_region(region_str, region)) {
        std::cerr << "bad --region, expected x,y,w,h\n";
        return kExitUsage;
    }
    ramit::RamitModel model(cfg);
    ramit::NormStats stats;
    try {
        stats = ramit::load_checkpoint(model, ckpt);
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitCheckpoint;
    }
    if (stats.empty()) stats = ramit::NormStats::identity(cfg.in_channels());
    try {
        ramit::ImageBuffer img = ramit::load_image(in_path);
        ramit::Tensor lq = ramit::image_to_tensor<float>(img);
        ramit::Tensor heat = ramit::attribution_map(model, lq, region, stats);
        ramit::Tensor plane = ramit::reshape(heat, {1, heat.dim(0), heat.dim(1)});
        ramit::save_image(ramit::tensor_to_image(plane), out_path);
    } catch (const ramit::RegionOutOfBounds& e) {
        std::cerr << e.what() << "\n";
        return kExitRegion;
    } catch (const ramit::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitImageIo;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    (void)ramit::worker_thread_cap();

    CLI::App app{"RAMiT lightweight image restoration"};
    app.require_subcommand(1);

    std::string config, ckpt, in_path, out_path, data_path, trace_path, ref_path;
    std::string hq = "1280x720", mode = "rgb", scope = "ops", region, corrupt;
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;

    auto* count = app.add_subcommand("count", "parameter and Mult-Adds budget");
    count->add_option("--config", config, "model config JSON")->required();
    count->add_option("--hq", hq, "high-quality resolution WxH (default 1280x720)");
    count->add_option("--override", overrides, "config overrides key=value");

    auto* restore = app.add_subcommand("restore", "restore one image");
    restore->add_option("--config", config)->required();
    restore->add_option("--ckpt", ckpt)->required();
    restore->add_option("--in", in_path)->required();
    restore->add_option("--out", out_path)->required();
    restore->add_option("--override", overrides);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    grad->add_option("--scope", scope, "ops | model | all");
    grad->add_option("--seed", seed);
    grad->add_option("--corrupt", corrupt, "test fixture: break the named op's backward");

    auto* metrics = app.add_subcommand("metrics", "PSNR/SSIM between two images");
    metrics->add_option("--in", in_path)->required();
    metrics->add_option("--ref", ref_path)->required();
    metrics->add_option("--mode", mode, "rgb | y");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config)->required();
    train->add_option("--data", data_path, "dataset manifest JSON")->required();
    train->add_option("--ckpt", ckpt, "checkpoint output path")->required();
    train->add_option("--trace", trace_path, "loss trace CSV output path")->required();
    train->add_option("--seed", seed);
    train->add_option("--override", overrides, "config/schedule overrides key=value");

    auto* attr = app.add_subcommand("attribution", "gradient attribution heatmap");
    attr->add_option("--config", config)->required();
    attr->add_option("--ckpt", ckpt)->required();
    attr->add_option("--in", in_path)->required();
    attr->add_option("--out", out_path)->required();
    attr->add_option("--region", region, "x,y,w,h in output coordinates")->required();
    attr->add_option("--override", overrides);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (count->parsed()) return cmd_count(config, hq, overrides);
        if (restore->parsed()) return cmd_restore(config, ckpt, in_path, out_path, overrides);
        if (grad->parsed()) return cmd_gradcheck(scope, seed, corrupt);
        if (metrics->parsed()) return cmd_metrics(in_path, ref_path, mode);
        if (train->parsed()) return cmd_train(config, data_path, ckpt, trace_path, seed, overrides);
        if (attr->parsed()) return cmd_attribution(config, ckpt, in_path, out_path, region, overrides);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 70;  // internal error
    }
    return kExitUsage;
}
