#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ramit/image.hpp"
#include "ramit/model.hpp"
#include "ramit/rng.hpp"

namespace ramit {

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

// lq = hq + Normal(0, (sigma/255)^2), elementwise, no clipping; sigma is the
// 8-bit-scale noise level in [0, 50].
template <typename T>
TensorT<T> awgn_degrade(const TensorT<T>& hq, double sigma, Rng& rng) {
    TensorT<T> out = TensorT<T>::zeros(hq.shape());
    T* od = out.mutable_data();
    const T* hd = hq.data();
    const double s = sigma / 255.0;
    for (std::int64_t i = 0; i < hq.numel(); ++i)
        od[i] = hd[i] + static_cast<T>(rng.normal() * s);
    return out;
}

// Block-average downsampling; stand-in LQ source for super-resolution
// training when the dataset ships no LQ files (not the bicubic kernel the
// reference datasets use).
template <typename T>
TensorT<T> box_downsample(const TensorT<T>& hq, std::int64_t r) {
    std::int64_t c = hq.dim(0), h = hq.dim(1), w = hq.dim(2);
    if (h % r != 0 || w % r != 0) throw NotDivisible("box_downsample needs dims divisible by r");
    TensorT<T> out = TensorT<T>::zeros({c, h / r, w / r});
    T* od = out.mutable_data();
    const T* hd = hq.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h / r; ++y)
            for (std::int64_t x = 0; x < w / r; ++x) {
                T acc = T(0);
                for (std::int64_t dy = 0; dy < r; ++dy)
                    for (std::int64_t dx = 0; dx < r; ++dx)
                        acc += hd[(ch * h + y * r + dy) * w + x * r + dx];
                od[(ch * (h / r) + y) * (w / r) + x] = acc / static_cast<T>(r * r);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Dihedral augmentation: k in [0,8) encodes rot90^(k&3) then horizontal flip
// if k & 4. The eight transforms form the symmetry group of the square.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> rot90_ccw(const TensorT<T>& x) {
    std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> out = TensorT<T>::zeros({c, w, h});
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < w; ++i)
            for (std::int64_t j = 0; j < h; ++j)
                od[(ch * w + i) * h + j] = xd[(ch * h + j) * w + (w - 1 - i)];
    return out;
}

template <typename T>
TensorT<T> hflip(const TensorT<T>& x) {
    std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xi = 0; xi < w; ++xi)
                od[(ch * h + y) * w + xi] = xd[(ch * h + y) * w + (w - 1 - xi)];
    return out;
}

template <typename T>
TensorT<T> dihedral_transform(const TensorT<T>& x, int k) {
    TensorT<T> t = x;
    for (int i = 0; i < (k & 3); ++i) t = rot90_ccw(t);
    if (k & 4) t = hflip(t);
    return t;
}

namespace detail {
template <typename T>
std::int64_t pair_scale(const TensorT<T>& hq, const TensorT<T>& lq) {
    std::int64_t r = hq.dim(1) / lq.dim(1);
    if (r < 1 || hq.dim(1) != r * lq.dim(1) || hq.dim(2) != r * lq.dim(2))
        throw MisalignedPair("hq " + shape_str(hq.shape()) + " is not an integer multiple of lq " +
                             shape_str(lq.shape()));
    return r;
}
}  // namespace detail

// Applies one of the 8 dihedral transforms, drawn uniformly, to both images
// so the pair stays pixel-aligned (coordinates scale with r for sr pairs).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> augment_pair(const TensorT<T>& hq, const TensorT<T>& lq, Rng& rng) {
    detail::pair_scale(hq, lq);
    int k = static_cast<int>(rng.below(8));
    return {dihedral_transform(hq, k), dihedral_transform(lq, k)};
}

// Aligned random crop: lq patch p x p at (x0, y0), hq patch r*p x r*p at
// (r*x0, r*y0).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> crop_patch(const TensorT<T>& hq, const TensorT<T>& lq,
                                             std::int64_t p, Rng& rng) {
    std::int64_t r = detail::pair_scale(hq, lq);
    std::int64_t h = lq.dim(1), w = lq.dim(2);
    if (p > h || p > w)
        throw PatchTooLarge("patch " + std::to_string(p) + " exceeds lq " + std::to_string(h) + "x" +
                            std::to_string(w));
    std::int64_t y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - p + 1)));
    std::int64_t x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - p + 1)));
    TensorT<T> lq_patch = narrow(narrow(lq, 1, y0, p), 2, x0, p);
    TensorT<T> hq_patch = narrow(narrow(hq, 1, r * y0, r * p), 2, r * x0, r * p);
    return {hq_patch, lq_patch};
}

// ---------------------------------------------------------------------------
// Evaluation padding: mirror-extend right/bottom to a multiple of m, undo
// with crop_back (scaled by r for super-resolution outputs).
// ---------------------------------------------------------------------------

template <typename T>
struct PaddedT {
    TensorT<T> tensor;
    std::int64_t orig_h = 0, orig_w = 0;
};

template <typename T>
PaddedT<T> pad_to_multiple(const TensorT<T>& x, std::int64_t m = 32) {
    std::int64_t h = x.dim(1), w = x.dim(2);
    std::int64_t nh = (h + m - 1) / m * m, nw = (w + m - 1) / m * m;
    PaddedT<T> out;
    out.orig_h = h;
    out.orig_w = w;
    out.tensor = (nh == h && nw == w) ? x : mirror_pad_hw(x, nh, nw);
    return out;
}

template <typename T>
TensorT<T> crop_back(const TensorT<T>& y, std::int64_t orig_h, std::int64_t orig_w, std::int64_t r = 1) {
    return crop_hw(y, r * orig_h, r * orig_w);
}

// ---------------------------------------------------------------------------
// Quality metrics
// ---------------------------------------------------------------------------

// BT.601 studio-swing luma from RGB in [0,1]; output on the [16, 235] scale.
template <typename T>
TensorT<T> rgb_to_y(const TensorT<T>& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3)
        throw NotRgb("rgb_to_y expects (3,H,W), got " + shape_str(rgb.shape()));
    std::int64_t h = rgb.dim(1), w = rgb.dim(2);
    TensorT<T> out = TensorT<T>::zeros({1, h, w});
    T* od = out.mutable_data();
    const T* d = rgb.data();
    for (std::int64_t i = 0; i < h * w; ++i)
        od[i] = static_cast<T>(16.0 + 65.481 * d[i] + 128.553 * d[h * w + i] + 24.966 * d[2 * h * w + i]);
    return out;
}

template <typename T>
double psnr(const TensorT<T>& a, const TensorT<T>& b, double peak) {
    if (!same_shape(a.shape(), b.shape()))
        throw ShapeMismatch("psnr inputs " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double mse = 0.0;
    const T* ad = a.data();
    const T* bd = b.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(ad[i]) - static_cast<double>(bd[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {
inline std::vector<double> gaussian_window(int n, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = i - (n - 1) / 2.0;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable gaussian filter, valid region only: (H,W) -> (H-n+1, W-n+1).
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img, std::int64_t h,
                                              std::int64_t w, const std::vector<double>& win) {
    std::int64_t n = static_cast<std::int64_t>(win.size());
    std::int64_t ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * ow));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i)
                acc += win[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y * w + x + i)];
            tmp[static_cast<std::size_t>(y * ow + x)] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i)
                acc += win[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y + i) * ow + x)];
            out[static_cast<std::size_t>(y * ow + x)] = acc;
        }
    return out;
}
}  // namespace detail

// SSIM with the standard 11x11 sigma=1.5 gaussian window, K1=0.01, K2=0.03,
// computed on the valid region and averaged over channels.
template <typename T>
double ssim(const TensorT<T>& a, const TensorT<T>& b, double peak) {
    if (!same_shape(a.shape(), b.shape()))
        throw ShapeMismatch("ssim inputs " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.ndim() != 3) throw ShapeMismatch("ssim expects (C,H,W)");
    std::int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
    const int n = 11;
    if (h < n || w < n) throw ShapeMismatch("ssim needs at least 11x11 images");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    auto win = detail::gaussian_window(n, 1.5);

    double total = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        std::vector<double> x(static_cast<std::size_t>(h * w)), y(static_cast<std::size_t>(h * w));
        std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
        const T* ad = a.data() + ch * h * w;
        const T* bd = b.data() + ch * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) {
            x[static_cast<std::size_t>(i)] = static_cast<double>(ad[i]);
            y[static_cast<std::size_t>(i)] = static_cast<double>(bd[i]);
            xx[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
            yy[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
            xy[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
        }
        auto mx = detail::gauss_filter_valid(x, h, w, win);
        auto my = detail::gauss_filter_valid(y, h, w, win);
        auto mxx = detail::gauss_filter_valid(xx, h, w, win);
        auto myy = detail::gauss_filter_valid(yy, h, w, win);
        auto mxy = detail::gauss_filter_valid(xy, h, w, win);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            double vx = mxx[i] - mx[i] * mx[i];
            double vy = myy[i] - my[i] * my[i];
            double cxy = mxy[i] - mx[i] * my[i];
            acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(c);
}

// ---------------------------------------------------------------------------
// Dataset manifest: JSON list of {"hq_path": ...} or
// {"lq_path": ..., "hq_path": ...}; paths relative to the manifest file.
// ---------------------------------------------------------------------------

struct DatasetEntry {
    std::string hq_path;
    std::string lq_path;  // empty => degrade on the fly
};

struct Dataset {
    std::vector<DatasetEntry> entries;
    std::vector<ImageBuffer> hq_images;
    std::vector<ImageBuffer> lq_images;  // aligned with entries; empty buffers when absent

    static Dataset load_manifest(const std::string& path);  // dataset.cpp
    void load_images();

    std::size_t size() const { return entries.size(); }
};

NormStats compute_norm_stats(const std::vector<ImageBuffer>& images);

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

struct ProgressivePhase {
    std::int64_t patch = 64;
    std::int64_t batch = 64;
};

struct TrainSchedule {
    std::int64_t total_epochs = 400;
    std::int64_t warmup_epochs = 20;
    std::vector<std::int64_t> halve_epochs{200, 300, 350, 375};
    std::vector<ProgressivePhase> phases{{64, 64}, {96, 32}, {128, 16}};
    std::vector<std::int64_t> phase_switch_epochs{100, 200};
    double lr_numerator = 0.0004 * 64.0;  // base lr = lr_numerator / batch
    double repeat = 1.0;                  // datapoint repeat factor per epoch
    std::int64_t checkpoint_every = 0;    // epochs between snapshots; 0 = final only

    static TrainSchedule for_task(Task task) {
        TrainSchedule s;
        if (task == Task::sr) {
            s.total_epochs = 500;
            s.halve_epochs = {200, 300, 400, 425, 450, 475};
            s.phases = {{64, 64}};
            s.phase_switch_epochs = {};
        }
        return s;
    }

    const ProgressivePhase& phase_at(std::int64_t epoch) const {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < phase_switch_epochs.size(); ++i)
            if (epoch >= phase_switch_epochs[i] && idx + 1 < phases.size()) idx = i + 1;
        return phases[idx];
    }

    double base_lr() const { return lr_numerator / static_cast<double>(phases.front().batch); }

    // Linear 0 -> base over the warmup epochs, then halved at each listed
    // epoch.
    double lr_at(double fractional_epoch) const {
        double lr = base_lr();
        if (fractional_epoch < static_cast<double>(warmup_epochs))
            return lr * fractional_epoch / static_cast<double>(warmup_epochs);
        for (std::int64_t e : halve_epochs)
            if (fractional_epoch >= static_cast<double>(e)) lr *= 0.5;
        return lr;
    }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TraceRow {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

std::string trace_to_csv(const std::vector<TraceRow>& rows);

struct TrainHooks {
    std::function<bool()> should_stop;                 // polled once per step
    std::function<void(std::int64_t epoch)> on_epoch;  // after each epoch
};

template <typename T>
struct TrainResultT {
    std::vector<TraceRow> rows;
    NormStats stats;
    bool interrupted = false;
};

// One deterministic training run. Per step: sample, degrade (task-specific),
// augment, crop, normalize, forward, L1 on the de-normalized output,
// backward, Adam with lr(t). Every random draw comes from a stream keyed by
// (seed, purpose, item counter), so loading could run ahead of the optimizer
// without changing results.
template <typename T>
TrainResultT<T> train_loop(RamitModelT<T>& model, const Dataset& data, const TrainSchedule& sched,
                           std::uint64_t seed, const TrainHooks* hooks = nullptr) {
    if (data.size() == 0) throw EmptyDataset("training dataset is empty");
    const Task task = model.cfg.task;
    const std::int64_t r = model.cfg.upscale();
    const bool synth_noise = task == Task::color_dn || task == Task::gray_dn;

    // Inputs are normalized with dataset statistics: HQ stats for blind
    // denoising (the LQ distribution depends on sigma), LQ stats otherwise.
    bool all_lq = data.lq_images.size() == data.size();
    for (const auto& img : data.lq_images) all_lq = all_lq && img.sample_count() > 0;
    NormStats stats = compute_norm_stats(synth_noise || !all_lq ? data.hq_images : data.lq_images);

    TrainResultT<T> result;
    result.stats = stats;

    AdamStateT<T> adam;
    adam.reset(model.params);

    std::vector<TensorT<T>> hq_cache, lq_cache;
    for (std::size_t i = 0; i < data.size(); ++i) {
        hq_cache.push_back(image_to_tensor<T>(data.hq_images[i]));
        if (i < data.lq_images.size() && data.lq_images[i].sample_count() > 0)
            lq_cache.push_back(image_to_tensor<T>(data.lq_images[i]));
        else
            lq_cache.push_back(TensorT<T>());
    }

    std::int64_t global_step = 0;
    std::uint64_t item_counter = 0;
    for (std::int64_t epoch = 0; epoch < sched.total_epochs; ++epoch) {
        const ProgressivePhase& phase = sched.phase_at(epoch);
        std::int64_t steps = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(static_cast<double>(data.size()) * sched.repeat /
                                         static_cast<double>(phase.batch)));
        for (std::int64_t s = 0; s < steps; ++s) {
            if (hooks && hooks->should_stop && hooks->should_stop()) {
                result.interrupted = true;
                return result;
            }
            double frac_epoch = static_cast<double>(epoch) +
                                static_cast<double>(s) / static_cast<double>(steps);
            double lr = sched.lr_at(frac_epoch);

            std::vector<std::vector<T>> grad_acc;
            for (const auto& p : model.params.all())
                grad_acc.emplace_back(static_cast<std::size_t>(p.tensor->numel()), T(0));
            double loss_acc = 0.0;

            for (std::int64_t b = 0; b < phase.batch; ++b) {
                std::uint64_t uid = item_counter++;
                std::size_t idx = static_cast<std::size_t>(Rng(seed, "sample", uid).below(data.size()));
                TensorT<T> hq = hq_cache[idx];
                TensorT<T> lq;
                if (synth_noise) {
                    double sigma = Rng(seed, "sigma", uid).uniform(0.0, 50.0);
                    Rng noise(seed, "noise", uid);
                    lq = awgn_degrade(hq, sigma, noise);
                } else if (lq_cache[idx].defined()) {
                    lq = lq_cache[idx];
                } else if (task == Task::sr) {
                    lq = box_downsample(hq, r);
                } else {
                    throw EmptyDataset("task " + std::string(task_name(task)) +
                                       " requires paired lq images in the manifest");
                }
                Rng aug_rng(seed, "augment", uid);
                auto aug = augment_pair(hq, lq, aug_rng);
                Rng crop_rng(seed, "crop", uid);
                auto patch = crop_patch(aug.first, aug.second, phase.patch, crop_rng);

                TapeT<T> tape;
                typename TapeT<T>::Scope scope(tape);
                TensorT<T> lq_norm = normalize_image(patch.second, stats);
                TensorT<T> rc_norm = restore_normalized(model, lq_norm);
                TensorT<T> rc = denormalize_image(rc_norm, stats);
                TensorT<T> loss = mean_all(abs_op(sub(patch.first, rc)));
                loss_acc += static_cast<double>(loss.item());

                GradientsT<T> grads = tape.backward(loss);
                for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
                    TensorT<T> g = grads.grad(*model.params.all()[pi].tensor);
                    const T* gd = g.data();
                    auto& acc = grad_acc[pi];
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += gd[k];
                }
            }

            std::vector<TensorT<T>> grads;
            for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
                auto& acc = grad_acc[pi];
                for (auto& v : acc) v /= static_cast<T>(phase.batch);
                grads.push_back(TensorT<T>(model.params.all()[pi].tensor->shape(), std::move(acc)));
            }
            adam_step(model.params, grads, adam, lr);

            result.rows.push_back(TraceRow{global_step, epoch, lr, loss_acc / static_cast<double>(phase.batch)});
            ++global_step;
        }
        if (hooks && hooks->on_epoch) hooks->on_epoch(epoch);
    }
    return result;
}

// Pad, normalize, run the model, undo both; returns the restored image in
// [0,1] pixel space at the task's output resolution (values clamped by the
// caller when quantizing).
template <typename T>
TensorT<T> restore_image(const RamitModelT<T>& model, const TensorT<T>& lq01, const NormStats& stats) {
    auto padded = pad_to_multiple(lq01, model.cfg.pad_multiple());
    TensorT<T> rc_norm = restore_normalized(model, normalize_image(padded.tensor, stats));
    TensorT<T> rc = denormalize_image(rc_norm, stats);
    return crop_back(rc, padded.orig_h, padded.orig_w, model.cfg.upscale());
}

}  // namespace ramit
