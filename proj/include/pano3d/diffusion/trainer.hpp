#pragma once

#include "pano3d/capture_prep.hpp"
#include "pano3d/diffusion/denoiser.hpp"
#include "pano3d/diffusion/loss.hpp"
#include "pano3d/diffusion/schedule.hpp"
#include "pano3d/diffusion/tensor.hpp"
#include "pano3d/errors.hpp"
#include "pano3d/math.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace pano3d::diffusion {

enum class SampleKind { image, video };

struct TrainingSample {
    LatentSequence latent;
    LossMask mask;
    std::vector<double> condition;
    SampleKind kind = SampleKind::video;

    void validate() const {
        if (mask.width() != latent.width || mask.height() != latent.height)
            throw DomainError("training sample: mask does not match latent grid");
        if (kind == SampleKind::image) {
            if (latent.t_len != 1) throw DomainError("training sample: image samples must have T == 1");
            if (mask.count() != static_cast<std::size_t>(mask.width()) * mask.height())
                throw DomainError("training sample: image samples must use an all-ones mask");
        }
    }
};

/// Fixed pseudo-random embeddings for a small vocabulary of scene tags.
class TagVocabulary {
public:
    explicit TagVocabulary(int dim = 8, std::vector<std::string> tags = default_tags()) : dim_(dim), tags_(std::move(tags)) {
        for (const auto& tag : tags_) {
            Rng rng(fnv1a(tag));
            std::vector<double> e(dim);
            for (auto& v : e) v = gaussian(rng) / std::sqrt(std::max(1, dim));
            table_.push_back(std::move(e));
        }
    }

    static std::vector<std::string> default_tags() {
        return {"room", "kitchen", "bedroom", "living", "office", "hall", "checkered", "wood", "ball", "sphere",
                "crate", "box", "lamp", "window", "cozy", "bright", "dark", "red", "green", "blue"};
    }

    int dim() const noexcept { return dim_; }

    /// Mean embedding of the known words in `caption`; zero when none match.
    std::vector<double> embed(const std::string& caption) const {
        std::vector<double> out(dim_, 0.0);
        std::string word;
        int hits = 0;
        auto flush = [&] {
            if (word.empty()) return;
            const auto it = std::find(tags_.begin(), tags_.end(), word);
            if (it != tags_.end()) {
                const auto& e = table_[static_cast<std::size_t>(it - tags_.begin())];
                for (int i = 0; i < dim_; ++i) out[i] += e[i];
                ++hits;
            }
            word.clear();
        };
        for (char ch : caption) {
            if (std::isalpha(static_cast<unsigned char>(ch)))
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            else
                flush();
        }
        flush();
        if (hits > 0)
            for (auto& v : out) v /= hits;
        return out;
    }

private:
    static std::uint64_t fnv1a(const std::string& s) {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    int dim_;
    std::vector<std::string> tags_;
    std::vector<std::vector<double>> table_;
};

/// Draws batches where each item is an image with probability `image_fraction`, else a video.
class MixedBatchSampler {
public:
    MixedBatchSampler(std::vector<TrainingSample> image_pool, std::vector<TrainingSample> video_pool,
                      std::uint64_t seed, double image_fraction = 1.0 / 3.0)
        : images_(std::move(image_pool)), videos_(std::move(video_pool)), rng_(seed), image_fraction_(image_fraction) {
        if (images_.empty() || videos_.empty()) throw DomainError("mixed batch sampler: both pools must be non-empty");
        if (!(image_fraction >= 0.0 && image_fraction <= 1.0)) throw DomainError("image fraction must be in [0,1]");
        for (auto& s : images_) {
            s.kind = SampleKind::image;
            s.mask = LossMask::ones(s.latent.width, s.latent.height);
            s.validate();
        }
        for (auto& s : videos_) {
            s.kind = SampleKind::video;
            s.validate();
        }
    }

    std::vector<TrainingSample> next(int batch_size) {
        if (batch_size < 3) throw DomainError("mixed batch sampler: batch size must be >= 3");
        std::vector<TrainingSample> batch;
        batch.reserve(batch_size);
        std::bernoulli_distribution pick_image(image_fraction_);
        for (int i = 0; i < batch_size; ++i) {
            const auto& pool = pick_image(rng_) ? images_ : videos_;
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            batch.push_back(pool[pick(rng_)]);
        }
        return batch;
    }

private:
    std::vector<TrainingSample> images_;
    std::vector<TrainingSample> videos_;
    Rng rng_;
    double image_fraction_;
};

inline std::vector<TrainingSample> mixed_batch_sampler(const std::vector<TrainingSample>& image_pool,
                                                       const std::vector<TrainingSample>& video_pool, int batch_size,
                                                       std::uint64_t seed, double image_fraction = 1.0 / 3.0) {
    return MixedBatchSampler(image_pool, video_pool, seed, image_fraction).next(batch_size);
}

struct SampleLoss {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d theta
};

/// Masked loss of one sample at a fixed timestep and noise draw, with its parameter gradient.
inline SampleLoss sample_loss_and_grad(const Denoiser& net, const TrainingSample& s, int t, const LatentSequence& eps,
                                       const NoiseSchedule& sched, int patch) {
    const LatentSequence xt = forward_diffuse(s.latent, t, eps, sched);
    Denoiser::Cache cache;
    const TokenGrid pred_tokens = net.forward(patchify(xt, patch), s.condition, t, &cache);
    const MaskedLoss ml = masked_loss(eps, unpatchify(pred_tokens), s.mask);
    SampleLoss out;
    out.loss = ml.value;
    out.grad.assign(net.n_params(), 0.0);
    net.backward(cache, patchify(ml.grad_pred, patch), out.grad);
    return out;
}

struct StepResult {
    double loss = 0.0;  // batch mean, before the update
    double grad_norm = 0.0;
};

/// One gradient-descent step on the batch mean of the masked loss. t ~ U{0..n-1}, eps ~ N(0, I).
inline StepResult train_step(Denoiser& net, const std::vector<TrainingSample>& batch, const NoiseSchedule& sched,
                             double lr, int patch, Rng& rng) {
    if (!(lr >= 0.0)) throw DomainError("train_step: learning rate must be >= 0");
    if (batch.empty()) throw DomainError("train_step: empty batch");
    std::vector<double> grad(net.n_params(), 0.0);
    std::uniform_int_distribution<int> pick_t(0, sched.n_steps() - 1);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        s.validate();
        const int t = pick_t(rng);
        LatentSequence eps(s.latent.t_len, s.latent.channels, s.latent.height, s.latent.width);
        for (auto& v : eps.values) v = gaussian(rng);
        const SampleLoss sl = sample_loss_and_grad(net, s, t, eps, sched, patch);
        if (!std::isfinite(sl.loss)) {
            std::ostringstream msg;
            msg << "non-finite loss at batch item " << i << " (t=" << t << ", latent " << s.latent.shape_string()
                << ", mask include " << s.mask.count() << ")";
            throw TrainingError(msg.str());
        }
        loss += sl.loss;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += sl.grad[k];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    StepResult r;
    r.loss = loss * inv;
    double gn = 0.0;
    auto theta = net.params();
    for (std::size_t k = 0; k < grad.size(); ++k) {
        const double g = grad[k] * inv;
        gn += g * g;
        theta[k] -= lr * g;
    }
    r.grad_norm = std::sqrt(gn);
    if (!std::isfinite(r.grad_norm)) throw TrainingError("non-finite gradient norm");
    return r;
}

/// Area-averaged RGB latent in [-1, 1]; `t_len` frames are picked evenly from `frames`.
inline LatentSequence latent_from_frames(std::span<const ImageF> frames, int t_len, int height, int width) {
    if (frames.empty()) throw DomainError("latent_from_frames: no frames");
    LatentSequence z(t_len, 3, height, width);
    for (int t = 0; t < t_len; ++t) {
        const std::size_t fi = t_len == 1 ? 0 : static_cast<std::size_t>(t) * (frames.size() - 1) / (t_len - 1);
        const ImageF& img = frames[fi];
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const int y0 = y * img.height() / height, y1 = std::max(y0 + 1, (y + 1) * img.height() / height);
                const int x0 = x * img.width() / width, x1 = std::max(x0 + 1, (x + 1) * img.width() / width);
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int yy = y0; yy < y1; ++yy)
                        for (int xx = x0; xx < x1; ++xx) acc += img.at(xx, yy, c);
                    z.at(t, c, y, x) = 2.0 * acc / ((y1 - y0) * (x1 - x0)) - 1.0;
                }
            }
    }
    return z;
}

struct TrainConfig {
    int latent_height = 8;
    int latent_width = 16;
    int latent_frames = 4;
    int patch_size = 4;
    int hidden = 32;
    int hidden_layers = 2;
    int cond_dim = 8;
    int time_dim = 16;
    int n_steps = 1000;
    double final_alpha_bar = 1e-3;
    double lr = 0.05;
    int steps = 300;
    int batch_size = 6;
    double image_fraction = 1.0 / 3.0;
    std::uint64_t seed = 0;

    DenoiserConfig denoiser() const {
        return {3 * patch_size * patch_size, hidden, hidden_layers, cond_dim, time_dim};
    }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.latent_height = j.value("latent_height", c.latent_height);
    c.latent_width = j.value("latent_width", c.latent_width);
    c.latent_frames = j.value("latent_frames", c.latent_frames);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.hidden = j.value("hidden", c.hidden);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.cond_dim = j.value("cond_dim", c.cond_dim);
    c.time_dim = j.value("time_dim", c.time_dim);
    c.n_steps = j.value("n_steps", c.n_steps);
    c.final_alpha_bar = j.value("final_alpha_bar", c.final_alpha_bar);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.image_fraction = j.value("image_fraction", c.image_fraction);
    c.seed = j.value("seed", c.seed);
    if (c.latent_height % c.patch_size || c.latent_width % c.patch_size)
        throw DomainError("train config: patch size must divide latent dims");
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"latent_height", c.latent_height}, {"latent_width", c.latent_width}, {"latent_frames", c.latent_frames},
            {"patch_size", c.patch_size},       {"hidden", c.hidden},             {"hidden_layers", c.hidden_layers},
            {"cond_dim", c.cond_dim},           {"time_dim", c.time_dim},         {"n_steps", c.n_steps},
            {"final_alpha_bar", c.final_alpha_bar}, {"lr", c.lr},                 {"steps", c.steps},
            {"batch_size", c.batch_size},       {"image_fraction", c.image_fraction}, {"seed", c.seed}};
}

// Checkpoint layout: "P3CK", u32 LE header length, JSON header, then n_params f64 LE.
inline constexpr char kCheckpointMagic[4] = {'P', '3', 'C', 'K'};

inline void save_checkpoint(const std::filesystem::path& path, const Denoiser& net, int step,
                            const nlohmann::json& extra = {}) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
    const auto& c = net.config();
    nlohmann::json header{{"token_dim", c.token_dim}, {"hidden", c.hidden}, {"hidden_layers", c.hidden_layers},
                          {"cond_dim", c.cond_dim},   {"time_dim", c.time_dim}, {"n_params", net.n_params()},
                          {"step", step}};
    if (!extra.is_null()) header["extra"] = extra;
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, 4);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(net.params().data()),
              static_cast<std::streamsize>(net.n_params() * sizeof(double)));
}

struct LoadedCheckpoint {
    Denoiser net;
    int step = 0;
    nlohmann::json header;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    std::uint32_t len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw ParseError(path.string(), 0, "bad checkpoint magic");
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    LoadedCheckpoint ck;
    try {
        ck.header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 0, e.what());
    }
    DenoiserConfig c{ck.header.at("token_dim").get<int>(), ck.header.at("hidden").get<int>(),
                     ck.header.at("hidden_layers").get<int>(), ck.header.at("cond_dim").get<int>(),
                     ck.header.at("time_dim").get<int>()};
    ck.net = Denoiser(c);
    ck.step = ck.header.at("step").get<int>();
    if (ck.header.at("n_params").get<std::size_t>() != ck.net.n_params())
        throw ParseError(path.string(), 0, "parameter count does not match dims");
    in.read(reinterpret_cast<char*>(ck.net.params().data()),
            static_cast<std::streamsize>(ck.net.n_params() * sizeof(double)));
    if (!in) throw ParseError(path.string(), 0, "truncated parameter block");
    return ck;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses) {
    std::ofstream out(path);
    out << "step,loss\n";
    out.precision(10);
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

}  // namespace pano3d::diffusion
