#include "pano3d/diffusion/denoiser.hpp"
#include "pano3d/diffusion/loss.hpp"
#include "pano3d/diffusion/schedule.hpp"
#include "pano3d/diffusion/tensor.hpp"
#include "pano3d/diffusion/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace pano3d;
using namespace pano3d::diffusion;

namespace {

LatentSequence random_latent(int t, int c, int h, int w, Rng& rng) {
    LatentSequence x(t, c, h, w);
    for (auto& v : x.values) v = gaussian(rng);
    return x;
}

LossMask random_mask(int w, int h, Rng& rng) {
    LossMask m(w, h);
    std::bernoulli_distribution b(0.6);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(x, y, b(rng));
    return m;
}

TrainingSample make_sample(int t, int h, int w, Rng& rng, SampleKind kind = SampleKind::video) {
    TrainingSample s;
    s.latent = random_latent(t, 3, h, w, rng);
    s.mask = kind == SampleKind::image ? LossMask::ones(w, h) : random_mask(w, h, rng);
    s.condition = TagVocabulary(8).embed("a checkered room with a red ball");
    s.kind = kind;
    return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST(Patchify, Shapes) {
    Rng rng(0);
    const TokenGrid g = patchify(random_latent(1, 3, 8, 8, rng), 4);
    EXPECT_EQ(g.k, 4);
    EXPECT_EQ(g.d, 48);
    const TokenGrid whole = patchify(random_latent(5, 2, 6, 6, rng), 6);
    EXPECT_EQ(whole.k, 5);
    EXPECT_EQ(whole.d, 2 * 6 * 6);
}

TEST(Patchify, RoundTripExactForRandomShapes) {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        const int p = 1 + static_cast<int>(rng() % 4);
        const int t = 1 + static_cast<int>(rng() % 3), c = 1 + static_cast<int>(rng() % 4);
        const int h = p * (1 + static_cast<int>(rng() % 4)), w = p * (1 + static_cast<int>(rng() % 4));
        const LatentSequence x = random_latent(t, c, h, w, rng);
        const TokenGrid g = patchify(x, p);
        EXPECT_EQ(g.k, t * (h / p) * (w / p));
        EXPECT_EQ(g.d, c * p * p);
        EXPECT_EQ(unpatchify(g), x);
    }
}

TEST(Patchify, IndivisibleRejected) {
    EXPECT_THROW(patchify(LatentSequence(1, 3, 8, 6), 4), DomainError);
}

TEST(ForwardDiffuse, Limits) {
    Rng rng(2);
    const LatentSequence x0 = random_latent(2, 3, 4, 4, rng), eps = random_latent(2, 3, 4, 4, rng);
    const NoiseSchedule sched = NoiseSchedule::linear(1000);
    EXPECT_EQ(sched.alpha_bar[0], 1.0);
    EXPECT_EQ(forward_diffuse(x0, 0, eps, sched), x0);
    const LatentSequence zero(2, 3, 4, 4);
    const LatentSequence xt = forward_diffuse(x0, 500, zero, sched);
    for (std::size_t i = 0; i < x0.size(); ++i)
        EXPECT_DOUBLE_EQ(xt.values[i], std::sqrt(sched.alpha_bar[500]) * x0.values[i]);
    EXPECT_THROW(forward_diffuse(x0, 0, LatentSequence(1, 3, 4, 4), sched), DomainError);
    EXPECT_THROW(forward_diffuse(x0, 1000, eps, sched), DomainError);
}

TEST(ForwardDiffuse, UnitVarianceMonteCarlo) {
    Rng rng(3);
    const NoiseSchedule sched = NoiseSchedule::linear(1000);
    const LatentSequence x0 = random_latent(1, 1, 316, 317, rng), eps = random_latent(1, 1, 316, 317, rng);
    for (int t : {1, 250, 700, 999}) {
        const LatentSequence xt = forward_diffuse(x0, t, eps, sched);
        double mean = 0, sq = 0;
        for (double v : xt.values) {
            mean += v;
            sq += v * v;
        }
        mean /= xt.size();
        const double var = sq / xt.size() - mean * mean;
        EXPECT_NEAR(var, 1.0, 0.05) << "t=" << t;
    }
}

TEST(ForwardDiffuse, AffineScaling) {
    Rng rng(4);
    const NoiseSchedule sched = NoiseSchedule::linear(100);
    const LatentSequence x0 = random_latent(1, 2, 3, 3, rng), eps = random_latent(1, 2, 3, 3, rng);
    LatentSequence sx = x0, se = eps;
    for (auto& v : sx.values) v *= 2.5;
    for (auto& v : se.values) v *= 2.5;
    const auto a = forward_diffuse(sx, 40, se, sched), b = forward_diffuse(x0, 40, eps, sched);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], 2.5 * b.values[i], 1e-12);
}

TEST(Schedule, StrictlyDecreasingInUnitInterval) {
    const NoiseSchedule s = NoiseSchedule::linear(1000, 1e-3);
    for (int t = 1; t < s.n_steps(); ++t) {
        EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
        EXPECT_GT(s.alpha_bar[t], 0.0);
    }
}

TEST(MaskedLoss, HandExample) {
    LatentSequence truth(1, 1, 1, 2), pred(1, 1, 1, 2);
    truth.values = {1.0, 2.0};
    LossMask m(2, 1);
    m.set(1, 0, false);
    const MaskedLoss l = masked_loss(truth, pred, m);
    EXPECT_DOUBLE_EQ(l.value, 1.0);
    EXPECT_EQ(l.grad_pred.values[1], 0.0);
}

TEST(MaskedLoss, FullMaskEqualsMse) {
    Rng rng(5);
    const LatentSequence a = random_latent(3, 3, 8, 8, rng), b = random_latent(3, 3, 8, 8, rng);
    EXPECT_EQ(masked_loss(a, b, LossMask::ones(8, 8)).value, mse(a, b));
}

TEST(MaskedLoss, EmptyMaskIsZeroWithZeroGradient) {
    Rng rng(6);
    const LatentSequence a = random_latent(2, 3, 4, 4, rng), b = random_latent(2, 3, 4, 4, rng);
    const MaskedLoss l = masked_loss(a, b, LossMask::zeros(4, 4));
    EXPECT_EQ(l.value, 0.0);
    for (double g : l.grad_pred.values) EXPECT_EQ(g, 0.0);
}

TEST(MaskedLoss, GradientExactlyZeroOnMaskedElements) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const LatentSequence a = random_latent(4, 3, 6, 10, rng), b = random_latent(4, 3, 6, 10, rng);
        const LossMask m = random_mask(10, 6, rng);
        const MaskedLoss l = masked_loss(a, b, m);
        EXPECT_EQ(l.included, m.count() * 12);
        for (int t = 0; t < 4; ++t)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 6; ++y)
                    for (int x = 0; x < 10; ++x)
                        if (!m.at(x, y)) ASSERT_EQ(l.grad_pred.at(t, c, y, x), 0.0);
    }
}

TEST(MaskedLoss, GradientMatchesFiniteDifference) {
    Rng rng(8);
    const LatentSequence a = random_latent(2, 2, 3, 3, rng);
    LatentSequence b = random_latent(2, 2, 3, 3, rng);
    const LossMask m = random_mask(3, 3, rng);
    const MaskedLoss l = masked_loss(a, b, m);
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double keep = b.values[i];
        b.values[i] = keep + 1e-6;
        const double up = masked_loss(a, b, m).value;
        b.values[i] = keep - 1e-6;
        const double dn = masked_loss(a, b, m).value;
        b.values[i] = keep;
        EXPECT_NEAR(l.grad_pred.values[i], (up - dn) / 2e-6, 1e-7);
    }
}

TEST(MaskedLoss, ShapeMismatch) {
    EXPECT_THROW(masked_loss(LatentSequence(1, 1, 2, 2), LatentSequence(1, 1, 2, 3), LossMask::ones(2, 2)), DomainError);
    EXPECT_THROW(masked_loss(LatentSequence(1, 1, 2, 2), LatentSequence(1, 1, 2, 2), LossMask::ones(3, 2)), DomainError);
}

TEST(ResizeMask, IdentityAtSameSize) {
    Rng rng(9);
    const LossMask m = random_mask(7, 5, rng);
    EXPECT_EQ(resize_mask_nearest(m, 5, 7), m);
}

TEST(ResizeMask, TwoByTwoToFourByFour) {
    LossMask m(2, 2);
    m.set(1, 0, false);
    m.set(0, 1, false);
    const LossMask r = resize_mask_nearest(m, 4, 4);
    const int expect[4][4] = {{1, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 1, 1}, {0, 0, 1, 1}};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) EXPECT_EQ(r.at(x, y), expect[y][x]) << x << "," << y;
}

TEST(ResizeMask, StaysBinaryWhenDownsampling) {
    Rng rng(10);
    const LossMask r = resize_mask_nearest(random_mask(704, 352, rng), 22, 44);
    for (auto b : r.bits()) EXPECT_TRUE(b == 0 || b == 1);
    EXPECT_THROW(resize_mask_nearest(r, 0, 4), DomainError);
}

TEST(MixedBatch, ImageFractionNearOneThird) {
    Rng rng(11);
    std::vector<TrainingSample> images{make_sample(1, 4, 4, rng, SampleKind::image)};
    std::vector<TrainingSample> videos{make_sample(3, 4, 4, rng)};
    MixedBatchSampler sampler(images, videos, 123);
    int n_image = 0, n_total = 0;
    for (int b = 0; b < 10000; ++b)
        for (const auto& s : sampler.next(3)) {
            n_image += s.kind == SampleKind::image;
            ++n_total;
        }
    ASSERT_EQ(n_total, 30000);
    const double frac = static_cast<double>(n_image) / n_total;
    EXPECT_GE(frac, 0.32);
    EXPECT_LE(frac, 0.35);
}

TEST(MixedBatch, DeterministicAndValid) {
    Rng rng(12);
    std::vector<TrainingSample> images{make_sample(1, 4, 8, rng, SampleKind::image),
                                       make_sample(1, 4, 8, rng, SampleKind::image)};
    images[1].mask = random_mask(8, 4, rng);  // sampler resets image masks to all ones
    std::vector<TrainingSample> videos{make_sample(3, 4, 8, rng), make_sample(2, 4, 8, rng)};
    const auto a = mixed_batch_sampler(images, videos, 3, 77);
    const auto b = mixed_batch_sampler(images, videos, 3, 77);
    ASSERT_EQ(a.size(), 3u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].latent, b[i].latent);
        EXPECT_EQ(a[i].mask.width(), a[i].latent.width);
        EXPECT_EQ(a[i].mask.height(), a[i].latent.height);
        if (a[i].kind == SampleKind::image) EXPECT_EQ(a[i].mask.count(), 32u);
    }
    EXPECT_THROW(mixed_batch_sampler({}, videos, 3, 1), DomainError);
    EXPECT_THROW(mixed_batch_sampler(images, videos, 2, 1), DomainError);
}

TEST(Denoiser, OutputShapeMatchesInputOverRandomConfigs) {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const int p = 1 + static_cast<int>(rng() % 3);
        const int t = 1 + static_cast<int>(rng() % 3), c = 1 + static_cast<int>(rng() % 3);
        const int h = p * (1 + static_cast<int>(rng() % 3)), w = p * (1 + static_cast<int>(rng() % 3));
        DenoiserConfig cfg{c * p * p, 4 + static_cast<int>(rng() % 8), 1 + static_cast<int>(rng() % 3),
                           static_cast<int>(rng() % 4), 2 * static_cast<int>(rng() % 4)};
        const Denoiser net(cfg, trial);
        const LatentSequence x = random_latent(t, c, h, w, rng);
        std::vector<double> cond(cfg.cond_dim, 0.3);
        const LatentSequence y = unpatchify(net.forward(patchify(x, p), cond, 17));
        EXPECT_TRUE(y.same_shape(x));
    }
}

TEST(Denoiser, ParameterGradientsMatchFiniteDifferences) {
    Rng rng(14);
    const int p = 4;
    Denoiser net({3 * p * p, 12, 1, 8, 8}, 99);
    const TrainingSample s = make_sample(1, 8, 8, rng);
    const NoiseSchedule sched = NoiseSchedule::linear(1000);
    const LatentSequence eps = random_latent(1, 3, 8, 8, rng);
    const int t = 321;
    const SampleLoss ref = sample_loss_and_grad(net, s, t, eps, sched, p);
    const double h = 1e-4;
    double worst = 0.0;
    auto theta = net.params();
    for (std::size_t k = 0; k < net.n_params(); ++k) {
        const double keep = theta[k];
        theta[k] = keep + h;
        const double up = sample_loss_and_grad(net, s, t, eps, sched, p).loss;
        theta[k] = keep - h;
        const double dn = sample_loss_and_grad(net, s, t, eps, sched, p).loss;
        theta[k] = keep;
        worst = std::max(worst, rel_err(ref.grad[k], (up - dn) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(Denoiser, ResidualStackGradientsMatchFiniteDifferences) {
    Rng rng(15);
    const int p = 2;
    Denoiser net({3 * p * p, 6, 3, 4, 6}, 5);
    TrainingSample s = make_sample(2, 4, 4, rng);
    s.condition = {0.1, -0.2, 0.3, 0.05};
    const NoiseSchedule sched = NoiseSchedule::linear(50);
    const LatentSequence eps = random_latent(2, 3, 4, 4, rng);
    const SampleLoss ref = sample_loss_and_grad(net, s, 20, eps, sched, p);
    auto theta = net.params();
    for (std::size_t k = 0; k < net.n_params(); ++k) {
        const double keep = theta[k];
        theta[k] = keep + 1e-5;
        const double up = sample_loss_and_grad(net, s, 20, eps, sched, p).loss;
        theta[k] = keep - 1e-5;
        const double dn = sample_loss_and_grad(net, s, 20, eps, sched, p).loss;
        theta[k] = keep;
        ASSERT_LT(rel_err(ref.grad[k], (up - dn) / 2e-5), 1e-3) << "param " << k;
    }
}

TEST(TrainStep, ZeroLearningRateLeavesThetaBitExact) {
    Rng rng(16);
    Denoiser net({48, 16, 2, 8, 8}, 3);
    const std::vector<double> before(net.params().begin(), net.params().end());
    std::vector<TrainingSample> batch{make_sample(2, 8, 8, rng), make_sample(1, 8, 8, rng, SampleKind::image)};
    Rng step_rng(1);
    train_step(net, batch, NoiseSchedule::linear(), 0.0, 4, step_rng);
    const std::vector<double> after(net.params().begin(), net.params().end());
    EXPECT_EQ(before, after);
}

TEST(TrainStep, MemorisesSingleSample) {
    Rng rng(17);
    Denoiser net({48, 32, 2, 8, 16}, 4);
    TrainingSample s = make_sample(1, 8, 8, rng, SampleKind::image);
    const std::vector<TrainingSample> batch{s};
    const NoiseSchedule sched = NoiseSchedule::linear();
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        Rng fixed(2024);  // same timestep and noise every step
        const double loss = train_step(net, batch, sched, 0.05, 4, fixed).loss;
        if (step == 0) first = loss;
        last = loss;
    }
    EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
}

TEST(TrainStep, NonFiniteLossIsTrainingError) {
    Rng rng(18);
    Denoiser net({48, 8, 1, 8, 8}, 1);
    TrainingSample s = make_sample(1, 8, 8, rng, SampleKind::image);
    s.latent.values[3] = std::numeric_limits<double>::infinity();
    Rng step_rng(0);
    EXPECT_THROW(train_step(net, {s}, NoiseSchedule::linear(), 0.1, 4, step_rng), TrainingError);
}

TEST(Checkpoint, RoundTrip) {
    Denoiser net({48, 8, 2, 8, 8}, 11);
    const auto path = std::filesystem::temp_directory_path() / "pano3d_ck.bin";
    save_checkpoint(path, net, 42);
    const LoadedCheckpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.step, 42);
    ASSERT_EQ(ck.net.n_params(), net.n_params());
    EXPECT_TRUE(std::equal(net.params().begin(), net.params().end(), ck.net.params().begin()));
}

TEST(TagVocabulary, KnownWordsOnly) {
    TagVocabulary vocab(8);
    const auto a = vocab.embed("A checkered ROOM!");
    const auto b = vocab.embed("room checkered");
    EXPECT_EQ(a, b);
    const auto none = vocab.embed("zzz qqq");
    for (double v : none) EXPECT_EQ(v, 0.0);
}
