#include "pano3d/capture_prep.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace pano3d;

namespace {

LossMask random_mask(int w, int h, Rng& rng, double p_include = 0.7) {
    LossMask m(w, h);
    std::bernoulli_distribution b(p_include);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(x, y, b(rng));
    return m;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("pano3d_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(ChunkVideo, DefaultVideoLength) {
    // floor(1500 / 128) = 11
    EXPECT_EQ(chunk_windows(1500, 128, 128).size(), 11u);
}

TEST(ChunkVideo, ExactAndShort) {
    EXPECT_EQ(chunk_windows(128, 128, 128).size(), 1u);
    EXPECT_TRUE(chunk_windows(100, 128, 128).empty());
    EXPECT_THROW(chunk_windows(100, 0, 1), DomainError);
    EXPECT_THROW(chunk_windows(100, 4, 0), DomainError);
}

TEST(ChunkVideo, DisjointGapFreeCoverage) {
    for (std::size_t n : {0u, 7u, 128u, 300u, 1500u}) {
        std::vector<int> frames(n);
        std::iota(frames.begin(), frames.end(), 0);
        const auto clips = chunk_video(std::span<const int>(frames), 32, 32);
        std::size_t expect = 0;
        for (const auto& c : clips) {
            ASSERT_EQ(c.size(), 32u);
            for (int f : c) ASSERT_EQ(static_cast<std::size_t>(f), expect++);
        }
        EXPECT_EQ(expect, (n / 32) * 32);
    }
}

TEST(ChunkVideo, OverlappingStride) {
    const auto w = chunk_windows(10, 4, 2);
    ASSERT_EQ(w.size(), 4u);
    EXPECT_EQ(w.back().begin, 6u);
}

TEST(MergeMasks, IdempotentAndConservative) {
    Rng rng(1);
    const LossMask a = random_mask(16, 8, rng);
    const LossMask same[] = {a, a};
    EXPECT_EQ(merge_masks(same), a);

    LossMask inc = LossMask::ones(2, 1), exc = LossMask::ones(2, 1);
    exc.set(0, 0, false);
    const LossMask pair[] = {inc, exc};
    const LossMask m = merge_masks(pair);
    EXPECT_EQ(m.at(0, 0), 0);
    EXPECT_EQ(m.at(1, 0), 1);
}

TEST(MergeMasks, AllOnes) {
    std::vector<LossMask> masks(128, LossMask::ones(8, 4));
    EXPECT_EQ(merge_masks(masks).count(), 32u);
}

TEST(MergeMasks, CommutativeAssociative) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const LossMask a = random_mask(9, 5, rng), b = random_mask(9, 5, rng), c = random_mask(9, 5, rng);
        const LossMask ab[] = {a, b}, ba[] = {b, a};
        EXPECT_EQ(merge_masks(ab), merge_masks(ba));
        const LossMask ab_c[] = {merge_masks(ab), c};
        const LossMask bc[] = {b, c};
        const LossMask a_bc[] = {a, merge_masks(bc)};
        EXPECT_EQ(merge_masks(ab_c), merge_masks(a_bc));
    }
}

TEST(MergeMasks, Errors) {
    EXPECT_THROW(merge_masks(std::span<const LossMask>{}), DomainError);
    const LossMask bad[] = {LossMask::ones(4, 4), LossMask::ones(4, 3)};
    EXPECT_THROW(merge_masks(bad), DomainError);
}

TEST(BottomBand, ZeroFractionIsIdentity) {
    Rng rng(3);
    const LossMask a = random_mask(20, 10, rng);
    EXPECT_EQ(apply_bottom_band(a, 0.0), a);
}

TEST(BottomBand, DefaultResolutionRows) {
    // ceil(0.125 * 352) = 44
    const LossMask m = apply_bottom_band(LossMask::ones(704, 352), 0.125);
    for (int y = 0; y < 352; ++y) EXPECT_EQ(m.at(100, y), y < 352 - 44 ? 1 : 0) << y;
    EXPECT_EQ(m.count(), 704u * (352 - 44));
}

TEST(BottomBand, AllZeroStaysZero) {
    EXPECT_EQ(apply_bottom_band(LossMask::zeros(8, 4), 0.5).count(), 0u);
}

TEST(BottomBand, IdempotentAndMonotone) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const LossMask a = random_mask(13, 11, rng);
        const double f = uniform(rng, 0.0, 0.9);
        const LossMask once = apply_bottom_band(a, f);
        EXPECT_EQ(apply_bottom_band(once, f), once);
        EXPECT_LE(apply_bottom_band(a, std::min(0.99, f + 0.05)).count(), once.count());
    }
    EXPECT_THROW(apply_bottom_band(LossMask::ones(2, 2), 1.0), DomainError);
}

TEST(AttachCaption, VerbatimStripped) {
    CaptureClip clip;
    clip.id = "clip_0000";
    const CaptionSource src{{"clip_0000", "  a cozy living room \n"}};
    EXPECT_EQ(attach_caption(clip, src).caption, "a cozy living room");
}

TEST(AttachCaption, MissingOrEmptyRejected) {
    CaptureClip clip;
    clip.id = "clip_0001";
    EXPECT_THROW(attach_caption(clip, {}), MissingMetadataError);
    EXPECT_THROW(attach_caption(clip, {{"clip_0001", "   "}}), MissingMetadataError);
}

TEST(MaskPng, ThresholdPolarity) {
    const auto dir = temp_dir("maskpng");
    std::vector<std::uint8_t> bytes{0, 127, 128, 255};
    png::write_u8(dir / "m.png", 4, 1, 1, bytes);
    const LossMask m = read_mask_png(dir / "m.png");
    EXPECT_EQ(m.at(0, 0), 0);
    EXPECT_EQ(m.at(1, 0), 0);
    EXPECT_EQ(m.at(2, 0), 1);
    EXPECT_EQ(m.at(3, 0), 1);
}

TEST(ScanVideoDir, BuildsCaptionedClipsWithMergedMasks) {
    const auto dir = temp_dir("scan");
    const int w = 16, h = 8;
    for (int f = 0; f < 10; ++f) {
        png::write(dir / frame_filename(f), ImageF(w, h, 3, 0.5f));
        LossMask m = LossMask::ones(w, h);
        m.set(f % w, 0, false);
        write_mask_png(dir / mask_filename(f), m);
    }
    std::ofstream(dir / "captions.json") << R"({"clip_0000": "first", "clip_0001": " second "})";
    ScanOptions opt;
    opt.clip_len = 4;
    opt.stride = 4;
    opt.bottom_band = 0.25;
    const auto clips = scan_video_dir(dir, opt);
    ASSERT_EQ(clips.size(), 2u);
    EXPECT_EQ(clips[1].caption, "second");
    EXPECT_EQ(clips[1].first_frame, 4u);
    // Frames 0..3 exclude (0..3, 0); bottom 2 rows removed.
    EXPECT_EQ(clips[0].merged_mask.count(), static_cast<std::size_t>(w * (h - 2) - 4));
    EXPECT_EQ(clip_manifest(clips)["clips"].size(), 2u);
}

TEST(ScanVideoDir, MissingCaptionRejectsClip) {
    const auto dir = temp_dir("scan_missing");
    for (int f = 0; f < 4; ++f) png::write(dir / frame_filename(f), ImageF(8, 4, 3, 0.1f));
    std::ofstream(dir / "captions.json") << R"({"other": "x"})";
    ScanOptions opt;
    opt.clip_len = 4;
    EXPECT_THROW(scan_video_dir(dir, opt), MissingMetadataError);
}

TEST(CaptureClip, DefaultDuration) {
    CaptureClip clip;
    clip.frames.resize(128);
    clip.fps = 12.0;
    EXPECT_NEAR(clip.duration_s(), 10.6667, 1e-4);
    EXPECT_EQ(clip_manifest({clip})["clips"][0]["duration_s"].get<double>(), 10.67);
}
