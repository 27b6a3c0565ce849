#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "latta/dataio.hpp"
#include "latta/shift.hpp"

using namespace latta;

namespace {

std::vector<float> random_image(InputShape shape, std::uint64_t seed) {
    Xoshiro256ss rng(seed);
    std::vector<float> img(shape.size());
    for (auto& v : img) {
        v = static_cast<float>(rng.uniform());
    }
    return img;
}

// np.rot90 for a single-channel square image: out[i][j] = in[j][W - 1 - i].
std::vector<float> rot90(const std::vector<float>& in, std::size_t w) {
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < w; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            out[i * w + j] = in[j * w + (w - 1 - i)];
        }
    }
    return out;
}

double mean_of(const std::vector<float>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TEST(Severity, TablesAndNames) {
    EXPECT_EQ(severity_magnitude(ShiftKind::Rotation, 5), 45.0);
    EXPECT_EQ(severity_magnitude(ShiftKind::GaussianNoise, 5), 0.12);
    EXPECT_EQ(severity_magnitude(ShiftKind::Rotation, 1), 9.0);
    EXPECT_EQ(severity_magnitude(ShiftKind::Identity, 3), 0.0);
    EXPECT_THROW(severity_magnitude(ShiftKind::Rotation, 0), std::invalid_argument);
    EXPECT_THROW(severity_magnitude(ShiftKind::Rotation, 6), std::invalid_argument);
    for (auto k : {ShiftKind::Identity, ShiftKind::Rotation, ShiftKind::GaussianNoise, ShiftKind::ShotNoise,
                   ShiftKind::GaussianBlur, ShiftKind::Brightness, ShiftKind::Contrast}) {
        EXPECT_EQ(shift_kind_from_name(shift_kind_name(k)), k);
    }
    EXPECT_THROW(shift_kind_from_name("fog"), std::invalid_argument);
}

TEST(Rotate, ZeroAndFullTurnAreIdentity) {
    const InputShape s{1, 9, 9};
    const auto img = random_image(s, 1);
    EXPECT_EQ(rotate(img, s, 0.0), img);
    EXPECT_EQ(rotate(img, s, 360.0), img);
}

TEST(Rotate, QuarterTurnMatchesRot90) {
    for (std::size_t w : {6u, 7u, 28u}) {
        const InputShape s{1, w, w};
        const auto img = random_image(s, w);
        EXPECT_EQ(rotate(img, s, 90.0), rot90(img, w));
        EXPECT_EQ(rotate(img, s, 180.0), rot90(rot90(img, w), w));
        EXPECT_EQ(rotate(img, s, -90.0), rot90(rot90(rot90(img, w), w), w));
    }
}

TEST(Rotate, OppositeAnglesAlmostInvert) {
    const InputShape s{1, 28, 28};
    std::vector<float> img(s.size(), 0.0f);
    for (std::size_t y = 10; y < 18; ++y) {
        for (std::size_t x = 10; x < 18; ++x) {
            img[y * 28 + x] = 1.0f;
        }
    }
    const auto back = rotate(rotate(img, s, 30.0), s, -30.0);
    EXPECT_NEAR(mean_of(back), mean_of(img), 0.01);
    EXPECT_GT(back[14 * 28 + 14], 0.99f);
}

TEST(Blur, KernelIsNormalizedAndDeltaKeepsMass) {
    for (double sigma : {0.4, 1.0, 2.5}) {
        const auto k = gaussian_kernel(sigma);
        EXPECT_EQ(k.size(), 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
        EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
        EXPECT_DOUBLE_EQ(k.front(), k.back());
    }
    EXPECT_EQ(gaussian_kernel(0.0), std::vector<double>{1.0});

    const InputShape s{1, 15, 15};
    std::vector<float> delta(s.size(), 0.0f);
    delta[7 * 15 + 7] = 1.0f;
    Xoshiro256ss rng(2);
    const auto out = apply_corruption(delta, s, {ShiftKind::GaussianBlur, 5, 0}, rng);
    double sum = 0.0;
    for (float v : out) {
        sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
    EXPECT_LT(out[7 * 15 + 7], 1.0f);
    EXPECT_FLOAT_EQ(out[7 * 15 + 6], out[7 * 15 + 8]);
    EXPECT_FLOAT_EQ(out[6 * 15 + 7], out[7 * 15 + 6]);
}

TEST(GaussianNoise, StandardDeviationMatchesSeverity) {
    const InputShape s{1, 100, 100};
    std::vector<double> values;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const std::vector<float> gray(s.size(), 0.5f);
        Xoshiro256ss rng(k);
        const auto out = apply_corruption(gray, s, {ShiftKind::GaussianNoise, 5, 0}, rng);
        values.insert(values.end(), out.begin(), out.end());
    }
    double mean = 0.0, ss = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    EXPECT_NEAR(sd, 0.12, 0.12 * 0.05);
    EXPECT_NEAR(mean, 0.5, 0.005);
}

TEST(ShotNoise, PreservesMeanIntensity) {
    const InputShape s{1, 100, 100};
    const std::vector<float> gray(s.size(), 0.4f);
    Xoshiro256ss rng(3);
    const auto out = apply_corruption(gray, s, {ShiftKind::ShotNoise, 1, 0}, rng);
    EXPECT_NEAR(mean_of(out), 0.4, 0.01);
}

TEST(PhotometricShifts, ClosedForms) {
    const InputShape s{1, 2, 2};
    const std::vector<float> img{0.0f, 0.25f, 0.75f, 1.0f};
    Xoshiro256ss rng(4);
    const auto bright = apply_corruption(img, s, {ShiftKind::Brightness, 5, 0}, rng);
    EXPECT_EQ(bright, (std::vector<float>{0.5f, 0.75f, 1.0f, 1.0f}));
    const auto contrast = apply_corruption(img, s, {ShiftKind::Contrast, 2, 0}, rng);
    EXPECT_EQ(contrast, (std::vector<float>{0.25f, 0.375f, 0.625f, 0.75f}));
    EXPECT_EQ(apply_corruption(img, s, {ShiftKind::Identity, 5, 0}, rng), img);
}

TEST(Rotation, AngleDrawnUniformlyFromGenerator) {
    const InputShape s{1, 12, 12};
    const auto img = random_image(s, 5);
    double sum = 0.0, lo = 1e9, hi = -1e9;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        Xoshiro256ss rng(static_cast<std::uint64_t>(k));
        Xoshiro256ss copy = rng;
        const double angle = copy.uniform(-45.0, 45.0);
        sum += angle;
        lo = std::min(lo, angle);
        hi = std::max(hi, angle);
        if (k < 20) {
            EXPECT_EQ(apply_corruption(img, s, {ShiftKind::Rotation, 5, 0}, rng), rotate(img, s, angle));
        }
    }
    EXPECT_NEAR(sum / draws, 0.0, 1.5);
    EXPECT_LT(lo, -44.0);
    EXPECT_GT(hi, 44.0);
}

TEST(Corruption, OutputClippedAndInputUntouched) {
    const InputShape s{1, 16, 16};
    for (auto kind : {ShiftKind::Rotation, ShiftKind::GaussianNoise, ShiftKind::ShotNoise, ShiftKind::GaussianBlur,
                      ShiftKind::Brightness, ShiftKind::Contrast}) {
        for (int sev = 1; sev <= 5; ++sev) {
            const auto img = random_image(s, static_cast<std::uint64_t>(sev));
            const auto copy = img;
            Xoshiro256ss rng(6);
            const auto out = apply_corruption(img, s, {kind, sev, 0}, rng);
            ASSERT_EQ(img, copy);
            ASSERT_EQ(out.size(), img.size());
            for (float v : out) {
                ASSERT_GE(v, 0.0f);
                ASSERT_LE(v, 1.0f);
            }
        }
    }
}

TEST(Corruption, RejectsBadInput) {
    const InputShape s{1, 4, 4};
    Xoshiro256ss rng(7);
    const std::vector<float> short_image(3, 0.0f);
    EXPECT_THROW(apply_corruption(short_image, s, {ShiftKind::Brightness, 1, 0}, rng), std::invalid_argument);
    const std::vector<float> ok(16, 0.0f);
    EXPECT_THROW(apply_corruption(ok, s, {ShiftKind::Brightness, 9, 0}, rng), std::invalid_argument);
}

class StreamTest : public ::testing::Test {
protected:
    Dataset data = synth_blobs(103, 4, {1, 8, 8}, 11);
};

TEST_F(StreamTest, IdentityStreamIsAPermutation) {
    const auto stream = make_shift_stream(data, {ShiftKind::Identity, 1, 0}, 10, 3);
    ASSERT_EQ(stream.batches.size(), 10u);
    EXPECT_EQ(stream.sample_count(), 100u);
    std::vector<int> used(data.size(), 0);
    for (const auto& b : stream.batches) {
        ASSERT_EQ(b.size(), 10u);
        for (std::size_t j = 0; j < b.size(); ++j) {
            const std::vector<float> img(b.images.begin() + j * 64, b.images.begin() + (j + 1) * 64);
            bool found = false;
            for (std::size_t i = 0; i < data.size() && !found; ++i) {
                const auto ref = data.image(i);
                if (!used[i] && data.labels[i] == b.labels[j] && std::equal(ref.begin(), ref.end(), img.begin())) {
                    used[i] = 1;
                    found = true;
                }
            }
            ASSERT_TRUE(found);
        }
    }
}

TEST_F(StreamTest, DeterministicPerSeed) {
    const ShiftSpec spec{ShiftKind::GaussianNoise, 3, 0};
    EXPECT_EQ(make_shift_stream(data, spec, 16, 5), make_shift_stream(data, spec, 16, 5));
    EXPECT_NE(make_shift_stream(data, spec, 16, 5).batches, make_shift_stream(data, spec, 16, 6).batches);
    ShiftSpec other = spec;
    other.seed = 1;
    EXPECT_NE(make_shift_stream(data, spec, 16, 5).batches, make_shift_stream(data, other, 16, 5).batches);
}

TEST_F(StreamTest, BatchSizeDoesNotChangePerImageShift) {
    const ShiftSpec spec{ShiftKind::Rotation, 5, 0};
    const auto a = make_shift_stream(data, spec, 5, 8);
    const auto b = make_shift_stream(data, spec, 25, 8);
    std::vector<float> fa, fb;
    for (const auto& x : a.batches) {
        fa.insert(fa.end(), x.images.begin(), x.images.end());
    }
    for (const auto& x : b.batches) {
        fb.insert(fb.end(), x.images.begin(), x.images.end());
    }
    EXPECT_EQ(fa, fb);
}

TEST_F(StreamTest, FileRoundTrip) {
    const auto stream = make_shift_stream(data, {ShiftKind::ShotNoise, 2, 4}, 32, 9);
    const auto path = std::filesystem::temp_directory_path() / "latta_stream_test.bin";
    save_stream(path, stream);
    EXPECT_EQ(load_stream(path), stream);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    EXPECT_THROW(load_stream(path), StreamFileError);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOTASTREAM......";
    }
    EXPECT_THROW(load_stream(path), StreamFileError);
    std::filesystem::remove(path);
    EXPECT_THROW(load_stream(path), StreamFileError);
}

TEST_F(StreamTest, RejectsBadArguments) {
    EXPECT_THROW(make_shift_stream(data, {ShiftKind::Rotation, 5, 0}, 0, 1), std::invalid_argument);
    EXPECT_THROW(make_shift_stream(Dataset{}, {ShiftKind::Rotation, 5, 0}, 4, 1), std::invalid_argument);
}
