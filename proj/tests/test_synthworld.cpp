#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "darn/error.hpp"
#include "darn/ops.hpp"
#include "darn/rng.hpp"
#include "darn/synth.hpp"
#include "doctest.h"

using namespace darn;
namespace fs = std::filesystem;

namespace {

SceneConfig scenes(std::size_t count, double complex_fraction = 0.5, std::uint64_t seed = 11) {
    SceneConfig sc;
    sc.global_seed = seed;
    sc.count = count;
    sc.complex_fraction = complex_fraction;
    return sc;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double l1_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return s / static_cast<double>(a.numel());
}

}  // namespace

TEST_SUITE("generate") {
    TEST_CASE("ranges and shapes") {
        const SampleBatch b = generate(scenes(32));
        CHECK(b.images.shape() == Shape{32, 3, 32, 32});
        CHECK(b.labels.size() == 32 * 32 * 32);
        for (double v : b.images.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (auto l : b.labels.data) CHECK(l < 3);
    }

    TEST_CASE("complex_fraction endpoints") {
        for (auto t : generate(scenes(40, 0.0)).tags) CHECK(t == ComplexityTag::Simple);
        for (auto t : generate(scenes(40, 1.0)).tags) CHECK(t == ComplexityTag::Complex);
    }

    TEST_CASE("regeneration is bit-identical") {
        const SampleBatch a = generate(scenes(16)), b = generate(scenes(16));
        CHECK(values(a.images) == values(b.images));
        CHECK(a.labels.data == b.labels.data);
        CHECK(a.sample_seeds == b.sample_seeds);
    }

    TEST_CASE("sample i depends only on (seed, i)") {
        SceneConfig tail = scenes(4);
        tail.first_index = 12;
        const SampleBatch whole = generate(scenes(16)), part = generate(tail);
        const std::size_t img = 3 * 32 * 32;
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(part.sample_seeds[j] == mix_seed(11, 12 + j));
            CHECK(std::equal(part.images.data().begin() + j * img, part.images.data().begin() + (j + 1) * img,
                             whole.images.data().begin() + (12 + j) * img));
            CHECK(part.tags[j] == whole.tags[12 + j]);
        }
    }

    TEST_CASE("splitmix64 reference values") {
        // First outputs of the published splitmix64 generator seeded with 0.
        CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
        CHECK(splitmix64(0x9E3779B97F4A7C15ULL) == 0x6E789E6AA1B965F4ULL);
    }

    TEST_CASE("complex scenes carry more boundary pixels") {
        const SampleBatch b = generate(scenes(256));
        const std::vector<double> d = boundary_density(b.labels);
        double s = 0, c = 0;
        std::size_t ns = 0, nc = 0;
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (b.tags[i] == ComplexityTag::Simple) {
                s += d[i];
                ++ns;
            } else {
                c += d[i];
                ++nc;
            }
        }
        REQUIRE(ns > 0);
        REQUIRE(nc > 0);
        CHECK(c / nc > s / ns);
    }

    TEST_CASE("boundary oracle on a hand-made mask") {
        // 4x4 with a single foreground pixel at (1,1): it and its 4 neighbours are boundary pixels.
        LabelMask m{1, 4, 4, std::vector<std::uint8_t>(16)};
        m.data[5] = 1;
        CHECK(boundary_density(m)[0] == 5.0 / 16.0);
    }

    TEST_CASE("every class keeps at least 2% of the pixels") {
        const SampleBatch b = generate(scenes(256));
        std::vector<double> count(3, 0.0);
        for (auto l : b.labels.data) count[l] += 1.0;
        for (double c : count) CHECK(c / static_cast<double>(b.labels.size()) >= 0.02);
    }

    TEST_CASE("simple scenes are noisier than complex ones") {
        CHECK(kSimpleNoise == 0.1);
        CHECK(kComplexNoise == 0.02);
    }

    TEST_CASE("geometry and config errors") {
        SceneConfig sc = scenes(2);
        sc.height = 24;
        CHECK_THROWS_AS(generate(sc), GeometryError);
        sc = scenes(2);
        sc.complex_fraction = 1.5;
        CHECK_THROWS_AS(generate(sc), ConfigError);
    }

    TEST_CASE("select keeps rows in order") {
        const SampleBatch b = generate(scenes(8));
        const SampleBatch s = select(b, {5, 1});
        CHECK(s.size() == 2);
        CHECK(s.sample_seeds[0] == b.sample_seeds[5]);
        CHECK(s.tags[1] == b.tags[1]);
        CHECK_THROWS_AS(select(b, {8}), DimensionError);
    }
}

TEST_SUITE("dsyn") {
    TEST_CASE("round trip at f32 precision") {
        const SampleBatch b = generate(scenes(6));
        const fs::path path = fs::temp_directory_path() / "darn_test_roundtrip.dsyn";
        write_dsyn(path.string(), b, 3);
        std::size_t k = 0;
        const SampleBatch r = read_dsyn(path.string(), &k);
        CHECK(k == 3);
        CHECK(r.images.shape() == b.images.shape());
        CHECK(r.labels.data == b.labels.data);
        CHECK(r.tags == b.tags);
        for (std::size_t i = 0; i < b.images.numel(); ++i)
            CHECK(r.images.data()[i] == static_cast<double>(static_cast<float>(b.images.data()[i])));
        // header: magic + u16 version + 5 x u32, then payload
        CHECK(fs::file_size(path) == 4 + 2 + 20 + 6 * 3 * 32 * 32 * 4 + 6 * 32 * 32 + 6);
        fs::remove(path);
    }

    TEST_CASE("bad magic is rejected") {
        const fs::path path = fs::temp_directory_path() / "darn_test_bad.dsyn";
        {
            std::FILE* f = std::fopen(path.string().c_str(), "wb");
            std::fputs("NOPE0000000000000000000000", f);
            std::fclose(f);
        }
        CHECK_THROWS_AS(read_dsyn(path.string()), FormatError);
        fs::remove(path);
    }
}

TEST_SUITE("corruptions") {
    TEST_CASE("grid endpoints and linear interpolation") {
        const std::vector<std::tuple<std::string, double, double>> want{
            {"gaussian_noise", 0.02, 0.2}, {"impulse_noise", 0.01, 0.15}, {"gaussian_blur", 0.5, 3.0},
            {"motion_blur", 2.0, 10.0},    {"contrast", 0.8, 0.3},        {"pixelate", 2.0, 8.0},
            {"fog", 0.1, 0.6},             {"brightness", 0.05, 0.4}};
        CHECK(corruption_table().size() == 8);
        for (const auto& [name, lo, hi] : want) {
            CHECK(corruption_parameter(name, 1) == lo);
            CHECK(corruption_parameter(name, 5) == hi);
            CHECK(corruption_parameter(name, 3) == doctest::Approx((lo + hi) / 2).epsilon(1e-15));
        }
        std::size_t per_category[4] = {0, 0, 0, 0};
        for (const auto& c : corruption_table()) ++per_category[static_cast<int>(c.category)];
        for (auto n : per_category) CHECK(n == 2);
    }

    TEST_CASE("outputs stay in [0,1] and are deterministic") {
        const SampleBatch b = generate(scenes(8));
        for (const auto& info : corruption_table())
            for (int s = 1; s <= 5; ++s) {
                const CorruptionSpec spec{info.category, info.name, s};
                const Tensor a = corrupt(b.images, spec, 99), c = corrupt(b.images, spec, 99);
                CHECK(values(a) == values(c));
                for (double v : a.data()) {
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                }
            }
    }

    TEST_CASE("distortion grows with severity") {
        const SampleBatch b = generate(scenes(64));
        for (const auto& info : corruption_table()) {
            double prev = -1.0;
            for (int s = 1; s <= 5; ++s) {
                const double d = l1_distance(corrupt(b.images, {info.category, info.name, s}, 5), b.images);
                INFO(info.name << " severity " << s);
                CHECK(d >= prev);
                prev = d;
            }
        }
    }

    TEST_CASE("pixelate factor 1 is the identity") {
        const SampleBatch b = generate(scenes(2));
        CHECK(values(corrupt_with_parameter(b.images, "pixelate", 1.0, 0)) == values(b.images));
    }

    TEST_CASE("errors") {
        const SampleBatch b = generate(scenes(1));
        CHECK_THROWS_AS(corrupt(b.images, {CorruptionCategory::Noise, "gaussian_noise", 0}, 1), DomainError);
        CHECK_THROWS_AS(corrupt(b.images, {CorruptionCategory::Noise, "gaussian_noise", 6}, 1), DomainError);
        CHECK_THROWS_AS(corrupt(b.images, {CorruptionCategory::Noise, "snow", 1}, 1), ConfigError);
    }
}

TEST_SUITE("fgsm") {
    // loss = sum(w * x): the input gradient is w itself.
    ImageLoss linear_loss(const Tensor& w) {
        return [w](const Tensor& x, const LabelMask&) { return ops::reduce_all(ops::mul(x, w), ops::Reduce::Sum); };
    }

    TEST_CASE("epsilon zero is the identity") {
        const SampleBatch b = generate(scenes(2));
        Rng rng(1);
        Tensor w = Tensor::zeros(b.images.shape());
        for (auto& v : w.mutable_data()) v = rng.uniform(-1, 1);
        CHECK(values(fgsm(linear_loss(w), b.images, b.labels, 0.0)) == values(b.images));
    }

    TEST_CASE("linear model moves each pixel by eps along sign(w)") {
        const SampleBatch b = generate(scenes(2));
        Rng rng(2);
        Tensor w = Tensor::zeros(b.images.shape());
        for (auto& v : w.mutable_data()) v = rng.uniform(-1, 1);
        const double eps = kFgsmEpsilon;
        const Tensor adv = fgsm(linear_loss(w), b.images, b.labels);
        for (std::size_t i = 0; i < adv.numel(); ++i) {
            const double x = b.images.data()[i];
            const double want = std::clamp(x + (w.data()[i] > 0 ? eps : -eps), 0.0, 1.0);
            CHECK(adv.data()[i] == doctest::Approx(want).epsilon(1e-15));
            CHECK(std::abs(adv.data()[i] - x) <= eps);
            CHECK(adv.data()[i] >= 0.0);
            CHECK(adv.data()[i] <= 1.0);
        }
    }

    TEST_CASE("default epsilon is 8/255") { CHECK(kFgsmEpsilon == 8.0 / 255.0); }

    TEST_CASE("negative epsilon") {
        const SampleBatch b = generate(scenes(1));
        CHECK_THROWS_AS(fgsm(linear_loss(b.images), b.images, b.labels, -0.1), DomainError);
    }
}
