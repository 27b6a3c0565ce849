#include "latta/shift.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "latta/binary_io.hpp"

namespace latta {
namespace {

struct KindEntry {
    ShiftKind kind;
    std::string_view name;
    std::array<double, 5> table;
};

constexpr KindEntry kKinds[] = {
    {ShiftKind::Identity, "identity", {0, 0, 0, 0, 0}},
    {ShiftKind::Rotation, "rotation", {9, 18, 27, 36, 45}},
    {ShiftKind::GaussianNoise, "gaussian_noise", {0.04, 0.06, 0.08, 0.10, 0.12}},
    {ShiftKind::ShotNoise, "shot_noise", {60, 25, 12, 5, 3}},
    {ShiftKind::GaussianBlur, "gaussian_blur", {0.4, 0.6, 0.7, 0.8, 1.0}},
    {ShiftKind::Brightness, "brightness", {0.1, 0.2, 0.3, 0.4, 0.5}},
    {ShiftKind::Contrast, "contrast", {0.75, 0.5, 0.4, 0.3, 0.15}},
};

const KindEntry& entry(ShiftKind kind) {
    for (const auto& e : kKinds) {
        if (e.kind == kind) {
            return e;
        }
    }
    throw std::invalid_argument("unknown shift kind");
}

float clip01(double v) {
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

// Knuth's multiplication method; rates here stay below ~60.
std::uint64_t poisson(double mean, Xoshiro256ss& rng) {
    if (mean <= 0.0) {
        return 0;
    }
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    double p = rng.uniform();
    while (p > limit) {
        ++k;
        p *= rng.uniform();
    }
    return k;
}

// Exact values at multiples of 90 degrees.
std::pair<double, double> cos_sin_degrees(double degrees) {
    double r = std::fmod(degrees, 360.0);
    if (r < 0) {
        r += 360.0;
    }
    if (r == 0.0) {
        return {1.0, 0.0};
    }
    if (r == 90.0) {
        return {0.0, 1.0};
    }
    if (r == 180.0) {
        return {-1.0, 0.0};
    }
    if (r == 270.0) {
        return {0.0, -1.0};
    }
    const double rad = degrees * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

std::vector<float> blur(std::span<const float> image, InputShape shape, double sigma) {
    const auto kernel = gaussian_kernel(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const auto h = static_cast<std::ptrdiff_t>(shape.height);
    const auto w = static_cast<std::ptrdiff_t>(shape.width);
    std::vector<double> tmp(image.size());
    std::vector<float> out(image.size());
    for (std::size_t c = 0; c < shape.channels; ++c) {
        const std::size_t base = c * shape.height * shape.width;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                double s = 0;
                for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                    const std::ptrdiff_t sx = std::clamp<std::ptrdiff_t>(x + k, 0, w - 1);
                    s += kernel[static_cast<std::size_t>(k + radius)] * image[base + static_cast<std::size_t>(y * w + sx)];
                }
                tmp[base + static_cast<std::size_t>(y * w + x)] = s;
            }
        }
        for (std::ptrdiff_t y = 0; y < h; ++y) {
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                double s = 0;
                for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                    const std::ptrdiff_t sy = std::clamp<std::ptrdiff_t>(y + k, 0, h - 1);
                    s += kernel[static_cast<std::size_t>(k + radius)] * tmp[base + static_cast<std::size_t>(sy * w + x)];
                }
                out[base + static_cast<std::size_t>(y * w + x)] = clip01(s);
            }
        }
    }
    return out;
}

void check_image(std::span<const float> image, InputShape shape) {
    if (image.size() != shape.size()) {
        throw ShapeError("image has " + std::to_string(image.size()) + " pixels, shape needs " +
                         std::to_string(shape.size()));
    }
}

}  // namespace

std::string_view shift_kind_name(ShiftKind kind) {
    return entry(kind).name;
}

ShiftKind shift_kind_from_name(std::string_view name) {
    for (const auto& e : kKinds) {
        if (e.name == name) {
            return e.kind;
        }
    }
    throw std::invalid_argument("unknown shift kind '" + std::string(name) + "'");
}

double severity_magnitude(ShiftKind kind, int severity) {
    if (kind == ShiftKind::Identity) {
        return 0.0;
    }
    if (severity < 1 || severity > 5) {
        throw std::invalid_argument("severity must lie in 1..5, got " + std::to_string(severity));
    }
    return entry(kind).table[static_cast<std::size_t>(severity - 1)];
}

void ShiftSpec::validate() const {
    (void)severity_magnitude(kind, severity);
}

double ShiftSpec::magnitude() const {
    return severity_magnitude(kind, severity);
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) {
        return {1.0};
    }
    const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double total = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(radius);
        k[i] = std::exp(-d * d / (2 * sigma * sigma));
        total += k[i];
    }
    for (double& v : k) {
        v /= total;
    }
    return k;
}

std::vector<float> rotate(std::span<const float> image, InputShape shape, double angle_degrees) {
    check_image(image, shape);
    const auto [c, s] = cos_sin_degrees(angle_degrees);
    const double cy = (static_cast<double>(shape.height) - 1) / 2;
    const double cx = (static_cast<double>(shape.width) - 1) / 2;
    const auto h = static_cast<std::ptrdiff_t>(shape.height);
    const auto w = static_cast<std::ptrdiff_t>(shape.width);
    std::vector<float> out(image.size(), 0.0f);
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        const float* src = image.data() + ch * shape.height * shape.width;
        float* dst = out.data() + ch * shape.height * shape.width;
        auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
            if (y < 0 || y >= h || x < 0 || x >= w) {
                return 0.0;
            }
            return src[y * w + x];
        };
        for (std::ptrdiff_t y = 0; y < h; ++y) {
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                // Inverse map: where in the source does this target pixel come from.
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const double sx = cx + c * dx - s * dy;
                const double sy = cy + s * dx + c * dy;
                const double fx0 = std::floor(sx);
                const double fy0 = std::floor(sy);
                const double fx = sx - fx0;
                const double fy = sy - fy0;
                const auto x0 = static_cast<std::ptrdiff_t>(fx0);
                const auto y0 = static_cast<std::ptrdiff_t>(fy0);
                double v = (1 - fy) * (1 - fx) * at(y0, x0);
                if (fx != 0.0) {
                    v += (1 - fy) * fx * at(y0, x0 + 1);
                }
                if (fy != 0.0) {
                    v += fy * (1 - fx) * at(y0 + 1, x0);
                    if (fx != 0.0) {
                        v += fy * fx * at(y0 + 1, x0 + 1);
                    }
                }
                dst[y * w + x] = static_cast<float>(v);
            }
        }
    }
    return out;
}

std::vector<float> apply_corruption(std::span<const float> image, InputShape shape, const ShiftSpec& spec,
                                    Xoshiro256ss& rng) {
    check_image(image, shape);
    spec.validate();
    const double m = spec.magnitude();
    std::vector<float> out(image.begin(), image.end());
    switch (spec.kind) {
        case ShiftKind::Identity:
            break;
        case ShiftKind::Rotation: {
            out = rotate(image, shape, rng.uniform(-m, m));
            for (float& v : out) {
                v = clip01(v);
            }
            break;
        }
        case ShiftKind::GaussianNoise:
            for (std::size_t i = 0; i < out.size(); i += 2) {
                const auto [z0, z1] = rng.normal_pair();
                out[i] = clip01(image[i] + m * z0);
                if (i + 1 < out.size()) {
                    out[i + 1] = clip01(image[i + 1] + m * z1);
                }
            }
            break;
        case ShiftKind::ShotNoise:
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double counts = static_cast<double>(poisson(std::clamp<double>(image[i], 0, 1) * m, rng));
                out[i] = clip01(counts / m);
            }
            break;
        case ShiftKind::GaussianBlur:
            out = blur(image, shape, m);
            break;
        case ShiftKind::Brightness:
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = clip01(image[i] + m);
            }
            break;
        case ShiftKind::Contrast:
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = clip01((image[i] - 0.5) * m + 0.5);
            }
            break;
    }
    return out;
}

std::size_t ShiftStream::sample_count() const {
    std::size_t n = 0;
    for (const auto& b : batches) {
        n += b.size();
    }
    return n;
}

ShiftStream make_shift_stream(const Dataset& data, const ShiftSpec& spec, std::size_t batch_size,
                              std::uint64_t seed) {
    if (batch_size < 1) {
        throw std::invalid_argument("batch size must be >= 1");
    }
    if (data.size() == 0) {
        throw std::invalid_argument("cannot build a stream from an empty dataset");
    }
    spec.validate();
    const std::uint64_t stream_seed = seed ^ SplitMix64(spec.seed).next();

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = Xoshiro256ss::for_stream(stream_seed, "shuffle");
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    ShiftStream stream;
    stream.spec = spec;
    stream.seed = seed;
    stream.batch_size = batch_size;
    stream.shape = data.shape;
    stream.class_count = data.class_count;
    const std::size_t count = data.size() / batch_size;
    const std::size_t pixels = data.shape.size();
    for (std::size_t b = 0; b < count; ++b) {
        Batch batch;
        batch.shape = data.shape;
        batch.images.reserve(batch_size * pixels);
        for (std::size_t j = 0; j < batch_size; ++j) {
            const std::size_t position = b * batch_size + j;
            const std::size_t index = order[position];
            auto rng = Xoshiro256ss::for_stream(stream_seed, position);
            const auto shifted = apply_corruption(data.image(index), data.shape, spec, rng);
            batch.images.insert(batch.images.end(), shifted.begin(), shifted.end());
            batch.labels.push_back(data.labels[index]);
        }
        stream.batches.push_back(std::move(batch));
    }
    return stream;
}

namespace {

constexpr char kStreamMagic[8] = {'L', 'A', 'T', 'T', 'A', 'S', 'T', 'R'};
constexpr std::uint32_t kStreamVersion = 1;

}  // namespace

void save_stream(const std::filesystem::path& path, const ShiftStream& stream) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw StreamFileError("cannot open " + path.string() + " for writing");
    }
    const nlohmann::json header = {
        {"shift", shift_kind_name(stream.spec.kind)},
        {"severity", stream.spec.severity},
        {"shift_seed", stream.spec.seed},
        {"seed", stream.seed},
        {"batch_size", stream.batch_size},
        {"batch_count", stream.batches.size()},
        {"shape", {stream.shape.channels, stream.shape.height, stream.shape.width}},
        {"class_count", stream.class_count},
    };
    const std::string text = header.dump();
    out.write(kStreamMagic, sizeof kStreamMagic);
    binio::write_pod<std::uint32_t>(out, kStreamVersion);
    binio::write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : stream.batches) {
        if (b.size() != stream.batch_size || b.images.size() != b.size() * stream.shape.size()) {
            throw StreamFileError("stream batches must all have the declared size");
        }
        binio::write_array<float>(out, b.images);
        std::vector<std::uint32_t> labels(b.labels.begin(), b.labels.end());
        binio::write_array<std::uint32_t>(out, labels);
    }
    if (!out) {
        throw StreamFileError("failed writing " + path.string());
    }
}

ShiftStream load_stream(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StreamFileError("cannot open stream file " + path.string());
    }
    char magic[8];
    if (!in.read(magic, sizeof magic) || !std::equal(std::begin(magic), std::end(magic), std::begin(kStreamMagic))) {
        throw StreamFileError(path.string() + " is not a stream replay file");
    }
    const auto version = binio::read_pod<StreamFileError, std::uint32_t>(in, "version");
    if (version != kStreamVersion) {
        throw StreamFileError("unsupported stream file version " + std::to_string(version));
    }
    const auto length = binio::read_pod<StreamFileError, std::uint64_t>(in, "header length");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(binio::read_string<StreamFileError>(in, length, "header"));
    } catch (const nlohmann::json::exception& e) {
        throw StreamFileError(std::string("corrupt stream header: ") + e.what());
    }
    ShiftStream stream;
    stream.spec.kind = shift_kind_from_name(header.at("shift").get<std::string>());
    stream.spec.severity = header.at("severity").get<int>();
    stream.spec.seed = header.at("shift_seed").get<std::uint64_t>();
    stream.seed = header.at("seed").get<std::uint64_t>();
    stream.batch_size = header.at("batch_size").get<std::size_t>();
    const auto& shape = header.at("shape");
    stream.shape = {shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(), shape.at(2).get<std::size_t>()};
    stream.class_count = header.at("class_count").get<std::size_t>();
    const auto count = header.at("batch_count").get<std::size_t>();
    for (std::size_t b = 0; b < count; ++b) {
        Batch batch;
        batch.shape = stream.shape;
        batch.images = binio::read_array<StreamFileError, float>(in, stream.batch_size * stream.shape.size(), "pixels");
        const auto labels = binio::read_array<StreamFileError, std::uint32_t>(in, stream.batch_size, "labels");
        batch.labels.assign(labels.begin(), labels.end());
        stream.batches.push_back(std::move(batch));
    }
    return stream;
}

}  // namespace latta
