#include "latta/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>

#include "latta/rng.hpp"

namespace latta {
namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path, const char* field) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw IdxTruncatedError(path.string() + ": truncated while reading " + field);
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IdxError("cannot open " + path.string());
    }
    return in;
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
    if (got != want) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad magic 0x%08x (expected 0x%08x)", got, want);
        throw IdxBadMagicError(path.string() + ": " + buf);
    }
}

}  // namespace

Dataset Dataset::head(std::size_t n) const {
    Dataset out;
    out.shape = shape;
    out.class_count = class_count;
    n = std::min(n, size());
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n * shape.size()));
    return out;
}

void Dataset::validate() const {
    if (labels.empty()) {
        throw std::invalid_argument("dataset is empty");
    }
    if (images.size() != labels.size() * shape.size()) {
        throw std::invalid_argument("dataset image buffer does not match its label count");
    }
    for (std::size_t y : labels) {
        if (y >= class_count) {
            throw std::invalid_argument("dataset label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(class_count) + ")");
        }
    }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t class_count) {
    auto images_in = open_binary(images_path);
    auto labels_in = open_binary(labels_path);

    check_magic(read_be32(images_in, images_path, "magic"), kIdxImageMagic, images_path);
    const std::uint32_t n_images = read_be32(images_in, images_path, "image count");
    const std::uint32_t rows = read_be32(images_in, images_path, "row count");
    const std::uint32_t cols = read_be32(images_in, images_path, "column count");

    check_magic(read_be32(labels_in, labels_path, "magic"), kIdxLabelMagic, labels_path);
    const std::uint32_t n_labels = read_be32(labels_in, labels_path, "label count");

    if (n_images != n_labels) {
        throw IdxCountMismatchError("image count " + std::to_string(n_images) + " does not match label count " +
                                    std::to_string(n_labels));
    }
    if (n_images == 0 || rows == 0 || cols == 0) {
        throw IdxError(images_path.string() + ": empty dataset");
    }

    Dataset data;
    data.shape = {1, rows, cols};
    data.class_count = class_count;
    const std::size_t pixels = static_cast<std::size_t>(n_images) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    if (!images_in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels))) {
        throw IdxTruncatedError(images_path.string() + ": truncated pixel data");
    }
    data.images.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        data.images[i] = static_cast<float>(raw[i]) / 255.0f;
    }
    std::vector<unsigned char> raw_labels(n_labels);
    if (!labels_in.read(reinterpret_cast<char*>(raw_labels.data()), n_labels)) {
        throw IdxTruncatedError(labels_path.string() + ": truncated label data");
    }
    data.labels.assign(raw_labels.begin(), raw_labels.end());
    for (std::size_t y : data.labels) {
        if (y >= class_count) {
            throw IdxError(labels_path.string() + ": label " + std::to_string(y) + " outside [0, " +
                           std::to_string(class_count) + ")");
        }
    }
    return data;
}

void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
    data.validate();
    if (data.shape.channels != 1) {
        throw std::invalid_argument("IDX export supports single-channel images only");
    }
    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!img || !lab) {
        throw IdxError("cannot open IDX output files");
    }
    const auto n = static_cast<std::uint32_t>(data.size());
    write_be32(img, kIdxImageMagic);
    write_be32(img, n);
    write_be32(img, static_cast<std::uint32_t>(data.shape.height));
    write_be32(img, static_cast<std::uint32_t>(data.shape.width));
    for (float v : data.images) {
        const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        img.put(static_cast<char>(byte));
    }
    write_be32(lab, kIdxLabelMagic);
    write_be32(lab, n);
    for (std::size_t y : data.labels) {
        lab.put(static_cast<char>(y));
    }
}

Dataset synth_blobs(std::size_t n, std::size_t class_count, InputShape shape, std::uint64_t seed) {
    if (class_count == 0 || n < class_count) {
        throw std::invalid_argument("synth_blobs needs n >= class_count >= 1");
    }
    constexpr double kBlobSigma = 0.09;    // fraction of the canvas
    constexpr double kJitter = 0.025;      // center jitter, fraction of the canvas
    constexpr double kPixelNoise = 0.05;

    const double h = static_cast<double>(shape.height);
    const double w = static_cast<double>(shape.width);
    const double extent = std::min(h, w);

    // Class centers on a ring, ordered so neighbouring classes sit apart.
    std::vector<std::pair<double, double>> centers(class_count);
    for (std::size_t k = 0; k < class_count; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(class_count);
        const double radius = (k % 2 == 0 ? 0.30 : 0.17) * extent;
        centers[k] = {(h - 1) / 2 + radius * std::sin(angle), (w - 1) / 2 + radius * std::cos(angle)};
    }

    Dataset data;
    data.shape = shape;
    data.class_count = class_count;
    data.labels.resize(n);
    data.images.assign(n * shape.size(), 0.0f);
    const double sigma = kBlobSigma * extent;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = Xoshiro256ss::for_stream(seed, i);
        const std::size_t label = i % class_count;
        data.labels[i] = label;
        const auto [jy, jx] = rng.normal_pair();
        const double cy = centers[label].first + kJitter * extent * jy;
        const double cx = centers[label].second + kJitter * extent * jx;
        const double amplitude = rng.uniform(0.7, 1.0);
        float* img = data.images.data() + i * shape.size();
        for (std::size_t c = 0; c < shape.channels; ++c) {
            for (std::size_t y = 0; y < shape.height; ++y) {
                for (std::size_t x = 0; x < shape.width; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    const double blob = amplitude * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                    img[(c * shape.height + y) * shape.width + x] = static_cast<float>(blob);
                }
            }
        }
        for (std::size_t p = 0; p < shape.size(); p += 2) {
            const auto [z0, z1] = rng.normal_pair();
            img[p] = static_cast<float>(std::clamp(img[p] + kPixelNoise * z0, 0.0, 1.0));
            if (p + 1 < shape.size()) {
                img[p + 1] = static_cast<float>(std::clamp(img[p + 1] + kPixelNoise * z1, 0.0, 1.0));
            }
        }
    }
    return data;
}

namespace {

using Stroke = std::vector<std::pair<double, double>>;

Stroke ellipse(double cx, double cy, double rx, double ry, int points = 14) {
    Stroke s;
    for (int k = 0; k <= points; ++k) {
        const double t = 2.0 * std::numbers::pi * k / points;
        s.emplace_back(cx + rx * std::cos(t), cy + ry * std::sin(t));
    }
    return s;
}

// Digit skeletons in a unit box, x to the right and y down.
const std::vector<std::vector<Stroke>>& glyph_skeletons() {
    static const std::vector<std::vector<Stroke>> skeletons = {
        {ellipse(0.5, 0.5, 0.3, 0.45)},
        {{{0.35, 0.2}, {0.55, 0.05}, {0.55, 0.95}}},
        {{{0.2, 0.25}, {0.35, 0.08}, {0.65, 0.08}, {0.8, 0.25}, {0.75, 0.45}, {0.2, 0.95}, {0.85, 0.95}}},
        {{{0.2, 0.1}, {0.8, 0.1}, {0.5, 0.45}, {0.8, 0.65}, {0.7, 0.9}, {0.45, 0.97}, {0.2, 0.88}}},
        {{{0.65, 0.95}, {0.65, 0.05}, {0.15, 0.7}, {0.85, 0.7}}},
        {{{0.8, 0.05}, {0.25, 0.05}, {0.22, 0.45}, {0.6, 0.4}, {0.8, 0.6}, {0.7, 0.9}, {0.45, 0.97}, {0.2, 0.88}}},
        {{{0.7, 0.05}, {0.35, 0.35}, {0.2, 0.7}, {0.3, 0.92}, {0.55, 0.97}, {0.78, 0.8}, {0.72, 0.58},
          {0.45, 0.52}, {0.25, 0.65}}},
        {{{0.15, 0.05}, {0.85, 0.05}, {0.4, 0.95}}},
        {ellipse(0.5, 0.27, 0.22, 0.21), ellipse(0.5, 0.72, 0.27, 0.24)},
        {ellipse(0.5, 0.3, 0.25, 0.23), {{0.75, 0.3}, {0.6, 0.95}}},
    };
    return skeletons;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset synth_glyphs(std::size_t n, std::size_t class_count, InputShape shape, std::uint64_t seed) {
    const auto& skeletons = glyph_skeletons();
    if (class_count == 0 || class_count > skeletons.size() || n < class_count) {
        throw std::invalid_argument("synth_glyphs needs 1 <= class_count <= 10 and n >= class_count");
    }
    const double h = static_cast<double>(shape.height);
    const double w = static_cast<double>(shape.width);
    const double extent = std::min(h, w);

    Dataset data;
    data.shape = shape;
    data.class_count = class_count;
    data.labels.resize(n);
    data.images.assign(n * shape.size(), 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = Xoshiro256ss::for_stream(seed, i);
        const std::size_t label = i % class_count;
        data.labels[i] = label;

        const double height = rng.uniform(0.6, 0.75) * extent;
        const double width = height * rng.uniform(0.55, 0.85);
        const double slant = rng.uniform(-0.3, 0.3);
        const double tilt = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
        const double half_width = rng.uniform(0.9, 1.6) * extent / 28.0;
        const double oy = (h - 1) / 2 + rng.uniform(-1.5, 1.5) * extent / 28.0;
        const double ox = (w - 1) / 2 + rng.uniform(-1.5, 1.5) * extent / 28.0;
        const double c = std::cos(tilt), s = std::sin(tilt);

        std::vector<Stroke> strokes = skeletons[label];
        for (auto& stroke : strokes) {
            for (auto& [x, y] : stroke) {
                const double wobble_x = 0.03 * rng.uniform(-1.0, 1.0);
                const double wobble_y = 0.03 * rng.uniform(-1.0, 1.0);
                const double u = (x - 0.5 + wobble_x) * width - slant * (y - 0.5) * height;
                const double v = (y - 0.5 + wobble_y) * height;
                x = ox + c * u - s * v;
                y = oy + s * u + c * v;
            }
        }
        float* img = data.images.data() + i * shape.size();
        for (std::size_t py = 0; py < shape.height; ++py) {
            for (std::size_t px = 0; px < shape.width; ++px) {
                double d = 1e9;
                for (const auto& stroke : strokes) {
                    for (std::size_t k = 0; k + 1 < stroke.size(); ++k) {
                        d = std::min(d, segment_distance(static_cast<double>(px), static_cast<double>(py),
                                                         stroke[k].first, stroke[k].second, stroke[k + 1].first,
                                                         stroke[k + 1].second));
                    }
                }
                // Flat core with a soft one-pixel edge.
                const double v = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
                for (std::size_t ch = 0; ch < shape.channels; ++ch) {
                    img[(ch * shape.height + py) * shape.width + px] = static_cast<float>(v);
                }
            }
        }
    }
    return data;
}

template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) {
        throw std::invalid_argument("gather_images needs at least one index");
    }
    const std::size_t stride = data.shape.size();
    std::vector<T> values(indices.size() * stride);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = data.image(indices[i]);
        std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return Tensor<T>({indices.size(), data.shape.channels, data.shape.height, data.shape.width}, std::move(values));
}

template Tensor<float> gather_images<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace latta
