#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "latta/model.hpp"

namespace latta {

/// Images [n, C, H, W] with pixels in [0, 1] and their class labels.
struct Dataset {
    std::vector<float> images;
    std::vector<std::size_t> labels;
    InputShape shape;
    std::size_t class_count = 10;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const float> image(std::size_t i) const {
        return std::span<const float>(images).subspan(i * shape.size(), shape.size());
    }
    /// The first `n` samples (or all of them when n >= size()).
    Dataset head(std::size_t n) const;
    void validate() const;
};

class IdxError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class IdxBadMagicError : public IdxError {
public:
    using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
public:
    using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
public:
    using IdxError::IdxError;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses big-endian IDX image/label files. Pixel bytes are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t class_count = 10);

/// Writes a dataset back to IDX (pixels rounded to bytes). Single-channel only.
void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

/// Download-free digit stand-in: every class is a Gaussian blob at its own
/// location, with per-sample jitter and pixel noise, clipped to [0, 1].
/// Labels are balanced (label i is i mod class_count). Requires n >= class_count.
Dataset synth_blobs(std::size_t n, std::size_t class_count, InputShape shape, std::uint64_t seed);

/// Handwriting-like digits 0..9 drawn as anti-aliased strokes with random
/// scale, aspect, slant, tilt, thickness, offset and vertex wobble.
/// Balanced labels as in synth_blobs; at most 10 classes.
Dataset synth_glyphs(std::size_t n, std::size_t class_count, InputShape shape, std::uint64_t seed);

/// Images [indices.size(), C, H, W] gathered from a dataset.
template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace latta
