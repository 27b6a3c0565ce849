#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "latta/dataio.hpp"
#include "latta/rng.hpp"
#include "latta/tensor.hpp"

namespace latta {

enum class ShiftKind { Identity, Rotation, GaussianNoise, ShotNoise, GaussianBlur, Brightness, Contrast };

std::string_view shift_kind_name(ShiftKind kind);
/// Throws std::invalid_argument on an unknown name.
ShiftKind shift_kind_from_name(std::string_view name);

/// Severity (1..5) to magnitude tables:
///   rotation       max |angle| in degrees   9, 18, 27, 36, 45
///   gaussian_noise sigma                    0.04, 0.06, 0.08, 0.10, 0.12
///   shot_noise     photons per unit         60, 25, 12, 5, 3
///   gaussian_blur  kernel sigma in pixels   0.4, 0.6, 0.7, 0.8, 1.0
///   brightness     added offset             0.1, 0.2, 0.3, 0.4, 0.5
///   contrast       scale about 0.5          0.75, 0.5, 0.4, 0.3, 0.15
struct ShiftSpec {
    ShiftKind kind = ShiftKind::Identity;
    int severity = 5;
    std::uint64_t seed = 0;

    void validate() const;
    double magnitude() const;
    bool operator==(const ShiftSpec&) const = default;
};

double severity_magnitude(ShiftKind kind, int severity);

/// Rotation about ((H-1)/2, (W-1)/2), counterclockwise for positive angles,
/// bilinear sampling with zeros outside the source frame. Multiples of 90
/// degrees use exact trigonometric values.
std::vector<float> rotate(std::span<const float> image, InputShape shape, double angle_degrees);

/// Returns a corrected copy; the input is never modified. Output is clipped to
/// [0, 1]. Rotation draws its angle uniformly in [-max, max] from `rng`.
std::vector<float> apply_corruption(std::span<const float> image, InputShape shape, const ShiftSpec& spec,
                                    Xoshiro256ss& rng);

/// Normalized 1-D Gaussian kernel of radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

struct Batch {
    std::vector<float> images;
    std::vector<std::size_t> labels;  // held back for metrics only
    InputShape shape;

    std::size_t size() const noexcept { return labels.size(); }

    template <typename T>
    Tensor<T> tensor() const {
        return Tensor<T>({size(), shape.channels, shape.height, shape.width},
                         std::vector<T>(images.begin(), images.end()));
    }
    bool operator==(const Batch&) const = default;
};

struct ShiftStream {
    ShiftSpec spec;
    std::uint64_t seed = 0;
    std::size_t batch_size = 0;
    InputShape shape;
    std::size_t class_count = 0;
    std::vector<Batch> batches;

    std::size_t sample_count() const;
    bool operator==(const ShiftStream&) const = default;
};

/// Shuffles once with `seed`, shifts every image with its own substream
/// (keyed by position in the shuffled order), and cuts fixed-size batches,
/// dropping a final partial batch.
ShiftStream make_shift_stream(const Dataset& data, const ShiftSpec& spec, std::size_t batch_size,
                              std::uint64_t seed);

class StreamFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "LATTASTR" | u32 version | u64 header length | header JSON |
/// per batch: float32 pixels, then u32 labels. Little-endian.
void save_stream(const std::filesystem::path& path, const ShiftStream& stream);
ShiftStream load_stream(const std::filesystem::path& path);

}  // namespace latta
