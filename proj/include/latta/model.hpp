#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latta/autodiff.hpp"
#include "latta/rng.hpp"
#include "latta/tensor.hpp"

namespace latta {

enum class Architecture { MnistCnn, Mlp };

std::string_view architecture_name(Architecture arch);

enum class LayerKind { Conv3x3, BatchNorm2d, Relu, MaxPool2x2, Flatten, Linear };

std::string_view layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(std::string_view name);

/// One layer in declaration order. `in`/`out` are channels for conv and
/// batchnorm layers and features for linear layers; unused otherwise.
struct LayerDesc {
    LayerKind kind;
    std::size_t in = 0;
    std::size_t out = 0;

    bool operator==(const LayerDesc&) const = default;
};

struct InputShape {
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;

    std::size_t size() const noexcept { return channels * height * width; }
    bool operator==(const InputShape&) const = default;
};

struct ModelSpec {
    Architecture architecture = Architecture::MnistCnn;
    std::size_t class_count = 10;
    InputShape input;
    std::vector<LayerDesc> layers;

    bool operator==(const ModelSpec&) const = default;
};

/// conv3x3(32) bn relu pool, conv3x3(64) bn relu pool, fc128 relu, fc(classes).
/// Height and width must be divisible by 4.
ModelSpec make_mnist_cnn(std::size_t class_count = 10, InputShape input = {});

/// Flatten followed by fully connected layers with relu between them. An empty
/// `hidden` list gives a linear classifier.
ModelSpec make_mlp(InputShape input, std::vector<std::size_t> hidden, std::size_t class_count);

/// Builds a spec from an architecture id ("mnist_cnn" or "mlp"). Throws
/// std::invalid_argument on an unknown id.
ModelSpec make_model_spec(std::string_view architecture, std::size_t class_count, InputShape input,
                          std::vector<std::size_t> mlp_hidden = {128});

enum class ParamRole { Weight, Bias, BnScale, BnShift };

std::string_view param_role_name(ParamRole role);

struct ParamSlot {
    std::size_t layer = 0;
    ParamRole role = ParamRole::Weight;
    Shape shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    bool operator==(const ParamSlot&) const = default;
};

/// Ordered description of a flat parameter buffer.
class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(std::vector<ParamSlot> slots);

    static ParamLayout from_spec(const ModelSpec& spec);

    std::span<const ParamSlot> slots() const noexcept { return slots_; }
    std::size_t total() const noexcept { return total_; }

    bool operator==(const ParamLayout&) const = default;

private:
    std::vector<ParamSlot> slots_;
    std::size_t total_ = 0;
};

/// Flat, layout-ordered model weights.
template <typename T>
class ParameterVector {
public:
    ParameterVector() = default;
    explicit ParameterVector(ParamLayout layout);
    ParameterVector(ParamLayout layout, std::vector<T> values);

    const ParamLayout& layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    std::span<T> slot(std::size_t index);
    std::span<const T> slot(std::size_t index) const;

    /// One tensor per layout slot.
    std::vector<Tensor<T>> unflatten() const;
    static ParameterVector flatten(const ParamLayout& layout, const std::vector<Tensor<T>>& tensors);

    bool aligned_with(const ParameterVector& other) const { return layout_ == other.layout_; }

    template <typename U>
    ParameterVector<U> cast() const {
        return ParameterVector<U>(layout_, std::vector<U>(values_.begin(), values_.end()));
    }

    bool operator==(const ParameterVector&) const = default;

private:
    ParamLayout layout_;
    std::vector<T> values_;
};

/// Batchnorm running statistics: for each batchnorm layer in declaration
/// order, `channels` means followed by `channels` variances.
template <typename T>
struct RunningStats {
    std::vector<T> values;

    static RunningStats initial(const ModelSpec& spec);
    bool operator==(const RunningStats&) const = default;
};

/// He-normal conv/linear weights, zero biases, batchnorm scale 1 and shift 0.
template <typename T>
ParameterVector<T> build_model(const ModelSpec& spec, Xoshiro256ss& rng);

/// Logits [n, classes]. `images` must be [n, C, H, W] matching `spec`.
template <typename T>
Tensor<T> forward(const ModelSpec& spec, const ParameterVector<T>& params, const RunningStats<T>& stats,
                  const Tensor<T>& images, BnMode mode);

/// A forward pass recorded on a graph so gradients can be taken.
template <typename T>
struct ForwardTrace {
    Graph<T> graph;
    NodeId logits;
    std::vector<NodeId> param_nodes;  // one per layout slot
};

/// `trainable[i]` marks layout slot i as requiring grad. In Train mode the
/// running statistics in `stats` are updated in place.
template <typename T>
ForwardTrace<T> trace_forward(const ModelSpec& spec, const ParameterVector<T>& params, RunningStats<T>& stats,
                              const Tensor<T>& images, BnMode mode, const std::vector<bool>& trainable);

/// Collects leaf gradients into a flat layout-aligned vector (zeros for
/// slots that did not require grad).
template <typename T>
std::vector<T> gather_gradient(const ForwardTrace<T>& trace, const Gradients<T>& grads, const ParamLayout& layout);

enum class ParamSubset { All, BnAffineOnly };

std::string_view param_subset_name(ParamSubset subset);
ParamSubset param_subset_from_name(std::string_view name);

/// Per-coordinate trainability over the flat layout.
std::vector<std::uint8_t> param_subset_mask(const ParamLayout& layout, ParamSubset subset);
inline std::vector<std::uint8_t> param_subset_mask(const ModelSpec& spec, ParamSubset subset) {
    return param_subset_mask(ParamLayout::from_spec(spec), subset);
}

/// Slot-level view of a coordinate mask: true when any coordinate is set.
std::vector<bool> slots_touched(const ParamLayout& layout, std::span<const std::uint8_t> mask);

/// Per-row argmax, ties resolved toward the lowest index; NaN never wins.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& matrix);

/// Row-wise softmax of a [n, C] matrix.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace latta
