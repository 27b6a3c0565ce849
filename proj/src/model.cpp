#include "latta/model.hpp"

#include <cmath>
#include <stdexcept>

namespace latta {

std::string_view architecture_name(Architecture arch) {
    switch (arch) {
        case Architecture::MnistCnn:
            return "mnist_cnn";
        case Architecture::Mlp:
            return "mlp";
    }
    return "unknown";
}

std::string_view layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv3x3:
            return "conv3x3";
        case LayerKind::BatchNorm2d:
            return "batchnorm2d";
        case LayerKind::Relu:
            return "relu";
        case LayerKind::MaxPool2x2:
            return "maxpool2x2";
        case LayerKind::Flatten:
            return "flatten";
        case LayerKind::Linear:
            return "linear";
    }
    return "unknown";
}

LayerKind layer_kind_from_name(std::string_view name) {
    for (LayerKind k : {LayerKind::Conv3x3, LayerKind::BatchNorm2d, LayerKind::Relu, LayerKind::MaxPool2x2,
                        LayerKind::Flatten, LayerKind::Linear}) {
        if (layer_kind_name(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

std::string_view param_role_name(ParamRole role) {
    switch (role) {
        case ParamRole::Weight:
            return "weight";
        case ParamRole::Bias:
            return "bias";
        case ParamRole::BnScale:
            return "bn_scale";
        case ParamRole::BnShift:
            return "bn_shift";
    }
    return "unknown";
}

std::string_view param_subset_name(ParamSubset subset) {
    return subset == ParamSubset::All ? "all" : "bn_affine_only";
}

ParamSubset param_subset_from_name(std::string_view name) {
    if (name == "all") {
        return ParamSubset::All;
    }
    if (name == "bn_affine_only" || name == "bn") {
        return ParamSubset::BnAffineOnly;
    }
    throw std::invalid_argument("unknown parameter subset '" + std::string(name) + "'");
}

ModelSpec make_mnist_cnn(std::size_t class_count, InputShape input) {
    if (class_count < 1) {
        throw std::invalid_argument("mnist_cnn: class_count must be positive");
    }
    if (input.height % 4 != 0 || input.width % 4 != 0 || input.height == 0 || input.width == 0) {
        throw std::invalid_argument("mnist_cnn: input height and width must be positive multiples of 4");
    }
    const std::size_t flat = 64 * (input.height / 4) * (input.width / 4);
    ModelSpec spec;
    spec.architecture = Architecture::MnistCnn;
    spec.class_count = class_count;
    spec.input = input;
    spec.layers = {
        {LayerKind::Conv3x3, input.channels, 32},
        {LayerKind::BatchNorm2d, 32, 32},
        {LayerKind::Relu},
        {LayerKind::MaxPool2x2},
        {LayerKind::Conv3x3, 32, 64},
        {LayerKind::BatchNorm2d, 64, 64},
        {LayerKind::Relu},
        {LayerKind::MaxPool2x2},
        {LayerKind::Flatten},
        {LayerKind::Linear, flat, 128},
        {LayerKind::Relu},
        {LayerKind::Linear, 128, class_count},
    };
    return spec;
}

ModelSpec make_mlp(InputShape input, std::vector<std::size_t> hidden, std::size_t class_count) {
    if (class_count < 1) {
        throw std::invalid_argument("mlp: class_count must be positive");
    }
    ModelSpec spec;
    spec.architecture = Architecture::Mlp;
    spec.class_count = class_count;
    spec.input = input;
    spec.layers.push_back({LayerKind::Flatten});
    std::size_t width = input.size();
    for (std::size_t h : hidden) {
        spec.layers.push_back({LayerKind::Linear, width, h});
        spec.layers.push_back({LayerKind::Relu});
        width = h;
    }
    spec.layers.push_back({LayerKind::Linear, width, class_count});
    return spec;
}

ModelSpec make_model_spec(std::string_view architecture, std::size_t class_count, InputShape input,
                          std::vector<std::size_t> mlp_hidden) {
    if (architecture == "mnist_cnn") {
        return make_mnist_cnn(class_count, input);
    }
    if (architecture == "mlp") {
        return make_mlp(input, std::move(mlp_hidden), class_count);
    }
    throw std::invalid_argument("unknown architecture id '" + std::string(architecture) + "'");
}

ParamLayout::ParamLayout(std::vector<ParamSlot> slots) : slots_(std::move(slots)) {
    total_ = 0;
    for (auto& s : slots_) {
        s.size = shape_size(s.shape);
        s.offset = total_;
        total_ += s.size;
    }
}

ParamLayout ParamLayout::from_spec(const ModelSpec& spec) {
    std::vector<ParamSlot> slots;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv3x3:
                slots.push_back({i, ParamRole::Weight, {l.out, l.in, 3, 3}});
                slots.push_back({i, ParamRole::Bias, {l.out}});
                break;
            case LayerKind::BatchNorm2d:
                slots.push_back({i, ParamRole::BnScale, {l.out}});
                slots.push_back({i, ParamRole::BnShift, {l.out}});
                break;
            case LayerKind::Linear:
                slots.push_back({i, ParamRole::Weight, {l.in, l.out}});
                slots.push_back({i, ParamRole::Bias, {l.out}});
                break;
            default:
                break;
        }
    }
    return ParamLayout(std::move(slots));
}

template <typename T>
ParameterVector<T>::ParameterVector(ParamLayout layout) : layout_(std::move(layout)), values_(layout_.total(), T(0)) {}

template <typename T>
ParameterVector<T>::ParameterVector(ParamLayout layout, std::vector<T> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_.total()) {
        throw ShapeError("parameter buffer has " + std::to_string(values_.size()) + " values, layout needs " +
                         std::to_string(layout_.total()));
    }
}

template <typename T>
std::span<T> ParameterVector<T>::slot(std::size_t index) {
    const auto& s = layout_.slots()[index];
    return std::span<T>(values_).subspan(s.offset, s.size);
}

template <typename T>
std::span<const T> ParameterVector<T>::slot(std::size_t index) const {
    const auto& s = layout_.slots()[index];
    return std::span<const T>(values_).subspan(s.offset, s.size);
}

template <typename T>
std::vector<Tensor<T>> ParameterVector<T>::unflatten() const {
    std::vector<Tensor<T>> out;
    out.reserve(layout_.slots().size());
    for (std::size_t i = 0; i < layout_.slots().size(); ++i) {
        auto values = slot(i);
        out.emplace_back(layout_.slots()[i].shape, std::vector<T>(values.begin(), values.end()));
    }
    return out;
}

template <typename T>
ParameterVector<T> ParameterVector<T>::flatten(const ParamLayout& layout, const std::vector<Tensor<T>>& tensors) {
    if (tensors.size() != layout.slots().size()) {
        throw ShapeError("flatten: expected " + std::to_string(layout.slots().size()) + " tensors, got " +
                         std::to_string(tensors.size()));
    }
    std::vector<T> values;
    values.reserve(layout.total());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].shape() != layout.slots()[i].shape) {
            throw ShapeError("flatten: slot " + std::to_string(i) + " expects " +
                             shape_string(layout.slots()[i].shape) + ", got " + shape_string(tensors[i].shape()));
        }
        values.insert(values.end(), tensors[i].data().begin(), tensors[i].data().end());
    }
    return ParameterVector(layout, std::move(values));
}

template <typename T>
RunningStats<T> RunningStats<T>::initial(const ModelSpec& spec) {
    RunningStats stats;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::BatchNorm2d) {
            stats.values.insert(stats.values.end(), l.out, T(0));
            stats.values.insert(stats.values.end(), l.out, T(1));
        }
    }
    return stats;
}

template <typename T>
ParameterVector<T> build_model(const ModelSpec& spec, Xoshiro256ss& rng) {
    ParameterVector<T> params(ParamLayout::from_spec(spec));
    const auto& slots = params.layout().slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& s = slots[i];
        auto values = params.slot(i);
        const auto& layer = spec.layers[s.layer];
        switch (s.role) {
            case ParamRole::Weight: {
                const std::size_t fan_in = layer.kind == LayerKind::Conv3x3 ? layer.in * 9 : layer.in;
                const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
                for (std::size_t k = 0; k < values.size(); k += 2) {
                    const auto [z0, z1] = rng.normal_pair();
                    values[k] = static_cast<T>(stddev * z0);
                    if (k + 1 < values.size()) {
                        values[k + 1] = static_cast<T>(stddev * z1);
                    }
                }
                break;
            }
            case ParamRole::BnScale:
                std::fill(values.begin(), values.end(), T(1));
                break;
            case ParamRole::Bias:
            case ParamRole::BnShift:
                std::fill(values.begin(), values.end(), T(0));
                break;
        }
    }
    return params;
}

namespace {

template <typename T>
void check_images(const ModelSpec& spec, const Tensor<T>& images) {
    const auto& in = spec.input;
    if (images.rank() != 4 || images.dim(1) != in.channels || images.dim(2) != in.height ||
        images.dim(3) != in.width) {
        throw ShapeError("model expects images [n, " + std::to_string(in.channels) + ", " +
                         std::to_string(in.height) + ", " + std::to_string(in.width) + "], got " +
                         shape_string(images.shape()));
    }
}

template <typename T>
ForwardTrace<T> run_layers(const ModelSpec& spec, const ParameterVector<T>& params, const RunningStats<T>& stats,
                           RunningStats<T>* update, const Tensor<T>& images, BnMode mode,
                           const std::vector<bool>& trainable) {
    check_images(spec, images);
    const auto& layout = params.layout();
    if (layout != ParamLayout::from_spec(spec)) {
        throw ShapeError("parameter vector is not aligned with the model spec");
    }
    const auto expected_stats = RunningStats<T>::initial(spec).values.size();
    if (stats.values.size() != expected_stats) {
        throw ShapeError("running statistics have " + std::to_string(stats.values.size()) + " values, spec needs " +
                         std::to_string(expected_stats));
    }
    if (!trainable.empty() && trainable.size() != layout.slots().size()) {
        throw ShapeError("trainable flags do not match the parameter layout");
    }

    ForwardTrace<T> trace;
    auto& g = trace.graph;
    const auto tensors = params.unflatten();
    trace.param_nodes.reserve(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        trace.param_nodes.push_back(g.leaf(tensors[i], !trainable.empty() && trainable[i]));
    }

    NodeId x = g.leaf(images, false);
    const std::size_t n = images.dim(0);
    std::size_t slot = 0;
    std::size_t stat_offset = 0;
    for (const auto& layer : spec.layers) {
        switch (layer.kind) {
            case LayerKind::Conv3x3:
                x = g.conv2d(x, trace.param_nodes[slot], trace.param_nodes[slot + 1]);
                slot += 2;
                break;
            case LayerKind::BatchNorm2d: {
                const std::size_t c = layer.out;
                BatchNormOptions<T> opt;
                opt.mode = mode;
                opt.running_mean = std::span<const T>(stats.values).subspan(stat_offset, c);
                opt.running_var = std::span<const T>(stats.values).subspan(stat_offset + c, c);
                if (mode == BnMode::Train) {
                    if (update == nullptr) {
                        throw std::invalid_argument("train-mode forward needs writable running statistics");
                    }
                    opt.update_mean = std::span<T>(update->values).subspan(stat_offset, c);
                    opt.update_var = std::span<T>(update->values).subspan(stat_offset + c, c);
                }
                x = g.batchnorm2d(x, trace.param_nodes[slot], trace.param_nodes[slot + 1], opt);
                slot += 2;
                stat_offset += 2 * c;
                break;
            }
            case LayerKind::Relu:
                x = g.relu(x);
                break;
            case LayerKind::MaxPool2x2:
                x = g.maxpool2d(x);
                break;
            case LayerKind::Flatten:
                x = g.reshape(x, {n, g.value(x).size() / n});
                break;
            case LayerKind::Linear:
                x = g.add(g.matmul(x, trace.param_nodes[slot]), trace.param_nodes[slot + 1]);
                slot += 2;
                break;
        }
    }
    trace.logits = x;
    return trace;
}

}  // namespace

template <typename T>
Tensor<T> forward(const ModelSpec& spec, const ParameterVector<T>& params, const RunningStats<T>& stats,
                  const Tensor<T>& images, BnMode mode) {
    if (mode == BnMode::Train) {
        RunningStats<T> scratch = stats;
        auto trace = run_layers(spec, params, stats, &scratch, images, mode, {});
        return trace.graph.value(trace.logits);
    }
    auto trace = run_layers<T>(spec, params, stats, nullptr, images, mode, {});
    return trace.graph.value(trace.logits);
}

template <typename T>
ForwardTrace<T> trace_forward(const ModelSpec& spec, const ParameterVector<T>& params, RunningStats<T>& stats,
                              const Tensor<T>& images, BnMode mode, const std::vector<bool>& trainable) {
    return run_layers(spec, params, stats, &stats, images, mode, trainable);
}

template <typename T>
std::vector<T> gather_gradient(const ForwardTrace<T>& trace, const Gradients<T>& grads, const ParamLayout& layout) {
    std::vector<T> flat(layout.total(), T(0));
    for (std::size_t i = 0; i < layout.slots().size(); ++i) {
        const NodeId id = trace.param_nodes.at(i);
        if (!grads.contains(id)) {
            continue;
        }
        const auto& g = grads.at(id);
        std::copy(g.data().begin(), g.data().end(), flat.begin() + static_cast<std::ptrdiff_t>(layout.slots()[i].offset));
    }
    return flat;
}

std::vector<std::uint8_t> param_subset_mask(const ParamLayout& layout, ParamSubset subset) {
    std::vector<std::uint8_t> mask(layout.total(), subset == ParamSubset::All ? 1 : 0);
    if (subset == ParamSubset::BnAffineOnly) {
        for (const auto& s : layout.slots()) {
            if (s.role == ParamRole::BnScale || s.role == ParamRole::BnShift) {
                std::fill(mask.begin() + static_cast<std::ptrdiff_t>(s.offset),
                          mask.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size), 1);
            }
        }
    }
    return mask;
}

std::vector<bool> slots_touched(const ParamLayout& layout, std::span<const std::uint8_t> mask) {
    if (mask.size() != layout.total()) {
        throw ShapeError("mask length " + std::to_string(mask.size()) + " does not match layout size " +
                         std::to_string(layout.total()));
    }
    std::vector<bool> touched;
    for (const auto& s : layout.slots()) {
        bool any = false;
        for (std::size_t i = s.offset; i < s.offset + s.size && !any; ++i) {
            any = mask[i] != 0;
        }
        touched.push_back(any);
    }
    return touched;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& matrix) {
    if (matrix.rank() != 2) {
        throw ShapeError("argmax_rows needs a matrix, got " + shape_string(matrix.shape()));
    }
    const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
    std::vector<std::size_t> out(rows, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c) {
            const T v = matrix[r * cols + c];
            const T b = matrix[r * cols + best];
            if (v > b || (std::isnan(b) && !std::isnan(v))) {
                best = c;
            }
        }
        out[r] = best;
    }
    return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_rows needs a matrix, got " + shape_string(logits.shape()));
    }
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.data().data() + r * cols;
        T hi = z[0];
        for (std::size_t c = 1; c < cols; ++c) {
            hi = std::max(hi, z[c]);
        }
        T s = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            s += std::exp(z[c] - hi);
        }
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = std::exp(z[c] - hi) / s;
        }
    }
    return out;
}

#define LATTA_INSTANTIATE_MODEL(T)                                                                              \
    template class ParameterVector<T>;                                                                          \
    template struct RunningStats<T>;                                                                            \
    template ParameterVector<T> build_model<T>(const ModelSpec&, Xoshiro256ss&);                               \
    template Tensor<T> forward<T>(const ModelSpec&, const ParameterVector<T>&, const RunningStats<T>&,          \
                                  const Tensor<T>&, BnMode);                                                    \
    template ForwardTrace<T> trace_forward<T>(const ModelSpec&, const ParameterVector<T>&, RunningStats<T>&,    \
                                              const Tensor<T>&, BnMode, const std::vector<bool>&);             \
    template std::vector<T> gather_gradient<T>(const ForwardTrace<T>&, const Gradients<T>&, const ParamLayout&); \
    template std::vector<std::size_t> argmax_rows<T>(const Tensor<T>&);                                         \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);

LATTA_INSTANTIATE_MODEL(float)
LATTA_INSTANTIATE_MODEL(double)

}  // namespace latta
