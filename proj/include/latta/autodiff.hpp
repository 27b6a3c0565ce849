#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "latta/tensor.hpp"

namespace latta {

enum class OpKind {
    Leaf,
    MatMul,
    Add,
    Conv2d,
    MaxPool2d,
    Relu,
    BatchNorm2d,
    LogSoftmax,
    Exp,
    Sum,
    Mean,
    Mul,
    Negate,
    Scale,
    Reshape,
};

std::string_view op_kind_name(OpKind kind);

class UnsupportedOpError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parses an op name such as "conv2d"; unknown names throw UnsupportedOpError.
OpKind op_kind_from_name(std::string_view name);

/// Batch normalization behavior.
///   Train: normalize with batch statistics and update the running statistics.
///   Eval:  normalize with the running statistics.
///   Adapt: normalize with batch statistics; running statistics stay frozen.
enum class BnMode { Train, Eval, Adapt };

std::string_view bn_mode_name(BnMode mode);

struct NodeId {
    std::size_t index = 0;
    auto operator<=>(const NodeId&) const = default;
};

template <typename T>
struct BatchNormOptions {
    BnMode mode = BnMode::Train;
    std::span<const T> running_mean;
    std::span<const T> running_var;
    // Written in Train mode only; may alias the running spans.
    std::span<T> update_mean;
    std::span<T> update_var;
    T eps = T(1e-5);
    T momentum = T(0.1);
};

template <typename T>
struct OpAttributes {
    T scale = T(1);
    Shape shape;
    BatchNormOptions<T> batchnorm;
};

template <typename T>
class Gradients {
public:
    explicit Gradients(std::size_t node_count) : grads_(node_count) {}

    bool contains(NodeId id) const { return id.index < grads_.size() && grads_[id.index].has_value(); }
    const Tensor<T>& at(NodeId id) const;

    void set(NodeId id, Tensor<T> grad) { grads_.at(id.index) = std::move(grad); }

private:
    std::vector<std::optional<Tensor<T>>> grads_;
};

/// Tape of operations evaluated eagerly. Nodes are appended in evaluation
/// order, so node ids are already a topological order.
///
/// Supported kinds and their inputs:
///   matmul(a[n,k], b[k,m])            add(a, b)  b same shape or a trailing suffix
///   conv2d(x[N,C,H,W], w[O,C,3,3] [, bias[O]])   stride 1, zero padding 1
///   maxpool2d(x)  2x2 window, stride 2          relu, exp, negate
///   batchnorm2d(x, gamma[C], beta[C])           log_softmax (last axis)
///   sum, mean (full reductions)                 mul (same shape)
///   scale(x) by attrs.scale                     reshape(x) to attrs.shape
/// Reductions sum left to right in row-major order.
template <typename T>
class Graph {
public:
    Graph() = default;

    NodeId leaf(Tensor<T> value, bool requires_grad = false);

    NodeId apply(OpKind kind, std::span<const NodeId> inputs, const OpAttributes<T>& attrs = {});
    NodeId apply(OpKind kind, std::initializer_list<NodeId> inputs, const OpAttributes<T>& attrs = {}) {
        return apply(kind, std::span<const NodeId>(inputs.begin(), inputs.size()), attrs);
    }

    NodeId matmul(NodeId a, NodeId b) { return apply(OpKind::MatMul, {a, b}); }
    NodeId add(NodeId a, NodeId b) { return apply(OpKind::Add, {a, b}); }
    NodeId conv2d(NodeId x, NodeId w) { return apply(OpKind::Conv2d, {x, w}); }
    NodeId conv2d(NodeId x, NodeId w, NodeId bias) { return apply(OpKind::Conv2d, {x, w, bias}); }
    NodeId maxpool2d(NodeId x) { return apply(OpKind::MaxPool2d, {x}); }
    NodeId relu(NodeId x) { return apply(OpKind::Relu, {x}); }
    NodeId batchnorm2d(NodeId x, NodeId gamma, NodeId beta, const BatchNormOptions<T>& options);
    NodeId log_softmax(NodeId x) { return apply(OpKind::LogSoftmax, {x}); }
    NodeId exp(NodeId x) { return apply(OpKind::Exp, {x}); }
    NodeId sum(NodeId x) { return apply(OpKind::Sum, {x}); }
    NodeId mean(NodeId x) { return apply(OpKind::Mean, {x}); }
    NodeId mul(NodeId a, NodeId b) { return apply(OpKind::Mul, {a, b}); }
    NodeId negate(NodeId x) { return apply(OpKind::Negate, {x}); }
    NodeId scale(NodeId x, T factor);
    NodeId reshape(NodeId x, Shape shape);

    const Tensor<T>& value(NodeId id) const { return nodes_.at(id.index).value; }
    bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }
    OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse-mode sweep from a single-element loss. Returns d(loss)/d(leaf)
    /// for every leaf created with requires_grad.
    Gradients<T> backward(NodeId loss) const;

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        std::vector<NodeId> inputs;
        Tensor<T> value;
        bool requires_grad = false;
        T scale = T(1);
        BnMode bn_mode = BnMode::Train;
        std::vector<T> saved;         // conv: im2col columns; batchnorm: x-hat
        std::vector<T> saved_stats;   // batchnorm: per-channel 1/sqrt(var + eps)
        std::vector<std::uint32_t> argmax;  // maxpool
    };

    const Node& node(NodeId id) const;
    NodeId push(Node n);

    std::vector<Node> nodes_;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename T>
std::vector<T> finite_difference_grad(const std::function<T(std::span<const T>)>& f,
                                      std::span<const T> x, T step);

}  // namespace latta
