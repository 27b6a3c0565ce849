#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "latta/autodiff.hpp"
#include "latta/tensor.hpp"

namespace latta {

/// A loss value and its gradient with respect to whatever was differentiated
/// (logits for the free functions below, the flat parameters for model-level
/// losses).
template <typename T>
struct LossValue {
    T value = T(0);
    std::vector<T> gradient;
};

class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Records -(1/n) sum_i sum_c p log p over [n, C] logits, natural log,
/// computed through log_softmax.
template <typename T>
NodeId entropy_node(Graph<T>& graph, NodeId logits);

/// Records -(1/n) sum_i log p(label_i). Labels must lie in [0, C).
template <typename T>
NodeId cross_entropy_node(Graph<T>& graph, NodeId logits, std::span<const std::size_t> labels);

/// Mean prediction entropy of [n, C] logits and its gradient w.r.t. the logits.
/// Throws NonFiniteError on non-finite input.
template <typename T>
LossValue<T> entropy_loss(const Tensor<T>& logits);

template <typename T>
LossValue<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::size_t> labels);

template <typename T>
bool all_finite(std::span<const T> values) noexcept;

/// theta - eta * g on coordinates where mask is nonzero; others are copied.
/// An empty mask means every coordinate.
template <typename T>
std::vector<T> sgd_step(std::span<const T> theta, std::span<const T> gradient, T eta,
                        std::span<const std::uint8_t> mask = {});

template <typename T>
struct AdamState {
    std::vector<T> first_moment;
    std::vector<T> second_moment;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState zeros(std::size_t n) { return AdamState{std::vector<T>(n, T(0)), std::vector<T>(n, T(0))}; }
    bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam, updating `theta` and `state` in place.
template <typename T>
void adam_step(AdamState<T>& state, std::span<T> theta, std::span<const T> gradient, double lr);

}  // namespace latta
