#include "latta/objectives.hpp"

#include <cmath>
#include <string>

namespace latta {
namespace {

template <typename T>
void check_logits(const Tensor<T>& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("loss expects [n, C] logits, got " + shape_string(logits.shape()));
    }
    if (!all_finite<T>(logits.data())) {
        throw NonFiniteError("loss received non-finite logits");
    }
}

void check_aligned(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": vectors are not aligned (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
}

}  // namespace

template <typename T>
bool all_finite(std::span<const T> values) noexcept {
    for (T v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

template <typename T>
NodeId entropy_node(Graph<T>& graph, NodeId logits) {
    const auto& z = graph.value(logits);
    if (z.rank() != 2) {
        throw ShapeError("entropy expects [n, C] logits, got " + shape_string(z.shape()));
    }
    const auto n = static_cast<T>(z.dim(0));
    const NodeId log_p = graph.log_softmax(logits);
    const NodeId p = graph.exp(log_p);
    return graph.scale(graph.sum(graph.mul(p, log_p)), T(-1) / n);
}

template <typename T>
NodeId cross_entropy_node(Graph<T>& graph, NodeId logits, std::span<const std::size_t> labels) {
    const auto& z = graph.value(logits);
    if (z.rank() != 2 || labels.size() != z.dim(0)) {
        throw ShapeError("cross entropy expects [n, C] logits and n labels");
    }
    const std::size_t classes = z.dim(1);
    Tensor<T> one_hot(z.shape());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) +
                                    ")");
        }
        one_hot[i * classes + labels[i]] = T(1);
    }
    const NodeId picked = graph.mul(graph.log_softmax(logits), graph.leaf(std::move(one_hot)));
    return graph.scale(graph.sum(picked), T(-1) / static_cast<T>(labels.size()));
}

template <typename T>
LossValue<T> entropy_loss(const Tensor<T>& logits) {
    check_logits(logits);
    Graph<T> g;
    const NodeId z = g.leaf(logits, true);
    const NodeId loss = entropy_node(g, z);
    auto grads = g.backward(loss);
    return {g.value(loss).item(), grads.at(z).values()};
}

template <typename T>
LossValue<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::size_t> labels) {
    check_logits(logits);
    Graph<T> g;
    const NodeId z = g.leaf(logits, true);
    const NodeId loss = cross_entropy_node(g, z, labels);
    auto grads = g.backward(loss);
    return {g.value(loss).item(), grads.at(z).values()};
}

template <typename T>
std::vector<T> sgd_step(std::span<const T> theta, std::span<const T> gradient, T eta,
                        std::span<const std::uint8_t> mask) {
    check_aligned(theta.size(), gradient.size(), "sgd_step");
    if (!mask.empty()) {
        check_aligned(theta.size(), mask.size(), "sgd_step mask");
    }
    std::vector<T> out(theta.begin(), theta.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (mask.empty() || mask[i] != 0) {
            out[i] = theta[i] - eta * gradient[i];
        }
    }
    return out;
}

template <typename T>
void adam_step(AdamState<T>& state, std::span<T> theta, std::span<const T> gradient, double lr) {
    check_aligned(theta.size(), gradient.size(), "adam_step");
    check_aligned(theta.size(), state.first_moment.size(), "adam_step first moment");
    check_aligned(theta.size(), state.second_moment.size(), "adam_step second moment");
    state.step += 1;
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    const T correction1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
    const T correction2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
    const T rate = static_cast<T>(lr);
    const T eps = static_cast<T>(state.epsilon);
    auto& m = state.first_moment;
    auto& v = state.second_moment;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = gradient[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T m_hat = m[i] / correction1;
        const T v_hat = v[i] / correction2;
        theta[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
    }
}

#define LATTA_INSTANTIATE_OBJECTIVES(T)                                                                    \
    template bool all_finite<T>(std::span<const T>) noexcept;                                              \
    template NodeId entropy_node<T>(Graph<T>&, NodeId);                                                    \
    template NodeId cross_entropy_node<T>(Graph<T>&, NodeId, std::span<const std::size_t>);                \
    template LossValue<T> entropy_loss<T>(const Tensor<T>&);                                               \
    template LossValue<T> cross_entropy_loss<T>(const Tensor<T>&, std::span<const std::size_t>);           \
    template std::vector<T> sgd_step<T>(std::span<const T>, std::span<const T>, T,                         \
                                        std::span<const std::uint8_t>);                                    \
    template void adam_step<T>(AdamState<T>&, std::span<T>, std::span<const T>, double);

LATTA_INSTANTIATE_OBJECTIVES(float)
LATTA_INSTANTIATE_OBJECTIVES(double)

}  // namespace latta
