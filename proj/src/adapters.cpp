#include "latta/adapters.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "latta/log.hpp"
#include "latta/objectives.hpp"

namespace latta {

void LattaConfig::validate() const {
    if (!(eta > 0.0)) {
        throw std::invalid_argument("latta: eta must be > 0");
    }
    if (!(lambda_temp >= 0.0)) {
        throw std::invalid_argument("latta: lambda must be >= 0");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("latta: alpha must lie in [0, 1]");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw std::invalid_argument("latta: beta must lie in [0, 1]");
    }
}

void TentConfig::validate() const {
    if (!(eta >= 0.0)) {
        throw std::invalid_argument("tent: eta must be >= 0");
    }
}

void AdapterConfig::validate() const {
    if (kind == AdapterKind::Latta) {
        latta.validate();
    } else if (kind == AdapterKind::Tent) {
        tent.validate();
    }
}

std::string_view adapter_kind_name(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::Source:
            return "source";
        case AdapterKind::Tent:
            return "tent";
        case AdapterKind::Latta:
            return "latta";
    }
    return "unknown";
}

AdapterKind adapter_kind_from_name(std::string_view name) {
    if (name == "source") {
        return AdapterKind::Source;
    }
    if (name == "tent") {
        return AdapterKind::Tent;
    }
    if (name == "latta") {
        return AdapterKind::Latta;
    }
    throw std::invalid_argument("unknown adapter '" + std::string(name) + "'");
}

template <typename T>
NetworkModel<T>::NetworkModel(ModelSpec spec, RunningStats<T> stats)
    : spec_(std::move(spec)), stats_(std::move(stats)), layout_(ParamLayout::from_spec(spec_)) {
    if (stats_.values.size() != RunningStats<T>::initial(spec_).values.size()) {
        throw ShapeError("running statistics do not match the model spec");
    }
}

template <typename T>
std::vector<std::uint8_t> NetworkModel<T>::subset_mask(ParamSubset subset) const {
    return param_subset_mask(layout_, subset);
}

template <typename T>
Tensor<T> NetworkModel<T>::logits(const ParameterVector<T>& theta, const Tensor<T>& images, BnMode mode) const {
    if (mode == BnMode::Train) {
        throw std::invalid_argument("adaptation never runs batchnorm in train mode");
    }
    return forward(spec_, theta, stats_, images, mode);
}

template <typename T>
EntropyEvaluation<T> NetworkModel<T>::entropy(const ParameterVector<T>& theta, const Tensor<T>& images, BnMode mode,
                                              std::span<const std::uint8_t> mask) const {
    if (mode == BnMode::Train) {
        throw std::invalid_argument("adaptation never runs batchnorm in train mode");
    }
    const auto trainable = slots_touched(layout_, mask);
    RunningStats<T> frozen = stats_;
    auto trace = trace_forward(spec_, theta, frozen, images, mode, trainable);
    EntropyEvaluation<T> out;
    out.logits = trace.graph.value(trace.logits);
    if (!all_finite<T>(out.logits.data())) {
        out.finite = false;
        out.value = std::numeric_limits<T>::quiet_NaN();
        return out;
    }
    const NodeId loss = entropy_node(trace.graph, trace.logits);
    out.value = trace.graph.value(loss).item();
    bool any = false;
    for (bool t : trainable) {
        any = any || t;
    }
    if (!any) {
        out.gradient.assign(layout_.total(), T(0));
        return out;
    }
    const auto grads = trace.graph.backward(loss);
    out.gradient = gather_gradient(trace, grads, layout_);
    for (std::size_t i = 0; i < out.gradient.size(); ++i) {
        if (mask[i] == 0) {
            out.gradient[i] = T(0);
        }
    }
    return out;
}

template <typename T>
std::vector<T> gaussian_noise_sample(std::size_t dimension, double variance, Xoshiro256ss& rng) {
    if (!(variance >= 0.0)) {
        throw std::invalid_argument("gaussian noise variance must be >= 0");
    }
    std::vector<T> out(dimension, T(0));
    if (variance == 0.0) {
        return out;
    }
    const double sd = std::sqrt(variance);
    for (std::size_t i = 0; i < dimension; i += 2) {
        const auto [z0, z1] = rng.normal_pair();
        out[i] = static_cast<T>(sd * z0);
        if (i + 1 < dimension) {
            out[i + 1] = static_cast<T>(sd * z1);
        }
    }
    return out;
}

namespace {

template <typename T>
double l2_distance(std::span<const T> a, std::span<const T> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

template <typename T>
double l2_norm(std::span<const T> a) {
    double s = 0.0;
    for (T v : a) {
        s += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(s);
}

template <typename T>
void check_state(const AdapterState<T>& state, const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                 const Tensor<T>& images) {
    if (state.theta.layout() != model.layout() || state.theta_ema.layout() != model.layout() ||
        theta0.layout() != model.layout()) {
        throw ShapeError("adapter state is not aligned with the model");
    }
    if (images.rank() == 0 || images.dim(0) == 0) {
        throw std::invalid_argument("adapter step needs a nonempty batch");
    }
}

template <typename T>
StepOutput<T> predict(const Tensor<T>& logits) {
    StepOutput<T> out;
    out.probabilities = softmax_rows(logits);
    out.predictions = argmax_rows(out.probabilities);
    return out;
}

template <typename T>
StepOutput<T> skipped_step(AdapterState<T>& state, const ParameterVector<T>& theta0, const EntropyEvaluation<T>& eval,
                           std::string_view adapter) {
    log_warn(std::string(adapter) + ": non-finite loss or gradient at step " + std::to_string(state.step) +
             "; update skipped");
    StepOutput<T> out = predict(eval.logits);
    out.entropy = static_cast<double>(eval.value);
    out.drift = l2_distance<T>(state.theta.values(), theta0.values());
    out.skipped = true;
    state.step += 1;
    return out;
}

bool update_is_finite(bool logits_finite, double value, bool gradient_finite) {
    return logits_finite && std::isfinite(value) && gradient_finite;
}

template <typename T>
StepOutput<T> latta_step_impl(AdapterState<T>& state, const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                              const Tensor<T>& images, const LattaConfig& config, std::span<const T> injected) {
    config.validate();
    check_state(state, model, theta0, images);
    const auto mask = model.subset_mask(config.subset);
    const auto eval = model.entropy(state.theta, images, BnMode::Adapt, mask);
    if (!update_is_finite(eval.finite, static_cast<double>(eval.value), all_finite<T>(eval.gradient))) {
        return skipped_step(state, theta0, eval, "latta");
    }

    std::size_t active = 0;
    for (auto m : mask) {
        active += m != 0;
    }
    std::vector<T> noise;
    if (injected.empty()) {
        noise = gaussian_noise_sample<T>(active, config.noise_variance(), state.rng);
    } else {
        if (injected.size() != mask.size()) {
            throw ShapeError("injected noise must have one value per parameter");
        }
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0) {
                noise.push_back(injected[i]);
            }
        }
    }

    const T eta = static_cast<T>(config.eta);
    const T alpha = static_cast<T>(config.alpha);
    const T beta = static_cast<T>(config.beta);
    auto theta = state.theta.values();
    auto ema = state.theta_ema.values();
    ParameterVector<T> theta_star = state.theta;
    auto star = theta_star.values();

    std::size_t k = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0) {
            star[i] = (theta[i] - eta * eval.gradient[i]) + noise[k++];
        }
    }

    StepOutput<T> out = predict(model.logits(theta_star, images, BnMode::Adapt));
    out.entropy = static_cast<double>(eval.value);
    out.drift = l2_distance<T>(theta_star.values(), theta0.values());
    out.noise_norm = l2_norm<T>(noise);

    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0) {
            ema[i] = beta * ema[i] + (T(1) - beta) * star[i];
            theta[i] = (T(1) - alpha) * star[i] + alpha * ema[i];
        }
    }
    state.step += 1;
    return out;
}

}  // namespace

template <typename T>
StepOutput<T> latta_step(AdapterState<T>& state, const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                         const Tensor<T>& images, const LattaConfig& config) {
    return latta_step_impl<T>(state, model, theta0, images, config, {});
}

template <typename T>
StepOutput<T> latta_step_with_noise(AdapterState<T>& state, const AdaptableModel<T>& model,
                                    const ParameterVector<T>& theta0, const Tensor<T>& images,
                                    const LattaConfig& config, std::span<const T> noise) {
    if (noise.empty()) {
        throw std::invalid_argument("latta_step_with_noise needs a noise vector");
    }
    return latta_step_impl<T>(state, model, theta0, images, config, noise);
}

template <typename T>
StepOutput<T> tent_step(AdapterState<T>& state, const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                        const Tensor<T>& images, const TentConfig& config) {
    config.validate();
    check_state(state, model, theta0, images);
    const auto mask = model.subset_mask(ParamSubset::BnAffineOnly);
    const auto eval = model.entropy(state.theta, images, BnMode::Adapt, mask);
    if (!update_is_finite(eval.finite, static_cast<double>(eval.value), all_finite<T>(eval.gradient))) {
        return skipped_step(state, theta0, eval, "tent");
    }
    const auto updated = sgd_step<T>(state.theta.values(), eval.gradient, static_cast<T>(config.eta), mask);
    std::copy(updated.begin(), updated.end(), state.theta.values().begin());

    StepOutput<T> out = predict(model.logits(state.theta, images, BnMode::Adapt));
    out.entropy = static_cast<double>(eval.value);
    out.drift = l2_distance<T>(state.theta.values(), theta0.values());
    state.step += 1;
    return out;
}

template <typename T>
StepOutput<T> source_predict(const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                             const Tensor<T>& images) {
    const Tensor<T> logits = model.logits(theta0, images, BnMode::Eval);
    StepOutput<T> out = predict(logits);
    out.entropy = all_finite<T>(logits.data()) ? static_cast<double>(entropy_loss(logits).value)
                                               : std::numeric_limits<double>::quiet_NaN();
    return out;
}

template <typename T>
OnlineAdapter<T>::OnlineAdapter(const AdaptableModel<T>& model, ParameterVector<T> theta0, AdapterConfig config,
                                Xoshiro256ss rng)
    : model_(&model),
      theta0_(std::move(theta0)),
      config_(config),
      state_(AdapterState<T>::initial(theta0_, rng)) {
    config_.validate();
}

template <typename T>
StepOutput<T> OnlineAdapter<T>::step(const Tensor<T>& images) {
    switch (config_.kind) {
        case AdapterKind::Source: {
            state_.step += 1;
            return source_predict(*model_, theta0_, images);
        }
        case AdapterKind::Tent:
            return tent_step(state_, *model_, theta0_, images, config_.tent);
        case AdapterKind::Latta:
            return latta_step(state_, *model_, theta0_, images, config_.latta);
    }
    throw std::logic_error("unhandled adapter kind");
}

#define LATTA_INSTANTIATE_ADAPTERS(T)                                                                           \
    template class NetworkModel<T>;                                                                             \
    template std::vector<T> gaussian_noise_sample<T>(std::size_t, double, Xoshiro256ss&);                       \
    template StepOutput<T> latta_step<T>(AdapterState<T>&, const AdaptableModel<T>&, const ParameterVector<T>&, \
                                         const Tensor<T>&, const LattaConfig&);                                \
    template StepOutput<T> latta_step_with_noise<T>(AdapterState<T>&, const AdaptableModel<T>&,                 \
                                                    const ParameterVector<T>&, const Tensor<T>&,                \
                                                    const LattaConfig&, std::span<const T>);                    \
    template StepOutput<T> tent_step<T>(AdapterState<T>&, const AdaptableModel<T>&, const ParameterVector<T>&,  \
                                        const Tensor<T>&, const TentConfig&);                                   \
    template StepOutput<T> source_predict<T>(const AdaptableModel<T>&, const ParameterVector<T>&,               \
                                             const Tensor<T>&);                                                 \
    template class OnlineAdapter<T>;

LATTA_INSTANTIATE_ADAPTERS(float)
LATTA_INSTANTIATE_ADAPTERS(double)

}  // namespace latta
