#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latta/model.hpp"
#include "latta/rng.hpp"
#include "latta/tensor.hpp"

namespace latta {

/// Hyperparameters of the Langevin-anchored update.
struct LattaConfig {
    double eta = 1e-4;          // learning rate
    double lambda_temp = 1e-3;  // noise temperature; noise variance is 2 * eta * lambda
    double alpha = 0.9;         // anchor strength
    double beta = 0.99;         // EMA decay
    ParamSubset subset = ParamSubset::All;

    void validate() const;
    double noise_variance() const { return 2.0 * eta * lambda_temp; }
};

struct TentConfig {
    double eta = 0.1;

    void validate() const;
};

enum class AdapterKind { Source, Tent, Latta };

std::string_view adapter_kind_name(AdapterKind kind);
AdapterKind adapter_kind_from_name(std::string_view name);

struct AdapterConfig {
    AdapterKind kind = AdapterKind::Latta;
    LattaConfig latta;
    TentConfig tent;

    void validate() const;
    /// True for adapters that normalize with current-batch statistics.
    bool uses_batch_statistics() const { return kind != AdapterKind::Source; }
};

template <typename T>
struct EntropyEvaluation {
    T value = T(0);
    std::vector<T> gradient;  // layout-aligned; zero outside the mask
    Tensor<T> logits;
    bool finite = true;
};

/// What an adapter needs from a classifier: logits and the entropy gradient
/// for an arbitrary parameter vector.
template <typename T>
class AdaptableModel {
public:
    virtual ~AdaptableModel() = default;

    virtual const ParamLayout& layout() const = 0;
    virtual std::vector<std::uint8_t> subset_mask(ParamSubset subset) const = 0;
    virtual Tensor<T> logits(const ParameterVector<T>& theta, const Tensor<T>& images, BnMode mode) const = 0;
    /// Entropy of the batch predictions and its gradient on masked coordinates.
    /// When the logits are non-finite, `finite` is false and the gradient is empty.
    virtual EntropyEvaluation<T> entropy(const ParameterVector<T>& theta, const Tensor<T>& images, BnMode mode,
                                         std::span<const std::uint8_t> mask) const = 0;
};

/// A network from a ModelSpec with frozen batchnorm running statistics.
template <typename T>
class NetworkModel final : public AdaptableModel<T> {
public:
    NetworkModel(ModelSpec spec, RunningStats<T> stats);

    const ModelSpec& spec() const noexcept { return spec_; }
    const RunningStats<T>& stats() const noexcept { return stats_; }

    const ParamLayout& layout() const override { return layout_; }
    std::vector<std::uint8_t> subset_mask(ParamSubset subset) const override;
    Tensor<T> logits(const ParameterVector<T>& theta, const Tensor<T>& images, BnMode mode) const override;
    EntropyEvaluation<T> entropy(const ParameterVector<T>& theta, const Tensor<T>& images, BnMode mode,
                                 std::span<const std::uint8_t> mask) const override;

private:
    ModelSpec spec_;
    RunningStats<T> stats_;
    ParamLayout layout_;
};

/// Mutable state threaded through one stream.
template <typename T>
struct AdapterState {
    ParameterVector<T> theta;
    ParameterVector<T> theta_ema;
    Xoshiro256ss rng;
    std::uint64_t step = 0;

    /// theta = theta_ema = theta0.
    static AdapterState initial(const ParameterVector<T>& theta0, Xoshiro256ss rng) {
        return AdapterState{theta0, theta0, rng, 0};
    }
};

template <typename T>
struct StepOutput {
    std::vector<std::size_t> predictions;
    Tensor<T> probabilities;
    double entropy = 0.0;
    double drift = 0.0;       // ||theta_star - theta0||
    double noise_norm = 0.0;  // ||epsilon_t||
    bool skipped = false;     // update aborted on a non-finite loss or gradient
};

/// `dimension` i.i.d. N(0, variance) draws via Box-Muller. Variance 0 yields
/// zeros without touching the generator. Negative variance throws.
template <typename T>
std::vector<T> gaussian_noise_sample(std::size_t dimension, double variance, Xoshiro256ss& rng);

/// One online step:
///   g    = masked entropy gradient at theta_t (batch statistics)
///   th*  = theta_t - eta * g + eps,   eps ~ N(0, 2 eta lambda I) on masked coordinates
///   predict with th*
///   ema  = beta * ema + (1 - beta) * th*
///   theta_{t+1} = (1 - alpha) * th* + alpha * ema      (uses the new ema)
template <typename T>
StepOutput<T> latta_step(AdapterState<T>& state, const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                         const Tensor<T>& images, const LattaConfig& config);

/// Same step with caller-supplied noise (one value per layout coordinate;
/// only masked coordinates are used). The generator is not advanced.
template <typename T>
StepOutput<T> latta_step_with_noise(AdapterState<T>& state, const AdaptableModel<T>& model,
                                    const ParameterVector<T>& theta0, const Tensor<T>& images,
                                    const LattaConfig& config, std::span<const T> noise);

/// Entropy descent on batchnorm affine parameters only; predicts with the
/// updated parameters.
template <typename T>
StepOutput<T> tent_step(AdapterState<T>& state, const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                        const Tensor<T>& images, const TentConfig& config);

/// No adaptation: running statistics, fixed weights.
template <typename T>
StepOutput<T> source_predict(const AdaptableModel<T>& model, const ParameterVector<T>& theta0,
                             const Tensor<T>& images);

/// Owns an AdapterState and dispatches to the configured step.
template <typename T>
class OnlineAdapter {
public:
    OnlineAdapter(const AdaptableModel<T>& model, ParameterVector<T> theta0, AdapterConfig config,
                  Xoshiro256ss rng);

    StepOutput<T> step(const Tensor<T>& images);

    const AdapterState<T>& state() const noexcept { return state_; }
    const AdapterConfig& config() const noexcept { return config_; }

private:
    const AdaptableModel<T>* model_;
    ParameterVector<T> theta0_;
    AdapterConfig config_;
    AdapterState<T> state_;
};

}  // namespace latta
