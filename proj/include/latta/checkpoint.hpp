#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string_view>

#include <nlohmann/json.hpp>

#include "latta/model.hpp"

namespace latta {

enum class Precision { Float32, Float64 };

std::string_view precision_name(Precision p);
Precision precision_from_name(std::string_view name);

template <typename T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Precision::Float32 : Precision::Float64;
}

/// Weights plus batchnorm buffers: everything a checkpoint holds.
template <typename T>
struct Model {
    ModelSpec spec;
    ParameterVector<T> params;
    RunningStats<T> stats;

    template <typename U>
    Model<U> cast() const {
        return Model<U>{spec, params.template cast<U>(),
                        RunningStats<U>{std::vector<U>(stats.values.begin(), stats.values.end())}};
    }
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

/// Binary container, little-endian:
///   "LATTACKP" | u32 version | u32 scalar bytes (4 or 8) | u64 header length |
///   header JSON (model spec, counts) | parameter values | running statistics
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model);

/// Loads a checkpoint, converting precision when the file's tag differs from T.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

Precision checkpoint_precision(const std::filesystem::path& path);

}  // namespace latta
