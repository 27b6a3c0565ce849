#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latta/adapters.hpp"
#include "latta/checkpoint.hpp"
#include "latta/dataio.hpp"
#include "latta/shift.hpp"

namespace latta {

/// Raised for invalid or inconsistent configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class DataSource { Synthetic, Glyphs, Idx };

std::string_view data_source_name(DataSource source);
DataSource data_source_from_name(std::string_view name);

struct DataConfig {
    DataSource source = DataSource::Synthetic;
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
    std::size_t train_size = 10000;
    std::size_t stream_size = 2000;
    std::uint64_t synth_seed = 1;
};

struct RunConfig {
    Architecture architecture = Architecture::MnistCnn;
    std::size_t class_count = 10;
    InputShape input;
    AdapterConfig adapter;
    ShiftSpec shift{ShiftKind::Rotation, 5, 0};
    std::size_t batch_size = 64;
    std::size_t seeds = 3;
    std::uint64_t seed = 0;  // master seed; run i uses seed + i
    DataConfig data;
    std::size_t epochs = 5;
    std::filesystem::path checkpoint;
    std::filesystem::path out_dir = "results";
    Precision precision = Precision::Float32;

    // Sweep grids.
    std::vector<std::size_t> batch_sizes{16, 32, 64, 128};
    std::vector<double> lambdas{0.0, 1e-5, 1e-4, 1e-3, 1e-2};
    std::vector<double> alphas{0.0, 0.5, 0.9, 0.99, 1.0};

    /// Throws ConfigError.
    void validate() const;
    ModelSpec model_spec() const;
};

/// Flat key/value form; keys are the CLI flag names with '-' replaced by '_'.
nlohmann::json config_to_json(const RunConfig& config);
/// Overlays the keys present in `j` on `base`. Unknown keys throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});
std::uint64_t config_hash(const RunConfig& config);

/// Version string stamped on every report.
std::string artifact_version();

struct DataSplit {
    Dataset train;
    Dataset test;
};

/// Synthetic: disjoint seeds for train and test. IDX: the four paths, with
/// the train set cut to train_size and the test set to stream_size.
DataSplit load_data(const DataConfig& config, std::size_t class_count, InputShape input);

struct PretrainOptions {
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> checkpoint;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Cross-entropy training with Adam and batchnorm in train mode.
template <typename T>
Model<T> pretrain(const ModelSpec& spec, const Dataset& train, const PretrainOptions& options);

/// Eval-mode top-1 accuracy.
template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, std::size_t batch_size = 250);

struct BatchRecord {
    std::size_t index = 0;
    std::size_t size = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    double entropy = 0.0;
    double drift = 0.0;
    double noise_norm = 0.0;
    bool skipped = false;
};

struct StreamResult {
    std::vector<BatchRecord> records;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
};

/// One pass over the stream: every batch is adapted on once and predicted once.
template <typename T>
StreamResult run_online(const Model<T>& model, const ShiftStream& stream, const AdapterConfig& adapter,
                        std::uint64_t seed);

/// Per-batch records as CSV, without wall-clock fields.
void write_run_csv(const std::filesystem::path& path, const StreamResult& result);

struct AggregateResult {
    std::string method;
    AdapterConfig adapter;
    ShiftSpec shift;
    std::size_t batch_size = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;
    std::vector<double> wall_seconds;
    double mean = 0.0;
    double std = 0.0;  // n - 1 denominator; 0 for a single seed
};

/// Sample mean and n-1 standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);
/// Root mean of two sample variances.
double pooled_std(const AggregateResult& a, const AggregateResult& b);

struct SweepReport {
    std::string kind;  // adapt | ablate | sweep-batch | sweep-hparam
    RunConfig config;
    std::vector<AggregateResult> rows;

    const AggregateResult& row(std::string_view method) const;
};

/// Runs adapters over seed-fixed streams. Each (shift, batch size, seed)
/// stream is materialized to a replay file under out_dir/streams the first
/// time it is needed and always read back from that file, so every adapter
/// sees byte-identical input.
template <typename T>
class Experiment {
public:
    Experiment(Model<T> model, Dataset test, RunConfig config);

    const RunConfig& config() const noexcept { return config_; }
    const Model<T>& model() const noexcept { return model_; }

    const ShiftStream& stream(const ShiftSpec& shift, std::size_t batch_size, std::uint64_t seed);

    /// Runs `adapter` on config.seeds streams and writes one CSV per run.
    AggregateResult replicate(const std::string& method, const AdapterConfig& adapter, const ShiftSpec& shift,
                              std::size_t batch_size);

    SweepReport adapt();
    /// Tent, LATTA without noise, LATTA without anchor, full LATTA.
    SweepReport ablation_suite();
    /// Tent and LATTA at each of config.batch_sizes on equal-content streams.
    SweepReport batch_size_sweep();
    /// lambda grid at the configured alpha, then alpha grid at the configured lambda.
    SweepReport hyperparam_sweep();

private:
    Dataset equal_content_test() const;

    Model<T> model_;
    Dataset test_;
    RunConfig config_;
    std::optional<Dataset> batch_sweep_data_;
    std::map<std::string, ShiftStream> streams_;
};

constexpr int kSummarySchemaVersion = 1;

nlohmann::json summary_to_json(const SweepReport& report);
void write_summary(const std::filesystem::path& path, const SweepReport& report);

/// Accuracy drop from the largest to the smallest batch size per method.
std::map<std::string, double> batch_size_drops(const SweepReport& report);

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tidy long-format rows: method, shift, severity, batch_size, lambda, alpha, mean, std.
std::string report_csv(const std::vector<nlohmann::json>& summaries);

}  // namespace latta
