#include "latta/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "latta/log.hpp"
#include "latta/objectives.hpp"

#ifndef LATTA_VERSION
#define LATTA_VERSION "0.0.0"
#endif
#ifndef LATTA_GIT_REV
#define LATTA_GIT_REV "unknown"
#endif

namespace latta {
namespace {

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

std::string exact(double v) {
    return fmt("%.17g", v);
}

InputShape parse_shape(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("input must be [channels, height, width]");
    }
    return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(), j.at(2).get<std::size_t>()};
}

template <typename T>
Tensor<T> batch_tensor(const Dataset& data, std::span<const std::size_t> order, std::size_t begin, std::size_t end) {
    return gather_images<T>(data, order.subspan(begin, end - begin));
}

std::string stream_key(const ShiftSpec& shift, std::size_t batch_size, std::uint64_t seed, std::size_t n) {
    return std::string(shift_kind_name(shift.kind)) + "_sev" + std::to_string(shift.severity) + "_k" +
           std::to_string(shift.seed) + "_b" + std::to_string(batch_size) + "_n" + std::to_string(n) + "_seed" +
           std::to_string(seed);
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_')) {
            c = '_';
        }
    }
    return s;
}

AdapterConfig latta_variant(const AdapterConfig& base, double lambda, double alpha) {
    AdapterConfig c = base;
    c.kind = AdapterKind::Latta;
    c.latta.lambda_temp = lambda;
    c.latta.alpha = alpha;
    return c;
}

AdapterConfig with_kind(const AdapterConfig& base, AdapterKind kind) {
    AdapterConfig c = base;
    c.kind = kind;
    return c;
}

}  // namespace

std::string_view data_source_name(DataSource source) {
    switch (source) {
        case DataSource::Synthetic:
            return "synthetic";
        case DataSource::Glyphs:
            return "glyphs";
        case DataSource::Idx:
            return "idx";
    }
    return "unknown";
}

DataSource data_source_from_name(std::string_view name) {
    if (name == "synthetic" || name == "synth") {
        return DataSource::Synthetic;
    }
    if (name == "glyphs") {
        return DataSource::Glyphs;
    }
    if (name == "idx" || name == "mnist") {
        return DataSource::Idx;
    }
    throw ConfigError("unknown data source '" + std::string(name) + "'");
}

void RunConfig::validate() const {
    try {
        adapter.validate();
        shift.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (class_count < 2) {
        throw ConfigError("class_count must be >= 2");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (adapter.uses_batch_statistics() && batch_size < 2) {
        throw ConfigError("batch_size must be >= 2 for adapters that use batch statistics");
    }
    for (std::size_t b : batch_sizes) {
        if (b < 2) {
            throw ConfigError("every sweep batch size must be >= 2");
        }
    }
    if (seeds < 1) {
        throw ConfigError("seeds must be >= 1");
    }
    if (data.stream_size < batch_size) {
        throw ConfigError("stream_size must be at least one batch");
    }
    if (data.source == DataSource::Idx &&
        (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
         data.test_labels.empty())) {
        throw ConfigError("the idx data source needs --train-images, --train-labels, --test-images, --test-labels");
    }
    for (double l : lambdas) {
        if (!(l >= 0.0)) {
            throw ConfigError("lambda grid values must be >= 0");
        }
    }
    for (double a : alphas) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw ConfigError("alpha grid values must lie in [0, 1]");
        }
    }
    if (architecture == Architecture::MnistCnn && (input.height % 4 != 0 || input.width % 4 != 0)) {
        throw ConfigError("mnist_cnn needs height and width divisible by 4");
    }
}

ModelSpec RunConfig::model_spec() const {
    if (architecture == Architecture::MnistCnn) {
        return make_mnist_cnn(class_count, input);
    }
    return make_mlp(input, {128}, class_count);
}

nlohmann::json config_to_json(const RunConfig& c) {
    return {
        {"architecture", architecture_name(c.architecture)},
        {"classes", c.class_count},
        {"input", {c.input.channels, c.input.height, c.input.width}},
        {"adapter", adapter_kind_name(c.adapter.kind)},
        {"eta", c.adapter.latta.eta},
        {"lambda", c.adapter.latta.lambda_temp},
        {"alpha", c.adapter.latta.alpha},
        {"beta", c.adapter.latta.beta},
        {"subset", param_subset_name(c.adapter.latta.subset)},
        {"tent_eta", c.adapter.tent.eta},
        {"shift", shift_kind_name(c.shift.kind)},
        {"severity", c.shift.severity},
        {"batch_size", c.batch_size},
        {"seeds", c.seeds},
        {"seed", c.seed},
        {"data", data_source_name(c.data.source)},
        {"train_images", c.data.train_images.string()},
        {"train_labels", c.data.train_labels.string()},
        {"test_images", c.data.test_images.string()},
        {"test_labels", c.data.test_labels.string()},
        {"train_size", c.data.train_size},
        {"stream_size", c.data.stream_size},
        {"synth_seed", c.data.synth_seed},
        {"epochs", c.epochs},
        {"checkpoint", c.checkpoint.string()},
        {"out", c.out_dir.string()},
        {"precision", precision_name(c.precision)},
        {"batch_sizes", c.batch_sizes},
        {"lambdas", c.lambdas},
        {"alphas", c.alphas},
    };
}

RunConfig config_from_json(const nlohmann::json& j, RunConfig c) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "architecture") {
                const auto name = v.get<std::string>();
                if (name == "mnist_cnn") {
                    c.architecture = Architecture::MnistCnn;
                } else if (name == "mlp") {
                    c.architecture = Architecture::Mlp;
                } else {
                    throw ConfigError("unknown architecture '" + name + "'");
                }
            } else if (key == "classes") {
                c.class_count = v.get<std::size_t>();
            } else if (key == "input") {
                c.input = parse_shape(v);
            } else if (key == "adapter") {
                c.adapter.kind = adapter_kind_from_name(v.get<std::string>());
            } else if (key == "eta") {
                c.adapter.latta.eta = v.get<double>();
            } else if (key == "lambda") {
                c.adapter.latta.lambda_temp = v.get<double>();
            } else if (key == "alpha") {
                c.adapter.latta.alpha = v.get<double>();
            } else if (key == "beta") {
                c.adapter.latta.beta = v.get<double>();
            } else if (key == "subset") {
                c.adapter.latta.subset = param_subset_from_name(v.get<std::string>());
            } else if (key == "tent_eta") {
                c.adapter.tent.eta = v.get<double>();
            } else if (key == "shift") {
                c.shift.kind = shift_kind_from_name(v.get<std::string>());
            } else if (key == "severity") {
                c.shift.severity = v.get<int>();
            } else if (key == "batch_size") {
                c.batch_size = v.get<std::size_t>();
            } else if (key == "seeds") {
                c.seeds = v.get<std::size_t>();
            } else if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else if (key == "data") {
                c.data.source = data_source_from_name(v.get<std::string>());
            } else if (key == "train_images") {
                c.data.train_images = v.get<std::string>();
            } else if (key == "train_labels") {
                c.data.train_labels = v.get<std::string>();
            } else if (key == "test_images") {
                c.data.test_images = v.get<std::string>();
            } else if (key == "test_labels") {
                c.data.test_labels = v.get<std::string>();
            } else if (key == "train_size") {
                c.data.train_size = v.get<std::size_t>();
            } else if (key == "stream_size") {
                c.data.stream_size = v.get<std::size_t>();
            } else if (key == "synth_seed") {
                c.data.synth_seed = v.get<std::uint64_t>();
            } else if (key == "epochs") {
                c.epochs = v.get<std::size_t>();
            } else if (key == "checkpoint") {
                c.checkpoint = v.get<std::string>();
            } else if (key == "out") {
                c.out_dir = v.get<std::string>();
            } else if (key == "precision") {
                c.precision = precision_from_name(v.get<std::string>());
            } else if (key == "batch_sizes") {
                c.batch_sizes = v.get<std::vector<std::size_t>>();
            } else if (key == "lambdas") {
                c.lambdas = v.get<std::vector<double>>();
            } else if (key == "alphas") {
                c.alphas = v.get<std::vector<double>>();
            } else {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j, std::move(base));
}

std::uint64_t config_hash(const RunConfig& config) {
    auto j = config_to_json(config);
    j.erase("out");
    return fnv1a64(j.dump());
}

std::string artifact_version() {
    return std::string(LATTA_VERSION) + "+" + LATTA_GIT_REV;
}

DataSplit load_data(const DataConfig& config, std::size_t class_count, InputShape input) {
    DataSplit split;
    if (config.source == DataSource::Synthetic) {
        split.train = synth_blobs(config.train_size, class_count, input, config.synth_seed);
        split.test = synth_blobs(config.stream_size, class_count, input, config.synth_seed ^ 0x7e57da7a5eedULL);
        return split;
    }
    if (config.source == DataSource::Glyphs) {
        split.train = synth_glyphs(config.train_size, class_count, input, config.synth_seed);
        split.test = synth_glyphs(config.stream_size, class_count, input, config.synth_seed ^ 0x7e57da7a5eedULL);
        return split;
    }
    split.train = load_idx(config.train_images, config.train_labels, class_count).head(config.train_size);
    split.test = load_idx(config.test_images, config.test_labels, class_count).head(config.stream_size);
    if (split.train.shape != input || split.test.shape != input) {
        throw ConfigError("IDX image shape does not match the configured input shape");
    }
    return split;
}

template <typename T>
Model<T> pretrain(const ModelSpec& spec, const Dataset& train, const PretrainOptions& options) {
    train.validate();
    if (train.shape != spec.input) {
        throw ShapeError("training images do not match the model input shape");
    }
    auto init_rng = Xoshiro256ss::for_stream(options.seed, "init");
    Model<T> model{spec, build_model<T>(spec, init_rng), RunningStats<T>::initial(spec)};
    const auto& layout = model.params.layout();
    const std::vector<bool> trainable(layout.slots().size(), true);
    auto adam = AdamState<T>::zeros(model.params.size());

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        auto rng = Xoshiro256ss::for_stream(options.seed, 1000 + epoch);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0, steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
            const std::size_t end = std::min(order.size(), begin + options.batch_size);
            if (end - begin < 2) {
                break;  // batchnorm train mode needs two samples
            }
            const auto images = batch_tensor<T>(train, order, begin, end);
            std::vector<std::size_t> labels;
            for (std::size_t k = begin; k < end; ++k) {
                labels.push_back(train.labels[order[k]]);
            }
            auto trace = trace_forward(spec, model.params, model.stats, images, BnMode::Train, trainable);
            const NodeId loss = cross_entropy_node(trace.graph, trace.logits, labels);
            const T loss_value = trace.graph.value(loss).item();
            if (!std::isfinite(static_cast<double>(loss_value))) {
                throw DivergenceError("pretraining diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                                      std::to_string(steps + 1) + " (loss " + exact(loss_value) + ")");
            }
            const auto grads = trace.graph.backward(loss);
            const auto g = gather_gradient(trace, grads, layout);
            if (!all_finite<T>(g)) {
                throw DivergenceError("non-finite gradient during pretraining at epoch " + std::to_string(epoch + 1));
            }
            adam_step<T>(adam, model.params.values(), g, options.learning_rate);
            const auto pred = argmax_rows(trace.graph.value(trace.logits));
            for (std::size_t k = 0; k < labels.size(); ++k) {
                correct += pred[k] == labels[k];
            }
            loss_sum += static_cast<double>(loss_value);
            seen += labels.size();
            ++steps;
        }
        log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(options.epochs) + ": loss " +
                 fmt("%.4f", steps ? loss_sum / static_cast<double>(steps) : 0.0) + ", train accuracy " +
                 fmt("%.4f", seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0));
    }
    if (options.checkpoint) {
        save_checkpoint(*options.checkpoint, model);
    }
    return model;
}

template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, std::size_t batch_size) {
    data.validate();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(order.size(), begin + batch_size);
        const auto logits = forward(model.spec, model.params, model.stats, batch_tensor<T>(data, order, begin, end),
                                    BnMode::Eval);
        const auto pred = argmax_rows(logits);
        for (std::size_t k = begin; k < end; ++k) {
            correct += pred[k - begin] == data.labels[k];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
StreamResult run_online(const Model<T>& model, const ShiftStream& stream, const AdapterConfig& adapter,
                        std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    NetworkModel<T> network(model.spec, model.stats);
    OnlineAdapter<T> online(network, model.params, adapter, Xoshiro256ss::for_stream(seed, "adapter"));
    StreamResult result;
    result.seed = seed;
    for (std::size_t b = 0; b < stream.batches.size(); ++b) {
        const Batch& batch = stream.batches[b];
        StepOutput<T> out;
        try {
            out = online.step(batch.tensor<T>());
        } catch (const std::exception& e) {
            throw std::runtime_error("batch " + std::to_string(b) + ": " + e.what());
        }
        BatchRecord rec;
        rec.index = b;
        rec.size = batch.size();
        for (std::size_t k = 0; k < batch.size(); ++k) {
            rec.correct += out.predictions.at(k) == batch.labels[k];
        }
        rec.accuracy = static_cast<double>(rec.correct) / static_cast<double>(rec.size);
        rec.entropy = out.entropy;
        rec.drift = out.drift;
        rec.noise_norm = out.noise_norm;
        rec.skipped = out.skipped;
        result.correct += rec.correct;
        result.total += rec.size;
        result.records.push_back(rec);
    }
    result.accuracy = result.total ? static_cast<double>(result.correct) / static_cast<double>(result.total) : 0.0;
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

void write_run_csv(const std::filesystem::path& path, const StreamResult& result) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "batch,size,correct,accuracy,entropy,drift,noise_norm,skipped\n";
    for (const auto& r : result.records) {
        out << r.index << ',' << r.size << ',' << r.correct << ',' << exact(r.accuracy) << ',' << exact(r.entropy)
            << ',' << exact(r.drift) << ',' << exact(r.noise_norm) << ',' << (r.skipped ? 1 : 0) << '\n';
    }
    out << "# seed=" << result.seed << " correct=" << result.correct << " total=" << result.total
        << " accuracy=" << exact(result.accuracy) << '\n';
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) {
        return {0.0, 0.0};
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    const double mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

double pooled_std(const AggregateResult& a, const AggregateResult& b) {
    return std::sqrt((a.std * a.std + b.std * b.std) / 2.0);
}

const AggregateResult& SweepReport::row(std::string_view method) const {
    for (const auto& r : rows) {
        if (r.method == method) {
            return r;
        }
    }
    throw std::out_of_range("no report row named '" + std::string(method) + "'");
}

template <typename T>
Experiment<T>::Experiment(Model<T> model, Dataset test, RunConfig config)
    : model_(std::move(model)), test_(std::move(test)), config_(std::move(config)) {
    config_.validate();
    test_.validate();
    if (model_.spec.input != test_.shape) {
        throw ConfigError("stream images do not match the checkpoint input shape");
    }
}

template <typename T>
const ShiftStream& Experiment<T>::stream(const ShiftSpec& shift, std::size_t batch_size, std::uint64_t seed) {
    const Dataset& data = batch_sweep_data_ ? *batch_sweep_data_ : test_;
    const std::string key = stream_key(shift, batch_size, seed, data.size());
    auto it = streams_.find(key);
    if (it != streams_.end()) {
        return it->second;
    }
    const auto path = config_.out_dir / "streams" / (key + ".bin");
    save_stream(path, make_shift_stream(data, shift, batch_size, seed));
    return streams_.emplace(key, load_stream(path)).first->second;
}

template <typename T>
AggregateResult Experiment<T>::replicate(const std::string& method, const AdapterConfig& adapter,
                                         const ShiftSpec& shift, std::size_t batch_size) {
    AggregateResult agg;
    agg.method = method;
    agg.adapter = adapter;
    agg.shift = shift;
    agg.batch_size = batch_size;
    for (std::size_t i = 0; i < config_.seeds; ++i) {
        const std::uint64_t seed = config_.seed + i;
        const auto& s = stream(shift, batch_size, seed);
        const auto result = run_online(model_, s, adapter, seed);
        const std::string name = sanitize(method + "_" + std::string(shift_kind_name(shift.kind)) + "_sev" +
                                          std::to_string(shift.severity) + "_b" + std::to_string(batch_size) +
                                          "_seed" + std::to_string(seed)) +
                                 ".csv";
        write_run_csv(config_.out_dir / "runs" / name, result);
        agg.seeds.push_back(seed);
        agg.accuracies.push_back(result.accuracy);
        agg.wall_seconds.push_back(result.wall_seconds);
        log_info(method + " seed " + std::to_string(seed) + ": accuracy " + fmt("%.4f", result.accuracy) + " (" +
                 fmt("%.1f", result.wall_seconds) + " s)");
    }
    std::tie(agg.mean, agg.std) = mean_std(agg.accuracies);
    return agg;
}

template <typename T>
SweepReport Experiment<T>::adapt() {
    SweepReport report{"adapt", config_, {}};
    report.rows.push_back(replicate(std::string(adapter_kind_name(config_.adapter.kind)), config_.adapter,
                                    config_.shift, config_.batch_size));
    return report;
}

template <typename T>
SweepReport Experiment<T>::ablation_suite() {
    const auto& base = config_.adapter;
    SweepReport report{"ablate", config_, {}};
    report.rows.push_back(replicate("tent", with_kind(base, AdapterKind::Tent), config_.shift, config_.batch_size));
    report.rows.push_back(replicate("latta_no_noise", latta_variant(base, 0.0, base.latta.alpha), config_.shift,
                                    config_.batch_size));
    report.rows.push_back(replicate("latta_no_anchor", latta_variant(base, base.latta.lambda_temp, 0.0),
                                    config_.shift, config_.batch_size));
    report.rows.push_back(replicate("latta", with_kind(base, AdapterKind::Latta), config_.shift, config_.batch_size));
    return report;
}

template <typename T>
Dataset Experiment<T>::equal_content_test() const {
    const std::size_t largest = *std::max_element(config_.batch_sizes.begin(), config_.batch_sizes.end());
    const std::size_t n = test_.size() / largest * largest;
    if (n == 0) {
        throw ConfigError("stream is smaller than the largest sweep batch size");
    }
    return test_.head(n);
}

template <typename T>
SweepReport Experiment<T>::batch_size_sweep() {
    if (config_.batch_sizes.empty()) {
        throw ConfigError("batch size grid is empty");
    }
    SweepReport report{"sweep-batch", config_, {}};
    batch_sweep_data_ = equal_content_test();
    try {
        for (AdapterKind kind : {AdapterKind::Tent, AdapterKind::Latta}) {
            for (std::size_t b : config_.batch_sizes) {
                report.rows.push_back(replicate(std::string(adapter_kind_name(kind)) + "_b" + std::to_string(b),
                                                with_kind(config_.adapter, kind), config_.shift, b));
            }
        }
    } catch (...) {
        batch_sweep_data_.reset();
        throw;
    }
    batch_sweep_data_.reset();
    return report;
}

template <typename T>
SweepReport Experiment<T>::hyperparam_sweep() {
    if (config_.lambdas.empty() || config_.alphas.empty()) {
        throw ConfigError("hyperparameter grids must be nonempty");
    }
    const auto& base = config_.adapter;
    SweepReport report{"sweep-hparam", config_, {}};
    for (double lambda : config_.lambdas) {
        report.rows.push_back(replicate("latta_lambda_" + fmt("%g", lambda), latta_variant(base, lambda, base.latta.alpha),
                                        config_.shift, config_.batch_size));
    }
    for (double alpha : config_.alphas) {
        report.rows.push_back(replicate("latta_alpha_" + fmt("%g", alpha),
                                        latta_variant(base, base.latta.lambda_temp, alpha), config_.shift,
                                        config_.batch_size));
    }
    return report;
}

nlohmann::json summary_to_json(const SweepReport& report) {
    const std::uint64_t hash = config_hash(report.config);
    char hash_text[17];
    std::snprintf(hash_text, sizeof hash_text, "%016llx", static_cast<unsigned long long>(hash));
    nlohmann::json rows = nlohmann::json::array();
    nlohmann::json per_shift = nlohmann::json::object();
    for (const auto& r : report.rows) {
        nlohmann::json row = {
            {"method", r.method},
            {"adapter", adapter_kind_name(r.adapter.kind)},
            {"shift", shift_kind_name(r.shift.kind)},
            {"severity", r.shift.severity},
            {"batch_size", r.batch_size},
            {"seeds", r.seeds},
            {"accuracies", r.accuracies},
            {"wall_seconds", r.wall_seconds},
            {"mean", r.mean},
            {"std", r.std},
            {"config_hash", hash_text},
            {"artifact_version", artifact_version()},
        };
        if (r.adapter.kind == AdapterKind::Latta) {
            row["eta"] = r.adapter.latta.eta;
            row["lambda"] = r.adapter.latta.lambda_temp;
            row["alpha"] = r.adapter.latta.alpha;
            row["beta"] = r.adapter.latta.beta;
            row["subset"] = param_subset_name(r.adapter.latta.subset);
        } else if (r.adapter.kind == AdapterKind::Tent) {
            row["eta"] = r.adapter.tent.eta;
        }
        per_shift[std::string(shift_kind_name(r.shift.kind))][r.method] = {{"mean", r.mean}, {"std", r.std}};
        rows.push_back(std::move(row));
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < report.config.seeds; ++i) {
        seeds.push_back(report.config.seed + i);
    }
    nlohmann::json j = {
        {"schema_version", kSummarySchemaVersion},
        {"kind", report.kind},
        {"artifact_version", artifact_version()},
        {"config", config_to_json(report.config)},
        {"config_hash", hash_text},
        {"seeds", seeds},
        {"rows", rows},
        {"per_shift", per_shift},
    };
    if (report.kind == "sweep-batch") {
        j["drops"] = batch_size_drops(report);
    }
    return j;
}

void write_summary(const std::filesystem::path& path, const SweepReport& report) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << summary_to_json(report).dump(2) << '\n';
}

std::map<std::string, double> batch_size_drops(const SweepReport& report) {
    // method -> (batch size -> mean)
    std::map<std::string, std::map<std::size_t, double>> by_method;
    for (const auto& r : report.rows) {
        by_method[std::string(adapter_kind_name(r.adapter.kind))][r.batch_size] = r.mean;
    }
    std::map<std::string, double> drops;
    for (const auto& [method, curve] : by_method) {
        drops[method] = curve.rbegin()->second - curve.begin()->second;
    }
    return drops;
}

std::string report_csv(const std::vector<nlohmann::json>& summaries) {
    std::ostringstream out;
    out << "method,shift,severity,batch_size,lambda,alpha,mean,std\n";
    for (const auto& s : summaries) {
        if (!s.is_object() || !s.contains("schema_version") || s.at("schema_version") != kSummarySchemaVersion) {
            throw SchemaError("summary schema_version mismatch (expected " + std::to_string(kSummarySchemaVersion) +
                              ")");
        }
        try {
            for (const auto& r : s.at("rows")) {
                const auto opt = [&](const char* key) {
                    return r.contains(key) && r.at("adapter") == "latta" ? exact(r.at(key).get<double>())
                                                                          : std::string();
                };
                out << r.at("method").get<std::string>() << ',' << r.at("shift").get<std::string>() << ','
                    << r.at("severity").get<int>() << ',' << r.at("batch_size").get<std::size_t>() << ','
                    << opt("lambda") << ',' << opt("alpha") << ',' << exact(r.at("mean").get<double>()) << ','
                    << exact(r.at("std").get<double>()) << '\n';
            }
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("malformed summary: ") + e.what());
        }
    }
    return out.str();
}

#define LATTA_INSTANTIATE_HARNESS(T)                                                                     \
    template Model<T> pretrain<T>(const ModelSpec&, const Dataset&, const PretrainOptions&);             \
    template double evaluate<T>(const Model<T>&, const Dataset&, std::size_t);                           \
    template StreamResult run_online<T>(const Model<T>&, const ShiftStream&, const AdapterConfig&,       \
                                        std::uint64_t);                                                  \
    template class Experiment<T>;

LATTA_INSTANTIATE_HARNESS(float)
LATTA_INSTANTIATE_HARNESS(double)

}  // namespace latta
