#include "latta/checkpoint.hpp"

#include <fstream>

#include "latta/binary_io.hpp"

namespace latta {
namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'T', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

struct Header {
    std::uint32_t scalar_bytes = 0;
    nlohmann::json meta;
};

Header read_header(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof magic)) {
        throw CheckpointError("truncated checkpoint: missing magic");
    }
    if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    const auto version = binio::read_pod<CheckpointError, std::uint32_t>(in, "version");
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Header h;
    h.scalar_bytes = binio::read_pod<CheckpointError, std::uint32_t>(in, "precision tag");
    if (h.scalar_bytes != 4 && h.scalar_bytes != 8) {
        throw CheckpointError("bad precision tag " + std::to_string(h.scalar_bytes));
    }
    const auto length = binio::read_pod<CheckpointError, std::uint64_t>(in, "header length");
    const std::string text = binio::read_string<CheckpointError>(in, length, "header");
    try {
        h.meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    return h;
}

template <typename Stored, typename T>
Model<T> read_body(std::istream& in, const nlohmann::json& meta) {
    Model<T> model;
    model.spec = spec_from_json(meta.at("spec"));
    const auto layout = ParamLayout::from_spec(model.spec);
    const std::size_t param_count = meta.at("param_count").get<std::size_t>();
    const std::size_t stat_count = meta.at("stat_count").get<std::size_t>();
    if (param_count != layout.total()) {
        throw CheckpointError("checkpoint parameter count does not match its model spec");
    }
    if (stat_count != RunningStats<T>::initial(model.spec).values.size()) {
        throw CheckpointError("checkpoint statistics count does not match its model spec");
    }
    auto params = binio::read_array<CheckpointError, Stored>(in, param_count, "parameters");
    auto stats = binio::read_array<CheckpointError, Stored>(in, stat_count, "running statistics");
    model.params = ParameterVector<T>(layout, std::vector<T>(params.begin(), params.end()));
    model.stats.values.assign(stats.begin(), stats.end());
    return model;
}

}  // namespace

std::string_view precision_name(Precision p) {
    return p == Precision::Float32 ? "float32" : "float64";
}

Precision precision_from_name(std::string_view name) {
    if (name == "float32" || name == "f32" || name == "32") {
        return Precision::Float32;
    }
    if (name == "float64" || name == "f64" || name == "64") {
        return Precision::Float64;
    }
    throw std::invalid_argument("unknown precision '" + std::string(name) + "'");
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        layers.push_back({{"kind", layer_kind_name(l.kind)}, {"in", l.in}, {"out", l.out}});
    }
    return {
        {"architecture", architecture_name(spec.architecture)},
        {"class_count", spec.class_count},
        {"input", {spec.input.channels, spec.input.height, spec.input.width}},
        {"layers", layers},
    };
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    const auto arch = j.at("architecture").get<std::string>();
    if (arch == "mnist_cnn") {
        spec.architecture = Architecture::MnistCnn;
    } else if (arch == "mlp") {
        spec.architecture = Architecture::Mlp;
    } else {
        throw std::invalid_argument("unknown architecture id '" + arch + "'");
    }
    spec.class_count = j.at("class_count").get<std::size_t>();
    const auto& input = j.at("input");
    spec.input = {input.at(0).get<std::size_t>(), input.at(1).get<std::size_t>(), input.at(2).get<std::size_t>()};
    for (const auto& l : j.at("layers")) {
        spec.layers.push_back({layer_kind_from_name(l.at("kind").get<std::string>()), l.at("in").get<std::size_t>(),
                               l.at("out").get<std::size_t>()});
    }
    return spec;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model) {
    if (model.params.layout() != ParamLayout::from_spec(model.spec)) {
        throw CheckpointError("parameters are not aligned with the model spec");
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot open " + path.string() + " for writing");
    }
    const nlohmann::json meta = {
        {"spec", spec_to_json(model.spec)},
        {"param_count", model.params.size()},
        {"stat_count", model.stats.values.size()},
        {"precision", precision_name(precision_of<T>())},
    };
    const std::string text = meta.dump();
    out.write(kMagic, sizeof kMagic);
    binio::write_pod<std::uint32_t>(out, kVersion);
    binio::write_pod<std::uint32_t>(out, sizeof(T));
    binio::write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    binio::write_array<T>(out, model.params.values());
    binio::write_array<T>(out, model.stats.values);
    if (!out) {
        throw CheckpointError("failed writing " + path.string());
    }
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    const Header h = read_header(in);
    if (h.scalar_bytes == 4) {
        return read_body<float, T>(in, h.meta);
    }
    return read_body<double, T>(in, h.meta);
}

Precision checkpoint_precision(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    return read_header(in).scalar_bytes == 4 ? Precision::Float32 : Precision::Float64;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Model<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Model<double>&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace latta
