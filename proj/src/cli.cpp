#include "latta/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latta/harness.hpp"
#include "latta/log.hpp"

namespace latta {
namespace {

enum class ValueType { String, Unsigned, Integer, Real, SizeList, RealList, Shape };

struct FlagDef {
    const char* flag;
    ValueType type;
    const char* help;
    const char* commands;  // space-separated subcommands that accept the flag
};

constexpr const char* kModel = "train";
constexpr const char* kAdapt = "adapt ablate sweep-batch sweep-hparam";
constexpr const char* kAll = "train adapt ablate sweep-batch sweep-hparam";

// Every flag's config-file key is its name with '-' replaced by '_'.
const FlagDef kFlags[] = {
    {"seed", ValueType::Unsigned, "Master seed; run i uses seed + i", kAll},
    {"precision", ValueType::String, "float32 or float64", kAll},
    {"architecture", ValueType::String, "mnist_cnn or mlp", kModel},
    {"classes", ValueType::Unsigned, "Number of classes", kModel},
    {"input", ValueType::Shape, "Input shape as C,H,W", kModel},
    {"epochs", ValueType::Unsigned, "Pretraining epochs", kModel},
    {"data", ValueType::String, "synthetic, glyphs or idx", kAll},
    {"train-images", ValueType::String, "IDX training images", kAll},
    {"train-labels", ValueType::String, "IDX training labels", kAll},
    {"test-images", ValueType::String, "IDX test images", kAll},
    {"test-labels", ValueType::String, "IDX test labels", kAll},
    {"train-size", ValueType::Unsigned, "Training subset size", kAll},
    {"stream-size", ValueType::Unsigned, "Test stream size before batching", kAll},
    {"synth-seed", ValueType::Unsigned, "Seed of the synthetic dataset", kAll},
    {"checkpoint", ValueType::String, "Model checkpoint path", kAll},
    {"adapter", ValueType::String, "source, tent or latta", kAdapt},
    {"eta", ValueType::Real, "LATTA learning rate", kAdapt},
    {"lambda", ValueType::Real, "LATTA noise temperature", kAdapt},
    {"alpha", ValueType::Real, "LATTA anchor strength", kAdapt},
    {"beta", ValueType::Real, "LATTA EMA decay", kAdapt},
    {"subset", ValueType::String, "LATTA parameter subset: all or bn_affine_only", kAdapt},
    {"tent-eta", ValueType::Real, "Tent learning rate", kAdapt},
    {"shift", ValueType::String,
     "identity, rotation, gaussian_noise, shot_noise, gaussian_blur, brightness or contrast", kAdapt},
    {"severity", ValueType::Integer, "Shift severity 1..5", kAdapt},
    {"batch-size", ValueType::Unsigned, "Online batch size", kAdapt},
    {"seeds", ValueType::Unsigned, "Number of seeds", kAdapt},
    {"batch-sizes", ValueType::SizeList, "Batch size grid, comma separated", "sweep-batch"},
    {"lambdas", ValueType::RealList, "Lambda grid, comma separated", "sweep-hparam"},
    {"alphas", ValueType::RealList, "Alpha grid, comma separated", "sweep-hparam"},
};

bool accepts(const FlagDef& def, const std::string& command) {
    std::istringstream in(def.commands);
    std::string c;
    while (in >> c) {
        if (c == command) {
            return true;
        }
    }
    return false;
}

std::string config_key(std::string flag) {
    std::replace(flag.begin(), flag.end(), '-', '_');
    return flag;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            parts.push_back(item);
        }
    }
    return parts;
}

double parse_real(const std::string& text, const std::string& flag) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw ConfigError("--" + flag + ": '" + text + "' is not a number");
    }
    return v;
}

std::uint64_t parse_unsigned(const std::string& text, const std::string& flag) {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("--" + flag + ": '" + text + "' is not a non-negative integer");
    }
    try {
        return std::stoull(text);
    } catch (const std::exception&) {
        throw ConfigError("--" + flag + ": '" + text + "' is out of range");
    }
}

nlohmann::json to_json_value(const FlagDef& def, const std::string& text) {
    const std::string flag = def.flag;
    switch (def.type) {
        case ValueType::String:
            return text;
        case ValueType::Unsigned:
            return parse_unsigned(text, flag);
        case ValueType::Integer:
            return static_cast<int>(parse_real(text, flag));
        case ValueType::Real:
            return parse_real(text, flag);
        case ValueType::SizeList:
        case ValueType::Shape: {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& item : split_list(text)) {
                list.push_back(parse_unsigned(item, flag));
            }
            return list;
        }
        case ValueType::RealList: {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& item : split_list(text)) {
                list.push_back(parse_real(item, flag));
            }
            return list;
        }
    }
    return text;
}

struct Command {
    CLI::App* app = nullptr;
    std::string config_path;
    std::string out_dir;
    bool quiet = false;
    std::map<std::string, std::pair<const FlagDef*, CLI::Option*>> options;
    std::map<std::string, std::string> values;
};

RunConfig resolve_config(Command& cmd) {
    RunConfig config;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) {
        config.out_dir = env;
    }
    if (!cmd.config_path.empty()) {
        config = load_config_file(cmd.config_path, config);
    }
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [flag, entry] : cmd.options) {
        if (entry.second->count() > 0) {
            overrides[config_key(flag)] = to_json_value(*entry.first, cmd.values.at(flag));
        }
    }
    if (!cmd.out_dir.empty()) {
        overrides["out"] = cmd.out_dir;
    }
    return config_from_json(overrides, config);
}

std::filesystem::path default_checkpoint(const RunConfig& config) {
    return config.out_dir / "model.ckpt";
}

template <typename T>
int train(const RunConfig& config, std::ostream& out) {
    const auto data = load_data(config.data, config.class_count, config.input);
    PretrainOptions options;
    options.epochs = config.epochs;
    options.seed = config.seed;
    options.checkpoint = config.checkpoint.empty() ? default_checkpoint(config) : config.checkpoint;
    const auto model = pretrain<T>(config.model_spec(), data.train, options);
    const double clean = evaluate(model, data.test);
    out << "checkpoint " << options.checkpoint->string() << "\n";
    out << "clean_accuracy " << clean << "\n";
    return kExitOk;
}

template <typename T>
int experiment(const std::string& command, const RunConfig& base, std::ostream& out) {
    auto model = load_checkpoint<T>(base.checkpoint);
    RunConfig config = base;
    config.architecture = model.spec.architecture;
    config.class_count = model.spec.class_count;
    config.input = model.spec.input;
    config.validate();
    auto data = load_data(config.data, config.class_count, config.input);
    Experiment<T> exp(std::move(model), std::move(data.test), config);
    SweepReport report;
    if (command == "adapt") {
        report = exp.adapt();
    } else if (command == "ablate") {
        report = exp.ablation_suite();
    } else if (command == "sweep-batch") {
        report = exp.batch_size_sweep();
    } else {
        report = exp.hyperparam_sweep();
    }
    const auto path = config.out_dir / ("summary_" + command + ".json");
    write_summary(path, report);
    out << "method,mean,std\n";
    for (const auto& r : report.rows) {
        out << r.method << ',' << r.mean << ',' << r.std << '\n';
    }
    if (command == "sweep-batch") {
        for (const auto& [method, drop] : batch_size_drops(report)) {
            out << "# drop " << method << ' ' << drop << '\n';
        }
    }
    out << "# summary " << path.string() << '\n';
    return kExitOk;
}

int report(const std::vector<std::string>& inputs, const std::string& out_dir, std::ostream& out) {
    std::vector<nlohmann::json> summaries;
    for (const auto& path : inputs) {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot read summary " + path);
        }
        try {
            summaries.push_back(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path + " is not valid JSON: " + e.what());
        }
    }
    const std::string csv = report_csv(summaries);
    if (out_dir.empty()) {
        out << csv;
        return kExitOk;
    }
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / "report.csv";
    std::ofstream file(path, std::ios::trunc);
    if (!file) {
        throw std::runtime_error("cannot write " + path.string());
    }
    file << csv;
    out << "# report " << path.string() << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Test-time adaptation experiments: source pretraining, online adaptation and sweeps", "latta"};
    app.require_subcommand(1);
    app.set_version_flag("--version", artifact_version());

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"train", "Pretrain a source model and write a checkpoint"},
        {"adapt", "Run one adapter over seeded shifted streams"},
        {"ablate", "Tent and LATTA component ablations"},
        {"sweep-batch", "Tent and LATTA across batch sizes"},
        {"sweep-hparam", "LATTA lambda and alpha sweeps"},
    };
    std::map<std::string, std::unique_ptr<Command>> parsed;
    for (const auto& [name, help] : commands) {
        auto cmd = std::make_unique<Command>();
        cmd->app = app.add_subcommand(name, help);
        cmd->app->add_option("--config", cmd->config_path, "JSON config file; flags override its keys");
        cmd->app->add_option("--out", cmd->out_dir, std::string("Output directory (default $") + kOutDirEnv +
                                                        " or ./results)");
        cmd->app->add_flag("--quiet", cmd->quiet, "Only log warnings and errors");
        for (const auto& def : kFlags) {
            if (accepts(def, name)) {
                auto* opt = cmd->app->add_option(std::string("--") + def.flag, cmd->values[def.flag], def.help);
                cmd->options[def.flag] = {&def, opt};
            }
        }
        parsed[name] = std::move(cmd);
    }
    std::vector<std::string> report_inputs;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "Merge summary JSON files into tidy CSV plot data");
    report_cmd->add_option("summaries", report_inputs, "Summary JSON files")->required();
    report_cmd->add_option("--out", report_out, "Directory for report.csv (default: standard output)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help() : subs.back()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << artifact_version() << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }
    try {
        if (report_cmd->parsed()) {
            return report(report_inputs, report_out, out);
        }
        const auto it = std::find_if(parsed.begin(), parsed.end(), [](const auto& p) { return p.second->app->parsed(); });
        Command& cmd = *it->second;
        const std::string command = it->first;
        set_log_level(cmd.quiet ? LogLevel::Warn : LogLevel::Info);
        RunConfig config = resolve_config(cmd);
        if (command == "train") {
            config.validate();
            return config.precision == Precision::Float32 ? train<float>(config, out) : train<double>(config, out);
        }
        if (config.checkpoint.empty()) {
            throw ConfigError("--checkpoint is required (path to a model from `latta train`)");
        }
        if (!std::filesystem::is_regular_file(config.checkpoint)) {
            throw ConfigError("--checkpoint: no such file '" + config.checkpoint.string() + "'");
        }
        return config.precision == Precision::Float32 ? experiment<float>(command, config, out)
                                                      : experiment<double>(command, config, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const SchemaError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace latta
