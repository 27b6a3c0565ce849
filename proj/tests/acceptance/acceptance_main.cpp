// Acceptance suite: one PASS/FAIL line per criterion.
//
//   latta_acceptance [--workdir DIR] [--criterion N] [--prepare]

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "checks.hpp"
#include "latta/cli.hpp"
#include "latta/harness.hpp"
#include "latta/log.hpp"

using namespace latta;
namespace lt = latta::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and margins.
constexpr double kGradRelTol = 1e-4;
constexpr int kGradTrials = 20;
constexpr std::size_t kReductionBatches = 30;
constexpr double kReductionEta = 0.1;
constexpr int kOracleConfigs = 100;
constexpr double kOracleTol = 1e-9;
constexpr std::size_t kNoiseDraws = 1000000;
constexpr double kNoiseRelTol = 0.05;
constexpr double kRotationOverSource = 2.0;  // points
constexpr double kRotationOverTent = 0.5;    // points
constexpr double kAblationOverTent = 1.0;    // points

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

std::string pct(double accuracy) {
    return fmt("%.2f", 100.0 * accuracy);
}

// Desk-scale experiment setting shared by criteria 5-8.
RunConfig experiment_config(const fs::path& out) {
    RunConfig c;
    c.data.source = DataSource::Glyphs;
    c.data.train_size = 10000;
    c.data.stream_size = 2000;
    c.data.synth_seed = 1;
    c.epochs = 5;
    c.batch_size = 64;
    c.seeds = 3;
    c.seed = 0;
    c.adapter.tent.eta = 0.1;
    c.out_dir = out;
    return c;
}

fs::path checkpoint_path(const fs::path& workdir) {
    const auto c = experiment_config(workdir);
    char name[64];
    std::snprintf(name, sizeof name, "glyphs_%016llx.ckpt", static_cast<unsigned long long>(config_hash(c)));
    return workdir / name;
}

Model<float> prepared_model(const fs::path& workdir) {
    const auto path = checkpoint_path(workdir);
    if (fs::is_regular_file(path)) {
        return load_checkpoint<float>(path);
    }
    const auto c = experiment_config(workdir);
    const auto data = load_data(c.data, c.class_count, c.input);
    PretrainOptions opt;
    opt.epochs = c.epochs;
    opt.seed = c.seed;
    opt.checkpoint = path;
    auto model = pretrain<float>(c.model_spec(), data.train, opt);
    log_info("clean accuracy " + pct(evaluate(model, data.test)));
    return model;
}

Experiment<float> experiment(const fs::path& workdir, const std::string& name, const ShiftSpec& shift) {
    auto c = experiment_config(workdir / name);
    c.shift = shift;
    auto data = load_data(c.data, c.class_count, c.input);
    return Experiment<float>(prepared_model(workdir), std::move(data.test), c);
}

Verdict gradients(const fs::path&) {
    Xoshiro256ss rng(101);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& op : lt::op_cases()) {
        for (int t = 0; t < kGradTrials; ++t) {
            const double e = lt::op_gradient_error(op.make_inputs(rng), op.build, rng);
            if (e > worst) {
                worst = e;
                worst_name = op.name;
            }
        }
    }
    for (int t = 0; t < kGradTrials; ++t) {
        const double e = lt::model_entropy_gradient_error(rng, 2);
        if (e > worst) {
            worst = e;
            worst_name = "mnist_cnn entropy";
        }
    }
    return {worst <= kGradRelTol, "max relative error " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

Verdict reduction(const fs::path&) {
    const auto spec = make_mnist_cnn(10);
    auto rng = Xoshiro256ss::for_stream(202, "init");
    const auto theta0 = build_model<double>(spec, rng);
    const auto data = synth_glyphs(kReductionBatches * 16, 10, spec.input, 202);
    const auto stream = make_shift_stream(data, {ShiftKind::Rotation, 5, 0}, 16, 202);
    std::vector<Tensor<double>> batches;
    for (const auto& b : stream.batches) {
        batches.push_back(b.tensor<double>());
    }
    NetworkModel<double> model(spec, RunningStats<double>::initial(spec));
    const auto bad = lt::reduction_mismatches(model, theta0, batches, kReductionEta);
    return {bad == 0 && batches.size() == kReductionBatches,
            std::to_string(batches.size() - bad) + "/" + std::to_string(batches.size()) + " steps bit-identical"};
}

Verdict oracle(const fs::path&) {
    Xoshiro256ss rng(303);
    double worst = 0.0;
    for (int k = 0; k < kOracleConfigs; ++k) {
        worst = std::max(worst, lt::latta_recurrence_error(rng, 1));
    }
    return {worst <= kOracleTol, "max coordinate error " + fmt("%.2e", worst) + " over " +
                                     std::to_string(kOracleConfigs) + " configurations"};
}

Verdict noise(const fs::path&) {
    bool pass = true;
    std::string detail;
    for (auto [eta, lambda] : {std::pair{1e-4, 1e-3}, std::pair{1e-3, 1e-3}, std::pair{1e-4, 1e-2}}) {
        LattaConfig c;
        c.eta = eta;
        c.lambda_temp = lambda;
        auto rng = Xoshiro256ss::for_stream(404, fmt("%g", eta) + "/" + fmt("%g", lambda));
        const auto z = gaussian_noise_sample<double>(kNoiseDraws, c.noise_variance(), rng);
        double mean = 0.0, ss = 0.0;
        for (double v : z) {
            mean += v;
        }
        mean /= static_cast<double>(z.size());
        for (double v : z) {
            ss += (v - mean) * (v - mean);
        }
        const double ratio = ss / static_cast<double>(z.size() - 1) / (2 * eta * lambda);
        pass = pass && std::abs(ratio - 1.0) <= kNoiseRelTol;
        detail += (detail.empty() ? "" : ", ") + std::string("var/(2 eta lambda)=") + fmt("%.4f", ratio);
    }
    return {pass, detail};
}

Verdict rotation(const fs::path& workdir) {
    auto exp = experiment(workdir, "c5_rotation", {ShiftKind::Rotation, 5, 0});
    const auto& cfg = exp.config();
    AdapterConfig source = cfg.adapter, tent = cfg.adapter, latta = cfg.adapter;
    source.kind = AdapterKind::Source;
    tent.kind = AdapterKind::Tent;
    SweepReport report{"adapt", cfg, {}};
    report.rows.push_back(exp.replicate("source", source, cfg.shift, cfg.batch_size));
    report.rows.push_back(exp.replicate("tent", tent, cfg.shift, cfg.batch_size));
    report.rows.push_back(exp.replicate("latta", latta, cfg.shift, cfg.batch_size));
    write_summary(cfg.out_dir / "summary.json", report);
    const double s = report.row("source").mean, t = report.row("tent").mean, l = report.row("latta").mean;
    const bool pass = s < t && t < l && 100 * (l - s) >= kRotationOverSource && 100 * (l - t) >= kRotationOverTent;
    return {pass, "source " + pct(s) + ", tent " + pct(t) + ", latta " + pct(l) + "; latta-source " +
                      fmt("%+.2f", 100 * (l - s)) + ", latta-tent " + fmt("%+.2f", 100 * (l - t))};
}

Verdict ablation(const fs::path& workdir) {
    auto exp = experiment(workdir, "c6_ablation", {ShiftKind::GaussianNoise, 5, 0});
    const auto report = exp.ablation_suite();
    write_summary(exp.config().out_dir / "summary.json", report);
    const auto& full = report.row("latta");
    const auto& no_noise = report.row("latta_no_noise");
    const auto& no_anchor = report.row("latta_no_anchor");
    const auto& tent = report.row("tent");
    auto at_least = [](const AggregateResult& a, const AggregateResult& b) {
        return a.mean >= b.mean - pooled_std(a, b);
    };
    const bool pass = at_least(full, no_noise) && at_least(no_noise, no_anchor) && at_least(no_anchor, tent) &&
                      100 * (full.mean - tent.mean) >= kAblationOverTent;
    return {pass, "latta " + pct(full.mean) + ", lambda=0 " + pct(no_noise.mean) + ", alpha=0 " +
                      pct(no_anchor.mean) + ", tent " + pct(tent.mean) + "; latta-tent " +
                      fmt("%+.2f", 100 * (full.mean - tent.mean))};
}

Verdict batch_size(const fs::path& workdir) {
    auto exp = experiment(workdir, "c7_batch", {ShiftKind::Rotation, 5, 0});
    const auto report = exp.batch_size_sweep();
    write_summary(exp.config().out_dir / "summary.json", report);
    const auto drops = batch_size_drops(report);
    const double l = drops.at("latta"), t = drops.at("tent");
    return {l < t, "drop 128->16: latta " + fmt("%.2f", 100 * l) + ", tent " + fmt("%.2f", 100 * t) + " points"};
}

Verdict lambda_sweep(const fs::path& workdir) {
    auto exp = experiment(workdir, "c8_lambda", {ShiftKind::Rotation, 5, 0});
    const auto& cfg = exp.config();
    SweepReport report{"sweep-hparam", cfg, {}};
    for (double lambda : cfg.lambdas) {
        AdapterConfig a = cfg.adapter;
        a.latta.lambda_temp = lambda;
        report.rows.push_back(exp.replicate("latta_lambda_" + fmt("%g", lambda), a, cfg.shift, cfg.batch_size));
    }
    write_summary(cfg.out_dir / "summary.json", report);
    const auto& mid = report.row("latta_lambda_0.001");
    const auto& high = report.row("latta_lambda_0.01");
    const auto& zero = report.row("latta_lambda_0");
    const bool pass = mid.mean >= high.mean && mid.mean >= zero.mean - pooled_std(mid, zero);
    std::string curve;
    for (const auto& r : report.rows) {
        curve += (curve.empty() ? "" : ", ") + r.method.substr(std::string("latta_lambda_").size()) + ":" +
                 pct(r.mean);
    }
    return {pass, "lambda curve " + curve + "; pooled std(1e-3, 0) " + fmt("%.2f", 100 * pooled_std(mid, zero))};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict replay(const fs::path& workdir) {
    const auto root = workdir / "c9_replay";
    fs::remove_all(root);
    std::ostringstream sink;
    const std::vector<std::string> data{"--data", "synthetic", "--train-size", "300", "--stream-size", "128",
                                        "--quiet"};
    auto call = [&](std::vector<std::string> args) {
        args.insert(args.end(), data.begin(), data.end());
        return run_cli(args, sink, sink);
    };
    if (call({"train", "--epochs", "1", "--input", "1,12,12", "--out", root.string()}) != kExitOk) {
        return {false, "train failed: " + sink.str()};
    }
    const std::string ckpt = (root / "model.ckpt").string();
    std::size_t files = 0, identical = 0;
    for (const char* adapter : {"latta", "tent", "source"}) {
        for (const char* run : {"a", "b"}) {
            if (call({"adapt", "--checkpoint", ckpt, "--adapter", adapter, "--batch-size", "16", "--seeds", "2",
                      "--out", (root / run / adapter).string()}) != kExitOk) {
                return {false, std::string("adapt failed: ") + sink.str()};
            }
        }
        for (const auto& entry : fs::directory_iterator(root / "a" / adapter / "runs")) {
            ++files;
            const auto twin = root / "b" / adapter / "runs" / entry.path().filename();
            identical += fs::exists(twin) && slurp(entry.path()) == slurp(twin);
        }
    }
    return {files == 6 && identical == files,
            std::to_string(identical) + "/" + std::to_string(files) + " result CSVs byte-identical"};
}

Verdict idx(const fs::path& workdir) {
    const auto dir = workdir / "c10_idx";
    fs::create_directories(dir);
    const auto images = dir / "images.idx", labels = dir / "labels.idx";
    lt::write_bytes(images, lt::idx_images(2, 2, 2, lt::kFixturePixels));
    lt::write_bytes(labels, lt::idx_labels(lt::kFixtureLabels));
    const auto d = load_idx(images, labels);
    bool parsed = d.shape == InputShape{1, 2, 2} && d.labels == std::vector<std::size_t>{3, 7};
    for (std::size_t i = 0; i < lt::kFixturePixels.size(); ++i) {
        parsed = parsed && std::abs(d.images[i] - lt::kFixturePixels[i] / 255.0) <= 1e-7;
    }

    enum Caught { None, BadMagic, Truncated, Mismatch, Other };
    auto classify = [&] {
        try {
            load_idx(images, labels);
        } catch (const IdxBadMagicError&) {
            return BadMagic;
        } catch (const IdxTruncatedError&) {
            return Truncated;
        } catch (const IdxCountMismatchError&) {
            return Mismatch;
        } catch (...) {
            return Other;
        }
        return None;
    };
    auto bytes = lt::idx_images(2, 2, 2, lt::kFixturePixels);
    bytes[2] = 0x09;
    lt::write_bytes(images, bytes);
    const Caught magic = classify();
    bytes = lt::idx_images(2, 2, 2, lt::kFixturePixels);
    bytes.resize(bytes.size() - 3);
    lt::write_bytes(images, bytes);
    const Caught truncated = classify();
    lt::write_bytes(images, lt::idx_images(2, 2, 2, lt::kFixturePixels));
    lt::write_bytes(labels, lt::idx_labels({3, 7, 1}));
    const Caught mismatch = classify();
    const bool pass = parsed && magic == BadMagic && truncated == Truncated && mismatch == Mismatch;
    return {pass, std::string("fixture ") + (parsed ? "parsed" : "wrong") + "; bad magic " +
                      (magic == BadMagic ? "ok" : "wrong") + ", truncation " +
                      (truncated == Truncated ? "ok" : "wrong") + ", count mismatch " +
                      (mismatch == Mismatch ? "ok" : "wrong")};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict(const fs::path&)> run;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {1, "gradient correctness", gradients},
        {2, "reduction to tent", reduction},
        {3, "update oracle", oracle},
        {4, "noise statistics", noise},
        {5, "rotation ordering", rotation},
        {6, "ablation order", ablation},
        {7, "batch-size robustness", batch_size},
        {8, "lambda sweep shape", lambda_sweep},
        {9, "replay determinism", replay},
        {10, "idx loader", idx},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string workdir = "acceptance";
    int only = 0;
    bool prepare = false;
    bool verbose = false;
    app.add_option("--workdir", workdir, "Scratch and cache directory");
    app.add_option("--criterion", only, "Run a single criterion (1-10)")->check(CLI::Range(1, 10));
    app.add_flag("--prepare", prepare, "Pretrain and cache the experiment checkpoint, then exit");
    app.add_flag("--verbose", verbose, "Log per-run progress");
    CLI11_PARSE(app, argc, argv);
    set_log_level(verbose ? LogLevel::Info : LogLevel::Warn);
    fs::create_directories(workdir);

    if (prepare) {
        try {
            prepared_model(workdir);
            std::cout << "checkpoint " << checkpoint_path(workdir).string() << '\n';
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 2;
        }
    }

    int failures = 0;
    for (const auto& c : criteria()) {
        if (only != 0 && c.id != only) {
            continue;
        }
        Verdict v;
        try {
            v = c.run(workdir);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << "criterion " << c.id << " [" << c.name << "]: " << (v.pass ? "PASS" : "FAIL") << " - "
                  << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
