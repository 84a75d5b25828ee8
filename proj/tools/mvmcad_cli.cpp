#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mvmcad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mvmcad;

namespace {

struct Options {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string data;
    std::string out;
    std::size_t jobs = 1;
    bool f64 = false;
    std::string checkpoint_path;
    std::string image_path;
    std::string command;
};

RunConfig load_config(const Options& opt) {
    RunConfig cfg;
    if (!opt.config_path.empty()) {
        std::ifstream is(opt.config_path);
        if (!is) throw IoError("cannot open config: " + opt.config_path);
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("config is not valid JSON: " + std::string(e.what()));
        }
        cfg = config_json::from_json(j);
    }
    if (opt.seed_given) cfg.seed = opt.seed;
    return cfg;
}

dataset::SynthSpec synth_spec(const RunConfig& cfg) {
    dataset::SynthSpec spec;
    if (!cfg.categories.empty()) spec.categories = cfg.categories;
    spec.views = cfg.views;
    spec.image_size = cfg.image_size;
    spec.seed = cfg.seed;
    return spec;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

template <typename Real>
int run_typed(const Options& opt) {
    RunConfig cfg = load_config(opt);

    if (opt.command == "synth") {
        require(!opt.out.empty(), "synth needs --out");
        dataset::synth_dataset(synth_spec(cfg), opt.out);
        std::cout << nlohmann::ordered_json{{"root", opt.out}}.dump() << "\n";
        return 0;
    }
    if (opt.command == "train") {
        require(!opt.data.empty(), "train needs --data");
        require(!opt.out.empty(), "train needs --out");
        auto data = dataset::load_dataset(opt.data);
        std::error_code ec;
        fs::create_directories(opt.out, ec);
        if (ec) throw IoError("cannot create output directory: " + opt.out);
        std::ofstream log((fs::path(opt.out) / "train_log.jsonl").string());
        if (!log) throw IoError("cannot write training log in " + opt.out);
        auto ckpt = pipeline::train<Real>(cfg, data, opt.out, &log);
        std::cout << nlohmann::ordered_json{
                         {"checkpoint", (fs::path(opt.out) / "checkpoint.mvmc").string()},
                         {"iterations", ckpt.iteration}}
                         .dump()
                  << "\n";
        return 0;
    }
    if (opt.command == "eval") {
        require(!opt.checkpoint_path.empty(), "eval needs a checkpoint path");
        require(!opt.data.empty(), "eval needs --data");
        auto ckpt = checkpoint::load<Real>(opt.checkpoint_path);
        if (opt.seed_given) ckpt.config.seed = opt.seed;
        auto data = dataset::load_dataset(opt.data);
        auto report = pipeline::evaluate(ckpt.params, ckpt.config, data.test, opt.jobs);
        std::string doc = report.to_json().dump(2) + "\n";
        std::cout << doc;
        if (!opt.out.empty()) {
            std::error_code ec;
            fs::create_directories(opt.out, ec);
            if (ec) throw IoError("cannot create output directory: " + opt.out);
            std::ofstream os((fs::path(opt.out) / "metrics.json").string());
            if (!os) throw IoError("cannot write metrics.json in " + opt.out);
            os << doc;
        }
        return 0;
    }
    if (opt.command == "infer") {
        require(!opt.checkpoint_path.empty(), "infer needs a checkpoint path");
        require(!opt.image_path.empty(), "infer needs an image path");
        auto ckpt = checkpoint::load<Real>(opt.checkpoint_path);
        std::string base;
        if (!opt.out.empty()) {
            std::error_code ec;
            fs::create_directories(opt.out, ec);
            if (ec) throw IoError("cannot create output directory: " + opt.out);
            base = (fs::path(opt.out) / fs::path(opt.image_path).stem()).string();
        }
        auto res = pipeline::infer(ckpt.params, ckpt.config, opt.image_path, base);
        nlohmann::ordered_json j = {{"score", res.score}};
        if (!base.empty()) j["heatmap"] = base + ".pgm";
        std::cout << j.dump() << "\n";
        return 0;
    }
    if (opt.command == "gradcheck") {
        auto rows = pipeline::gradcheck<double>(cfg);  // needs 64-bit precision
        bool all_ok = true;
        for (const auto& row : rows) {
            if (row.skipped) {
                std::printf("%-12s skipped\n", row.module.c_str());
            } else {
                std::printf("%-12s max_rel_error %.3e  %s\n", row.module.c_str(),
                            row.max_rel_error, row.passed ? "pass" : "FAIL");
                all_ok = all_ok && row.passed;
            }
        }
        if (!all_ok) throw NumericError("gradient check failed");
        return 0;
    }
    if (opt.command == "aam-trace") {
        require(!opt.checkpoint_path.empty(), "aam-trace needs a checkpoint path");
        require(!opt.image_path.empty(), "aam-trace needs an image path");
        require(!opt.out.empty(), "aam-trace needs --out");
        auto ckpt = checkpoint::load<Real>(opt.checkpoint_path);
        const RunConfig& rc = ckpt.config;
        require(rc.aam_enabled, "aam is disabled in this checkpoint's config");
        Image img = netpbm::read_image(opt.image_path);
        if (img.height != rc.image_size || img.width != rc.image_size ||
            img.channels != rc.channels)
            throw ValidationError("input image dims do not match config: " + opt.image_path);
        auto tensor = image_to_tensor<Real>(img);
        Tensor<Real> batched({1, tensor.shape[0], tensor.shape[1], tensor.shape[2]}, tensor.data);

        Tape<Real> tape;
        BoundParams<Real> bound(tape, ckpt.params);
        Var<Real> x = tape.leaf(batched, false);
        if (rc.sfe_enabled) x = prior_gate::forward(x, bound("prior_gate.gamma")).x_prior;
        auto bcfg = rc.backbone_config();
        auto outs = backbone::encode(bound, backbone::patchify(bound, x, bcfg), bcfg);
        auto trace = aam::forward(bound, outs.back(), rc.aam_config());

        std::error_code ec;
        fs::create_directories(opt.out, ec);
        if (ec) throw IoError("cannot create output directory: " + opt.out);
        auto dump = [&](const char* name, const Var<Real>& v) {
            mvtn::save((fs::path(opt.out) / (std::string(name) + ".mvtn")).string(), v->value);
        };
        dump("f_ctx", trace.f_ctx);
        dump("f_hat", trace.f_hat);
        dump("sim", trace.sim);
        dump("pi", trace.pi);
        dump("att", trace.att);
        dump("out", trace.out);
        std::cout << nlohmann::ordered_json{{"out", opt.out}}.dump() << "\n";
        return 0;
    }
    if (opt.command == "export-weights") {
        require(!opt.checkpoint_path.empty(), "export-weights needs a checkpoint path");
        require(!opt.out.empty(), "export-weights needs --out");
        auto ckpt = checkpoint::load<Real>(opt.checkpoint_path);
        std::error_code ec;
        fs::create_directories(opt.out, ec);
        if (ec) throw IoError("cannot create output directory: " + opt.out);
        nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
        for (const auto& [name, entry] : ckpt.params.entries) {
            std::string file = name + ".mvtn";
            mvtn::save((fs::path(opt.out) / file).string(), entry.value);
            manifest.push_back({{"name", name}, {"file", file}, {"frozen", entry.frozen}});
        }
        std::ofstream os((fs::path(opt.out) / "manifest.json").string());
        if (!os) throw IoError("cannot write manifest in " + opt.out);
        os << manifest.dump(2) << "\n";
        std::cout << nlohmann::ordered_json{{"tensors", manifest.size()}}.dump() << "\n";
        return 0;
    }
    throw ValidationError("unknown command: " + opt.command);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view anomaly detection: synthesis, training, evaluation, inference"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "JSON run configuration");
        sub->add_option("--seed", opt.seed, "seed override")
            ->each([&](const std::string&) { opt.seed_given = true; });
        sub->add_option("--data", opt.data, "dataset root directory");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--jobs", opt.jobs, "parallel workers (1 = bitwise reproducible)");
        sub->add_flag("--f64", opt.f64, "run in 64-bit precision");
        return sub;
    };

    add_common(app.add_subcommand("synth", "generate the synthetic benchmark dataset"));
    add_common(app.add_subcommand("train", "train a model on a dataset"));
    auto* eval_cmd = add_common(app.add_subcommand("eval", "score a test split and report metrics"));
    eval_cmd->add_option("checkpoint", opt.checkpoint_path, "trained checkpoint")->required();
    auto* infer_cmd = add_common(app.add_subcommand("infer", "score one image, write a heatmap"));
    infer_cmd->add_option("checkpoint", opt.checkpoint_path, "trained checkpoint")->required();
    infer_cmd->add_option("image", opt.image_path, "input image (PPM/PGM)")->required();
    add_common(app.add_subcommand("gradcheck", "finite-difference audit of analytic gradients"));
    auto* trace_cmd =
        add_common(app.add_subcommand("aam-trace", "dump amplification internals as tensors"));
    trace_cmd->add_option("checkpoint", opt.checkpoint_path, "trained checkpoint")->required();
    trace_cmd->add_option("image", opt.image_path, "input image (PPM/PGM)")->required();
    auto* export_cmd =
        add_common(app.add_subcommand("export-weights", "dump checkpoint tensors as files"));
    export_cmd->add_option("checkpoint", opt.checkpoint_path, "trained checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    opt.command = app.get_subcommands().front()->get_name();

    try {
        return opt.f64 ? run_typed<double>(opt) : run_typed<float>(opt);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    }
}
