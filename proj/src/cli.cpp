#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hieremb/commands.hpp"
#include "hieremb/errors.hpp"

namespace hieremb {

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"hierarchical place embeddings: synthesis, training, probing"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir, method, checkpoint, out_file;
    std::int64_t seed = -1;
    std::int64_t threads = -1;
    std::size_t instances = 20;
    double tolerance = 1e-4;

    app.add_option("--config", config_path, "run configuration file (key = value lines)");
    app.add_option("--seed", seed, "override train.seeds and synth.seed with one seed");
    app.add_option("--threads", threads, "worker pool size for independent sessions");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--method", method, "restrict to one method (hier/hier1km/hier10km/nonhier)");

    auto* synth = app.add_subcommand("synth", "generate synthetic staypoints and ground truth");
    auto* train = app.add_subcommand("train", "train all configured methods and seeds");
    auto* evaluate = app.add_subcommand("evaluate", "test loss of a trained checkpoint");
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    auto* probe = app.add_subcommand("probe", "linear land-use probe over trained checkpoints");
    auto* exportc = app.add_subcommand("export", "write the embedding text export");
    exportc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    exportc->add_option("--out-file", out_file, "output path (default out dir)");
    auto* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of the full model gradient");
    gradcheck->add_option("--instances", instances, "number of random instances");
    gradcheck->add_option("--tolerance", tolerance, "max relative error allowed");

    std::vector<const char*> argv;
    argv.push_back("hieremb");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig::defaults()
                                            : RunConfig::load_file(config_path);
        if (seed >= 0) {
            cfg.set("train.seeds", std::to_string(seed));
            cfg.set("synth.seed", std::to_string(seed));
        }
        if (threads >= 0) cfg.set("runtime.threads", std::to_string(threads));
        if (!out_dir.empty()) cfg.set("runtime.out", out_dir);
        if (!method.empty()) cfg.set("model.methods", method);

        if (synth->parsed()) {
            cmd_synth(cfg);
        } else if (train->parsed()) {
            cmd_train(cfg);
        } else if (evaluate->parsed()) {
            cmd_evaluate(cfg, checkpoint);
        } else if (probe->parsed()) {
            cmd_probe(cfg);
        } else if (exportc->parsed()) {
            cmd_export(cfg, checkpoint, out_file);
        } else if (gradcheck->parsed()) {
            return cmd_gradcheck(seed >= 0 ? static_cast<std::uint64_t>(seed) : 1, instances,
                                 tolerance);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "numerical divergence: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace hieremb
