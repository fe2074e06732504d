#include "hieremb/commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hieremb/checkpoint.hpp"
#include "hieremb/errors.hpp"
#include "hieremb/landuse.hpp"
#include "hieremb/model.hpp"
#include "hieremb/stats.hpp"
#include "hieremb/synth.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace hieremb {

namespace {

std::string out_path(const RunConfig& cfg, const std::string& name) {
    fs::path dir(cfg.get("runtime.out"));
    fs::create_directories(dir);
    return (dir / name).string();
}

std::vector<RawTrajectory> load_raws(const RunConfig& cfg, ParseReport* report = nullptr) {
    const std::string path = cfg.get("data.staypoints");
    if (path.empty()) throw ConfigError("data.staypoints is not set");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open staypoint file '" + path + "'");
    return parse_staypoints(in, cfg.get_double("data.malformed_threshold"), report);
}

struct Dataset {
    PreparedData prepared;
    DatasetSplit split;
};

Dataset load_dataset(const RunConfig& cfg) {
    const GridSpec spec = cfg.grid();
    auto raws = load_raws(cfg);
    Dataset ds{prepare_sequences(raws, spec, cfg.buckets(),
                                 static_cast<std::size_t>(cfg.get_int("data.max_seq_len"))),
               {}};
    ds.split = split_dataset(std::move(ds.prepared.sequences), cfg.get_double("split.val"),
                             cfg.get_double("split.test"),
                             static_cast<std::uint64_t>(cfg.get_int("split.seed")));
    ds.prepared.sequences.clear();
    return ds;
}

std::string run_file(const std::string& stem, const std::string& method, std::uint64_t seed,
                     const std::string& ext) {
    return stem + "_" + method + "_s" + std::to_string(seed) + ext;
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
    const GridSpec spec = cfg.grid();
    auto data = synth_generate(cfg.synth(), spec);

    std::ostringstream stays;
    write_staypoints(stays, data.trajectories);
    atomic_write_text(out_path(cfg, "staypoints.tsv"), stays.str());

    std::ostringstream classes;
    write_place_classes(classes, data.place_classes);
    atomic_write_text(out_path(cfg, "place_classes.tsv"), classes.str());

    std::size_t stay_count = 0;
    for (const auto& t : data.trajectories) stay_count += t.stays.size();
    std::printf("synth: %zu trajectories, %zu staypoints, %zu places -> %s (config %s)\n",
                data.trajectories.size(), stay_count, data.place_classes.size(),
                cfg.get("runtime.out").c_str(), cfg.hash().c_str());
}

void cmd_train(const RunConfig& cfg) {
    const std::string hash = cfg.hash();
    Dataset ds = load_dataset(cfg);
    const auto methods = cfg.methods();
    const auto seeds = cfg.seeds();

    std::printf("train: |V|=%zu, %zu/%zu/%zu train/val/test sequences, %zu methods x %zu seeds\n",
                ds.prepared.vocab.size(), ds.split.train.size(), ds.split.validation.size(),
                ds.split.test.size(), methods.size(), seeds.size());
    std::fflush(stdout);

    auto result = run_experiment(
        methods, seeds, ds.prepared.vocab, ds.split, cfg.model(methods[0]), hash,
        static_cast<std::size_t>(cfg.get_int("runtime.threads")),
        [&](const RunMetrics& metrics, NextPlaceModel& model) {
            save_checkpoint(out_path(cfg, run_file("ckpt", metrics.method, metrics.seed, ".bin")),
                            model.to_checkpoint(hash, metrics.seed));
            atomic_write_text(
                out_path(cfg, run_file("metrics", metrics.method, metrics.seed, ".jsonl")),
                metrics_to_jsonl(metrics));
            std::printf("run %s: epochs=%zu best_epoch=%zu test_loss=%.6f (%.1fs)\n",
                        metrics.run_id.c_str(), metrics.train_loss.size(),
                        metrics.selected_epoch, metrics.test_loss, metrics.wall_seconds);
            std::fflush(stdout);
        });

    std::string seed_list;
    for (std::uint64_t s : seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
    std::string csv =
        "# config_hash=" + hash + " seeds=" + seed_list + "\n" + summary_to_csv(result.summary);
    atomic_write_text(out_path(cfg, "summary.csv"), csv);
    std::fputs(csv.c_str(), stdout);
}

double cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path) {
    LoadedModel loaded = model_from_checkpoint(load_checkpoint(checkpoint_path));
    auto raws = load_raws(cfg);
    auto sequences = tokenize_with_vocab(raws, *loaded.vocab, cfg.buckets(),
                                         static_cast<std::size_t>(cfg.get_int("data.max_seq_len")));
    auto split = split_dataset(std::move(sequences), cfg.get_double("split.val"),
                               cfg.get_double("split.test"),
                               static_cast<std::uint64_t>(cfg.get_int("split.seed")));
    const double loss = evaluate_model(*loaded.model, split.test);

    nlohmann::json j{{"run_id", loaded.method + "-s" + std::to_string(loaded.seed)},
                     {"method", loaded.method},
                     {"seed", loaded.seed},
                     {"config_hash", cfg.hash()},
                     {"checkpoint_config_hash", loaded.config_hash},
                     {"test_loss", loss}};
    atomic_write_text(out_path(cfg, run_file("eval", loaded.method, loaded.seed, ".json")),
                      j.dump() + "\n");
    std::printf("evaluate %s seed %" PRIu64 ": test_loss=%.6f\n", loaded.method.c_str(),
                loaded.seed, loss);
    return loss;
}

void cmd_export(const RunConfig& cfg, const std::string& checkpoint_path, std::string out_file) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const Tensor& emb = ckpt.tensors.at("emb");
    const auto& cols = ckpt.int_arrays.at("tokens_col");
    const auto& rows = ckpt.int_arrays.at("tokens_row");
    if (emb.rows() == 0 || cols.empty())
        throw DataError("export: checkpoint has an empty vocabulary");
    if (emb.rows() != cols.size() || cols.size() != rows.size())
        throw DataError("export: checkpoint token table is inconsistent");

    const std::string method = ckpt.strings.at("method");
    const std::uint64_t seed = static_cast<std::uint64_t>(ckpt.int_arrays.at("seed").at(0));
    if (out_file.empty()) out_file = out_path(cfg, run_file("emb", method, seed, ".tsv"));

    std::string text;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu %zu ", emb.rows(), emb.cols());
    text += buf;
    text += method + " " + ckpt.strings.at("partition") + " " + ckpt.config_hash + "\n";
    for (std::size_t i = 0; i < emb.rows(); ++i) {
        std::snprintf(buf, sizeof(buf), "%lld %lld", static_cast<long long>(cols[i]),
                      static_cast<long long>(rows[i]));
        text += buf;
        for (std::size_t j = 0; j < emb.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), " %.9g", emb.at(i, j));
            text += buf;
        }
        text += '\n';
    }
    atomic_write_text(out_file, text);
    std::printf("export: %zu tokens x %zu dims -> %s\n", emb.rows(), emb.cols(),
                out_file.c_str());
}

EmbeddingExport parse_embedding_export(std::istream& in, std::uint32_t finest_level) {
    EmbeddingExport ex;
    std::string header;
    if (!std::getline(in, header)) throw DataError("embedding export: empty input");
    std::istringstream hs(header);
    std::size_t count = 0;
    if (!(hs >> count >> ex.d >> ex.method >> ex.partition >> ex.config_hash))
        throw DataError("embedding export: malformed header");

    ex.values = Tensor::zeros({count, ex.d});
    ex.cells.reserve(count);
    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw DataError("embedding export: truncated file");
        std::istringstream ls(line);
        CellIndex cell;
        cell.level = finest_level;
        if (!(ls >> cell.col >> cell.row)) throw DataError("embedding export: malformed row");
        for (std::size_t j = 0; j < ex.d; ++j)
            if (!(ls >> ex.values.at(i, j))) throw DataError("embedding export: malformed row");
        ex.cells.push_back(cell);
    }
    return ex;
}

void cmd_probe(const RunConfig& cfg) {
    const std::string hash = cfg.hash();
    Dataset ds = load_dataset(cfg);
    const auto& vocab = ds.prepared.vocab;
    const auto methods = cfg.methods();
    const auto seeds = cfg.seeds();

    // labels
    std::vector<int> token_classes;
    int classes = 0;
    std::vector<std::string> class_names;
    const std::string kind = cfg.get("probe.labels_kind");
    if (kind == "place_class") {
        const std::string path = cfg.get("data.place_classes");
        if (path.empty()) throw ConfigError("data.place_classes is not set");
        std::ifstream in(path);
        if (!in) throw DataError("cannot open place class file '" + path + "'");
        auto pc = read_place_classes(in, static_cast<std::uint32_t>(vocab.spec().finest_level()));
        token_classes = token_classes_from_place_classes(vocab, pc);
        for (const auto& [cell, cls] : pc) classes = std::max(classes, cls + 1);
        if (classes < 2) throw DataError("probe: ground truth has fewer than two classes");
        for (int c = 0; c < classes; ++c) class_names.push_back("class" + std::to_string(c));
    } else if (kind == "landuse100m") {
        const std::string path = cfg.get("data.labels");
        if (path.empty()) throw ConfigError("data.labels is not set");
        std::ifstream in(path);
        if (!in) throw DataError("cannot open land-use label file '" + path + "'");
        std::vector<std::pair<CellIndex, int>> labels100;
        for (auto& [cell, code] : read_place_classes(in, 0)) labels100.push_back({cell, code});
        const auto merge = cfg.get("landuse.merge").empty()
                               ? LandUseMergeMap::defaults()
                               : LandUseMergeMap::parse(cfg.get("landuse.merge"));
        token_classes = token_classes_from_landuse(vocab, aggregate_to_500m(labels100, merge));
        classes = static_cast<int>(kLandUseClasses);
        for (const char* name : kLandUseClassNames) class_names.push_back(name);
    } else {
        throw ConfigError("probe.labels_kind must be place_class or landuse100m");
    }

    const auto visits = visit_counts(vocab.size(), ds.split.train);
    const double rural_pct = cfg.get_double("probe.rural_percentile");
    const std::string city = cfg.get("dataset.name");

    std::string seed_list;
    for (std::uint64_t s : seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
    std::string acc_csv =
        "# config_hash=" + hash + " seeds=" + seed_list + "\ncity,method,stratum,mean,std\n";
    std::string table;
    for (const auto& method : methods) {
        std::vector<double> acc_all, acc_rural;
        for (std::uint64_t seed : seeds) {
            const std::string ckpt_path =
                out_path(cfg, run_file("ckpt", method, seed, ".bin"));
            if (!fs::exists(ckpt_path))
                throw DataError("probe: missing checkpoint '" + ckpt_path + "'");
            LoadedModel loaded = model_from_checkpoint(load_checkpoint(ckpt_path));
            if (loaded.vocab->size() != vocab.size())
                throw DataError("probe: checkpoint vocabulary does not match the dataset");
            for (std::size_t i = 0; i < vocab.size(); ++i)
                if (!(loaded.vocab->token(i) == vocab.token(i)))
                    throw DataError("probe: checkpoint vocabulary does not match the dataset");

            auto probe_ds = build_probe_dataset(
                loaded.model->embedding().param().value, token_classes, classes, visits,
                static_cast<std::uint64_t>(cfg.get_int("probe.split_seed")));
            auto probe = train_probe(probe_ds, {cfg.get_double("probe.lr"),
                                                static_cast<std::size_t>(cfg.get_int("probe.epochs")),
                                                seed});
            auto all = evaluate_probe(probe, probe_ds, Stratum::All, rural_pct);
            auto rural = evaluate_probe(probe, probe_ds, Stratum::Rural, rural_pct);
            acc_all.push_back(all.accuracy);
            acc_rural.push_back(rural.accuracy);

            atomic_write_text(out_path(cfg, run_file("confusion", method, seed, ".csv")),
                              "# config_hash=" + hash + " method=" + method + " seed=" +
                                  std::to_string(seed) + "\n" + confusion_to_csv(all, class_names));

            std::string pred = "# config_hash=" + hash + " method=" + method +
                               " seed=" + std::to_string(seed) + "\n";
            char buf[64];
            for (std::size_t i = 0; i < probe_ds.size(); ++i) {
                const auto& cell = vocab.token(probe_ds.tokens[i]);
                std::snprintf(buf, sizeof(buf), "%lld\t%lld\t%d\n",
                              static_cast<long long>(cell.col), static_cast<long long>(cell.row),
                              predict_class(probe, probe_ds.features.row_ptr(i)));
                pred += buf;
            }
            atomic_write_text(out_path(cfg, run_file("pred", method, seed, ".tsv")), pred);
        }

        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,all,%.9g,%.9g\n", city.c_str(), method.c_str(),
                      mean(acc_all), sample_stddev(acc_all));
        acc_csv += buf;
        std::snprintf(buf, sizeof(buf), "%s,%s,rural,%.9g,%.9g\n", city.c_str(), method.c_str(),
                      mean(acc_rural), sample_stddev(acc_rural));
        acc_csv += buf;
        std::snprintf(buf, sizeof(buf), "probe %s: all=%.4f+-%.4f rural=%.4f+-%.4f\n",
                      method.c_str(), mean(acc_all), sample_stddev(acc_all), mean(acc_rural),
                      sample_stddev(acc_rural));
        table += buf;
    }
    atomic_write_text(out_path(cfg, "accuracy.csv"), acc_csv);
    std::fputs(table.c_str(), stdout);
}

int cmd_gradcheck(std::uint64_t seed, std::size_t instances, double tolerance) {
    GridSpec spec = GridSpec::standard();
    std::vector<CellIndex> cells;
    for (int i = 0; i < 6; ++i) cells.push_back({2, i, 0});
    for (int i = 0; i < 6; ++i) cells.push_back({2, 90 + i, 90});
    auto vocab = HierarchicalVocabulary::build(cells, spec);

    ModelConfig cfg;
    cfg.method = "hier";
    cfg.d = 8;
    cfg.hidden = 6;
    cfg.readout = 8;
    cfg.emb_dow = 2;
    cfg.emb_tod = 2;
    cfg.emb_dur = 2;

    Rng rng(seed);
    double global_max = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        NextPlaceModel model(vocab, cfg, seed * 1000 + k);
        TokenizedTrajectory seq;
        for (int t = 0; t < 3; ++t)
            seq.steps.push_back({static_cast<std::int32_t>(rng.below(vocab.size())),
                                 static_cast<std::int32_t>(rng.below(7)),
                                 static_cast<std::int32_t>(rng.below(24)),
                                 static_cast<std::int32_t>(rng.below(8))});

        auto run = [&](bool with_grad) {
            Graph g(with_grad);
            auto loss = model.sequence_loss(g, seq);
            if (with_grad) g.backward(loss);
            return g.value(loss).v[0];
        };
        auto params = model.parameters();
        auto report = finite_difference_check(params, [&] { return run(false); },
                                              [&] { return run(true); });
        global_max = std::max(global_max, report.max_rel_err);
        std::printf("gradcheck instance %zu: %zu entries, max_rel_err=%.3e (worst %s[%zu])\n", k,
                    report.checked, report.max_rel_err, report.worst.param.c_str(),
                    report.worst.index);
    }
    std::printf("gradcheck: %zu instances, max_rel_err=%.3e, tolerance=%.1e -> %s\n", instances,
                global_max, tolerance, global_max < tolerance ? "pass" : "FAIL");
    return global_max < tolerance ? 0 : 1;
}

}  // namespace hieremb
