// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failures. Criteria 4-6 train real models on synthetic data and take a
// while; run through ctest (test name "acceptance") or directly.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hieremb/checkpoint.hpp"
#include "hieremb/commands.hpp"
#include "hieremb/config.hpp"
#include "hieremb/engine.hpp"
#include "hieremb/hier_embedding.hpp"
#include "hieremb/landuse.hpp"
#include "hieremb/model.hpp"
#include "hieremb/stats.hpp"
#include "hieremb/synth.hpp"

namespace fs = std::filesystem;
using namespace hieremb;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t workers() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 2 : hc;
}

// ---------------------------------------------------------------------------
// 1. gradient correctness: full model, >= 20 random 3-step instances,
//    max relative error < 1e-4 at 64-bit, under one minute
Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
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

    Rng rng(20260811);
    double max_rel = 0.0;
    std::size_t checked = 0;
    for (int k = 0; k < 20; ++k) {
        NextPlaceModel model(vocab, cfg, 7000 + static_cast<std::uint64_t>(k));
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
        max_rel = std::max(max_rel, report.max_rel_err);
        checked += report.checked;
    }
    const double secs = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "20 instances, %zu entries, max_rel_err=%.3e, %.1fs", checked,
                  max_rel, secs);
    return {max_rel < 1e-4 && secs < 60.0, buf};
}

// ---------------------------------------------------------------------------
// 2. averaging oracle: bulk interval averaging equals brute-force set
//    averaging exactly on 50 random vocabularies; idempotent; place slice
//    untouched; under ten seconds
Outcome criterion_averaging() {
    const auto t0 = std::chrono::steady_clock::now();
    GridSpec spec = GridSpec::standard();
    Rng rng(20260812);

    for (int round = 0; round < 50; ++round) {
        const std::size_t n_cells = 50 + rng.below(451);  // <= 500 tokens
        std::vector<CellIndex> cells;
        for (std::size_t i = 0; i < n_cells; ++i)
            cells.push_back({2, static_cast<std::int64_t>(rng.below(400)),
                             static_cast<std::int64_t>(rng.below(400))});
        auto vocab = HierarchicalVocabulary::build(cells, spec);
        HierEmbeddingMatrix emb(vocab, make_partition("hier", 64, spec));
        emb.param().init_uniform(rng, 2.0);
        const std::vector<double> original = emb.param().value.v;

        // brute force over unordered parent-filtered sets
        std::vector<double> reference = original;
        for (const auto& slice : emb.partition().slices) {
            const std::size_t level = spec.level_index(slice.level_name);
            std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> groups;
            for (std::size_t id = 0; id < vocab.size(); ++id) {
                auto p = parent(vocab.token(id), level, spec);
                groups[{p.col, p.row}].push_back(id);
            }
            for (const auto& [key, members] : groups) {
                for (std::size_t j = 0; j < slice.width; ++j) {
                    double sum = 0.0;
                    for (std::size_t id : members) sum += reference[id * 64 + slice.offset + j];
                    const double mean = sum / static_cast<double>(members.size());
                    for (std::size_t id : members) reference[id * 64 + slice.offset + j] = mean;
                }
            }
        }

        emb.average_slices();
        if (emb.param().value.v != reference)
            return {false, "bulk averaging differs from brute force at round " +
                               std::to_string(round)};

        // place slice bitwise untouched
        const std::size_t place_offset = 64 - emb.partition().place_width;
        for (std::size_t id = 0; id < vocab.size(); ++id)
            for (std::size_t j = place_offset; j < 64; ++j)
                if (emb.param().value.v[id * 64 + j] != original[id * 64 + j])
                    return {false, "place slice modified"};

        const std::vector<double> once = emb.param().value.v;
        emb.average_slices();
        if (emb.param().value.v != once)
            return {false, "second pass not bitwise idempotent at round " + std::to_string(round)};
    }
    const double secs = seconds_since(t0);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "50 vocabularies, exact equality, %.2fs", secs);
    return {secs < 10.0, buf};
}

// ---------------------------------------------------------------------------
// 3. layout property: contiguous, nested, partitioning region intervals on
//    100 random cell sets, verified against brute-force parent filtering
Outcome criterion_layout() {
    const auto t0 = std::chrono::steady_clock::now();
    GridSpec spec = GridSpec::standard();
    Rng rng(20260813);

    for (int round = 0; round < 100; ++round) {
        const std::size_t n_cells = 20 + rng.below(281);
        std::vector<CellIndex> cells;
        for (std::size_t i = 0; i < n_cells; ++i)
            cells.push_back({2, static_cast<std::int64_t>(rng.below(500)),
                             static_cast<std::int64_t>(rng.below(500))});
        auto vocab = HierarchicalVocabulary::build(cells, spec);

        for (std::size_t level = 0; level < vocab.upper_level_count(); ++level) {
            std::size_t cursor = 0;
            for (const auto& region : vocab.regions(level)) {
                if (region.interval.begin != cursor)
                    return {false, "intervals do not tile [0, |V|)"};
                cursor = region.interval.end;
                std::set<std::size_t> expected;
                for (std::size_t id = 0; id < vocab.size(); ++id)
                    if (parent(vocab.token(id), level, spec) == region.cell) expected.insert(id);
                if (expected.size() != region.interval.count() ||
                    *expected.begin() != region.interval.begin ||
                    *expected.rbegin() + 1 != region.interval.end)
                    return {false, "interval does not match parent filtering"};
            }
            if (cursor != vocab.size()) return {false, "intervals do not cover the vocabulary"};
        }
        for (const auto& inner : vocab.regions(1)) {
            std::size_t containers = 0;
            for (const auto& outer : vocab.regions(0))
                if (outer.interval.begin <= inner.interval.begin &&
                    inner.interval.end <= outer.interval.end)
                    ++containers;
            if (containers != 1) return {false, "level-2 interval not nested in one level-1"};
        }
    }
    const double secs = seconds_since(t0);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "100 cell sets verified, %.2fs", secs);
    return {secs < 10.0, buf};
}

// ---------------------------------------------------------------------------
// shared setup for criteria 4-6

struct TrainedExperiment {
    SynthOutput data;
    PreparedData prepared;
    DatasetSplit split;
    ExperimentResult result;
    // per method: per seed embedding matrices (f32-rounded, post averaging)
    std::map<std::string, std::vector<Tensor>> embeddings;
    std::map<std::string, std::vector<double>> per_run_seconds;
};

TrainedExperiment run_synthetic_experiment(const SynthConfig& synth_cfg, const ModelConfig& base,
                                           const std::vector<std::string>& methods,
                                           const std::vector<std::uint64_t>& seeds,
                                           bool keep_embeddings) {
    const GridSpec spec = GridSpec::standard();
    auto data = synth_generate(synth_cfg, spec);
    auto prepared = prepare_sequences(data.trajectories, spec, BucketConfig{}, 64);
    auto sequences = std::move(prepared.sequences);
    TrainedExperiment ex{std::move(data), std::move(prepared),
                         split_dataset(std::move(sequences), 0.1, 0.1, 7), {}, {}, {}};

    ex.result = run_experiment(
        methods, seeds, ex.prepared.vocab, ex.split, base, "acceptance", workers(),
        [&](const RunMetrics& metrics, NextPlaceModel& model) {
            if (keep_embeddings)
                ex.embeddings[metrics.method].push_back(model.embedding().param().value);
            ex.per_run_seconds[metrics.method].push_back(metrics.wall_seconds);
            std::printf("    run %-12s epochs=%zu best=%zu test=%.4f (%.0fs)\n",
                        metrics.run_id.c_str(), metrics.train_loss.size(),
                        metrics.selected_epoch, metrics.test_loss, metrics.wall_seconds);
            std::fflush(stdout);
        });
    return ex;
}

// 4. entropy calibration: alpha=0, |V| ~ 2000, 5000 sequences; every
//    method's test log-perplexity within 2% of ln |V|; < 15 min per method
Outcome criterion_entropy() {
    SynthConfig synth;
    synth.level1_per_side = 2;
    synth.places_per_leaf = 5;  // 4 * 100 * 5 = 2000 places
    synth.users = 5000;
    synth.mean_seq_len = 10;
    synth.alpha = 0.0;
    synth.seed = 404;

    ModelConfig base;  // paper-shaped model: d=64, hidden=128, 2 layers
    base.epochs = 3;

    auto ex = run_synthetic_experiment(synth, base, kCanonicalMethods, {1}, false);

    const double target = std::log(static_cast<double>(ex.prepared.vocab.size()));
    std::string detail;
    bool pass = true;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "|V|=%zu ln|V|=%.4f;", ex.prepared.vocab.size(), target);
    detail += buf;
    for (const auto& s : ex.result.summary) {
        const double rel = std::abs(s.mean_loss - target) / target;
        std::snprintf(buf, sizeof(buf), " %s=%.4f (%.2f%%)", s.method.c_str(), s.mean_loss,
                      100.0 * rel);
        detail += buf;
        pass = pass && rel < 0.02;
    }
    for (const auto& [method, secs] : ex.per_run_seconds)
        for (double s : secs) pass = pass && s < 900.0;
    return {pass, detail};
}

// 5 + 6 share one trained experiment on alpha=0.9 hierarchical data
Outcome criterion_ordering_result;
Outcome criterion_probe_result;

void run_ordering_and_probe() {
    SynthConfig synth;
    synth.level1_per_side = 2;
    synth.places_per_leaf = 10;  // ~4000 places
    synth.users = 20000;
    synth.mean_seq_len = 10;
    synth.alpha = 0.9;
    synth.classes = 5;
    synth.zipf_exponent = 1.1;
    synth.profile_noise = 0.25;
    synth.seed = 505;

    ModelConfig base;
    // calibrated: at lr 3e-3 validation bottoms out around epoch 4-5 for
    // every method, the mean-loss ordering is stable, and 4 methods x 10
    // seeds finish within the runtime budget on two cores
    base.epochs = 8;
    base.lr = 3e-3;

    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);

    auto ex = run_synthetic_experiment(synth, base, kCanonicalMethods, seeds, true);

    // --- criterion 5: mean test loss ordering + significance --------------
    std::map<std::string, const MethodSummary*> by_method;
    for (const auto& s : ex.result.summary) by_method[s.method] = &s;
    const double hier = by_method.at("hier")->mean_loss;
    const double hier1km = by_method.at("hier1km")->mean_loss;
    const double hier10km = by_method.at("hier10km")->mean_loss;
    const double nonhier = by_method.at("nonhier")->mean_loss;
    const double p_hier_nonhier =
        welch_t_test(by_method.at("hier")->losses, by_method.at("nonhier")->losses).p;

    const bool order_ok = hier < hier1km && hier1km <= hier10km && hier10km < nonhier;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "hier=%.4f+-%.4f < hier1km=%.4f+-%.4f <= hier10km=%.4f+-%.4f < "
                  "nonhier=%.4f+-%.4f, welch p(hier,nonhier)=%.3g",
                  hier, by_method.at("hier")->stddev, hier1km, by_method.at("hier1km")->stddev,
                  hier10km, by_method.at("hier10km")->stddev, nonhier,
                  by_method.at("nonhier")->stddev, p_hier_nonhier);
    criterion_ordering_result = {order_ok && p_hier_nonhier < 0.05, buf};

    // --- criterion 6: rural probe gain -------------------------------------
    auto token_classes = token_classes_from_place_classes(ex.prepared.vocab, ex.data.place_classes);
    int classes = 0;
    for (int c : token_classes) classes = std::max(classes, c + 1);
    const auto visits = visit_counts(ex.prepared.vocab.size(), ex.split.train);

    auto rural_accuracy = [&](const std::string& method) {
        std::vector<double> accs;
        const auto& embs = ex.embeddings.at(method);
        for (std::size_t i = 0; i < embs.size(); ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            auto ds = build_probe_dataset(embs[i], token_classes, classes, visits, 11);
            auto probe = train_probe(ds, {1e-2, 200, seeds[i]});
            auto eval = evaluate_probe(probe, ds, Stratum::Rural, 0.30);
            accs.push_back(eval.accuracy);
            if (seconds_since(t0) > 60.0)
                std::printf("    warning: probe run exceeded one minute\n");
        }
        return accs;
    };
    auto hier_accs = rural_accuracy("hier");
    auto nonhier_accs = rural_accuracy("nonhier");
    const double gain = mean(hier_accs) - mean(nonhier_accs);
    std::snprintf(buf, sizeof(buf),
                  "rural accuracy over 10 seeds: hier=%.4f+-%.4f nonhier=%.4f+-%.4f, gain=%+.4f "
                  "(need >= +0.03)",
                  mean(hier_accs), sample_stddev(hier_accs), mean(nonhier_accs),
                  sample_stddev(nonhier_accs), gain);
    criterion_probe_result = {gain >= 0.03, buf};
}

// ---------------------------------------------------------------------------
// 7. determinism: rerunning CLI commands with identical config, seed and
//    thread count produces bit-identical output files
Outcome criterion_determinism() {
#ifndef HIEREMB_CLI_PATH
    return {false, "CLI path not compiled in"};
#else
    const std::string cli = HIEREMB_CLI_PATH;
    const fs::path work = fs::temp_directory_path() / "hieremb_acceptance_det";
    fs::remove_all(work);
    fs::create_directories(work);

    const std::string cfg_path = (work / "run.cfg").string();
    std::ofstream cfg(cfg_path);
    cfg << "data.staypoints = " << (work / "data" / "staypoints.tsv").string() << "\n"
        << "data.place_classes = " << (work / "data" / "place_classes.tsv").string() << "\n"
        << "synth.users = 400\nsynth.places_per_leaf = 2\n"
        << "train.epochs = 2\ntrain.seeds = 3\nmodel.methods = hier\n"
        << "model.d = 8\nmodel.hidden = 8\nmodel.readout = 8\n"
        << "model.emb_dow = 2\nmodel.emb_tod = 2\nmodel.emb_dur = 2\n"
        << "probe.epochs = 30\nruntime.threads = 2\n";
    cfg.close();

    auto sh = [&](const std::string& command) {
        return std::system((command + " > /dev/null 2>&1").c_str()) == 0;
    };
    auto same = [&](const std::string& name) {
        std::ifstream a((work / "run1" / name).string(), std::ios::binary);
        std::ifstream b((work / "run2" / name).string(), std::ios::binary);
        if (!a || !b) return false;
        std::ostringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        return sa.str() == sb.str() && !sa.str().empty();
    };

    const std::string base = "\"" + cli + "\"";
    if (!sh(base + " synth --config " + cfg_path + " --out " + (work / "data").string()))
        return {false, "synth failed"};
    for (const char* dir : {"run1", "run2"}) {
        const std::string out = (work / dir).string();
        if (!sh(base + " train --config " + cfg_path + " --out " + out))
            return {false, "train failed"};
        if (!sh(base + " evaluate --config " + cfg_path + " --out " + out + " --checkpoint " +
                out + "/ckpt_hier_s3.bin"))
            return {false, "evaluate failed"};
        if (!sh(base + " export --config " + cfg_path + " --out " + out + " --checkpoint " + out +
                "/ckpt_hier_s3.bin"))
            return {false, "export failed"};
        if (!sh(base + " probe --config " + cfg_path + " --out " + out))
            return {false, "probe failed"};
    }
    for (const char* name :
         {"metrics_hier_s3.jsonl", "summary.csv", "ckpt_hier_s3.bin", "eval_hier_s3.json",
          "emb_hier_s3.tsv", "accuracy.csv", "confusion_hier_s3.csv", "pred_hier_s3.tsv"}) {
        if (!same(name)) return {false, std::string("file differs or missing: ") + name};
    }
    fs::remove_all(work);
    return {true, "synth/train/evaluate/export/probe outputs bit-identical across reruns"};
#endif
}

// ---------------------------------------------------------------------------
// 8. documented non-reproduction: README states the reference results with
//    the data-unavailability note
Outcome criterion_documentation() {
#ifndef HIEREMB_README_PATH
    return {false, "README path not compiled in"};
#else
    std::ifstream in(HIEREMB_README_PATH);
    if (!in) return {false, std::string("cannot open ") + HIEREMB_README_PATH};
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    std::vector<const char*> required = {"7.8406", "0.0097", "0.725", "0.015", "proprietar"};
    std::string missing;
    for (const char* needle : required)
        if (text.find(needle) == std::string::npos) missing += std::string(" ") + needle;
    if (!missing.empty()) return {false, "README missing:" + missing};
    return {true, "reference values and data-availability note present in README"};
#endif
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--only" && i + 1 < argc) {
            std::istringstream list(argv[++i]);
            std::string item;
            while (std::getline(list, item, ',')) only.insert(std::atoi(item.c_str()));
        }
    }
    auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

    struct Row {
        int id;
        const char* name;
        Outcome outcome;
    };
    std::vector<Row> rows;

    if (wanted(1)) rows.push_back({1, "gradient correctness", criterion_gradients()});
    if (wanted(2)) rows.push_back({2, "averaging operation oracle", criterion_averaging()});
    if (wanted(3)) rows.push_back({3, "vocabulary layout property", criterion_layout()});
    if (wanted(4)) {
        std::printf("[4] entropy calibration: training 4 methods on alpha=0 data...\n");
        rows.push_back({4, "entropy calibration", criterion_entropy()});
    }
    if (wanted(5) || wanted(6)) {
        std::printf("[5/6] ordering + probe: training 4 methods x 10 seeds on alpha=0.9 data...\n");
        run_ordering_and_probe();
        if (wanted(5)) rows.push_back({5, "ordering reproduction", criterion_ordering_result});
        if (wanted(6)) rows.push_back({6, "rural probe gain", criterion_probe_result});
    }
    if (wanted(7)) rows.push_back({7, "determinism of command reruns", criterion_determinism()});
    if (wanted(8)) rows.push_back({8, "documented non-reproduction", criterion_documentation()});

    int failures = 0;
    std::printf("\n");
    for (const auto& row : rows) {
        std::printf("[%d] %-32s %s  %s\n", row.id, row.name,
                    row.outcome.pass ? "PASS" : "FAIL", row.outcome.detail.c_str());
        failures += row.outcome.pass ? 0 : 1;
    }
    std::printf("acceptance: %zu criteria, %d failed\n", rows.size(), failures);
    return failures;
}
