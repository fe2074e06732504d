#include "hieremb/model.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include "hieremb/errors.hpp"
#include "hieremb/stats.hpp"
#include "json.hpp"

namespace hieremb {

const std::vector<std::string> kCanonicalMethods = {"hier", "hier1km", "hier10km", "nonhier"};

void ModelConfig::validate() const {
    if (readout != d)
        throw ConfigError("model: readout width must equal the embedding width for weight tying");
    if (layers < 1) throw ConfigError("model: need at least one LSTM layer");
    if (hidden < 1 || d < 1) throw ConfigError("model: zero-sized layer");
    if (batch_size < 1) throw ConfigError("model: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("model: epochs must be >= 1");
    if (dow_vocab < 7) throw ConfigError("model: dow vocabulary must cover 7 days");
}

NextPlaceModel::NextPlaceModel(const HierarchicalVocabulary& vocab, ModelConfig cfg,
                               std::uint64_t seed)
    : vocab_(&vocab),
      cfg_(std::move(cfg)),
      emb_(vocab, make_partition(cfg_.method, cfg_.d, vocab.spec())) {
    cfg_.validate();
    Rng rng(seed);

    emb_.param().init_uniform(rng, 0.05);
    dow_emb_ = Parameter::make("dow_emb", {cfg_.dow_vocab, cfg_.emb_dow});
    dow_emb_.init_uniform(rng, 0.05);
    tod_emb_ = Parameter::make("tod_emb", {cfg_.tod_vocab, cfg_.emb_tod});
    tod_emb_.init_uniform(rng, 0.05);
    dur_emb_ = Parameter::make("dur_emb", {cfg_.dur_vocab, cfg_.emb_dur});
    dur_emb_.init_uniform(rng, 0.05);

    const std::size_t step_input = cfg_.d + cfg_.emb_dow + cfg_.emb_tod + cfg_.emb_dur;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::size_t in_dim = l == 0 ? step_input : cfg_.hidden;
        lstm_.push_back(LstmParams::make("lstm" + std::to_string(l), in_dim, cfg_.hidden));
        lstm_[l].w.init_fan_in(rng, in_dim + cfg_.hidden);
    }

    readout_w_ = Parameter::make("readout.w", {cfg_.layers * cfg_.hidden, cfg_.readout});
    readout_w_.init_fan_in(rng, cfg_.layers * cfg_.hidden);
    readout_b_ = Parameter::make("readout.b", {cfg_.readout});
    out_bias_ = Parameter::make("out_bias", {vocab.size()});
}

std::vector<Parameter*> NextPlaceModel::parameters() {
    std::vector<Parameter*> ps{&emb_.param(), &dow_emb_, &tod_emb_, &dur_emb_};
    for (auto& l : lstm_) {
        ps.push_back(&l.w);
        ps.push_back(&l.b);
    }
    ps.push_back(&readout_w_);
    ps.push_back(&readout_b_);
    ps.push_back(&out_bias_);
    return ps;
}

std::size_t NextPlaceModel::parameter_count() const {
    std::size_t n = emb_.param().value.size() + dow_emb_.value.size() + tod_emb_.value.size() +
                    dur_emb_.value.size() + readout_w_.value.size() + readout_b_.value.size() +
                    out_bias_.value.size();
    for (const auto& l : lstm_) n += l.w.value.size() + l.b.value.size();
    return n;
}

Graph::Var NextPlaceModel::sequence_loss(Graph& g, const TokenizedTrajectory& seq) {
    const std::size_t n = seq.steps.size();
    if (n < 2) throw std::invalid_argument("sequence_loss: need at least two steps");

    std::vector<std::int32_t> place, dow, tod, dur, targets;
    place.reserve(n - 1);
    dow.reserve(n - 1);
    tod.reserve(n - 1);
    dur.reserve(n - 1);
    targets.reserve(n - 1);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        place.push_back(seq.steps[t].place);
        dow.push_back(seq.steps[t].dow);
        tod.push_back(seq.steps[t].tod);
        dur.push_back(seq.steps[t].dur);
        targets.push_back(seq.steps[t + 1].place);
    }

    const Graph::Var parts[4] = {
        g.gather_rows(emb_.param(), std::move(place)),
        g.gather_rows(dow_emb_, std::move(dow)),
        g.gather_rows(tod_emb_, std::move(tod)),
        g.gather_rows(dur_emb_, std::move(dur)),
    };
    Graph::Var x = g.concat_cols(parts);

    std::vector<Graph::Var> layer_outputs;
    Graph::Var h = x;
    for (auto& layer : lstm_) {
        h = g.lstm_sequence(h, layer);
        layer_outputs.push_back(h);
    }
    Graph::Var summary =
        layer_outputs.size() == 1 ? layer_outputs[0] : g.concat_cols(layer_outputs);
    Graph::Var r = g.tanh_activation(g.affine(summary, readout_w_, readout_b_));
    Graph::Var logits = g.tied_logits(r, emb_.param(), out_bias_);
    return g.softmax_xent_sum(logits, std::move(targets));
}

double NextPlaceModel::mean_loss(std::span<const TokenizedTrajectory> sequences) {
    if (sequences.empty()) throw DataError("mean_loss: empty sequence set");
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& seq : sequences) {
        Graph g(false);
        Graph::Var loss = sequence_loss(g, seq);
        total += g.value(loss).v[0];
        steps += seq.steps.size() - 1;
    }
    return total / static_cast<double>(steps);
}

std::vector<Tensor> NextPlaceModel::snapshot_values() const {
    std::vector<Tensor> snap;
    auto* self = const_cast<NextPlaceModel*>(this);
    for (Parameter* p : self->parameters()) snap.push_back(p->value);
    return snap;
}

void NextPlaceModel::restore_values(const std::vector<Tensor>& snapshot) {
    auto params = parameters();
    if (snapshot.size() != params.size())
        throw std::invalid_argument("restore_values: snapshot size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
}

void NextPlaceModel::round_params_to_f32() {
    for (Parameter* p : parameters()) round_to_f32(p->value);
}

namespace {

std::string serialize_grid(const GridSpec& spec) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.17g;%.17g;", spec.origin_x(), spec.origin_y());
    std::string out = buf;
    for (std::size_t i = 0; i < spec.level_count(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s:%.17g", spec.level(i).name.c_str(),
                      spec.level(i).cell_size);
        out += buf;
        if (i + 1 < spec.level_count()) out += ',';
    }
    return out;
}

GridSpec parse_grid(const std::string& s) {
    auto p1 = s.find(';');
    auto p2 = s.find(';', p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos)
        throw DataError("checkpoint: malformed grid description");
    const double ox = std::stod(s.substr(0, p1));
    const double oy = std::stod(s.substr(p1 + 1, p2 - p1 - 1));
    std::vector<GridLevel> levels;
    std::string rest = s.substr(p2 + 1);
    std::size_t pos = 0;
    while (pos < rest.size()) {
        auto comma = rest.find(',', pos);
        if (comma == std::string::npos) comma = rest.size();
        auto item = rest.substr(pos, comma - pos);
        auto colon = item.rfind(':');
        if (colon == std::string::npos) throw DataError("checkpoint: malformed grid level");
        levels.push_back({item.substr(0, colon), std::stod(item.substr(colon + 1))});
        pos = comma + 1;
    }
    return GridSpec(ox, oy, std::move(levels));
}

}  // namespace

Checkpoint NextPlaceModel::to_checkpoint(const std::string& config_hash,
                                         std::uint64_t seed) const {
    Checkpoint ckpt;
    ckpt.config_hash = config_hash;

    auto* self = const_cast<NextPlaceModel*>(this);
    for (Parameter* p : self->parameters()) ckpt.tensors.emplace(p->name, p->value);

    std::vector<std::int64_t> cols, rows;
    cols.reserve(vocab_->size());
    rows.reserve(vocab_->size());
    for (const auto& cell : vocab_->tokens()) {
        cols.push_back(cell.col);
        rows.push_back(cell.row);
    }
    ckpt.int_arrays.emplace("tokens_col", std::move(cols));
    ckpt.int_arrays.emplace("tokens_row", std::move(rows));
    ckpt.int_arrays.emplace(
        "cfg", std::vector<std::int64_t>{
                   static_cast<std::int64_t>(cfg_.d), static_cast<std::int64_t>(cfg_.hidden),
                   static_cast<std::int64_t>(cfg_.layers), static_cast<std::int64_t>(cfg_.readout),
                   static_cast<std::int64_t>(cfg_.emb_dow), static_cast<std::int64_t>(cfg_.emb_tod),
                   static_cast<std::int64_t>(cfg_.emb_dur), static_cast<std::int64_t>(cfg_.dow_vocab),
                   static_cast<std::int64_t>(cfg_.tod_vocab),
                   static_cast<std::int64_t>(cfg_.dur_vocab)});
    ckpt.int_arrays.emplace("seed", std::vector<std::int64_t>{static_cast<std::int64_t>(seed)});
    ckpt.strings.emplace("method", cfg_.method);
    ckpt.strings.emplace("partition", emb_.partition().describe());
    ckpt.strings.emplace("grid", serialize_grid(vocab_->spec()));
    return ckpt;
}

LoadedModel model_from_checkpoint(const Checkpoint& ckpt) {
    const auto grid = parse_grid(ckpt.strings.at("grid"));
    const auto& cols = ckpt.int_arrays.at("tokens_col");
    const auto& rows = ckpt.int_arrays.at("tokens_row");
    if (cols.size() != rows.size() || cols.empty())
        throw DataError("checkpoint: malformed token table");

    std::vector<CellIndex> cells;
    cells.reserve(cols.size());
    const auto finest = static_cast<std::uint32_t>(grid.finest_level());
    for (std::size_t i = 0; i < cols.size(); ++i) cells.push_back({finest, cols[i], rows[i]});

    LoadedModel loaded;
    loaded.vocab = std::make_unique<HierarchicalVocabulary>(
        HierarchicalVocabulary::build(cells, grid));
    if (loaded.vocab->size() != cols.size())
        throw DataError("checkpoint: duplicate tokens in token table");
    for (std::size_t i = 0; i < cols.size(); ++i) {
        const auto& cell = loaded.vocab->token(i);
        if (cell.col != cols[i] || cell.row != rows[i])
            throw DataError("checkpoint: token table does not match the vocabulary layout");
    }

    const auto& c = ckpt.int_arrays.at("cfg");
    if (c.size() != 10) throw DataError("checkpoint: malformed model config");
    ModelConfig cfg;
    cfg.method = ckpt.strings.at("method");
    cfg.d = static_cast<std::size_t>(c[0]);
    cfg.hidden = static_cast<std::size_t>(c[1]);
    cfg.layers = static_cast<std::size_t>(c[2]);
    cfg.readout = static_cast<std::size_t>(c[3]);
    cfg.emb_dow = static_cast<std::size_t>(c[4]);
    cfg.emb_tod = static_cast<std::size_t>(c[5]);
    cfg.emb_dur = static_cast<std::size_t>(c[6]);
    cfg.dow_vocab = static_cast<std::size_t>(c[7]);
    cfg.tod_vocab = static_cast<std::size_t>(c[8]);
    cfg.dur_vocab = static_cast<std::size_t>(c[9]);

    loaded.model = std::make_unique<NextPlaceModel>(*loaded.vocab, cfg, 0);
    for (Parameter* p : loaded.model->parameters()) {
        auto it = ckpt.tensors.find(p->name);
        if (it == ckpt.tensors.end())
            throw DataError("checkpoint: missing tensor '" + p->name + "'");
        if (it->second.shape != p->value.shape)
            throw DataError("checkpoint: shape mismatch for tensor '" + p->name + "'");
        p->value = it->second;
    }
    loaded.method = cfg.method;
    loaded.config_hash = ckpt.config_hash;
    loaded.seed = static_cast<std::uint64_t>(ckpt.int_arrays.at("seed").at(0));
    return loaded;
}

double evaluate_model(NextPlaceModel& model, std::span<const TokenizedTrajectory> test) {
    return model.mean_loss(test);
}

RunMetrics train_model(NextPlaceModel& model, const DatasetSplit& split,
                       const std::string& config_hash, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& cfg = model.config();
    if (split.train.empty()) throw DataError("train: empty training split");
    if (split.validation.empty()) throw DataError("train: empty validation split");
    if (split.test.empty()) throw DataError("train: empty test split");

    RunMetrics metrics;
    metrics.method = cfg.method;
    metrics.seed = seed;
    metrics.config_hash = config_hash;
    metrics.run_id = cfg.method + "-s" + std::to_string(seed);

    auto params = model.parameters();
    const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};

    // distinct stream from the init rng
    Rng batch_rng(seed + 0x9E3779B97F4A7C15ULL);

    auto average_pass = [&] {
        auto& emb = model.embedding();
        emb.average_slices();
        if (cfg.avg_moments) {
            Parameter& p = emb.param();
            HierEmbeddingMatrix::average_slices_raw(p.adam_m.v.data(), p.adam_m.rows(),
                                                    p.adam_m.cols(), model.vocab(),
                                                    emb.partition());
            HierEmbeddingMatrix::average_slices_raw(p.adam_v.v.data(), p.adam_v.rows(),
                                                    p.adam_v.cols(), model.vocab(),
                                                    emb.partition());
        }
    };
    average_pass();

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_snapshot;
    std::size_t iteration = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        batch_rng.shuffle(order);
        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::size_t batch_steps = 0;
            for (std::size_t i = start; i < end; ++i)
                batch_steps += split.train[order[i]].steps.size() - 1;

            zero_grads(params);
            double batch_sum = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                Graph g;
                Graph::Var loss = model.sequence_loss(g, split.train[order[i]]);
                const double value = g.value(loss).v[0];
                if (!std::isfinite(value))
                    throw DivergenceError("train: non-finite loss at epoch " +
                                          std::to_string(epoch) + ", iteration " +
                                          std::to_string(iteration) + " (" + metrics.run_id + ")");
                g.backward(loss, 1.0 / static_cast<double>(batch_steps));
                batch_sum += value;
            }
            clip_global_norm(params, cfg.clip);
            adam_step(params, adam);
            ++iteration;
            if (cfg.avg_interval > 0 && iteration % cfg.avg_interval == 0)
                average_pass();

            epoch_sum += batch_sum;
            epoch_steps += batch_steps;
        }

        metrics.train_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
        const double val = model.mean_loss(split.validation);
        metrics.val_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            metrics.selected_epoch = epoch;
            best_snapshot = model.snapshot_values();
        }
    }

    model.restore_values(best_snapshot);
    // keep the uniformity invariant true in the exported parameters, then
    // round so the in-memory test loss equals a checkpoint-based evaluation
    model.embedding().average_slices();
    model.round_params_to_f32();
    metrics.test_loss = model.mean_loss(split.test);

    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

ExperimentResult run_experiment(
    const std::vector<std::string>& methods, const std::vector<std::uint64_t>& seeds,
    const HierarchicalVocabulary& vocab, const DatasetSplit& split, const ModelConfig& base_cfg,
    const std::string& config_hash, std::size_t workers,
    const std::function<void(const RunMetrics&, NextPlaceModel&)>& on_run) {
    if (methods.empty() || seeds.empty())
        throw ConfigError("experiment: need at least one method and one seed");

    struct Task {
        std::size_t method_index;
        std::size_t seed_index;
    };
    std::vector<Task> tasks;
    for (std::size_t m = 0; m < methods.size(); ++m)
        for (std::size_t s = 0; s < seeds.size(); ++s) tasks.push_back({m, s});

    ExperimentResult result;
    result.runs.resize(tasks.size());

    std::atomic<std::size_t> next{0};
    std::mutex callback_mutex;
    std::mutex error_mutex;
    std::exception_ptr error;

    auto worker = [&] {
        while (true) {
            const std::size_t t = next.fetch_add(1);
            if (t >= tasks.size()) break;
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (error) break;
            }
            try {
                ModelConfig cfg = base_cfg;
                cfg.method = methods[tasks[t].method_index];
                const std::uint64_t seed = seeds[tasks[t].seed_index];
                NextPlaceModel model(vocab, cfg, seed);
                result.runs[t] = train_model(model, split, config_hash, seed);
                if (on_run) {
                    std::lock_guard<std::mutex> lock(callback_mutex);
                    on_run(result.runs[t], model);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                break;
            }
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, tasks.size()));
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);

    // canonical order, restricted to the methods that ran
    std::vector<std::string> ordered;
    for (const auto& m : kCanonicalMethods)
        if (std::find(methods.begin(), methods.end(), m) != methods.end()) ordered.push_back(m);
    for (const auto& m : methods)
        if (std::find(ordered.begin(), ordered.end(), m) == ordered.end()) ordered.push_back(m);

    for (const auto& m : ordered) {
        MethodSummary s;
        s.method = m;
        for (std::size_t t = 0; t < tasks.size(); ++t)
            if (methods[tasks[t].method_index] == m)
                s.losses.push_back(result.runs[t].test_loss);
        s.mean_loss = mean(s.losses);
        s.stddev = sample_stddev(s.losses);
        result.summary.push_back(std::move(s));
    }
    for (std::size_t i = 0; i + 1 < result.summary.size(); ++i) {
        const auto& a = result.summary[i].losses;
        const auto& b = result.summary[i + 1].losses;
        if (a.size() >= 2 && b.size() >= 2)
            result.summary[i].p_vs_next = welch_t_test(a, b).p;
    }
    return result;
}

std::string metrics_to_jsonl(const RunMetrics& metrics) {
    std::string out;
    for (std::size_t e = 0; e < metrics.train_loss.size(); ++e) {
        nlohmann::json j{{"run_id", metrics.run_id},     {"method", metrics.method},
                         {"seed", metrics.seed},         {"config_hash", metrics.config_hash},
                         {"epoch", e},                   {"train_loss", metrics.train_loss[e]},
                         {"val_loss", metrics.val_loss[e]}};
        out += j.dump();
        out += '\n';
    }
    nlohmann::json final{{"run_id", metrics.run_id},
                         {"method", metrics.method},
                         {"seed", metrics.seed},
                         {"config_hash", metrics.config_hash},
                         {"selected_epoch", metrics.selected_epoch},
                         {"test_loss", metrics.test_loss}};
    out += final.dump();
    out += '\n';
    return out;
}

std::string summary_to_csv(const std::vector<MethodSummary>& summary) {
    std::string out = "method,mean,std,p_vs_next\n";
    char buf[160];
    for (const auto& s : summary) {
        if (s.p_vs_next)
            std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", s.method.c_str(), s.mean_loss,
                          s.stddev, *s.p_vs_next);
        else
            std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,\n", s.method.c_str(), s.mean_loss,
                          s.stddev);
        out += buf;
    }
    return out;
}

}  // namespace hieremb
