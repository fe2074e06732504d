#include "hieremb/landuse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hieremb/errors.hpp"
#include "hieremb/rng.hpp"

namespace hieremb {

const std::array<const char*, kLandUseClasses> kLandUseClassNames = {
    "farmland",  "forest",    "waste",   "high_rise", "factories",
    "low_rise",  "roads",     "railroads", "public_facilities", "vacant_ground",
    "parks",     "rivers_lakes", "seashore", "sea_areas", "golf_courses"};

LandUseMergeMap LandUseMergeMap::defaults() {
    LandUseMergeMap m;
    // source codes: 1 rice paddy, 2 other farmland, 3 forest, 4 waste,
    // 5 high-rise, 6 dense low-rise, 7 sparse low-rise, 8 factories,
    // 9 roads, 10 railroads, 11 public facilities, 12 vacant ground,
    // 13 parks, 14 rivers and lakes, 15 seashore, 16 sea, 17 golf courses
    const int table[18] = {-1, 0, 0, 1, 2, 3, 5, 5, 4, 6, 7, 8, 9, 10, 11, 12, 13, 14};
    for (int i = 0; i < 18; ++i) m.map_[static_cast<std::size_t>(i)] = table[i];
    return m;
}

LandUseMergeMap LandUseMergeMap::parse(const std::string& text) {
    LandUseMergeMap m = defaults();
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        int raw = 0, cls = 0;
        if (std::sscanf(item.c_str(), "%d:%d", &raw, &cls) != 2 || raw < 1 || raw > 17 ||
            cls < 0 || cls >= static_cast<int>(kLandUseClasses))
            throw ConfigError("landuse: malformed merge entry '" + item + "'");
        m.map_[static_cast<std::size_t>(raw)] = cls;
        pos = comma + 1;
    }
    return m;
}

int LandUseMergeMap::merge(int raw_code) const {
    if (raw_code < 1 || raw_code > 17)
        throw DataError("landuse: raw code " + std::to_string(raw_code) + " out of range 1..17");
    return map_[static_cast<std::size_t>(raw_code)];
}

std::unordered_map<std::uint64_t, int> aggregate_to_500m(
    const std::vector<std::pair<CellIndex, int>>& labels_100m, const LandUseMergeMap& merge) {
    if (labels_100m.empty()) throw DataError("landuse: empty label grid");
    const std::int64_t ratio = kProbeCellSize / kLabelCellSize;  // 5

    std::unordered_map<std::uint64_t, std::array<std::int32_t, kLandUseClasses>> counts;
    for (const auto& [cell, raw] : labels_100m) {
        const int cls = merge.merge(raw);
        const std::uint64_t key = pack_cell(cell.col / ratio, cell.row / ratio);
        auto [it, inserted] = counts.try_emplace(key);
        if (inserted) it->second.fill(0);
        ++it->second[static_cast<std::size_t>(cls)];
    }

    std::unordered_map<std::uint64_t, int> out;
    out.reserve(counts.size());
    for (const auto& [key, histogram] : counts) {
        int best = 0;
        for (int c = 1; c < static_cast<int>(kLandUseClasses); ++c)
            if (histogram[static_cast<std::size_t>(c)] > histogram[static_cast<std::size_t>(best)])
                best = c;  // strict: ties keep the smaller class index
        out.emplace(key, best);
    }
    return out;
}

std::vector<int> token_classes_from_landuse(
    const HierarchicalVocabulary& vocab,
    const std::unordered_map<std::uint64_t, int>& labels_500m) {
    const double fine = vocab.spec().level(vocab.spec().finest_level()).cell_size;
    const double ratio = static_cast<double>(kProbeCellSize) / fine;
    const auto k = static_cast<std::int64_t>(std::llround(ratio));
    if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9)
        throw ConfigError("landuse: 500m cells do not align with the finest grid level");

    std::vector<int> classes(vocab.size(), -1);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        const CellIndex& cell = vocab.token(id);
        auto it = labels_500m.find(pack_cell(cell.col / k, cell.row / k));
        if (it != labels_500m.end()) classes[id] = it->second;
    }
    return classes;
}

std::vector<int> token_classes_from_place_classes(
    const HierarchicalVocabulary& vocab,
    const std::vector<std::pair<CellIndex, std::int32_t>>& place_classes) {
    std::vector<int> classes(vocab.size(), -1);
    for (const auto& [cell, cls] : place_classes) {
        auto id = vocab.find_id(cell);
        if (id) classes[*id] = cls;
    }
    return classes;
}

std::vector<std::int64_t> visit_counts(std::size_t vocab_size,
                                       std::span<const TokenizedTrajectory> train) {
    std::vector<std::int64_t> counts(vocab_size, 0);
    for (const auto& seq : train)
        for (const auto& step : seq.steps) ++counts[static_cast<std::size_t>(step.place)];
    return counts;
}

ProbeDataset build_probe_dataset(const Tensor& embeddings, const std::vector<int>& token_classes,
                                 int classes, const std::vector<std::int64_t>& visits,
                                 std::uint64_t split_seed) {
    if (embeddings.rows() != token_classes.size() || visits.size() != token_classes.size())
        throw ConfigError("probe: embeddings, labels and visit counts disagree on size");
    if (classes < 2) throw ConfigError("probe: need at least two classes");

    ProbeDataset ds;
    ds.d = embeddings.cols();
    ds.classes = classes;
    for (std::size_t id = 0; id < token_classes.size(); ++id) {
        if (token_classes[id] < 0) continue;
        if (token_classes[id] >= classes) throw DataError("probe: label out of range");
        ds.tokens.push_back(id);
        ds.labels.push_back(token_classes[id]);
        ds.visits.push_back(visits[id]);
    }
    if (ds.tokens.size() < 10) throw DataError("probe: fewer than 10 labeled tokens");

    ds.features = Tensor::zeros({ds.tokens.size(), ds.d});
    for (std::size_t i = 0; i < ds.tokens.size(); ++i)
        std::copy_n(embeddings.row_ptr(ds.tokens[i]), ds.d, ds.features.row_ptr(i));

    // split over labeled tokens only; fixed across methods by construction
    std::vector<std::size_t> order(ds.tokens.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(split_seed);
    rng.shuffle(order);
    const std::size_t n_val = order.size() / 10;
    const std::size_t n_test = order.size() / 10;
    ds.split.assign(order.size(), 0);
    for (std::size_t i = 0; i < n_val; ++i) ds.split[order[i]] = 1;
    for (std::size_t i = n_val; i < n_val + n_test; ++i) ds.split[order[i]] = 2;
    return ds;
}

namespace {

Tensor rows_of_split(const ProbeDataset& ds, int which, std::vector<std::int32_t>* labels) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.split[i] == which) ++n;
    Tensor out = Tensor::zeros({n, ds.d});
    std::size_t r = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] != which) continue;
        std::copy_n(ds.features.row_ptr(i), ds.d, out.row_ptr(r));
        if (labels) labels->push_back(ds.labels[i]);
        ++r;
    }
    return out;
}

}  // namespace

int predict_class(const ProbeModel& model, const double* features) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < model.classes; ++c) {
        double score = model.b.value.v[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < model.w.value.rows(); ++j)
            score += features[j] * model.w.value.at(j, static_cast<std::size_t>(c));
        if (score > best_score) {
            best_score = score;
            best = c;
        }
    }
    return best;
}

ProbeModel train_probe(const ProbeDataset& ds, const ProbeTrainConfig& cfg) {
    std::vector<std::int32_t> train_labels, val_labels;
    Tensor x_train = rows_of_split(ds, 0, &train_labels);
    Tensor x_val = rows_of_split(ds, 1, &val_labels);
    if (x_train.rows() == 0 || x_val.rows() == 0)
        throw DataError("probe: empty train or validation split");

    ProbeModel model;
    model.classes = ds.classes;
    model.w = Parameter::make("probe.w", {ds.d, static_cast<std::size_t>(ds.classes)});
    model.b = Parameter::make("probe.b", {static_cast<std::size_t>(ds.classes)});
    Rng rng(cfg.seed);
    model.w.init_fan_in(rng, ds.d);

    std::vector<Parameter*> params{&model.w, &model.b};
    const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

    auto val_accuracy = [&] {
        std::size_t correct = 0;
        for (std::size_t r = 0; r < x_val.rows(); ++r)
            if (predict_class(model, x_val.row_ptr(r)) == val_labels[r]) ++correct;
        return static_cast<double>(correct) / static_cast<double>(x_val.rows());
    };

    Tensor best_w = model.w.value;
    Tensor best_b = model.b.value;
    double best_acc = -1.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        zero_grads(params);
        Graph g;
        Graph::Var loss = g.softmax_xent_sum(g.affine(g.leaf(x_train), model.w, model.b),
                                             train_labels);
        if (!std::isfinite(g.value(loss).v[0]))
            throw DivergenceError("probe: non-finite loss at epoch " + std::to_string(epoch));
        g.backward(loss, 1.0 / static_cast<double>(x_train.rows()));
        adam_step(params, adam);

        // >= keeps the latest epoch among ties: margins keep growing after
        // validation accuracy saturates
        const double acc = val_accuracy();
        if (acc >= best_acc) {
            best_acc = acc;
            best_w = model.w.value;
            best_b = model.b.value;
            model.selected_epoch = epoch;
        }
    }
    model.w.value = best_w;
    model.b.value = best_b;
    model.best_val_accuracy = best_acc;
    return model;
}

ProbeEval evaluate_probe(const ProbeModel& model, const ProbeDataset& ds, Stratum stratum,
                         double rural_percentile) {
    // percentile over all dataset tokens, not just the test split
    std::int64_t threshold = 0;
    if (stratum == Stratum::Rural) {
        std::vector<std::int64_t> sorted = ds.visits;
        std::sort(sorted.begin(), sorted.end());
        const auto rank = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
            0, static_cast<std::ptrdiff_t>(
                   std::ceil(rural_percentile * static_cast<double>(sorted.size()))) -
                   1));
        threshold = sorted[rank];
    }

    ProbeEval eval;
    eval.confusion.assign(static_cast<std::size_t>(model.classes),
                          std::vector<std::int64_t>(static_cast<std::size_t>(model.classes), 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] != 2) continue;
        if (stratum == Stratum::Rural && ds.visits[i] > threshold) continue;
        const int predicted = predict_class(model, ds.features.row_ptr(i));
        const int truth = ds.labels[i];
        ++eval.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
        if (predicted == truth) ++correct;
        ++eval.count;
    }
    if (eval.count == 0) throw DataError("probe: empty evaluation stratum");
    eval.accuracy = static_cast<double>(correct) / static_cast<double>(eval.count);
    return eval;
}

std::string confusion_to_csv(const ProbeEval& eval, const std::vector<std::string>& class_names) {
    std::string out = "truth";
    for (const auto& name : class_names) out += "," + name;
    out += '\n';
    for (std::size_t r = 0; r < eval.confusion.size(); ++r) {
        out += class_names[r];
        for (std::size_t c = 0; c < eval.confusion[r].size(); ++c)
            out += "," + std::to_string(eval.confusion[r][c]);
        out += '\n';
    }
    return out;
}

}  // namespace hieremb
