#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hieremb/engine.hpp"
#include "hieremb/grid.hpp"
#include "hieremb/trajectories.hpp"

namespace hieremb {

inline constexpr std::size_t kLandUseClasses = 15;
extern const std::array<const char*, kLandUseClasses> kLandUseClassNames;

/// Raw land-use source codes 1..17 onto the 15 merged classes. The default
/// merges (1,2) into farmland and (6,7) into low-rise buildings; any full
/// 17-entry map can be supplied as "raw:class,..." pairs.
class LandUseMergeMap {
public:
    static LandUseMergeMap defaults();
    static LandUseMergeMap parse(const std::string& text);

    int merge(int raw_code) const;

private:
    std::array<int, 18> map_{};  // index by raw code, [1..17]
};

inline constexpr std::int64_t kLabelCellSize = 100;  // meters
inline constexpr std::int64_t kProbeCellSize = 500;

/// Majority merged class per 500m cell over its 5x5 block of 100m labels;
/// ties break toward the smaller class index. Keys are pack_cell of the
/// 500m (col, row).
std::unordered_map<std::uint64_t, int> aggregate_to_500m(
    const std::vector<std::pair<CellIndex, int>>& labels_100m, const LandUseMergeMap& merge);

/// Per-token class labels (-1 = unlabeled).
std::vector<int> token_classes_from_landuse(const HierarchicalVocabulary& vocab,
                                            const std::unordered_map<std::uint64_t, int>& labels_500m);
std::vector<int> token_classes_from_place_classes(
    const HierarchicalVocabulary& vocab,
    const std::vector<std::pair<CellIndex, std::int32_t>>& place_classes);

/// Count of each token in the training portion of the sequences.
std::vector<std::int64_t> visit_counts(std::size_t vocab_size,
                                       std::span<const TokenizedTrajectory> train);

struct ProbeDataset {
    std::size_t d = 0;
    int classes = 0;
    std::vector<std::size_t> tokens;
    Tensor features;  // n x d, frozen embeddings
    std::vector<int> labels;
    std::vector<std::int64_t> visits;
    std::vector<int> split;  // 0 train, 1 validation, 2 test

    std::size_t size() const { return tokens.size(); }
};

/// One example per labeled token, in token order; the split depends only on
/// the labeled token set and the seed, so every method sees identical
/// (token, class, split) triples.
ProbeDataset build_probe_dataset(const Tensor& embeddings, const std::vector<int>& token_classes,
                                 int classes, const std::vector<std::int64_t>& visits,
                                 std::uint64_t split_seed);

struct ProbeTrainConfig {
    double lr = 1e-2;
    std::size_t epochs = 200;
    std::uint64_t seed = 1;
};

struct ProbeModel {
    Parameter w;  // d x classes
    Parameter b;
    int classes = 0;
    std::size_t selected_epoch = 0;
    double best_val_accuracy = 0.0;
};

/// Single affine layer + softmax, full-batch Adam; keeps the epoch with the
/// best validation accuracy (earliest on ties).
ProbeModel train_probe(const ProbeDataset& ds, const ProbeTrainConfig& cfg);

enum class Stratum { All, Rural };

struct ProbeEval {
    double accuracy = 0.0;
    std::size_t count = 0;
    std::vector<std::vector<std::int64_t>> confusion;  // truth x prediction
};

/// Accuracy over the test split, optionally restricted to rural tokens
/// (visit count at or below the rural_percentile of all dataset tokens).
ProbeEval evaluate_probe(const ProbeModel& model, const ProbeDataset& ds, Stratum stratum,
                         double rural_percentile = 0.30);

int predict_class(const ProbeModel& model, const double* features);

std::string confusion_to_csv(const ProbeEval& eval, const std::vector<std::string>& class_names);

}  // namespace hieremb
