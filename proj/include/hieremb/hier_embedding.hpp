#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hieremb/engine.hpp"
#include "hieremb/grid.hpp"

namespace hieremb {

/// Column layout of the embedding matrix: one slice per upper grid level
/// (coarsest first), the remainder owned by the place itself.
struct SlicePartition {
    struct Slice {
        std::string level_name;
        std::size_t width = 0;
        std::size_t offset = 0;  // first column
    };

    std::vector<Slice> slices;
    std::size_t place_width = 0;
    std::size_t d = 0;
    std::string method = "custom";

    /// Validates widths and computes offsets; place width is d minus the
    /// slice total and must stay positive.
    static SlicePartition make(std::vector<std::pair<std::string, std::size_t>> level_widths,
                               std::size_t d, std::string method = "custom");

    /// e.g. "10km:12,1km:20,place:32"
    std::string describe() const;
};

/// Named layouts: hier (12, 20, 32 at d=64 over both upper levels),
/// hier1km (20, 44 on the finest upper level), hier10km (12, 52 on the
/// coarsest), nonhier (all d for the place). Widths scale with d/64,
/// rounding half to even.
SlicePartition make_partition(const std::string& method, std::size_t d, const GridSpec& spec);

/// |V| x d parameter whose rows follow the vocabulary layout.
class HierEmbeddingMatrix {
public:
    HierEmbeddingMatrix(const HierarchicalVocabulary& vocab, SlicePartition partition,
                        const std::string& param_name = "emb");

    Parameter& param() { return param_; }
    const Parameter& param() const { return param_; }
    const SlicePartition& partition() const { return partition_; }
    const HierarchicalVocabulary& vocab() const { return *vocab_; }

    /// For every upper level and region, replaces each row's level slice by
    /// the region mean of that slice. One contiguous read and one write per
    /// region. Place columns are untouched; a second call is a bitwise
    /// no-op.
    void average_slices();

    /// Same operation over caller-owned row-major storage.
    static void average_slices_raw(double* data, std::size_t rows, std::size_t cols,
                                   const HierarchicalVocabulary& vocab,
                                   const SlicePartition& partition);

private:
    const HierarchicalVocabulary* vocab_;
    SlicePartition partition_;
    Parameter param_;
};

}  // namespace hieremb
