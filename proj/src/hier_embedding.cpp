#include "hieremb/hier_embedding.hpp"

#include <cmath>
#include <cstring>

#include "hieremb/errors.hpp"

namespace hieremb {

SlicePartition SlicePartition::make(std::vector<std::pair<std::string, std::size_t>> level_widths,
                                    std::size_t d, std::string method) {
    if (d == 0) throw ConfigError("partition: d must be positive");
    SlicePartition p;
    p.d = d;
    p.method = std::move(method);
    std::size_t offset = 0;
    for (auto& [name, width] : level_widths) {
        if (width == 0) throw ConfigError("partition: slice width for level '" + name + "' is zero");
        p.slices.push_back({name, width, offset});
        offset += width;
    }
    if (offset >= d)
        throw ConfigError("partition: level slices use " + std::to_string(offset) +
                          " of " + std::to_string(d) + " dimensions, leaving no place slice");
    p.place_width = d - offset;
    return p;
}

std::string SlicePartition::describe() const {
    std::string out;
    for (const auto& s : slices) {
        out += s.level_name;
        out += ':';
        out += std::to_string(s.width);
        out += ',';
    }
    out += "place:" + std::to_string(place_width);
    return out;
}

namespace {

std::size_t scale_width(std::size_t base, std::size_t d) {
    return static_cast<std::size_t>(std::nearbyint(static_cast<double>(base) *
                                                   static_cast<double>(d) / 64.0));
}

}  // namespace

SlicePartition make_partition(const std::string& method, std::size_t d, const GridSpec& spec) {
    const std::size_t uppers = spec.level_count() - 1;
    if (method == "nonhier") {
        SlicePartition p;
        p.d = d;
        p.place_width = d;
        p.method = method;
        return p;
    }
    if (method == "hier") {
        if (uppers != 2)
            throw ConfigError("partition: method 'hier' expects exactly two upper levels");
        return SlicePartition::make({{spec.level(0).name, scale_width(12, d)},
                                     {spec.level(1).name, scale_width(20, d)}},
                                    d, method);
    }
    if (method == "hier1km") {
        if (uppers < 1) throw ConfigError("partition: grid has no upper level");
        return SlicePartition::make({{spec.level(uppers - 1).name, scale_width(20, d)}}, d, method);
    }
    if (method == "hier10km") {
        if (uppers < 1) throw ConfigError("partition: grid has no upper level");
        return SlicePartition::make({{spec.level(0).name, scale_width(12, d)}}, d, method);
    }
    throw ConfigError("partition: unknown method '" + method + "'");
}

HierEmbeddingMatrix::HierEmbeddingMatrix(const HierarchicalVocabulary& vocab,
                                         SlicePartition partition, const std::string& param_name)
    : vocab_(&vocab), partition_(std::move(partition)) {
    for (const auto& slice : partition_.slices) {
        std::size_t level = vocab.spec().level_index(slice.level_name);
        if (level >= vocab.upper_level_count())
            throw ConfigError("partition: level '" + slice.level_name + "' is not an upper level");
    }
    param_ = Parameter::make(param_name, {vocab.size(), partition_.d});
}

void HierEmbeddingMatrix::average_slices() {
    average_slices_raw(param_.value.v.data(), param_.value.rows(), param_.value.cols(), *vocab_,
                       partition_);
}

void HierEmbeddingMatrix::average_slices_raw(double* data, std::size_t rows, std::size_t cols,
                                             const HierarchicalVocabulary& vocab,
                                             const SlicePartition& partition) {
    if (rows != vocab.size() || cols != partition.d)
        throw ConfigError("average_slices: matrix shape does not match vocabulary and partition");

    for (const auto& slice : partition.slices) {
        const std::size_t level = vocab.spec().level_index(slice.level_name);
        const std::size_t c0 = slice.offset;
        const std::size_t w = slice.width;
        for (const auto& region : vocab.regions(level)) {
            const std::size_t r0 = region.interval.begin;
            const std::size_t r1 = region.interval.end;
            const std::size_t n = r1 - r0;
            if (n <= 1) continue;

            // already uniform: the exact mean of n equal rows is that row,
            // so skipping keeps a second pass bitwise identical
            bool uniform = true;
            const double* first = data + r0 * cols + c0;
            for (std::size_t r = r0 + 1; r < r1 && uniform; ++r)
                uniform = std::memcmp(first, data + r * cols + c0, w * sizeof(double)) == 0;
            if (uniform) continue;

            for (std::size_t j = 0; j < w; ++j) {
                double sum = 0.0;
                for (std::size_t r = r0; r < r1; ++r) sum += data[r * cols + c0 + j];
                const double mean = sum / static_cast<double>(n);
                for (std::size_t r = r0; r < r1; ++r) data[r * cols + c0 + j] = mean;
            }
        }
    }
}

}  // namespace hieremb
