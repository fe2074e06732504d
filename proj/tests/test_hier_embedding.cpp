#include "hieremb/hier_embedding.hpp"

#include <map>
#include <vector>

#include "doctest.h"
#include "hieremb/errors.hpp"
#include "hieremb/rng.hpp"

using namespace hieremb;

namespace {

HierarchicalVocabulary random_vocab(Rng& rng, std::size_t cells, std::int64_t max_coord,
                                    const GridSpec& spec) {
    std::vector<CellIndex> cs;
    const auto finest = static_cast<std::uint32_t>(spec.finest_level());
    for (std::size_t i = 0; i < cells; ++i)
        cs.push_back({finest, static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_coord))),
                      static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_coord)))});
    return HierarchicalVocabulary::build(cs, spec);
}

/// Reference implementation: per-level sets gathered by parent(), averaged
/// column by column in ascending token order.
void brute_force_average(std::vector<double>& data, std::size_t cols,
                         const HierarchicalVocabulary& vocab, const SlicePartition& partition) {
    for (const auto& slice : partition.slices) {
        const std::size_t level = vocab.spec().level_index(slice.level_name);
        std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> groups;
        for (std::size_t id = 0; id < vocab.size(); ++id) {
            auto p = parent(vocab.token(id), level, vocab.spec());
            groups[{p.col, p.row}].push_back(id);
        }
        for (const auto& [key, members] : groups) {
            for (std::size_t j = 0; j < slice.width; ++j) {
                double sum = 0.0;
                for (std::size_t id : members) sum += data[id * cols + slice.offset + j];
                double mean = sum / static_cast<double>(members.size());
                for (std::size_t id : members) data[id * cols + slice.offset + j] = mean;
            }
        }
    }
}

}  // namespace

TEST_CASE("make_partition method layouts") {
    auto spec = GridSpec::standard();

    auto hier = make_partition("hier", 64, spec);
    REQUIRE(hier.slices.size() == 2);
    CHECK(hier.slices[0].level_name == "10km");
    CHECK(hier.slices[0].width == 12);
    CHECK(hier.slices[0].offset == 0);
    CHECK(hier.slices[1].level_name == "1km");
    CHECK(hier.slices[1].width == 20);
    CHECK(hier.slices[1].offset == 12);
    CHECK(hier.place_width == 32);

    auto h1 = make_partition("hier1km", 64, spec);
    REQUIRE(h1.slices.size() == 1);
    CHECK(h1.slices[0].level_name == "1km");
    CHECK(h1.slices[0].width == 20);
    CHECK(h1.place_width == 44);

    auto h10 = make_partition("hier10km", 64, spec);
    REQUIRE(h10.slices.size() == 1);
    CHECK(h10.slices[0].level_name == "10km");
    CHECK(h10.slices[0].width == 12);
    CHECK(h10.place_width == 52);

    auto nh = make_partition("nonhier", 64, spec);
    CHECK(nh.slices.empty());
    CHECK(nh.place_width == 64);

    // toy width for unit tests
    auto toy = make_partition("hier", 8, spec);
    CHECK(toy.slices[0].width == 2);
    CHECK(toy.slices[1].width == 2);
    CHECK(toy.place_width == 4);

    CHECK_THROWS_AS(SlicePartition::make({{"10km", 40}, {"1km", 40}}, 64), ConfigError);
    CHECK_THROWS_AS(make_partition("hier2km", 64, spec), ConfigError);
    CHECK(hier.describe() == "10km:12,1km:20,place:32");
}

TEST_CASE("average_slices basics") {
    auto spec = GridSpec::standard();

    SUBCASE("single-place region is unchanged") {
        std::vector<CellIndex> cells{{2, 0, 0}};
        auto vocab = HierarchicalVocabulary::build(cells, spec);
        HierEmbeddingMatrix emb(vocab, make_partition("hier", 8, spec));
        Rng rng(1);
        emb.param().init_uniform(rng, 1.0);
        Tensor before = emb.param().value;
        emb.average_slices();
        CHECK(emb.param().value.v == before.v);
    }

    SUBCASE("two places in one region meet at the mean") {
        std::vector<CellIndex> cells{{2, 0, 0}, {2, 1, 0}};
        auto vocab = HierarchicalVocabulary::build(cells, spec);
        HierEmbeddingMatrix emb(vocab, make_partition("hier", 8, spec));
        for (std::size_t j = 0; j < 8; ++j) {
            emb.param().value.at(0, j) = 1.0;
            emb.param().value.at(1, j) = 3.0;
        }
        emb.average_slices();
        for (std::size_t j = 0; j < 4; ++j) {  // both level slices
            CHECK(emb.param().value.at(0, j) == 2.0);
            CHECK(emb.param().value.at(1, j) == 2.0);
        }
        for (std::size_t j = 4; j < 8; ++j) {  // place slice untouched
            CHECK(emb.param().value.at(0, j) == 1.0);
            CHECK(emb.param().value.at(1, j) == 3.0);
        }
    }
}

TEST_CASE("average_slices equals the brute-force set version") {
    auto spec = GridSpec::standard();
    Rng rng(42);
    for (int round = 0; round < 10; ++round) {
        auto vocab = random_vocab(rng, 300, 300, spec);
        HierEmbeddingMatrix emb(vocab, make_partition("hier", 64, spec));
        emb.param().init_uniform(rng, 2.0);

        std::vector<double> reference = emb.param().value.v;
        brute_force_average(reference, 64, vocab, emb.partition());

        emb.average_slices();
        CHECK(emb.param().value.v == reference);  // exact 64-bit equality
    }
}

TEST_CASE("average_slices properties") {
    auto spec = GridSpec::standard();
    Rng rng(7);
    auto vocab = random_vocab(rng, 200, 240, spec);
    HierEmbeddingMatrix emb(vocab, make_partition("hier", 64, spec));
    emb.param().init_uniform(rng, 1.0);

    // column means per region are preserved
    std::vector<double> before = emb.param().value.v;
    emb.average_slices();

    for (const auto& slice : emb.partition().slices) {
        std::size_t level = spec.level_index(slice.level_name);
        for (const auto& region : vocab.regions(level)) {
            for (std::size_t j = 0; j < slice.width; ++j) {
                double pre = 0.0, post = 0.0;
                for (std::size_t id = region.interval.begin; id < region.interval.end; ++id) {
                    pre += before[id * 64 + slice.offset + j];
                    post += emb.param().value.v[id * 64 + slice.offset + j];
                }
                CHECK(post == doctest::Approx(pre).epsilon(1e-12));
            }
            // uniformity: zero spread within the region slice
            for (std::size_t id = region.interval.begin + 1; id < region.interval.end; ++id)
                for (std::size_t j = 0; j < slice.width; ++j)
                    CHECK(emb.param().value.v[id * 64 + slice.offset + j] ==
                          emb.param().value.v[region.interval.begin * 64 + slice.offset + j]);
        }
    }

    // place columns bitwise unchanged
    std::size_t place_offset = 64 - emb.partition().place_width;
    for (std::size_t id = 0; id < vocab.size(); ++id)
        for (std::size_t j = place_offset; j < 64; ++j)
            CHECK(emb.param().value.v[id * 64 + j] == before[id * 64 + j]);

    // applying twice is bitwise identical to applying once
    std::vector<double> once = emb.param().value.v;
    emb.average_slices();
    CHECK(emb.param().value.v == once);
}

TEST_CASE("nonhier partition makes averaging a no-op") {
    auto spec = GridSpec::standard();
    Rng rng(3);
    auto vocab = random_vocab(rng, 120, 200, spec);
    HierEmbeddingMatrix emb(vocab, make_partition("nonhier", 64, spec));
    emb.param().init_uniform(rng, 1.0);
    std::vector<double> before = emb.param().value.v;
    emb.average_slices();
    CHECK(emb.param().value.v == before);
}

TEST_CASE("average_slices validates shapes") {
    auto spec = GridSpec::standard();
    Rng rng(4);
    auto vocab = random_vocab(rng, 20, 100, spec);
    std::vector<double> data(vocab.size() * 16);
    CHECK_THROWS_AS(HierEmbeddingMatrix::average_slices_raw(data.data(), vocab.size(), 16, vocab,
                                                            make_partition("hier", 64, spec)),
                    ConfigError);
}
