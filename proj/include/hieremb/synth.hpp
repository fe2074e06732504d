#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hieremb/grid.hpp"
#include "hieremb/trajectories.hpp"

namespace hieremb {

/// Knobs for the synthetic trajectory generator. The planted structure:
/// every level-2 region draws a dominant "function" class, each place adopts
/// it with probability alpha, and every level-1 region draws a class
/// transition profile. A step follows the profile (popularity-weighted
/// within the current level-1 region) with probability alpha and is uniform
/// over all places otherwise, so alpha = 0 degenerates to uniform hopping.
struct SynthConfig {
    std::int32_t level1_per_side = 2;
    std::int32_t places_per_leaf = 10;  // sampled finest cells per level-2 region
    std::int32_t users = 1000;          // one trajectory per user
    double mean_seq_len = 12.0;
    double zipf_exponent = 1.1;
    double alpha = 0.9;
    std::int32_t classes = 5;
    double profile_noise = 0.25;  // off-target mass in each transition-profile row
    std::uint64_t seed = 1;
};

struct SynthOutput {
    std::vector<RawTrajectory> trajectories;
    // ground truth: finest cell -> function class, one entry per place
    std::vector<std::pair<CellIndex, std::int32_t>> place_classes;
};

SynthOutput synth_generate(const SynthConfig& cfg, const GridSpec& spec);

void write_place_classes(std::ostream& out,
                         const std::vector<std::pair<CellIndex, std::int32_t>>& place_classes);
std::vector<std::pair<CellIndex, std::int32_t>> read_place_classes(std::istream& in,
                                                                   std::uint32_t level);

}  // namespace hieremb
