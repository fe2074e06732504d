#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hieremb/grid.hpp"

namespace hieremb {

struct Staypoint {
    double x = 0.0;
    double y = 0.0;
    std::int64_t t_entry = 0;  // unix seconds
    std::int64_t t_exit = 0;
};

struct RawTrajectory {
    std::string user_id;
    std::vector<Staypoint> stays;  // chronological
};

struct TokenizedStep {
    std::int32_t place = 0;
    std::int32_t dow = 0;
    std::int32_t tod = 0;
    std::int32_t dur = 0;
};

struct TokenizedTrajectory {
    std::vector<TokenizedStep> steps;
};

struct BucketConfig {
    std::int64_t utc_offset_seconds = 9 * 3600;
    std::int32_t tod_buckets = 24;  // hour buckets over the day
    // upper edges of duration buckets (seconds); bucket count = edges + 1
    std::vector<std::int64_t> dur_edges = {600, 1800, 3600, 7200, 14400, 28800, 57600};

    std::int32_t dur_buckets() const { return static_cast<std::int32_t>(dur_edges.size()) + 1; }
    std::int32_t dur_bucket(std::int64_t seconds) const;
    std::int32_t dow_of(std::int64_t t) const;  // 0 = Monday
    std::int32_t tod_of(std::int64_t t) const;
};

struct ParseReport {
    std::size_t lines = 0;
    std::size_t records = 0;
    std::size_t malformed = 0;
    std::size_t overlap_dropped = 0;
};

/// Reads `user_id<TAB>t_entry<TAB>t_exit<TAB>x<TAB>y` lines, groups them by
/// user (first-appearance order) and sorts each user's stays by entry time.
/// Throws DataError when the malformed fraction exceeds the threshold.
std::vector<RawTrajectory> parse_staypoints(std::istream& in, double malformed_threshold = 0.01,
                                            ParseReport* report = nullptr);

void write_staypoints(std::ostream& out, const std::vector<RawTrajectory>& trajectories);

TokenizedTrajectory tokenize(const RawTrajectory& traj, const HierarchicalVocabulary& vocab,
                             const GridSpec& spec, const BucketConfig& buckets);

/// Splits a tokenized trajectory into chunks of at most max_steps steps;
/// trailing chunks shorter than two steps are dropped.
std::vector<TokenizedTrajectory> chunk_trajectory(const TokenizedTrajectory& traj,
                                                  std::size_t max_steps);

struct DatasetSplit {
    std::vector<TokenizedTrajectory> train;
    std::vector<TokenizedTrajectory> validation;
    std::vector<TokenizedTrajectory> test;
};

/// Deterministic shuffle then cut: validation and test each get
/// floor(fraction * n), training gets the rest.
DatasetSplit split_dataset(std::vector<TokenizedTrajectory> trajectories, double val_fraction,
                           double test_fraction, std::uint64_t seed);

/// Full preparation pipeline: collect finest cells over all stays, build the
/// vocabulary, tokenize, and cap sequence length by splitting.
struct PreparedData {
    HierarchicalVocabulary vocab;
    std::vector<TokenizedTrajectory> sequences;
};
PreparedData prepare_sequences(const std::vector<RawTrajectory>& raws, const GridSpec& spec,
                               const BucketConfig& buckets, std::size_t max_steps);

/// As prepare_sequences but against an existing vocabulary (e.g. from a
/// checkpoint); unknown cells raise DataError.
std::vector<TokenizedTrajectory> tokenize_with_vocab(const std::vector<RawTrajectory>& raws,
                                                     const HierarchicalVocabulary& vocab,
                                                     const BucketConfig& buckets,
                                                     std::size_t max_steps);

}  // namespace hieremb
