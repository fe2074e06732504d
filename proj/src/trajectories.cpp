#include "hieremb/trajectories.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "hieremb/errors.hpp"
#include "hieremb/rng.hpp"

namespace hieremb {

std::int32_t BucketConfig::dur_bucket(std::int64_t seconds) const {
    if (seconds < 0) seconds = 0;
    std::int32_t b = 0;
    for (std::int64_t edge : dur_edges) {
        if (seconds < edge) break;
        ++b;
    }
    return b;
}

std::int32_t BucketConfig::dow_of(std::int64_t t) const {
    std::int64_t local = t + utc_offset_seconds;
    std::int64_t days = local / 86400;
    if (local < 0 && local % 86400 != 0) --days;
    // 1970-01-01 was a Thursday; Monday = 0
    return static_cast<std::int32_t>(((days + 3) % 7 + 7) % 7);
}

std::int32_t BucketConfig::tod_of(std::int64_t t) const {
    std::int64_t local = t + utc_offset_seconds;
    std::int64_t sec = ((local % 86400) + 86400) % 86400;
    return static_cast<std::int32_t>(sec * tod_buckets / 86400);
}

namespace {

bool parse_i64(std::string_view s, std::int64_t& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

bool parse_f64(std::string_view s, double& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

bool split_fields(std::string_view line, std::string_view out[5]) {
    std::size_t field = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == '\t') {
            if (field >= 5) return false;
            out[field++] = line.substr(start, i - start);
            start = i + 1;
        }
    }
    return field == 5;
}

}  // namespace

std::vector<RawTrajectory> parse_staypoints(std::istream& in, double malformed_threshold,
                                            ParseReport* report) {
    if (!in) throw DataError("staypoints: unreadable stream");

    ParseReport rep;
    std::vector<RawTrajectory> result;
    std::unordered_map<std::string, std::size_t> index_of;

    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++rep.lines;

        std::string_view fields[5];
        Staypoint sp;
        bool ok = split_fields(line, fields) && !fields[0].empty() &&
                  parse_i64(fields[1], sp.t_entry) && parse_i64(fields[2], sp.t_exit) &&
                  parse_f64(fields[3], sp.x) && parse_f64(fields[4], sp.y) &&
                  sp.t_exit >= sp.t_entry;
        if (!ok) {
            ++rep.malformed;
            continue;
        }
        ++rep.records;

        std::string user(fields[0]);
        auto [it, inserted] = index_of.emplace(user, result.size());
        if (inserted) result.push_back({std::move(user), {}});
        result[it->second].stays.push_back(sp);
    }

    if (rep.lines > 0 &&
        static_cast<double>(rep.malformed) > malformed_threshold * static_cast<double>(rep.lines)) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "staypoints: %zu of %zu lines malformed (threshold %.4f)",
                      rep.malformed, rep.lines, malformed_threshold);
        throw DataError(buf);
    }

    for (auto& traj : result) {
        std::stable_sort(traj.stays.begin(), traj.stays.end(),
                         [](const Staypoint& a, const Staypoint& b) { return a.t_entry < b.t_entry; });
        // drop stays overlapping the previous kept one
        std::vector<Staypoint> kept;
        kept.reserve(traj.stays.size());
        for (const Staypoint& sp : traj.stays) {
            if (!kept.empty() && sp.t_entry < kept.back().t_exit) {
                ++rep.overlap_dropped;
                continue;
            }
            kept.push_back(sp);
        }
        traj.stays = std::move(kept);
    }

    if (report) *report = rep;
    return result;
}

void write_staypoints(std::ostream& out, const std::vector<RawTrajectory>& trajectories) {
    char buf[256];
    for (const auto& traj : trajectories) {
        for (const auto& sp : traj.stays) {
            std::snprintf(buf, sizeof(buf), "%s\t%lld\t%lld\t%.3f\t%.3f\n", traj.user_id.c_str(),
                          static_cast<long long>(sp.t_entry), static_cast<long long>(sp.t_exit),
                          sp.x, sp.y);
            out << buf;
        }
    }
}

TokenizedTrajectory tokenize(const RawTrajectory& traj, const HierarchicalVocabulary& vocab,
                             const GridSpec& spec, const BucketConfig& buckets) {
    TokenizedTrajectory out;
    out.steps.reserve(traj.stays.size());
    for (const Staypoint& sp : traj.stays) {
        CellIndex cell = cell_of(sp.x, sp.y, spec.finest_level(), spec);
        TokenizedStep step;
        step.place = static_cast<std::int32_t>(vocab.id_of(cell));
        step.dow = buckets.dow_of(sp.t_entry);
        step.tod = buckets.tod_of(sp.t_entry);
        step.dur = buckets.dur_bucket(sp.t_exit - sp.t_entry);
        out.steps.push_back(step);
    }
    return out;
}

std::vector<TokenizedTrajectory> chunk_trajectory(const TokenizedTrajectory& traj,
                                                  std::size_t max_steps) {
    std::vector<TokenizedTrajectory> out;
    if (max_steps < 2) throw ConfigError("chunk_trajectory: max_steps must be at least 2");
    for (std::size_t start = 0; start < traj.steps.size(); start += max_steps) {
        std::size_t end = std::min(traj.steps.size(), start + max_steps);
        if (end - start < 2) break;
        TokenizedTrajectory piece;
        piece.steps.assign(traj.steps.begin() + static_cast<std::ptrdiff_t>(start),
                           traj.steps.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(piece));
    }
    return out;
}

DatasetSplit split_dataset(std::vector<TokenizedTrajectory> trajectories, double val_fraction,
                           double test_fraction, std::uint64_t seed) {
    const std::size_t n = trajectories.size();
    if (n < 10) throw DataError("split: need at least 10 trajectories");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * val_fraction);
    const auto n_test = static_cast<std::size_t>(static_cast<double>(n) * test_fraction);
    if (n_val + n_test >= n) throw ConfigError("split: fractions leave no training data");

    DatasetSplit split;
    split.train.reserve(n - n_val - n_test);
    split.validation.reserve(n_val);
    split.test.reserve(n_test);
    for (std::size_t i = 0; i < n; ++i) {
        auto& traj = trajectories[order[i]];
        if (i < n_val)
            split.validation.push_back(std::move(traj));
        else if (i < n_val + n_test)
            split.test.push_back(std::move(traj));
        else
            split.train.push_back(std::move(traj));
    }
    return split;
}

std::vector<TokenizedTrajectory> tokenize_with_vocab(const std::vector<RawTrajectory>& raws,
                                                     const HierarchicalVocabulary& vocab,
                                                     const BucketConfig& buckets,
                                                     std::size_t max_steps) {
    std::vector<TokenizedTrajectory> sequences;
    for (const auto& traj : raws) {
        auto tokenized = tokenize(traj, vocab, vocab.spec(), buckets);
        for (auto& piece : chunk_trajectory(tokenized, max_steps))
            sequences.push_back(std::move(piece));
    }
    return sequences;
}

PreparedData prepare_sequences(const std::vector<RawTrajectory>& raws, const GridSpec& spec,
                               const BucketConfig& buckets, std::size_t max_steps) {
    std::vector<CellIndex> cells;
    for (const auto& traj : raws)
        for (const auto& sp : traj.stays)
            cells.push_back(cell_of(sp.x, sp.y, spec.finest_level(), spec));

    PreparedData data{HierarchicalVocabulary::build(cells, spec), {}};
    for (const auto& traj : raws) {
        auto tokenized = tokenize(traj, data.vocab, spec, buckets);
        for (auto& piece : chunk_trajectory(tokenized, max_steps))
            data.sequences.push_back(std::move(piece));
    }
    return data;
}

}  // namespace hieremb
