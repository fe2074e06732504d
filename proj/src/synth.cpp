#include "hieremb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include "hieremb/errors.hpp"
#include "hieremb/rng.hpp"

namespace hieremb {

namespace {

struct Place {
    CellIndex cell;
    std::int32_t cls = 0;
    std::int32_t region1 = 0;  // level-1 region id
    double weight = 1.0;       // popularity
};

// Popularity-weighted candidate pool with a cumulative table for sampling.
struct Pool {
    std::vector<std::int32_t> ids;
    std::vector<double> cum;

    void finalize(const std::vector<Place>& places) {
        cum.resize(ids.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            acc += places[static_cast<std::size_t>(ids[i])].weight;
            cum[i] = acc;
        }
    }
    bool empty() const { return ids.empty(); }
    std::int32_t sample(Rng& rng) const {
        double u = rng.uniform() * cum.back();
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        std::size_t i = std::min(static_cast<std::size_t>(it - cum.begin()), ids.size() - 1);
        return ids[i];
    }
};

std::int64_t sample_poisson(Rng& rng, double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    std::int64_t k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

void validate(const SynthConfig& cfg, std::int64_t leaf_capacity) {
    if (cfg.level1_per_side < 1) throw ConfigError("synth: level1_per_side must be >= 1");
    if (cfg.places_per_leaf < 1) throw ConfigError("synth: places_per_leaf must be >= 1");
    if (cfg.places_per_leaf > leaf_capacity)
        throw ConfigError("synth: places_per_leaf exceeds finest cells per level-2 region (" +
                          std::to_string(leaf_capacity) + ")");
    if (cfg.users < 1) throw ConfigError("synth: users must be >= 1");
    if (cfg.mean_seq_len < 2.0) throw ConfigError("synth: mean_seq_len must be >= 2");
    if (cfg.zipf_exponent < 0.0) throw ConfigError("synth: zipf_exponent must be >= 0");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ConfigError("synth: alpha must be in [0,1]");
    if (cfg.classes < 1) throw ConfigError("synth: classes must be >= 1");
    if (cfg.profile_noise < 0.0 || cfg.profile_noise > 1.0)
        throw ConfigError("synth: profile_noise must be in [0,1]");
}

}  // namespace

SynthOutput synth_generate(const SynthConfig& cfg, const GridSpec& spec) {
    if (spec.level_count() < 3)
        throw ConfigError("synth: grid spec needs at least three levels");
    const std::size_t finest = spec.finest_level();
    const std::int64_t f01 = spec.factor(0, 1);            // level-2 regions per level-1 side
    const std::int64_t f1f = spec.factor(1, finest);       // finest cells per level-2 side
    validate(cfg, f1f * f1f);

    Rng rng(cfg.seed);
    const std::int32_t n1 = cfg.level1_per_side;
    const std::int64_t leaf_side = static_cast<std::int64_t>(n1) * f01;
    const std::int32_t n_classes = cfg.classes;

    // --- places ------------------------------------------------------------
    std::vector<Place> places;
    places.reserve(static_cast<std::size_t>(leaf_side * leaf_side) *
                   static_cast<std::size_t>(cfg.places_per_leaf));
    for (std::int64_t r2row = 0; r2row < leaf_side; ++r2row) {
        for (std::int64_t r2col = 0; r2col < leaf_side; ++r2col) {
            const auto dominant = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_classes)));
            const std::int32_t region1 =
                static_cast<std::int32_t>((r2row / f01) * n1 + (r2col / f01));
            // distinct finest cells within this level-2 region
            std::vector<std::int64_t> offsets(static_cast<std::size_t>(f1f * f1f));
            for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = static_cast<std::int64_t>(i);
            for (std::int32_t k = 0; k < cfg.places_per_leaf; ++k) {
                std::size_t j = k + static_cast<std::size_t>(rng.below(offsets.size() - k));
                std::swap(offsets[k], offsets[j]);
                Place p;
                p.cell.level = static_cast<std::uint32_t>(finest);
                p.cell.col = r2col * f1f + offsets[k] % f1f;
                p.cell.row = r2row * f1f + offsets[k] / f1f;
                p.region1 = region1;
                p.cls = (rng.uniform() < cfg.alpha)
                            ? dominant
                            : static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_classes)));
                places.push_back(p);
            }
        }
    }
    const std::size_t n_places = places.size();

    // Zipf popularity over a random rank permutation.
    {
        std::vector<std::size_t> ranks(n_places);
        for (std::size_t i = 0; i < n_places; ++i) ranks[i] = i + 1;
        rng.shuffle(ranks);
        for (std::size_t i = 0; i < n_places; ++i)
            places[i].weight = std::pow(static_cast<double>(ranks[i]), -cfg.zipf_exponent);
    }

    // --- per level-1 region structure ---------------------------------------
    const std::int32_t n_regions1 = n1 * n1;
    // class transition target per (region, class): profile row is
    // (1 - noise) on the target class plus noise spread uniformly
    std::vector<std::int32_t> profile_target(
        static_cast<std::size_t>(n_regions1) * static_cast<std::size_t>(n_classes));
    for (std::int32_t r = 0; r < n_regions1; ++r) {
        std::vector<std::int32_t> perm(static_cast<std::size_t>(n_classes));
        for (std::int32_t c = 0; c < n_classes; ++c) perm[static_cast<std::size_t>(c)] = c;
        rng.shuffle(perm);
        for (std::int32_t c = 0; c < n_classes; ++c)
            profile_target[static_cast<std::size_t>(r) * n_classes + c] = perm[static_cast<std::size_t>(c)];
    }

    std::vector<Pool> region_class_pool(
        static_cast<std::size_t>(n_regions1) * static_cast<std::size_t>(n_classes));
    std::vector<Pool> region_pool(static_cast<std::size_t>(n_regions1));
    for (std::size_t i = 0; i < n_places; ++i) {
        const Place& p = places[i];
        region_pool[static_cast<std::size_t>(p.region1)].ids.push_back(static_cast<std::int32_t>(i));
        region_class_pool[static_cast<std::size_t>(p.region1) * n_classes + p.cls].ids.push_back(
            static_cast<std::int32_t>(i));
    }
    for (auto& pool : region_pool) pool.finalize(places);
    for (auto& pool : region_class_pool) pool.finalize(places);

    // --- trajectories --------------------------------------------------------
    auto sample_profile_class = [&](std::int32_t region, std::int32_t cls) {
        const std::int32_t target = profile_target[static_cast<std::size_t>(region) * n_classes + cls];
        if (rng.uniform() < cfg.profile_noise)
            return static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_classes)));
        return target;
    };

    const double fine_size = spec.level(finest).cell_size;
    auto center_x = [&](const CellIndex& c) {
        return spec.origin_x() + (static_cast<double>(c.col) + 0.5) * fine_size;
    };
    auto center_y = [&](const CellIndex& c) {
        return spec.origin_y() + (static_cast<double>(c.row) + 0.5) * fine_size;
    };

    SynthOutput out;
    out.trajectories.reserve(static_cast<std::size_t>(cfg.users));
    constexpr std::int64_t kBaseTime = 1577804400;  // 2020-01-01 00:00 JST
    char name[32];

    for (std::int32_t u = 0; u < cfg.users; ++u) {
        std::snprintf(name, sizeof(name), "u%06d", u);
        RawTrajectory traj;
        traj.user_id = name;

        auto len = static_cast<std::size_t>(
            std::clamp<std::int64_t>(2 + sample_poisson(rng, cfg.mean_seq_len - 2.0), 2, 512));
        traj.stays.reserve(len);

        std::int32_t current;
        if (rng.uniform() < cfg.alpha) {
            const auto region = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_regions1)));
            current = region_pool[static_cast<std::size_t>(region)].sample(rng);
        } else {
            current = static_cast<std::int32_t>(rng.below(n_places));
        }

        std::int64_t t = kBaseTime + static_cast<std::int64_t>(rng.below(7 * 86400));
        for (std::size_t s = 0; s < len; ++s) {
            const Place& p = places[static_cast<std::size_t>(current)];
            auto dwell = static_cast<std::int64_t>(
                std::clamp(std::exp(std::log(1800.0) + rng.normal()), 60.0, 86400.0));
            traj.stays.push_back({center_x(p.cell), center_y(p.cell), t, t + dwell});
            t += dwell + static_cast<std::int64_t>(rng.below(3300)) + 300;

            if (s + 1 == len) break;
            if (rng.uniform() < cfg.alpha) {
                const std::int32_t next_cls = sample_profile_class(p.region1, p.cls);
                const Pool& pool =
                    region_class_pool[static_cast<std::size_t>(p.region1) * n_classes + next_cls];
                current = pool.empty() ? region_pool[static_cast<std::size_t>(p.region1)].sample(rng)
                                       : pool.sample(rng);
            } else {
                current = static_cast<std::int32_t>(rng.below(n_places));
            }
        }
        out.trajectories.push_back(std::move(traj));
    }

    out.place_classes.reserve(n_places);
    for (const Place& p : places) out.place_classes.emplace_back(p.cell, p.cls);
    return out;
}

void write_place_classes(std::ostream& out,
                         const std::vector<std::pair<CellIndex, std::int32_t>>& place_classes) {
    char buf[96];
    for (const auto& [cell, cls] : place_classes) {
        std::snprintf(buf, sizeof(buf), "%lld\t%lld\t%d\n", static_cast<long long>(cell.col),
                      static_cast<long long>(cell.row), cls);
        out << buf;
    }
}

std::vector<std::pair<CellIndex, std::int32_t>> read_place_classes(std::istream& in,
                                                                   std::uint32_t level) {
    if (!in) throw DataError("place classes: unreadable stream");
    std::vector<std::pair<CellIndex, std::int32_t>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        long long col = 0, row = 0;
        int cls = 0;
        if (std::sscanf(line.c_str(), "%lld\t%lld\t%d", &col, &row, &cls) != 3)
            throw DataError("place classes: malformed line " + std::to_string(lineno));
        out.push_back({CellIndex{level, col, row}, cls});
    }
    return out;
}

}  // namespace hieremb
