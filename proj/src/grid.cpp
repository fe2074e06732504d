#include "hieremb/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hieremb/errors.hpp"

namespace hieremb {

GridSpec::GridSpec(double origin_x, double origin_y, std::vector<GridLevel> levels)
    : origin_x_(origin_x), origin_y_(origin_y), levels_(std::move(levels)) {
    if (levels_.empty()) throw ConfigError("grid: level list is empty");
    for (const auto& lv : levels_) {
        if (!(lv.cell_size > 0.0)) throw ConfigError("grid: cell size must be positive: " + lv.name);
        if (lv.name.empty()) throw ConfigError("grid: level name must be non-empty");
    }
    for (std::size_t i = 0; i + 1 < levels_.size(); ++i) {
        if (!(levels_[i].cell_size > levels_[i + 1].cell_size))
            throw ConfigError("grid: cell sizes must be strictly decreasing from level '" +
                              levels_[i].name + "' to '" + levels_[i + 1].name + "'");
    }
    for (std::size_t i = 0; i < levels_.size(); ++i)
        for (std::size_t j = 0; j < levels_.size(); ++j)
            if (i != j && levels_[i].name == levels_[j].name)
                throw ConfigError("grid: duplicate level name '" + levels_[i].name + "'");

    factors_.assign(levels_.size(), std::vector<std::int64_t>(levels_.size(), 1));
    for (std::size_t c = 0; c < levels_.size(); ++c) {
        for (std::size_t f = c + 1; f < levels_.size(); ++f) {
            double ratio = levels_[c].cell_size / levels_[f].cell_size;
            auto k = static_cast<std::int64_t>(std::llround(ratio));
            if (k < 2 || std::abs(ratio - static_cast<double>(k)) > 1e-9 * ratio)
                throw ConfigError("grid: level '" + levels_[c].name + "' size is not an integer multiple of '" +
                                  levels_[f].name + "'");
            factors_[c][f] = k;
        }
    }
}

GridSpec GridSpec::standard() {
    return GridSpec(0.0, 0.0, {{"10km", 10000.0}, {"1km", 1000.0}, {"125m", 125.0}});
}

std::size_t GridSpec::level_index(std::string_view name) const {
    for (std::size_t i = 0; i < levels_.size(); ++i)
        if (levels_[i].name == name) return i;
    throw ConfigError("grid: unknown level name '" + std::string(name) + "'");
}

std::int64_t GridSpec::factor(std::size_t coarse, std::size_t fine) const {
    if (coarse >= levels_.size() || fine >= levels_.size() || coarse >= fine)
        throw ConfigError("grid: factor() requires a coarser and a finer level");
    return factors_[coarse][fine];
}

CellIndex cell_of(double x, double y, std::size_t level, const GridSpec& spec) {
    if (level >= spec.level_count()) throw ConfigError("grid: level index out of range");
    if (x < spec.origin_x() || y < spec.origin_y()) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "grid: coordinates (%.3f, %.3f) below origin", x, y);
        throw DataError(buf);
    }
    const double size = spec.level(level).cell_size;
    CellIndex c;
    c.level = static_cast<std::uint32_t>(level);
    c.col = static_cast<std::int64_t>(std::floor((x - spec.origin_x()) / size));
    c.row = static_cast<std::int64_t>(std::floor((y - spec.origin_y()) / size));
    return c;
}

CellIndex cell_of(double x, double y, std::string_view level, const GridSpec& spec) {
    return cell_of(x, y, spec.level_index(level), spec);
}

namespace {
std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}
}  // namespace

CellIndex parent(const CellIndex& cell, std::size_t to_level, const GridSpec& spec) {
    if (to_level >= cell.level)
        throw ConfigError("grid: parent() target level must be strictly coarser");
    const std::int64_t k = spec.factor(to_level, cell.level);
    CellIndex p;
    p.level = static_cast<std::uint32_t>(to_level);
    p.col = floor_div(cell.col, k);
    p.row = floor_div(cell.row, k);
    return p;
}

CellIndex parent(const CellIndex& cell, std::string_view to_level, const GridSpec& spec) {
    return parent(cell, spec.level_index(to_level), spec);
}

std::pair<double, double> lonlat_to_xy(double lon_deg, double lat_deg, double ref_latitude_deg) {
    constexpr double kEarthRadius = 6371000.0;
    constexpr double kDegToRad = 3.141592653589793238462643383279502884 / 180.0;
    double x = kEarthRadius * std::cos(ref_latitude_deg * kDegToRad) * lon_deg * kDegToRad;
    double y = kEarthRadius * lat_deg * kDegToRad;
    return {x, y};
}

std::uint64_t pack_cell(std::int64_t col, std::int64_t row) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(col)) << 32) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(row));
}

HierarchicalVocabulary HierarchicalVocabulary::build(std::span<const CellIndex> finest_cells,
                                                     const GridSpec& spec) {
    if (finest_cells.empty()) throw DataError("vocabulary: empty cell set");
    const std::size_t finest = spec.finest_level();
    const std::size_t uppers = finest;  // levels 0..finest-1

    struct Keyed {
        std::vector<CellIndex> chain;  // parents coarse->fine, then the cell itself
    };
    std::vector<Keyed> keyed;
    keyed.reserve(finest_cells.size());
    for (const CellIndex& c : finest_cells) {
        if (c.level != finest)
            throw DataError("vocabulary: input cells must be at the finest level");
        if (c.col < 0 || c.row < 0)
            throw DataError("vocabulary: negative cell index");
        Keyed k;
        k.chain.reserve(uppers + 1);
        for (std::size_t l = 0; l < uppers; ++l) k.chain.push_back(parent(c, l, spec));
        k.chain.push_back(c);
        keyed.push_back(std::move(k));
    }

    auto row_col_less = [](const CellIndex& a, const CellIndex& b) {
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    };
    std::sort(keyed.begin(), keyed.end(), [&](const Keyed& a, const Keyed& b) {
        for (std::size_t i = 0; i < a.chain.size(); ++i) {
            if (a.chain[i] == b.chain[i]) continue;
            return row_col_less(a.chain[i], b.chain[i]);
        }
        return false;
    });
    keyed.erase(std::unique(keyed.begin(), keyed.end(),
                            [](const Keyed& a, const Keyed& b) { return a.chain.back() == b.chain.back(); }),
                keyed.end());

    HierarchicalVocabulary v(spec);
    v.tokens_.reserve(keyed.size());
    v.regions_.resize(uppers);
    v.region_lookup_.resize(uppers);
    for (std::size_t id = 0; id < keyed.size(); ++id) {
        const CellIndex& cell = keyed[id].chain.back();
        v.tokens_.push_back(cell);
        v.id_of_.emplace(pack_cell(cell.col, cell.row), id);
        for (std::size_t l = 0; l < uppers; ++l) {
            const CellIndex& reg = keyed[id].chain[l];
            auto& regions = v.regions_[l];
            if (regions.empty() || !(regions.back().cell == reg)) {
                v.region_lookup_[l].emplace(pack_cell(reg.col, reg.row), regions.size());
                regions.push_back({reg, {id, id + 1}});
            } else {
                regions.back().interval.end = id + 1;
            }
        }
    }
    return v;
}

std::optional<std::size_t> HierarchicalVocabulary::find_id(const CellIndex& finest_cell) const {
    if (finest_cell.level != spec_.finest_level()) return std::nullopt;
    auto it = id_of_.find(pack_cell(finest_cell.col, finest_cell.row));
    if (it == id_of_.end()) return std::nullopt;
    return it->second;
}

std::size_t HierarchicalVocabulary::id_of(const CellIndex& finest_cell) const {
    auto id = find_id(finest_cell);
    if (!id)
        throw DataError("vocabulary: cell (" + std::to_string(finest_cell.col) + "," +
                        std::to_string(finest_cell.row) + ") not in vocabulary");
    return *id;
}

HierarchicalVocabulary::Interval HierarchicalVocabulary::region_interval(
    std::size_t level, const CellIndex& region) const {
    if (level >= regions_.size()) throw ConfigError("vocabulary: not an upper level");
    const auto& lookup = region_lookup_[level];
    auto it = lookup.find(pack_cell(region.col, region.row));
    if (it == lookup.end())
        throw DataError("vocabulary: unknown region (" + std::to_string(region.col) + "," +
                        std::to_string(region.row) + ") at level " + spec_.level(level).name);
    return regions_[level][it->second].interval;
}

}  // namespace hieremb
