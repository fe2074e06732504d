#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hieremb {

struct GridLevel {
    std::string name;
    double cell_size;  // meters
};

/// Planar metric grid with nested levels, coarsest first. Every coarser cell
/// size must be an exact integer multiple of every finer one so that cells
/// align across levels.
class GridSpec {
public:
    GridSpec(double origin_x, double origin_y, std::vector<GridLevel> levels);

    /// 10km / 1km / 125m at origin (0,0).
    static GridSpec standard();

    double origin_x() const { return origin_x_; }
    double origin_y() const { return origin_y_; }
    std::size_t level_count() const { return levels_.size(); }
    const GridLevel& level(std::size_t i) const { return levels_[i]; }
    std::size_t finest_level() const { return levels_.size() - 1; }

    /// Index of a named level; throws ConfigError if unknown.
    std::size_t level_index(std::string_view name) const;

    /// Exact cell-count factor between a coarser and a finer level.
    std::int64_t factor(std::size_t coarse, std::size_t fine) const;

private:
    double origin_x_;
    double origin_y_;
    std::vector<GridLevel> levels_;
    // factors_[c][f] = level c cell size / level f cell size, for c < f
    std::vector<std::vector<std::int64_t>> factors_;
};

struct CellIndex {
    std::uint32_t level = 0;  // index into GridSpec levels
    std::int64_t col = 0;
    std::int64_t row = 0;

    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Cell containing (x, y) at the given level. Cells are half-open
/// [start, start + size) in both axes.
CellIndex cell_of(double x, double y, std::size_t level, const GridSpec& spec);
CellIndex cell_of(double x, double y, std::string_view level, const GridSpec& spec);

/// The coarser cell that spatially contains `cell`.
CellIndex parent(const CellIndex& cell, std::size_t to_level, const GridSpec& spec);
CellIndex parent(const CellIndex& cell, std::string_view to_level, const GridSpec& spec);

/// Equirectangular projection for ingesting longitude/latitude records;
/// ref_latitude_deg sets the east-west scale.
std::pair<double, double> lonlat_to_xy(double lon_deg, double lat_deg, double ref_latitude_deg);

/// Finest-level cells mapped to contiguous token ids, ordered so that all
/// tokens sharing an upper-level region form one contiguous id interval, and
/// finer-level intervals nest inside coarser ones.
class HierarchicalVocabulary {
public:
    struct Interval {
        std::size_t begin = 0;
        std::size_t end = 0;  // half-open
        std::size_t count() const { return end - begin; }
        friend bool operator==(const Interval&, const Interval&) = default;
    };
    struct Region {
        CellIndex cell;
        Interval interval;
    };

    /// Token order is the lexicographic sort of (level-0 parent, level-1
    /// parent, ..., finest cell), each component compared by (row, col).
    /// Duplicates in the input are collapsed. Throws DataError when empty.
    static HierarchicalVocabulary build(std::span<const CellIndex> finest_cells,
                                        const GridSpec& spec);

    std::size_t size() const { return tokens_.size(); }
    const CellIndex& token(std::size_t id) const { return tokens_[id]; }
    const std::vector<CellIndex>& tokens() const { return tokens_; }

    std::optional<std::size_t> find_id(const CellIndex& finest_cell) const;
    /// As find_id but throws DataError when absent.
    std::size_t id_of(const CellIndex& finest_cell) const;

    std::size_t upper_level_count() const { return regions_.size(); }
    /// Regions of one upper level in token-interval order.
    const std::vector<Region>& regions(std::size_t level) const { return regions_[level]; }

    /// Token-id interval of one region; throws DataError if the region is
    /// not present at that level.
    Interval region_interval(std::size_t level, const CellIndex& region) const;

    const GridSpec& spec() const { return spec_; }

private:
    HierarchicalVocabulary(GridSpec spec) : spec_(std::move(spec)) {}

    GridSpec spec_;
    std::vector<CellIndex> tokens_;
    std::unordered_map<std::uint64_t, std::size_t> id_of_;
    // per upper level: ordered regions plus a lookup from packed cell to index
    std::vector<std::vector<Region>> regions_;
    std::vector<std::unordered_map<std::uint64_t, std::size_t>> region_lookup_;
};

/// Packs non-negative (col, row) into one key. Both must fit in 32 bits.
std::uint64_t pack_cell(std::int64_t col, std::int64_t row);

}  // namespace hieremb
