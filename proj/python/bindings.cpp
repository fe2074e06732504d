#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hieremb/commands.hpp"
#include "hieremb/config.hpp"
#include "hieremb/grid.hpp"
#include "hieremb/hier_embedding.hpp"
#include "hieremb/stats.hpp"

namespace py = pybind11;
using namespace hieremb;

namespace {

CellIndex finest_cell(const HierarchicalVocabulary& vocab, std::int64_t col, std::int64_t row) {
    return CellIndex{static_cast<std::uint32_t>(vocab.spec().finest_level()), col, row};
}

}  // namespace

PYBIND11_MODULE(_hieremb, m) {
    m.doc() = "hierarchical place embeddings: grid, vocabulary layout, slice averaging, CLI";

    py::class_<GridSpec>(m, "GridSpec")
        .def(py::init([](double origin_x, double origin_y,
                         const std::vector<std::pair<std::string, double>>& levels) {
                 std::vector<GridLevel> ls;
                 for (const auto& [name, size] : levels) ls.push_back({name, size});
                 return GridSpec(origin_x, origin_y, std::move(ls));
             }),
             py::arg("origin_x"), py::arg("origin_y"), py::arg("levels"))
        .def_static("standard", &GridSpec::standard)
        .def_property_readonly("level_names",
                               [](const GridSpec& s) {
                                   std::vector<std::string> names;
                                   for (std::size_t i = 0; i < s.level_count(); ++i)
                                       names.push_back(s.level(i).name);
                                   return names;
                               })
        .def("factor", [](const GridSpec& s, const std::string& coarse, const std::string& fine) {
            return s.factor(s.level_index(coarse), s.level_index(fine));
        });

    m.def(
        "cell_of",
        [](double x, double y, const std::string& level, const GridSpec& spec) {
            auto c = cell_of(x, y, level, spec);
            return std::make_pair(c.col, c.row);
        },
        py::arg("x"), py::arg("y"), py::arg("level"), py::arg("spec"));

    m.def(
        "parent",
        [](std::int64_t col, std::int64_t row, const std::string& from_level,
           const std::string& to_level, const GridSpec& spec) {
            CellIndex c{static_cast<std::uint32_t>(spec.level_index(from_level)), col, row};
            auto p = parent(c, to_level, spec);
            return std::make_pair(p.col, p.row);
        },
        py::arg("col"), py::arg("row"), py::arg("from_level"), py::arg("to_level"),
        py::arg("spec"));

    m.def("lonlat_to_xy", &lonlat_to_xy, py::arg("lon"), py::arg("lat"), py::arg("ref_latitude"));

    py::class_<HierarchicalVocabulary>(m, "Vocabulary")
        .def_static(
            "build",
            [](const std::vector<std::pair<std::int64_t, std::int64_t>>& cells,
               const GridSpec& spec) {
                std::vector<CellIndex> cs;
                const auto finest = static_cast<std::uint32_t>(spec.finest_level());
                for (const auto& [col, row] : cells) cs.push_back({finest, col, row});
                return HierarchicalVocabulary::build(cs, spec);
            },
            py::arg("cells"), py::arg("spec"))
        .def("__len__", &HierarchicalVocabulary::size)
        .def("token",
             [](const HierarchicalVocabulary& v, std::size_t id) {
                 const auto& c = v.token(id);
                 return std::make_pair(c.col, c.row);
             })
        .def("id_of",
             [](const HierarchicalVocabulary& v, std::int64_t col, std::int64_t row) {
                 return v.id_of(finest_cell(v, col, row));
             })
        .def("region_interval",
             [](const HierarchicalVocabulary& v, const std::string& level, std::int64_t col,
                std::int64_t row) {
                 auto li = v.spec().level_index(level);
                 auto iv = v.region_interval(
                     li, CellIndex{static_cast<std::uint32_t>(li), col, row});
                 return std::make_pair(iv.begin, iv.end);
             })
        .def("regions", [](const HierarchicalVocabulary& v, const std::string& level) {
            auto li = v.spec().level_index(level);
            std::vector<std::tuple<std::int64_t, std::int64_t, std::size_t, std::size_t>> out;
            for (const auto& r : v.regions(li))
                out.emplace_back(r.cell.col, r.cell.row, r.interval.begin, r.interval.end);
            return out;
        });

    py::class_<SlicePartition>(m, "SlicePartition")
        .def_property_readonly("d", [](const SlicePartition& p) { return p.d; })
        .def_property_readonly("place_width",
                               [](const SlicePartition& p) { return p.place_width; })
        .def_property_readonly("slices",
                               [](const SlicePartition& p) {
                                   std::vector<std::tuple<std::string, std::size_t, std::size_t>>
                                       out;
                                   for (const auto& s : p.slices)
                                       out.emplace_back(s.level_name, s.width, s.offset);
                                   return out;
                               })
        .def("describe", &SlicePartition::describe);

    m.def("make_partition", &make_partition, py::arg("method"), py::arg("d"), py::arg("spec"));

    m.def(
        "average_slices",
        [](py::array matrix, const HierarchicalVocabulary& vocab,
           const SlicePartition& partition) {
            // strict: no silent conversion copy, the edit must be in place
            py::buffer_info info = matrix.request(true);
            if (info.format != py::format_descriptor<double>::format())
                throw std::invalid_argument("matrix must be float64");
            if (info.ndim != 2) throw std::invalid_argument("matrix must be 2-d");
            const auto rows = static_cast<std::size_t>(info.shape[0]);
            const auto cols = static_cast<std::size_t>(info.shape[1]);
            if (info.strides[1] != static_cast<py::ssize_t>(sizeof(double)) ||
                info.strides[0] != static_cast<py::ssize_t>(cols * sizeof(double)))
                throw std::invalid_argument("matrix must be C-contiguous");
            HierEmbeddingMatrix::average_slices_raw(static_cast<double*>(info.ptr), rows, cols,
                                                    vocab, partition);
        },
        py::arg("matrix"), py::arg("vocab"), py::arg("partition"),
        "Region-wise slice averaging, in place over a (|V|, d) float64 array.");

    m.def(
        "welch_p_value",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            return welch_t_test(a, b).p;
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "config_hash",
        [](const std::string& text) { return RunConfig::from_text(text).hash(); },
        py::arg("text"));

    m.def("run_cli", &cli_main, py::arg("args"),
          "Run a CLI command (synth/train/evaluate/probe/export/gradcheck); returns the exit "
          "code.");
}
