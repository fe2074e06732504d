#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hieremb/config.hpp"

namespace hieremb {

void cmd_synth(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
double cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path);
void cmd_probe(const RunConfig& cfg);
void cmd_export(const RunConfig& cfg, const std::string& checkpoint_path, std::string out_file);
/// Returns 0 when every instance stays under the tolerance, 1 otherwise.
int cmd_gradcheck(std::uint64_t seed, std::size_t instances, double tolerance);

struct EmbeddingExport {
    std::size_t d = 0;
    std::string method;
    std::string partition;
    std::string config_hash;
    std::vector<CellIndex> cells;
    Tensor values;  // tokens x d
};
EmbeddingExport parse_embedding_export(std::istream& in, std::uint32_t finest_level);

/// Full argv-style entry point; returns the process exit code
/// (0 ok, 2 config error, 3 data error, 4 divergence, 1 other).
int cli_main(const std::vector<std::string>& args);

}  // namespace hieremb
