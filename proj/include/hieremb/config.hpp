#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hieremb/grid.hpp"
#include "hieremb/model.hpp"
#include "hieremb/synth.hpp"
#include "hieremb/trajectories.hpp"

namespace hieremb {

/// Plain key=value run configuration with section-prefixed keys, '#'
/// comments, defaults for every key, and a stable content hash. Keys are
/// validated against the registry; unknown keys are configuration errors.
/// runtime.* keys (threads, output directory) never enter the hash.
class RunConfig {
public:
    static RunConfig defaults();
    static RunConfig load_file(const std::string& path);
    static RunConfig from_text(const std::string& text);

    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::vector<std::int64_t> get_int_list(const std::string& key) const;

    /// Sorted `key=value` lines with numeric values re-serialized
    /// canonically; runtime.* excluded.
    std::string canonical() const;
    /// 16 hex digits, FNV-1a over canonical().
    std::string hash() const;

    GridSpec grid() const;
    BucketConfig buckets() const;
    SynthConfig synth() const;
    ModelConfig model(const std::string& method) const;
    std::vector<std::string> methods() const;
    std::vector<std::uint64_t> seeds() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace hieremb
