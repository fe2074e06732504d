#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hieremb/tensor.hpp"

namespace hieremb {

/// Self-describing binary parameter file: magic, version, named tensors
/// (shape + 32-bit little-endian values), named int64 arrays and strings
/// for layout metadata, plus the config hash.
struct Checkpoint {
    static constexpr char kMagic[9] = "HEMBCKPT";
    static constexpr std::uint32_t kVersion = 1;

    std::string config_hash;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::vector<std::int64_t>> int_arrays;
    std::map<std::string, std::string> strings;
};

/// Values are rounded through float32 on write. The write is atomic
/// (temp file + rename).
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

/// Throws DataError on missing file, bad magic, or unsupported version.
Checkpoint load_checkpoint(const std::string& path);

/// Rounds every value to the nearest float32.
void round_to_f32(Tensor& t);

/// Whole-file atomic text write (temp file + rename).
void atomic_write_text(const std::string& path, const std::string& content);

}  // namespace hieremb
