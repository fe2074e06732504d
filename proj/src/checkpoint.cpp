#include "hieremb/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hieremb/errors.hpp"

namespace hieremb {

namespace {

void put_u32(std::ostream& out, std::uint32_t x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(x));
}
void put_u64(std::ostream& out, std::uint64_t x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(x));
}
void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t x = 0;
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    if (!in) throw DataError("checkpoint: truncated file");
    return x;
}
std::uint64_t get_u64(std::istream& in) {
    std::uint64_t x = 0;
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    if (!in) throw DataError("checkpoint: truncated file");
    return x;
}
std::string get_string(std::istream& in) {
    std::uint32_t len = get_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw DataError("checkpoint: truncated file");
    return s;
}

}  // namespace

void round_to_f32(Tensor& t) {
    for (double& x : t.v) x = static_cast<double>(static_cast<float>(x));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("checkpoint: cannot write '" + tmp + "'");

        out.write(Checkpoint::kMagic, 8);
        put_u32(out, Checkpoint::kVersion);
        put_string(out, ckpt.config_hash);

        put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
        for (const auto& [name, tensor] : ckpt.tensors) {
            put_string(out, name);
            put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
            for (std::size_t d : tensor.shape) put_u64(out, d);
            std::vector<float> f(tensor.v.size());
            for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(tensor.v[i]);
            out.write(reinterpret_cast<const char*>(f.data()),
                      static_cast<std::streamsize>(f.size() * sizeof(float)));
        }

        put_u32(out, static_cast<std::uint32_t>(ckpt.int_arrays.size()));
        for (const auto& [name, xs] : ckpt.int_arrays) {
            put_string(out, name);
            put_u64(out, xs.size());
            out.write(reinterpret_cast<const char*>(xs.data()),
                      static_cast<std::streamsize>(xs.size() * sizeof(std::int64_t)));
        }

        put_u32(out, static_cast<std::uint32_t>(ckpt.strings.size()));
        for (const auto& [name, s] : ckpt.strings) {
            put_string(out, name);
            put_string(out, s);
        }
        if (!out) throw DataError("checkpoint: write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, Checkpoint::kMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in '" + path + "'");
    std::uint32_t version = get_u32(in);
    if (version != Checkpoint::kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.config_hash = get_string(in);

    const std::uint32_t n_tensors = get_u32(in);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = get_string(in);
        const std::uint32_t ndim = get_u32(in);
        std::vector<std::size_t> shape(ndim);
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<std::size_t>(get_u64(in));
            count *= shape[d];
        }
        std::vector<float> f(count);
        in.read(reinterpret_cast<char*>(f.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw DataError("checkpoint: truncated tensor '" + name + "'");
        Tensor t = Tensor::zeros(shape);
        for (std::size_t j = 0; j < count; ++j) t.v[j] = static_cast<double>(f[j]);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }

    const std::uint32_t n_ints = get_u32(in);
    for (std::uint32_t i = 0; i < n_ints; ++i) {
        std::string name = get_string(in);
        std::vector<std::int64_t> xs(get_u64(in));
        in.read(reinterpret_cast<char*>(xs.data()),
                static_cast<std::streamsize>(xs.size() * sizeof(std::int64_t)));
        if (!in) throw DataError("checkpoint: truncated array '" + name + "'");
        ckpt.int_arrays.emplace(std::move(name), std::move(xs));
    }

    const std::uint32_t n_strings = get_u32(in);
    for (std::uint32_t i = 0; i < n_strings; ++i) {
        std::string name = get_string(in);
        ckpt.strings.emplace(std::move(name), get_string(in));
    }
    return ckpt;
}

void atomic_write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace hieremb
