#include "mga/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "mga/errors.hpp"

namespace mga::nn {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'A', 'C', 'K', 'P', 'T', '1'};

template <class T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const ParamStore*>>& stores) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    std::uint64_t count = 0;
    for (const auto& [prefix, store] : stores) count += store->all().size();
    write_raw(out, count);
    for (const auto& [prefix, store] : stores) {
        for (const Param& p : store->all()) {
            std::string name = prefix + "/" + p.name;
            write_raw(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_raw(out, static_cast<std::uint32_t>(p.tensor.ndim()));
            for (int i = 0; i < p.tensor.ndim(); ++i)
                write_raw(out, static_cast<std::uint64_t>(p.tensor.dim(i)));
            out.write(reinterpret_cast<const char*>(p.tensor.data()),
                      static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
        }
    }
    if (!out) throw DataError("checkpoint: write failed: " + path);
}

void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ParamStore*>>& stores) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path);

    std::map<std::string, Param*> wanted;
    for (const auto& [prefix, store] : stores)
        for (Param& p : store->all()) wanted[prefix + "/" + p.name] = &p;

    auto count = read_raw<std::uint64_t>(in);
    std::size_t loaded = 0;
    for (std::uint64_t r = 0; r < count; ++r) {
        auto name_len = read_raw<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto ndim = read_raw<std::uint32_t>(in);
        std::vector<int> shape;
        std::size_t total = 1;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            auto d = read_raw<std::uint64_t>(in);
            shape.push_back(static_cast<int>(d));
            total *= d;
        }
        auto it = wanted.find(name);
        if (it == wanted.end()) throw DataError("checkpoint: unexpected record " + name);
        Param* p = it->second;
        if (p->tensor.shape() != shape) {
            throw DataError("checkpoint: shape mismatch for " + name + ": file has " +
                            Tensor::zeros(shape).shape_str() + ", model has " +
                            p->tensor.shape_str());
        }
        in.read(reinterpret_cast<char*>(p->tensor.data()),
                static_cast<std::streamsize>(total * sizeof(double)));
        if (!in) throw DataError("checkpoint: truncated values for " + name);
        ++loaded;
    }
    if (loaded != wanted.size())
        throw DataError("checkpoint: file is missing parameters (" + std::to_string(loaded) +
                        " of " + std::to_string(wanted.size()) + ")");
}

}  // namespace mga::nn
