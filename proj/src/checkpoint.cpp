#include "cb/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "cb/errors.hpp"

namespace cb {

namespace {

constexpr char kMagic[8] = {'C', 'B', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

void write_item(std::ostream& os, const std::string& name, bool is_buffer, const Tensor& t) {
    write_string(os, name);
    os.put(is_buffer ? 1 : 0);
    write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& manifest_json,
                     const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 8);
    write_string(os, manifest_json);
    write_u32(os, static_cast<std::uint32_t>(store.params().size() + store.buffers().size()));
    for (const auto& e : store.params()) write_item(os, e.name, false, e.tensor);
    for (const auto& e : store.buffers()) write_item(os, e.name, true, e.tensor);
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    CheckpointData ckpt;
    ckpt.manifest_json = read_string(is);
    std::uint32_t count = read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointData::Item item;
        item.name = read_string(is);
        int kind = is.get();
        if (kind < 0) throw DataError("checkpoint: truncated item");
        item.is_buffer = kind == 1;
        std::uint32_t ndim = read_u32(is);
        long long numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            std::uint32_t dim = read_u32(is);
            item.shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        item.data.resize(static_cast<size_t>(numel));
        is.read(reinterpret_cast<char*>(item.data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated tensor data for " + item.name);
        ckpt.items.push_back(std::move(item));
    }
    return ckpt;
}

int apply_checkpoint(const CheckpointData& ckpt, ParamStore& store) {
    int restored = 0;
    for (const auto& item : ckpt.items) {
        Tensor* t = item.is_buffer ? store.find_buffer(item.name) : store.find_param(item.name);
        if (!t) throw DataError("checkpoint: no tensor named '" + item.name + "' in this model");
        if (t->shape() != item.shape)
            throw DataError("checkpoint: shape mismatch for '" + item.name + "': stored " +
                            shape_str(item.shape) + " vs model " + shape_str(t->shape()));
        std::copy(item.data.begin(), item.data.end(), t->values().begin());
        ++restored;
    }
    return restored;
}

}  // namespace cb
