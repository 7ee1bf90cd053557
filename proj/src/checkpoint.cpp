#include "flowmil/nn/checkpoint.hpp"

#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace flowmil::nn {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'N', 'N'};
constexpr std::uint16_t kVersion = 1;

void write_tensor(io::ByteWriter& w, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank));
    for (int i = 0; i < t.rank; ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
    w.f32_array(t.data(), t.v.size());
}

Tensor read_tensor(io::ByteReader& r) {
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 4)
        throw Error("format", r.source() + ": bad tensor rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Tensor t;
    t.resize(shape);
    r.f32_array(t.data(), t.v.size());
    return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const LayerParams*>>& layers) {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    w.u32(static_cast<std::uint32_t>(layers.size()));
    for (const auto& [name, p] : layers) {
        w.str(name);
        write_tensor(w, p->w);
        write_tensor(w, p->b);
        write_tensor(w, p->w_acc);
        write_tensor(w, p->b_acc);
    }
    io::atomic_write_file(path, w);
}

NamedLayers load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes.data(), bytes.size(), path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4))
        throw Error("format", path.string() + ": not a FMNN checkpoint (bad magic)");
    const std::uint16_t version = r.u16();
    if (version != kVersion)
        throw Error("format", path.string() + ": unsupported FMNN version " +
                                  std::to_string(version));
    const std::uint32_t count = r.u32();
    NamedLayers layers;
    layers.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        LayerParams p;
        std::string name = r.str();
        p.w = read_tensor(r);
        p.b = read_tensor(r);
        p.w_acc = read_tensor(r);
        p.b_acc = read_tensor(r);
        if (!p.w.same_shape(p.w_acc) || !p.b.same_shape(p.b_acc))
            throw Error("format", path.string() + ": accumulator shape mismatch in layer " + name);
        layers.emplace_back(std::move(name), std::move(p));
    }
    if (!r.at_end())
        throw Error("format", path.string() + ": trailing bytes after last layer");
    return layers;
}

const LayerParams& find_layer(const NamedLayers& layers, const std::string& name) {
    for (const auto& [n, p] : layers)
        if (n == name) return p;
    throw Error("format", "checkpoint has no layer named " + name);
}

}  // namespace flowmil::nn
