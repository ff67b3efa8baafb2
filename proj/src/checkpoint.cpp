#include "mfn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "mfn/binary_io.hpp"

namespace mfn {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

} // namespace detail

namespace {

constexpr char kMagic[4] = {'M', 'F', 'N', '1'};

std::string read_manifest(detail::ByteReader& r) {
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
    const std::uint32_t len = r.u32("manifest length");
    std::string manifest(len, '\0');
    r.bytes(manifest.data(), len, "manifest");
    return manifest;
}

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(SegmentationModel& model) {
    detail::ByteWriter w;
    w.bytes(kMagic, 4);
    const std::string manifest = to_manifest(model.config());
    w.u32(static_cast<std::uint32_t>(manifest.size()));
    w.bytes(manifest.data(), manifest.size());
    const auto state = model.state();
    w.u32(static_cast<std::uint32_t>(state.size()));
    for (const StateRef& s : state) {
        w.u32(static_cast<std::uint32_t>(s.shape.n));
        w.u32(static_cast<std::uint32_t>(s.shape.c));
        w.u32(static_cast<std::uint32_t>(s.shape.h));
        w.u32(static_cast<std::uint32_t>(s.shape.w));
        w.f32s(s.data, s.shape.size());
    }
    return w.buffer();
}

std::unique_ptr<SegmentationModel> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes);
    const ModelConfig cfg = parse_manifest(read_manifest(r));
    std::mt19937_64 rng(0);
    auto model = make_model(cfg, rng);
    const auto state = model->state();
    const std::uint32_t count = r.u32("tensor count");
    if (count != state.size())
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                              std::to_string(state.size()));
    // Read into scratch first so a failure leaves no half-loaded model behind.
    std::vector<std::vector<Real>> scratch(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
        Shape s;
        s.n = static_cast<int>(r.u32("tensor dims"));
        s.c = static_cast<int>(r.u32("tensor dims"));
        s.h = static_cast<int>(r.u32("tensor dims"));
        s.w = static_cast<int>(r.u32("tensor dims"));
        if (s != state[i].shape)
            throw CheckpointError("tensor " + state[i].name + ": checkpoint dims " + s.str() +
                                  " vs model " + state[i].shape.str());
        scratch[i].resize(s.size());
        r.f32s(scratch[i].data(), s.size(), "tensor data");
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors", r.offset());
    for (std::size_t i = 0; i < state.size(); ++i)
        std::memcpy(state[i].data, scratch[i].data(), scratch[i].size() * sizeof(Real));
    return model;
}

void save_checkpoint(SegmentationModel& model, const std::string& path) {
    detail::write_file(path, serialize_checkpoint(model));
}

std::unique_ptr<SegmentationModel> load_checkpoint(const std::string& path) {
    return deserialize_checkpoint(detail::read_file(path));
}

ModelConfig read_checkpoint_config(const std::string& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    return parse_manifest(read_manifest(r));
}

std::size_t transfer_state(SegmentationModel& src, SegmentationModel& dst, const std::string& prefix,
                           Real lr_multiplier) {
    std::map<std::string, StateRef> from;
    for (const StateRef& s : src.state())
        if (s.name.rfind(prefix, 0) == 0) from.emplace(s.name, s);
    std::size_t copied = 0;
    for (const StateRef& d : dst.state()) {
        auto it = from.find(d.name);
        if (it == from.end()) continue;
        if (it->second.shape != d.shape)
            throw CheckpointError("transfer: " + d.name + " dims " + it->second.shape.str() + " vs " +
                                  d.shape.str());
        std::memcpy(d.data, it->second.data, d.shape.size() * sizeof(Real));
        ++copied;
    }
    for (Parameter* p : dst.parameters())
        if (from.count(p->name)) p->lr_multiplier = lr_multiplier;
    return copied;
}

} // namespace mfn
