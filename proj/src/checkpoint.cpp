#include "rlab/checkpoint.hpp"

#include "wire.hpp"

namespace rlab {

namespace {
constexpr char kMagic[4] = {'R', 'L', 'A', 'B'};
constexpr uint16_t kVersion = 1;
}  // namespace

void save_checkpoint(const ModelGraph& model, const std::string& path) {
    wire::Writer w;
    w.raw(kMagic, 4);
    w.u16(kVersion);
    w.u32(static_cast<uint32_t>(model.class_count));
    w.u8(static_cast<uint8_t>(model.input_shape.size()));
    for (int64_t e : model.input_shape) w.i64(e);

    w.u32(static_cast<uint32_t>(model.layers.size()));
    for (const auto& s : model.layers) {
        w.u16(static_cast<uint16_t>(s.kind));
        w.str32(s.name);
        w.i32(s.in_channels);
        w.i32(s.out_channels);
        w.i32(s.kernel);
        w.i32(s.stride);
        w.i32(s.padding);
        w.i32(s.in_features);
        w.i32(s.out_features);
        w.i32(s.group_in);
        w.i32(s.group_out);
        w.i32(s.block_group);
        w.u8(s.projection ? 1 : 0);
    }

    w.u32(static_cast<uint32_t>(model.params.size()));
    for (const auto& [name, p] : model.params) {
        w.str16(name);
        w.u8(static_cast<uint8_t>(p.shape.size()));
        for (int64_t e : p.shape) w.i64(e);
        for (double v : p.values) w.f32(static_cast<float>(v));
    }
    wire::write_file(path, w.bytes);
}

ModelGraph load_checkpoint(const std::string& path) {
    const auto bytes = wire::read_file(path);
    wire::Reader r(bytes);
    wire::expect_magic(r, kMagic, "checkpoint");
    const uint16_t version = r.u16();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    const int class_count = static_cast<int>(r.u32());
    const int rank = r.u8();
    std::vector<int64_t> input_shape(static_cast<size_t>(rank));
    for (auto& e : input_shape) e = r.i64();

    const uint32_t n_layers = r.u32();
    std::vector<LayerSpec> layers(n_layers);
    for (auto& s : layers) {
        s.kind = static_cast<LayerKind>(r.u16());
        s.name = r.str32();
        s.in_channels = r.i32();
        s.out_channels = r.i32();
        s.kernel = r.i32();
        s.stride = r.i32();
        s.padding = r.i32();
        s.in_features = r.i32();
        s.out_features = r.i32();
        s.group_in = r.i32();
        s.group_out = r.i32();
        s.block_group = r.i32();
        s.projection = r.u8() != 0;
    }

    ModelGraph model = build_model(std::move(input_shape), class_count, std::move(layers));

    const uint32_t n_params = r.u32();
    if (n_params != model.params.size())
        throw FormatError("checkpoint: parameter count mismatch");
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str16();
        auto it = model.params.find(name);
        if (it == model.params.end())
            throw FormatError("checkpoint: unknown parameter " + name);
        Tensor& p = it->second;
        const int prank = r.u8();
        std::vector<int64_t> shape(static_cast<size_t>(prank));
        for (auto& e : shape) e = r.i64();
        if (shape != p.shape)
            throw FormatError("checkpoint: shape mismatch for parameter " + name);
        for (auto& v : p.values) v = static_cast<double>(r.f32());
    }
    if (r.pos != bytes.size())
        throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.pos));
    return model;
}

uint64_t file_hash(const std::string& path) {
    const auto bytes = wire::read_file(path);
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace rlab
