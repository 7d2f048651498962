#include "gradrect/checkpoint.hpp"

#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "binio.hpp"
#include "gradrect/errors.hpp"

namespace gradrect {

std::filesystem::path checkpoint_sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const ParamVector& p = model.params();
    binio::Writer w(path);
    w.bytes("GRDCKPT1", 8);
    w.uint(kCheckpointFormatVersion);
    w.uint(static_cast<std::uint32_t>(model.kind()));
    w.uint(static_cast<std::uint32_t>(model.vocab_size()));
    w.uint(static_cast<std::uint32_t>(model.embed_dim()));
    w.uint(static_cast<std::uint32_t>(model.hidden_dim()));
    w.uint(static_cast<std::uint32_t>(p.segments().size()));
    nlohmann::ordered_json segs = nlohmann::ordered_json::array();
    for (const auto& s : p.segments()) {
        w.str(s.name);
        w.uint(static_cast<std::uint64_t>(s.offset));
        w.uint(static_cast<std::uint64_t>(s.length));
        segs.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
    }
    w.uint(static_cast<std::uint64_t>(p.size()));
    for (double v : p.values()) w.f64(v);
    w.finish();

    nlohmann::ordered_json side{{"magic", "GRDCKPT1"},
                                {"format_version", kCheckpointFormatVersion},
                                {"model_kind", to_string(model.kind())},
                                {"vocab_size", model.vocab_size()},
                                {"embed_dim", model.embed_dim()},
                                {"hidden_dim", model.hidden_dim()},
                                {"n_values", p.size()},
                                {"segments", segs}};
    const auto sp = checkpoint_sidecar_path(path);
    std::ofstream out(sp, std::ios::binary | std::ios::trunc);
    out << side.dump(2) << '\n';
    if (!out) throw IoError(fmt::format("cannot write '{}'", sp.string()));
}

Model load_checkpoint(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("GRDCKPT1");
    const auto version = r.uint<std::uint32_t>();
    if (version != kCheckpointFormatVersion)
        throw IoError(fmt::format("'{}': unsupported checkpoint version {}", path.string(), version));
    const auto kind = r.uint<std::uint32_t>();
    if (kind > 1) throw IoError(fmt::format("'{}': unknown model kind {}", path.string(), kind));
    const auto vocab = r.uint<std::uint32_t>();
    const auto embed = r.uint<std::uint32_t>();
    const auto hidden = r.uint<std::uint32_t>();
    const auto nseg = r.uint<std::uint32_t>();
    SegmentTable segs;
    for (std::uint32_t i = 0; i < nseg; ++i) {
        Segment s;
        s.name = r.str();
        s.offset = r.uint<std::uint64_t>();
        s.length = r.uint<std::uint64_t>();
        segs.push_back(std::move(s));
    }
    const auto n = r.uint<std::uint64_t>();
    if (n > (std::uint64_t{1} << 32)) throw IoError(fmt::format("'{}': implausible size", path.string()));
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    if (!r.at_end()) throw IoError(fmt::format("'{}': trailing bytes", path.string()));
    try {
        return Model::from_params(static_cast<ModelKind>(kind), vocab, embed, hidden,
                                  ParamVector(std::move(values), std::move(segs)));
    } catch (const std::exception& e) {
        throw IoError(fmt::format("'{}': {}", path.string(), e.what()));
    }
}

}  // namespace gradrect
