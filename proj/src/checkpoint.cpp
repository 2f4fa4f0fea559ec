#include "pvd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>

namespace pvd {

namespace {

constexpr char kMagic[8] = {'P', 'V', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class U>
void put_le(std::ostream& out, U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(std::istream& in, const std::string& what) {
    unsigned char b[sizeof(U)];
    in.read(reinterpret_cast<char*>(b), sizeof(U));
    require(bool(in), ErrorKind::Parse, what + ": truncated header");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

}  // namespace

nlohmann::json checkpoint_header(const FieldPair& field) {
    nlohmann::json segs = nlohmann::json::array();
    for (const Segment& s : field.params.layout().segments()) {
        segs.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
    }
    return {{"arch", arch_name(field.arch())},
            {"config", to_json(config_of(field.model))},
            {"feature_dim", field.feature_dim()},
            {"param_count", field.params.size()},
            {"seed", field.seed},
            {"segments", segs}};
}

void save_checkpoint(const std::filesystem::path& path, const FieldPair& field) {
    const std::string header = checkpoint_header(field).dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        require(bool(out), ErrorKind::Io, "cannot write " + tmp.string());
        out.write(kMagic, sizeof kMagic);
        put_le<std::uint32_t>(out, kVersion);
        put_le<std::uint64_t>(out, header.size());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (float v : field.params.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
        require(bool(out), ErrorKind::Io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

FieldPair load_checkpoint(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), ErrorKind::Io, "missing checkpoint " + path.string());
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorKind::Io, "cannot open " + path.string());
    const std::string name = path.string();
    char magic[8];
    in.read(magic, sizeof magic);
    require(bool(in) && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorKind::Parse,
            name + ": not a checkpoint file");
    const auto version = get_le<std::uint32_t>(in, name);
    require(version == kVersion, ErrorKind::Parse, name + ": unsupported version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(in, name);
    require(header_len < (1u << 26), ErrorKind::Parse, name + ": header length out of range");
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    require(bool(in), ErrorKind::Parse, name + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, name + ": bad header json: " + e.what());
    }
    std::optional<FieldPair> loaded;
    try {
        const FieldConfig cfg = field_config_from_json(header.at("config"));
        require(header.at("arch").get<std::string>() == arch_name(cfg.arch), ErrorKind::Parse,
                name + ": arch does not match config");
        loaded.emplace(FieldPair{make_model(cfg), ParamStore{}, header.at("seed").get<std::uint64_t>()});
        FieldPair& field = *loaded;
        field.params = ParamStore(layout_of(field.model));
        require(header.at("param_count").get<std::size_t>() == field.params.size(), ErrorKind::Parse,
                name + ": param_count does not match the config");
        require(header.at("feature_dim").get<std::size_t>() == field.feature_dim(), ErrorKind::Parse,
                name + ": feature_dim does not match the config");
        const auto& segs = header.at("segments");
        const auto& expect = field.params.layout().segments();
        require(segs.size() == expect.size(), ErrorKind::Parse, name + ": segment table mismatch");
        for (std::size_t i = 0; i < expect.size(); ++i) {
            require(segs[i].at("name").get<std::string>() == expect[i].name &&
                        segs[i].at("offset").get<std::size_t>() == expect[i].offset &&
                        segs[i].at("length").get<std::size_t>() == expect[i].length,
                    ErrorKind::Parse, name + ": segment " + expect[i].name + " mismatch");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, name + ": header field: " + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Parse) throw;
        fail(ErrorKind::Parse, name + ": " + e.what());
    }
    FieldPair field = std::move(*loaded);
    auto values = field.params.values();
    std::vector<unsigned char> raw(values.size() * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(bool(in), ErrorKind::Parse, name + ": truncated payload");
    in.peek();
    require(in.eof(), ErrorKind::Parse, name + ": trailing bytes after payload");
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t u = std::uint32_t(raw[4 * i]) | std::uint32_t(raw[4 * i + 1]) << 8 |
                          std::uint32_t(raw[4 * i + 2]) << 16 | std::uint32_t(raw[4 * i + 3]) << 24;
        values[i] = std::bit_cast<float>(u);
    }
    return field;
}

}  // namespace pvd
