#include "lco/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>

#include "lco/binio.hpp"
#include "lco/error.hpp"
#include "lco/hash.hpp"

namespace lco {

namespace {

constexpr char kEmbMagic[4] = {'L', 'C', 'O', 'E'};
constexpr std::uint16_t kEmbVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

}  // namespace

std::string serialize_emb(const EmbeddingSet& set) {
    require(set.vectors.all_finite(), "emb dump: non-finite value");
    std::string out(kEmbMagic, 4);
    binio::put_u16(out, kEmbVersion);
    binio::put_u8(out, kDtypeF32);
    binio::put_u32(out, static_cast<std::uint32_t>(set.dim()));
    binio::put_u64(out, set.size());
    binio::put_string(out, set.modality);
    for (double v : set.vectors.values()) binio::put_f32(out, static_cast<float>(v));
    return out;
}

EmbeddingSet deserialize_emb(const std::string& bytes) {
    binio::Reader in(bytes);
    if (in.take(4, "magic") != std::string_view(kEmbMagic, 4)) throw FormatError("bad embedding dump magic (expected LCOE)");
    const auto version = in.u16("version");
    if (version != kEmbVersion) throw FormatError("unsupported embedding dump version " + std::to_string(version));
    const auto dtype = in.u8("dtype");
    if (dtype != kDtypeF32) throw FormatError("unsupported embedding dtype code " + std::to_string(dtype));
    const std::uint32_t dim = in.u32("dim");
    const std::uint64_t count = in.u64("count");
    std::string modality = in.string("modality tag");
    const unsigned __int128 need = static_cast<unsigned __int128>(count) * dim * 4;
    if (need > in.remaining())
        throw FormatError("truncated file: payload needs " + std::to_string(static_cast<std::uint64_t>(count) * dim * 4) +
                          " bytes, found " + std::to_string(in.remaining()));
    if (need < in.remaining()) throw FormatError("embedding dump has trailing bytes after the payload");
    std::vector<double> values(static_cast<std::size_t>(count) * dim);
    for (auto& v : values) v = in.f32("payload");
    return EmbeddingSet::from_matrix(std::move(modality), Matrix(count, dim, std::move(values)));
}

void write_emb(const std::string& path, const EmbeddingSet& set) { binio::write_file(path, serialize_emb(set)); }

EmbeddingSet read_emb(const std::string& path) { return deserialize_emb(binio::read_file(path)); }

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add(std::vector<std::string> row) {
    require(row.size() == header_.size(), "csv: row has " + std::to_string(row.size()) + " cells, header has " +
                                              std::to_string(header_.size()));
    rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
    auto line = [](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) s += ',';
            s += cells[i];
        }
        return s + "\n";
    };
    std::string out = line(header_);
    for (const auto& r : rows_) out += line(r);
    return out;
}

RunOutput::RunOutput(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory '" + dir_ + "': " + ec.message());
}

std::string RunOutput::path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

void RunOutput::write_text(const std::string& name, const std::string& text) const { binio::write_file(path(name), text); }

void RunOutput::write_csv(const std::string& name, const CsvTable& table) const { write_text(name, table.str()); }

void RunOutput::write_json(const std::string& name, const nlohmann::ordered_json& j) const {
    write_text(name, j.dump(2) + "\n");
}

nlohmann::ordered_json provenance(const std::string& command, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                  const std::map<std::string, std::string>& input_files) {
    nlohmann::ordered_json j;
    j["command"] = command;
    nlohmann::ordered_json c = nlohmann::ordered_json::object();
    for (const auto& [k, v] : cfg.values()) c[k] = v;
    j["config"] = c;
    j["seeds"] = seeds;
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    for (const auto& [role, file] : input_files) {
        inputs[role] = {{"path", std::filesystem::path(file).filename().string()},
                        {"sha1", content_hash(binio::read_file(file))}};
    }
    j["inputs"] = inputs;
    return j;
}

}  // namespace lco
