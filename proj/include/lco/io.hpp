#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lco/config.hpp"
#include "lco/geometry.hpp"

namespace lco {

/// `.emb` dump: magic LCOE, u16 version 1, u8 dtype 1 (f32 LE), u32 dim,
/// u64 count, length-prefixed modality tag, then count x dim floats.
std::string serialize_emb(const EmbeddingSet& set);
EmbeddingSet deserialize_emb(const std::string& bytes);
void write_emb(const std::string& path, const EmbeddingSet& set);
EmbeddingSet read_emb(const std::string& path);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

/// CSV table with a fixed header.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);
    void add(std::vector<std::string> row);
    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    std::string str() const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Output directory of one command run.
class RunOutput {
public:
    explicit RunOutput(std::string dir);
    const std::string& dir() const { return dir_; }
    std::string path(const std::string& name) const;
    void write_text(const std::string& name, const std::string& text) const;
    void write_csv(const std::string& name, const CsvTable& table) const;
    /// Pretty-printed JSON with a trailing newline.
    void write_json(const std::string& name, const nlohmann::ordered_json& j) const;

private:
    std::string dir_;
};

/// Resolved config, seeds and content hashes of input files.
nlohmann::ordered_json provenance(const std::string& command, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                  const std::map<std::string, std::string>& input_files);

}  // namespace lco
