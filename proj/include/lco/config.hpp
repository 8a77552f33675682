#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lco {

enum class KeyType { count, real, flag, text, count_list, text_list };

struct ConfigKey {
    std::string name;
    KeyType type;
    std::string default_value;
    std::string doc;
};

/// Documented `key = value` settings. Unknown keys and values that do not
/// parse as the key's type are rejected with a ValidationError naming the key.
class RunConfig {
public:
    static const std::vector<ConfigKey>& schema();

    /// All keys at their defaults.
    RunConfig();
    /// Defaults overlaid with the file's settings. Throws IoError if unreadable.
    static RunConfig from_file(const std::string& path);

    /// Applies `key = value` lines; `#` starts a comment.
    void merge_text(const std::string& text, const std::string& source = "<config>");
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    double real(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::size_t> counts(const std::string& key) const;
    std::vector<std::string> texts(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    /// Every key, sorted, one `key = value` per line.
    std::string resolved() const;

private:
    std::map<std::string, std::string> values_;
};

/// Human-readable key reference, one block per key.
std::string config_reference();

}  // namespace lco
