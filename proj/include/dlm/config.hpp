#pragma once

#include <map>
#include <string>
#include <vector>

namespace dlm {

// Layered key-value configuration: built-in defaults, then a config file,
// then CLI flags, with per-key provenance. Keys use section prefixes
// ("train.lr_peak"). File syntax is one "key = value" per line with '#'
// comments.
class ResolvedConfig {
  public:
    enum class Source { builtin, file, cli };

    void set_default(const std::string & key, const std::string & value);
    void load_file(const std::string & path);  // unknown keys are config errors
    void set_cli(const std::string & key, const std::string & value);

    bool has(const std::string & key) const;

    std::string str(const std::string & key) const;
    int64_t     integer(const std::string & key) const;
    double      real(const std::string & key) const;
    bool        boolean(const std::string & key) const;

    Source      provenance(const std::string & key) const;
    const char * provenance_name(const std::string & key) const;

    // sorted "key = value  # source" lines
    std::string snapshot() const;

  private:
    struct Entry {
        std::string value;
        Source      source = Source::builtin;
    };

    const Entry & entry(const std::string & key) const;

    std::map<std::string, Entry> kv_;
};

}  // namespace dlm
