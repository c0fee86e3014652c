#pragma once

// Small IO helpers: CSV emission/parsing with full-precision reals (17
// significant digits round-trips a double exactly), and the flat key-value
// config/manifest format used by the CLI.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shm/matrix.hpp"

namespace shm {

std::string format_real(real v);           // %.17g
real parse_real(const std::string& s);

// One matrix per file: `# key=value ...` header line, then row-major rows.
void write_matrix_csv(const std::string& path, const Matrix& m,
                      const std::map<std::string, std::string>& header);
Matrix read_matrix_csv(const std::string& path, std::map<std::string, std::string>* header = nullptr);

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> cells);
    void save(const std::string& path) const;
    static CsvTable load(const std::string& path);
};

// Flat `key = value` text (one pair per line, # comments). Used for run
// configs and manifests.
class KeyValueFile {
  public:
    static KeyValueFile load(const std::string& path);
    static KeyValueFile parse(const std::string& text);

    void set(const std::string& key, const std::string& value);
    void set_real(const std::string& key, real v);
    void set_int(const std::string& key, std::int64_t v);

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;                       // ConfigError if absent
    std::string get_or(const std::string& key, const std::string& fallback) const;
    real get_real(const std::string& key, real fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;

    std::string serialize() const;  // canonical: sorted keys
    void save(const std::string& path) const;
    std::uint64_t hash() const;     // FNV-1a of the canonical serialization

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    std::map<std::string, std::string> kv_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace shm
