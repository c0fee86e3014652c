#include "shm/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace shm {

std::string format_real(real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
    return buf;
}

real parse_real(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw IoError("not a real number: '" + s + "'");
    return static_cast<real>(v);
}

void write_matrix_csv(const std::string& path, const Matrix& m,
                      const std::map<std::string, std::string>& header) {
    std::ostringstream out;
    out << "#";
    for (const auto& [k, v] : header) out << " " << k << "=" << v;
    out << " rows=" << m.rows() << " cols=" << m.cols() << "\n";
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            if (j) out << ",";
            out << format_real(m(i, j));
        }
        out << "\n";
    }
    write_text_file(path, out.str());
}

Matrix read_matrix_csv(const std::string& path, std::map<std::string, std::string>* header) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line.empty() || line[0] != '#')
        throw IoError("matrix csv missing header: " + path);
    std::map<std::string, std::string> meta;
    {
        std::istringstream hs(line.substr(1));
        std::string tok;
        while (hs >> tok) {
            auto eq = tok.find('=');
            if (eq != std::string::npos) meta[tok.substr(0, eq)] = tok.substr(eq + 1);
        }
    }
    int rows = std::stoi(meta.at("rows"));
    int cols = std::stoi(meta.at("cols"));
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw IoError("matrix csv truncated: " + path);
        std::istringstream ls(line);
        std::string cell;
        for (int j = 0; j < cols; ++j) {
            if (!std::getline(ls, cell, ',')) throw IoError("matrix csv short row: " + path);
            m(i, j) = parse_real(cell);
        }
    }
    if (header) *header = std::move(meta);
    return m;
}

void CsvTable::add_row(std::vector<std::string> cells) {
    if (cells.size() != columns.size()) throw IoError("csv row arity mismatch");
    rows.push_back(std::move(cells));
}

void CsvTable::save(const std::string& path) const {
    std::ostringstream out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out << ",";
        out << columns[i];
    }
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << row[i];
        }
        out << "\n";
    }
    write_text_file(path, out.str());
}

CsvTable CsvTable::load(const std::string& path) {
    std::istringstream in(read_text_file(path));
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (first) {
            t.columns = std::move(cells);
            first = false;
        } else {
            t.add_row(std::move(cells));
        }
    }
    return t;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::string& path) { return parse(read_text_file(path)); }

KeyValueFile KeyValueFile::parse(const std::string& text) {
    KeyValueFile f;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value': " + s);
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
        f.kv_[key] = value;
    }
    return f;
}

void KeyValueFile::set(const std::string& key, const std::string& value) { kv_[key] = value; }
void KeyValueFile::set_real(const std::string& key, real v) { kv_[key] = format_real(v); }
void KeyValueFile::set_int(const std::string& key, std::int64_t v) { kv_[key] = std::to_string(v); }

bool KeyValueFile::has(const std::string& key) const { return kv_.count(key) > 0; }

const std::string& KeyValueFile::get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

real KeyValueFile::get_real(const std::string& key, real fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : parse_real(it->second);
}

std::int64_t KeyValueFile::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return std::stoll(it->second);
}

std::string KeyValueFile::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
}

void KeyValueFile::save(const std::string& path) const { write_text_file(path, serialize()); }

std::uint64_t KeyValueFile::hash() const {
    std::string s = serialize();
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace shm
