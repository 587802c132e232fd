#pragma once
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "mobds/errors.hpp"

namespace mobds {

// Shortest representation that round-trips the exact double value.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e) {
        throw DataError("cannot parse '" + s + "' as a number (" + context + ")");
    }
    return v;
}

inline long parse_int(const std::string& s, const std::string& context) {
    long v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e) {
        throw DataError("cannot parse '" + s + "' as an integer (" + context + ")");
    }
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        return -1;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "' is empty (header row required)");
    table.header = split_csv_line(line);
    std::size_t ncol = table.header.size();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != ncol) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(ncol) + " fields, got " + std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
    }
    return table;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot write '" + path + "'");
    }

    void field(const std::string& s) {
        sep();
        bool need_quote = s.find_first_of(",\"\n") != std::string::npos;
        if (need_quote) {
            out_ << '"';
            for (char c : s) {
                if (c == '"') out_ << '"';
                out_ << c;
            }
            out_ << '"';
        } else {
            out_ << s;
        }
    }
    void field(double v) { sep(); out_ << format_double(v); }
    void field(int v) { sep(); out_ << v; }
    void field(long v) { sep(); out_ << v; }
    void field(std::size_t v) { sep(); out_ << v; }
    void endrow() { out_ << '\n'; first_ = true; }

    template <class... Args>
    void row(Args&&... args) {
        (field(std::forward<Args>(args)), ...);
        endrow();
    }

private:
    void sep() {
        if (!first_) out_ << ',';
        first_ = false;
    }
    std::ofstream out_;
    bool first_ = true;
};

}  // namespace mobds
