#pragma once

#include <array>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "cfmd/common.hpp"

namespace cfmd {

/// Shortest decimal form that round-trips; identical on every run.
inline std::string format_number(double v) { return fmt::format("{}", v); }

// -- CSV (RFC 4180 quoting) --------------------------------------------------------

inline std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << csv_escape(fields[i]);
    }
    out << '\n';
}

/// Reads one record; returns false at end of input. Quoted fields may span lines.
inline bool read_csv_row(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool quoted = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            fields.push_back(std::move(field));
            return true;
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (!any) return false;
    if (quoted) throw ParseError(0, "unterminated quoted CSV field");
    fields.push_back(std::move(field));
    return true;
}

/// Header-keyed CSV table.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw ValidationError("missing CSV column '" + std::string(name) + "'");
    }
};

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    if (!read_csv_row(in, t.header)) throw ValidationError("empty CSV input");
    std::vector<std::string> row;
    std::size_t line = 1;
    while (read_csv_row(in, row)) {
        ++line;
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != t.header.size()) {
            throw ParseError(line, "expected " + std::to_string(t.header.size()) + " fields, got " +
                                       std::to_string(row.size()));
        }
        t.rows.push_back(row);
    }
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    return read_csv(in);
}

// -- files and hashes -------------------------------------------------------------

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw RuntimeError("SHA-256 digest failed");
    }
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

}  // namespace cfmd
