#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

// 17 significant digits: enough for double round trips to be bit-exact.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

// Strict double parse: the whole field must be consumed.
inline double parse_double(const std::string& s, const std::string& context) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    while (end && *end == ' ') ++end;
    if (end == begin || (end && *end != '\0'))
        throw ParseError(context + ": not a number: '" + s + "'");
    return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw WriteError("cannot open for writing: " + path.string());
    os << content;
    os.flush();
    if (!os) throw WriteError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Splits into lines on '\n'; a trailing newline does not produce an empty
// final line. '\r' survives (inputs are expected to be LF).
inline std::vector<std::string> read_lines(const std::string& text) {
    std::vector<std::string> lines = split(text, '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

inline std::string format_matrix_csv(const Tensor& m) {
    std::string out;
    const std::size_t r = m.rows(), c = m.cols();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            if (j) out += ',';
            out += format_double(m.at(i, j));
        }
        out += '\n';
    }
    return out;
}

inline Tensor parse_matrix_csv(const std::string& text, const std::string& context) {
    std::vector<std::string> lines = read_lines(text);
    if (lines.empty()) throw ParseError(context + ": empty matrix");
    std::vector<double> values;
    std::size_t cols = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::vector<std::string> fields = split(lines[i], ',');
        if (i == 0) {
            cols = fields.size();
        } else if (fields.size() != cols) {
            throw ParseError(context + ": line " + std::to_string(i + 1) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(cols));
        }
        for (const std::string& f : fields)
            values.push_back(
                parse_double(f, context + ": line " + std::to_string(i + 1)));
    }
    return Tensor(Shape{lines.size(), cols}, std::move(values));
}

}  // namespace phenalign
