#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "phenalign/encoders.hpp"
#include "phenalign/error.hpp"
#include "phenalign/graph.hpp"
#include "phenalign/phenotext.hpp"
#include "phenalign/serialize.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

struct TtcaOut {
    Value v_ttca;  // S x E, attention-weighted image content per text token
    Value a_ttca;  // S x (M+1), last column is the null token's share
};

// Text-token cross-attention over image tokens plus a learnable null token.
// Pure attention: no residual, no layer norm, so a_ttca fully explains
// v_ttca and tokens without an image match can park mass on the null slot.
inline TtcaOut ttca_forward(Graph& g, const ModelGraph& m, Value t_loc, Value v_loc,
                            std::size_t heads) {
    Value keys = g.concat({v_loc, m.p("ttca.null")}, 0);
    AttentionOut att = multihead_attention(g, t_loc, keys, m.p("ttca.wq"),
                                           m.p("ttca.wk"), m.p("ttca.wv"), heads);
    return {att.context, att.attention};
}

// Chain token-to-cluster attention with cluster-to-node attention. The null
// column is dropped, not renormalized: a row sums to 1 minus its null mass,
// so irrelevant tokens fade instead of being forced onto nodes.
inline Tensor compose_maps(const Tensor& a_ttca, const Tensor& a_loc) {
    if (a_ttca.ndim() != 2 || a_loc.ndim() != 2)
        throw DimensionError("compose_maps: expected matrices, got " +
                             shape_str(a_ttca.shape()) + " and " +
                             shape_str(a_loc.shape()));
    const std::size_t s = a_ttca.rows(), m = a_loc.rows(), n = a_loc.cols();
    if (a_ttca.cols() != m + 1)
        throw DimensionError("compose_maps: " + shape_str(a_ttca.shape()) +
                             " does not align with " + shape_str(a_loc.shape()) +
                             " plus a null column");
    Tensor out(Shape{s, n});
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            const double w = a_ttca.at(i, k);
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += w * a_loc.at(k, j);
        }
    return out;
}

// Row of the composed map for one phenotype attribute's value token.
inline Tensor activation_map(const Tensor& composed, const TokenSequence& seq,
                             const std::string& attribute) {
    const std::size_t pos = attribute_index(seq, attribute);
    if (composed.ndim() != 2 || pos >= composed.rows())
        throw IndexError("activation_map: token position " + std::to_string(pos) +
                         " outside map " + shape_str(composed.shape()));
    const std::size_t n = composed.cols();
    Tensor row(Shape{n});
    for (std::size_t j = 0; j < n; ++j) row[j] = composed.at(pos, j);
    return row;
}

inline std::string map_to_csv(const Tensor& map) {
    if (map.ndim() != 1)
        throw DimensionError("map export: expected a vector, got " +
                             shape_str(map.shape()));
    std::string out = "node_index,weight\n";
    for (std::size_t j = 0; j < map.size(); ++j)
        out += std::to_string(j) + "," + format_double(map[j]) + "\n";
    return out;
}

inline Tensor parse_map_csv(const std::string& text) {
    std::vector<std::string> lines = read_lines(text);
    if (lines.empty() || trim(lines[0]) != "node_index,weight")
        throw ParseError("map csv: missing node_index,weight header");
    std::vector<double> vals;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::vector<std::string> fields = split(lines[i], ',');
        const std::string ctx = "map csv line " + std::to_string(i + 1);
        if (fields.size() != 2) throw ParseError(ctx + ": expected 2 fields");
        if (parse_double(fields[0], ctx) != static_cast<double>(vals.size()))
            throw ParseError(ctx + ": node_index out of order");
        vals.push_back(parse_double(fields[1], ctx));
    }
    return Tensor(Shape{vals.size()}, vals);
}

namespace detail {

inline std::string svg_color(double u) {
    // Light to dark red ramp.
    const double lo[3] = {255.0, 245.0, 240.0};
    const double hi[3] = {165.0, 15.0, 21.0};
    char buf[32];
    std::snprintf(buf, sizeof buf, "rgb(%d,%d,%d)",
                  static_cast<int>(std::lround(lo[0] + u * (hi[0] - lo[0]))),
                  static_cast<int>(std::lround(lo[1] + u * (hi[1] - lo[1]))),
                  static_cast<int>(std::lround(lo[2] + u * (hi[2] - lo[2]))));
    return buf;
}

}  // namespace detail

// One cell per node, colored on a linear scale between the map's min and
// max; a flat map renders mid-scale. The legend prints both extremes.
inline std::string map_to_svg(const Tensor& map) {
    if (map.ndim() != 1)
        throw DimensionError("map export: expected a vector, got " +
                             shape_str(map.shape()));
    const std::size_t n = map.size();
    const int cell = 20, cell_h = 36, legend_h = 24;
    double lo = map[0], hi = map[0];
    for (std::size_t j = 0; j < n; ++j) {
        lo = std::min(lo, map[j]);
        hi = std::max(hi, map[j]);
    }
    const double span = hi - lo;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(n * cell) + "\" height=\"" +
                      std::to_string(cell_h + legend_h) + "\">\n";
    for (std::size_t j = 0; j < n; ++j) {
        const double u = span > 0.0 ? (map[j] - lo) / span : 0.5;
        svg += "  <rect x=\"" + std::to_string(j * cell) +
               "\" y=\"0\" width=\"" + std::to_string(cell) + "\" height=\"" +
               std::to_string(cell_h) + "\" fill=\"" + detail::svg_color(u) +
               "\"><title>node " + std::to_string(j) + ": " + format_double(map[j]) +
               "</title></rect>\n";
    }
    char legend[96];
    std::snprintf(legend, sizeof legend, "min=%.6g max=%.6g", lo, hi);
    svg += "  <text x=\"2\" y=\"" + std::to_string(cell_h + legend_h - 8) +
           "\" font-family=\"monospace\" font-size=\"12\">" + legend + "</text>\n";
    svg += "</svg>\n";
    return svg;
}

}  // namespace phenalign
