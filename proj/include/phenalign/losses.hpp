#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "phenalign/encoders.hpp"
#include "phenalign/error.hpp"
#include "phenalign/graph.hpp"
#include "phenalign/phenotext.hpp"
#include "phenalign/tensor.hpp"
#include "phenalign/ttca.hpp"

namespace phenalign {

// standard: -log sigmoid(y * (t * cos + b)), the usual sigmoid contrastive
// loss. printed: sigmoid(y * t * cos) with no bias, kept only so the two
// can be compared; minimizing it rewards misalignment.
enum class LossForm { standard, printed };

struct LossConfig {
    std::vector<std::string> attributes{kAttributes.begin(), kAttributes.end()};
    std::set<std::string> sensitive{"sex"};
    double beta = 0.001;
    LossForm form = LossForm::standard;
    bool attn_term = true;          // subtract beta * disentanglement
    bool negative_gradient = true;  // flip the sign of sensitive calt terms
};

inline void validate_loss_config(const LossConfig& cfg) {
    if (cfg.beta < 0.0) throw ConfigError("loss: beta must be >= 0");
    if (cfg.attributes.empty()) throw ConfigError("loss: no attributes");
    for (const std::string& a : cfg.attributes)
        if (!is_attribute(a)) throw ConfigError("loss: unknown attribute " + a);
    for (const std::string& a : cfg.sensitive)
        if (!is_attribute(a))
            throw ConfigError("loss: unknown sensitive attribute " + a);
}

// Pair labels: +1 where two subjects render the same value for the
// attribute, -1 otherwise. Age therefore compares on its rounded form.
inline Tensor calt_labels(const std::vector<PhenotypeRecord>& records,
                          const std::string& attr) {
    if (!is_attribute(attr))
        throw LookupError("pair labels: unknown attribute " + attr);
    const std::size_t b = records.size();
    std::vector<std::string> vals;
    vals.reserve(b);
    for (const PhenotypeRecord& r : records) vals.push_back(rendered_value(r, attr));
    Tensor y(Shape{b, b});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            y.at(i, j) = vals[i] == vals[j] ? 1.0 : -1.0;
    return y;
}

inline Value temperature(Graph& g, const ModelGraph& m) {
    return g.exp(m.p("loss.log_t"));
}

inline Value stack_rows(Graph& g, const std::vector<Value>& rows) {
    return g.concat(rows, 0);
}

// Mean over all B^2 ordered pairs of the sigmoid loss on a cosine matrix.
inline Value sigmoid_pair_loss(Graph& g, Value cosines, const Tensor& labels, Value t,
                               Value b, LossForm form) {
    if (!g.value(cosines).same_shape(labels))
        throw DimensionError("pair loss: cosines " + shape_str(g.value(cosines).shape()) +
                             " vs labels " + shape_str(labels.shape()));
    Value y = g.input(labels);
    if (form == LossForm::printed)
        return g.mean(g.sigmoid(g.mul(y, g.scale_by(cosines, t))));
    Value logits = g.shift_by(g.scale_by(cosines, t), b);
    return g.scalar_mul(g.mean(g.log_sigmoid(g.mul(y, logits))), -1.0);
}

// B x B cosine matrix between global image rows and global text columns.
inline Value global_pair_cosines(Graph& g, const std::vector<Value>& v_g,
                                 const std::vector<Value>& t_g) {
    if (v_g.empty() || v_g.size() != t_g.size())
        throw ContractError("global loss: batch shape mismatch");
    Value v = g.normalize_rows(stack_rows(g, v_g));
    Value t = g.normalize_rows(stack_rows(g, t_g));
    return g.matmul_nt(v, t);
}

inline Tensor matched_pair_labels(std::size_t b) {
    Tensor y(Shape{b, b}, -1.0);
    for (std::size_t i = 0; i < b; ++i) y.at(i, i) = 1.0;
    return y;
}

inline Value global_siglip_loss(Graph& g, const std::vector<Value>& v_g,
                                const std::vector<Value>& t_g, Value t, Value b,
                                LossForm form = LossForm::standard) {
    return sigmoid_pair_loss(g, global_pair_cosines(g, v_g, t_g),
                             matched_pair_labels(v_g.size()), t, b, form);
}

// Cross-modal cosine for one attribute's token: row i, column j holds
// cos(v_ttca for image i attended by text j at token_pos, text j's token).
// Per image, all B text queries run as one attention batch; attention rows
// are independent, so this matches the pair-at-a-time computation exactly.
inline Value calt_pair_cosines(Graph& g, const ModelGraph& m,
                               const std::vector<Value>& v_loc,
                               const std::vector<Value>& t_loc,
                               std::size_t token_pos, std::size_t heads) {
    if (v_loc.empty() || v_loc.size() != t_loc.size())
        throw ContractError("calt loss: batch shape mismatch");
    const std::size_t b = v_loc.size();
    std::vector<Value> qrows;
    qrows.reserve(b);
    for (std::size_t j = 0; j < b; ++j)
        qrows.push_back(g.slice_rows(t_loc[j], token_pos, token_pos + 1));
    Value queries = g.concat(qrows, 0);  // B x E
    std::vector<Value> per_image;
    per_image.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        Value keys = g.concat({v_loc[i], m.p("ttca.null")}, 0);
        AttentionOut att = multihead_attention(g, queries, keys, m.p("ttca.wq"),
                                               m.p("ttca.wk"), m.p("ttca.wv"), heads);
        per_image.push_back(g.cosine_rows(att.context, queries));
    }
    return g.concat(per_image, 0);
}

inline Value calt_loss(Graph& g, const ModelGraph& m, const std::vector<Value>& v_loc,
                       const std::vector<Value>& t_loc, const Tensor& labels,
                       std::size_t token_pos, std::size_t heads, Value t, Value b,
                       LossForm form = LossForm::standard) {
    Value cosines = calt_pair_cosines(g, m, v_loc, t_loc, token_pos, heads);
    return sigmoid_pair_loss(g, cosines, labels, t, b, form);
}

// Euclidean distance between two token rows of a cross-attention map.
inline Value attention_disentangle_loss(Graph& g, Value a_ttca, std::size_t s_disease,
                                        std::size_t s_sensitive) {
    Value d = g.slice_rows(a_ttca, s_disease, s_disease + 1);
    Value s = g.slice_rows(a_ttca, s_sensitive, s_sensitive + 1);
    return g.l2_norm(g.sub(d, s));
}

struct LossValues {
    Value global;
    std::map<std::string, Value> calt;  // raw per-attribute values, unsigned
    Value attn;
    Value total;
    Value temperature;
};

// Builds the whole training objective for one batch on one tape:
// per-subject encodings, the global loss, per-attribute localized losses
// (sensitive ones sign-flipped), and the attention separation term.
inline LossValues batch_loss(Graph& g, const ModelGraph& m, const EncoderConfig& enc,
                             const LossConfig& cfg, const std::vector<Tensor>& conns,
                             const std::vector<PhenotypeRecord>& records) {
    validate_config(enc);
    validate_loss_config(cfg);
    if (conns.empty() || conns.size() != records.size())
        throw ContractError("batch loss: need matching connectivity and records");
    const std::size_t b = conns.size();

    std::vector<Value> v_loc, v_g, t_loc, t_g;
    std::vector<TokenSequence> seqs;
    for (std::size_t i = 0; i < b; ++i) {
        Value nodes = encode_nodes(g, m, g.input(conns[i]));
        auto [q, pooled] = dec_pool(g, m, nodes);
        (void)q;
        auto [vl, al] = local_image_tokens(g, m, pooled, nodes, enc.heads);
        (void)al;
        v_loc.push_back(vl);
        v_g.push_back(pool_global_image(g, pooled));
        seqs.push_back(tokenize_record(records[i]));
        auto [tl, tg] = encode_text(g, m, seqs.back(), enc);
        t_loc.push_back(tl);
        t_g.push_back(tg);
    }

    Value t = temperature(g, m);
    Value bias = m.p("loss.bias");

    LossValues out;
    out.temperature = t;
    out.global = global_siglip_loss(g, v_g, t_g, t, bias, cfg.form);
    Value total = out.global;
    for (const std::string& attr : cfg.attributes) {
        const std::size_t pos = attribute_index(seqs[0], attr);
        Value c = calt_loss(g, m, v_loc, t_loc, calt_labels(records, attr), pos,
                            enc.heads, t, bias, cfg.form);
        out.calt.emplace(attr, c);
        const bool flip = cfg.negative_gradient && cfg.sensitive.count(attr) != 0;
        total = flip ? g.sub(total, c) : g.add(total, c);
    }

    // Disentanglement on each subject's own text-image pass: distance of
    // the diagnosis token's attention row from each sensitive token's row.
    if (!cfg.sensitive.empty()) {
        const std::size_t s_dx = attribute_index(seqs[0], "dx_group");
        Value attn_sum;
        bool first = true;
        for (std::size_t i = 0; i < b; ++i) {
            TtcaOut tt = ttca_forward(g, m, t_loc[i], v_loc[i], enc.heads);
            for (const std::string& attr : cfg.sensitive) {
                Value dist = attention_disentangle_loss(
                    g, tt.a_ttca, s_dx, attribute_index(seqs[i], attr));
                attn_sum = first ? dist : g.add(attn_sum, dist);
                first = false;
            }
        }
        const double denom = static_cast<double>(b * cfg.sensitive.size());
        out.attn = g.scalar_mul(attn_sum, 1.0 / denom);
    } else {
        out.attn = g.input(Tensor::scalar(0.0));
    }
    if (cfg.attn_term)
        total = g.sub(total, g.scalar_mul(out.attn, cfg.beta));
    out.total = total;
    return out;
}

}  // namespace phenalign
