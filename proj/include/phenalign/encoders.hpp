#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/graph.hpp"
#include "phenalign/params.hpp"
#include "phenalign/phenotext.hpp"
#include "phenalign/rng.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

struct EncoderConfig {
    std::size_t n_rois = 32;
    std::size_t n_clusters = 8;
    std::size_t embed_dim = 32;  // E = N unless overridden
    std::size_t vocab_size = 132;
    std::size_t text_layers = 2;
    std::size_t heads = 4;
    std::uint64_t seed = 0;
};

inline void validate_config(const EncoderConfig& cfg) {
    if (cfg.n_rois == 0 || cfg.n_clusters == 0 || cfg.embed_dim == 0 ||
        cfg.heads == 0 || cfg.text_layers == 0 || cfg.vocab_size == 0)
        throw ConfigError("encoder: all sizes must be positive");
    if (cfg.n_clusters >= cfg.n_rois)
        throw ConfigError("encoder: n_clusters must be < n_rois");
    if (cfg.embed_dim % cfg.heads != 0)
        throw ConfigError("encoder: embed_dim must be divisible by heads");
    if (cfg.vocab_size < vocabulary().size())
        throw ConfigError("encoder: vocab_size smaller than the fixed vocabulary");
}

// Fresh parameters for the whole model. Creation order is fixed so a given
// seed always produces the same values.
inline ParameterStore init_parameters(const EncoderConfig& cfg) {
    validate_config(cfg);
    Rng rng(cfg.seed);
    const std::size_t n = cfg.n_rois, e = cfg.embed_dim;
    const double ws = 1.0 / std::sqrt(static_cast<double>(e));
    ParameterStore store;
    store.add("vision.w1", Tensor::randn(Shape{n, e}, rng, ws));
    store.add("vision.b1", Tensor(Shape{e}));
    store.add("vision.w2", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("vision.b2", Tensor(Shape{e}));
    store.add("dec.centers", Tensor::randn(Shape{cfg.n_clusters, e}, rng, 1.0));
    store.add("img.wq", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("img.wk", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("img.wv", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("text.tok", Tensor::randn(Shape{cfg.vocab_size, e}, rng, 0.5));
    store.add("text.pos", Tensor::randn(Shape{kSeqLen, e}, rng, 0.5));
    for (std::size_t l = 0; l < cfg.text_layers; ++l) {
        const std::string p = "text.l" + std::to_string(l) + ".";
        store.add(p + "wq", Tensor::randn(Shape{e, e}, rng, ws));
        store.add(p + "wk", Tensor::randn(Shape{e, e}, rng, ws));
        store.add(p + "wv", Tensor::randn(Shape{e, e}, rng, ws));
    }
    store.add("ttca.wq", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("ttca.wk", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("ttca.wv", Tensor::randn(Shape{e, e}, rng, ws));
    store.add("ttca.null", Tensor::randn(Shape{e}, rng, 1.0));
    store.add("loss.log_t", Tensor::scalar(std::log(10.0)));
    store.add("loss.bias", Tensor::scalar(-10.0));
    return store;
}

// Binds a store onto a tape: as trainable parameters (training) or as
// plain inputs (inference, no gradient bookkeeping).
class ModelGraph {
public:
    ModelGraph(Graph& g, const ParameterStore& store, bool trainable = true) {
        for (const auto& [name, t] : store)
            vals_.emplace(name, trainable ? g.param(name, t) : g.input(t));
    }

    Value p(const std::string& name) const {
        auto it = vals_.find(name);
        if (it == vals_.end()) throw LookupError("model graph: unknown " + name);
        return it->second;
    }

private:
    std::map<std::string, Value> vals_;
};

struct AttentionOut {
    Value context;    // S_q x E
    Value attention;  // S_q x S_k, head-averaged, row-stochastic
};

// Multi-head scaled dot-product attention; heads are column slices of the
// E x E projections and outputs re-concatenate to E, so no output matrix
// is needed.
inline AttentionOut multihead_attention(Graph& g, Value q_in, Value kv_in, Value wq,
                                        Value wk, Value wv, std::size_t heads) {
    const std::size_t e = g.value(wq).rows();
    if (heads == 0 || e % heads != 0)
        throw ConfigError("attention: head count must divide embed dim");
    const std::size_t dh = e / heads;
    Value q = g.matmul(q_in, wq);
    Value k = g.matmul(kv_in, wk);
    Value v = g.matmul(kv_in, wv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Value> contexts;
    Value att_sum;
    for (std::size_t h = 0; h < heads; ++h) {
        Value qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        Value kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        Value vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        Value att = g.softmax_rows(g.scalar_mul(g.matmul_nt(qh, kh), scale));
        contexts.push_back(g.matmul(att, vh));
        att_sum = h == 0 ? att : g.add(att_sum, att);
    }
    AttentionOut out;
    out.context = heads == 1 ? contexts[0] : g.concat(contexts, 1);
    out.attention = g.scalar_mul(att_sum, 1.0 / static_cast<double>(heads));
    return out;
}

// Shared row-wise two-layer MLP over connectivity profiles, layer-normed.
// Sharing the weights across rows keeps node identity intact.
inline Value encode_nodes(Graph& g, const ModelGraph& m, Value conn) {
    Value h = g.tanh(g.cols_add(g.matmul(conn, m.p("vision.w1")), m.p("vision.b1")));
    return g.layer_norm_rows(
        g.cols_add(g.matmul(h, m.p("vision.w2")), m.p("vision.b2")));
}

// Student-t soft assignment against learnable centers plus cluster-weighted
// pooling. Returns (Q: N x M row-stochastic, pooled: M x E).
inline std::pair<Value, Value> dec_pool(Graph& g, const ModelGraph& m, Value nodes) {
    Value centers = m.p("dec.centers");
    const std::size_t n = g.value(nodes).rows();
    // Squared distances via the expansion |x|^2 - 2 x.c + |c|^2.
    Value cross = g.matmul_nt(nodes, centers);
    Value n2 = g.row_sum(g.mul(nodes, nodes));
    Value c2 = g.row_sum(g.mul(centers, centers));
    Value d2 = g.cols_add(g.rows_add(g.scalar_mul(cross, -2.0), n2), c2);
    Value q_un = g.reciprocal(g.scalar_add(d2, 1.0));
    Value q = g.rows_div(q_un, g.row_sum(q_un));
    // Column-normalize Q so each cluster's weights over nodes sum to 1.
    Value colsum = g.scalar_mul(g.col_mean(q), static_cast<double>(n));
    Value w = g.cols_mul(q, g.reciprocal(colsum));
    Value pooled = g.matmul(g.transpose(w), nodes);
    return {q, pooled};
}

// Cross-attention of cluster tokens over node embeddings, with residual
// and layer norm. Returns (v_loc: M x E, a_loc: M x N).
inline std::pair<Value, Value> local_image_tokens(Graph& g, const ModelGraph& m,
                                                  Value pooled, Value nodes,
                                                  std::size_t heads) {
    AttentionOut att = multihead_attention(g, pooled, nodes, m.p("img.wq"),
                                           m.p("img.wk"), m.p("img.wv"), heads);
    Value v_loc = g.layer_norm_rows(g.add(pooled, att.context));
    return {v_loc, att.attention};
}

inline Value pool_global_image(Graph& g, Value pooled) { return g.col_mean(pooled); }

// Token + positional embeddings through L self-attention blocks (attention,
// residual, layer norm). The global token averages non-pad positions only.
inline std::pair<Value, Value> encode_text(Graph& g, const ModelGraph& m,
                                           const TokenSequence& seq,
                                           const EncoderConfig& cfg) {
    if (seq.token_ids.size() != kSeqLen)
        throw ContractError("encode_text: sequence length " +
                            std::to_string(seq.token_ids.size()) + ", expected " +
                            std::to_string(kSeqLen));
    const std::size_t pad = vocabulary().pad_id();
    std::size_t n_real = 0;
    while (n_real < kSeqLen && seq.token_ids[n_real] != pad) ++n_real;
    for (std::size_t i = n_real; i < kSeqLen; ++i)
        if (seq.token_ids[i] != pad)
            throw ContractError("encode_text: non-trailing pad token");
    if (n_real == 0) throw ContractError("encode_text: all-pad sequence");

    Value x = g.add(g.embed(m.p("text.tok"), seq.token_ids), m.p("text.pos"));
    for (std::size_t l = 0; l < cfg.text_layers; ++l) {
        const std::string p = "text.l" + std::to_string(l) + ".";
        AttentionOut att = multihead_attention(g, x, x, m.p(p + "wq"), m.p(p + "wk"),
                                               m.p(p + "wv"), cfg.heads);
        x = g.layer_norm_rows(g.add(x, att.context));
    }
    Value t_g =
        n_real == kSeqLen ? g.col_mean(x) : g.col_mean(g.slice_rows(x, 0, n_real));
    return {x, t_g};
}

// Replaces the cluster centers with M distinct node embeddings drawn from
// the given connectivity matrices (meant to be the first training batch),
// so clustering starts on the data manifold.
inline void seed_dec_centers(ParameterStore& store, const EncoderConfig& cfg,
                             const std::vector<Tensor>& conns, Rng& rng) {
    if (conns.empty()) throw ContractError("center seeding: empty batch");
    std::vector<Tensor> node_rows;
    for (const Tensor& conn : conns) {
        Graph g;
        ModelGraph m(g, store, false);
        Tensor nodes = g.value(encode_nodes(g, m, g.input(conn)));
        for (std::size_t i = 0; i < nodes.rows(); ++i) {
            Tensor row(Shape{nodes.cols()});
            for (std::size_t j = 0; j < nodes.cols(); ++j) row[j] = nodes.at(i, j);
            node_rows.push_back(row);
        }
    }
    if (node_rows.size() < cfg.n_clusters)
        throw ContractError("center seeding: fewer node embeddings than clusters");
    std::vector<std::size_t> order(node_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    Tensor& centers = store.get("dec.centers");
    for (std::size_t k = 0; k < cfg.n_clusters; ++k)
        for (std::size_t j = 0; j < cfg.embed_dim; ++j)
            centers.at(k, j) = node_rows[order[k]][j];
}

// Plain-tensor inference wrappers: bind parameters as constants, run the
// tape once, copy the results out.

struct SubjectEncoding {
    Tensor v_loc;  // M x E
    Tensor a_loc;  // M x N
    Tensor v_g;    // E
};

struct TextEncoding {
    Tensor t_loc;  // S x E
    Tensor t_g;    // E
};

inline SubjectEncoding encode_subject(const ParameterStore& store,
                                      const EncoderConfig& cfg, const Tensor& conn) {
    Graph g;
    ModelGraph m(g, store, false);
    Value nodes = encode_nodes(g, m, g.input(conn));
    auto [q, pooled] = dec_pool(g, m, nodes);
    (void)q;
    auto [v_loc, a_loc] = local_image_tokens(g, m, pooled, nodes, cfg.heads);
    Value v_g = pool_global_image(g, pooled);
    return {g.value(v_loc), g.value(a_loc), g.value(v_g)};
}

inline TextEncoding encode_text_infer(const ParameterStore& store,
                                      const EncoderConfig& cfg,
                                      const TokenSequence& seq) {
    Graph g;
    ModelGraph m(g, store, false);
    auto [t_loc, t_g] = encode_text(g, m, seq, cfg);
    return {g.value(t_loc), g.value(t_g)};
}

}  // namespace phenalign
