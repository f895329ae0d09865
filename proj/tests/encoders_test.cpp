#include "phenalign/encoders.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "phenalign/graph.hpp"
#include "phenalign/phenotext.hpp"
#include "phenalign/rng.hpp"

namespace phenalign {
namespace {

EncoderConfig small_config(std::uint64_t seed = 0) {
    EncoderConfig cfg;
    cfg.n_rois = 6;
    cfg.n_clusters = 3;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.text_layers = 1;
    cfg.seed = seed;
    return cfg;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    return Tensor::randn(Shape{r, c}, rng, scale);
}

// Dot against a fixed random tensor; a scalar probe with dense gradients.
Value probe(Graph& g, Value x, Rng& rng) {
    Tensor w = Tensor::randn(g.value(x).shape(), rng, 1.0);
    return g.sum(g.mul(x, g.input(w)));
}

TEST(EncoderConfigTest, RejectsBadShapes) {
    EncoderConfig cfg = small_config();
    EXPECT_NO_THROW(validate_config(cfg));

    cfg.n_clusters = 6;
    EXPECT_THROW(validate_config(cfg), ConfigError);
    cfg = small_config();
    cfg.embed_dim = 9;
    EXPECT_THROW(validate_config(cfg), ConfigError);
    cfg = small_config();
    cfg.vocab_size = 10;
    EXPECT_THROW(validate_config(cfg), ConfigError);
    cfg = small_config();
    cfg.heads = 0;
    EXPECT_THROW(validate_config(cfg), ConfigError);
    cfg = small_config();
    cfg.n_rois = 0;
    EXPECT_THROW(validate_config(cfg), ConfigError);
}

TEST(InitTest, DeterministicPerSeed) {
    ParameterStore a = init_parameters(small_config(7));
    ParameterStore b = init_parameters(small_config(7));
    ParameterStore c = init_parameters(small_config(8));
    EXPECT_EQ(a.serialize(), b.serialize());
    EXPECT_NE(a.serialize(), c.serialize());
}

TEST(InitTest, LayoutAndSpecialValues) {
    EncoderConfig cfg = small_config();
    ParameterStore store = init_parameters(cfg);
    EXPECT_EQ(store.get("vision.w1").shape(), (Shape{6, 8}));
    EXPECT_EQ(store.get("vision.w2").shape(), (Shape{8, 8}));
    EXPECT_EQ(store.get("dec.centers").shape(), (Shape{3, 8}));
    EXPECT_EQ(store.get("text.tok").shape(), (Shape{132, 8}));
    EXPECT_EQ(store.get("text.pos").shape(), (Shape{kSeqLen, 8}));
    EXPECT_TRUE(store.has("text.l0.wq"));
    EXPECT_FALSE(store.has("text.l1.wq"));
    EXPECT_EQ(store.get("ttca.null").shape(), (Shape{8}));
    EXPECT_DOUBLE_EQ(store.get("loss.log_t").item(), std::log(10.0));
    EXPECT_DOUBLE_EQ(store.get("loss.bias").item(), -10.0);
    for (double v : store.get("vision.b1").values()) EXPECT_EQ(v, 0.0);
    // Two text layers add three matrices.
    cfg.text_layers = 2;
    EXPECT_EQ(init_parameters(cfg).size(), store.size() + 3);
}

TEST(ModelGraphTest, UnknownNameThrows) {
    Graph g;
    ParameterStore store = init_parameters(small_config());
    ModelGraph m(g, store);
    EXPECT_THROW(m.p("vision.w3"), LookupError);
    EXPECT_NO_THROW(m.p("vision.w2"));
}

TEST(NodeEncoderTest, ShapeAndPermutationEquivariance) {
    EncoderConfig cfg = small_config(3);
    ParameterStore store = init_parameters(cfg);
    Rng rng(11);
    Tensor conn = random_matrix(cfg.n_rois, cfg.n_rois, rng);

    Graph g1;
    ModelGraph m1(g1, store, false);
    Tensor nodes = g1.value(encode_nodes(g1, m1, g1.input(conn)));
    ASSERT_EQ(nodes.shape(), (Shape{6, 8}));

    // Reverse the rows of the input: outputs must follow, untouched.
    Tensor flipped(conn.shape());
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) flipped.at(i, j) = conn.at(5 - i, j);
    Graph g2;
    ModelGraph m2(g2, store, false);
    Tensor nodes2 = g2.value(encode_nodes(g2, m2, g2.input(flipped)));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            EXPECT_EQ(nodes2.at(i, j), nodes.at(5 - i, j));
}

TEST(DecPoolTest, AssignmentsAreRowStochastic) {
    EncoderConfig cfg = small_config(5);
    ParameterStore store = init_parameters(cfg);
    Rng rng(21);
    Graph g;
    ModelGraph m(g, store, false);
    Value nodes = g.input(random_matrix(cfg.n_rois, cfg.embed_dim, rng));
    auto [q, pooled] = dec_pool(g, m, nodes);
    const Tensor& qt = g.value(q);
    ASSERT_EQ(qt.shape(), (Shape{6, 3}));
    ASSERT_EQ(g.value(pooled).shape(), (Shape{3, 8}));
    for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            EXPECT_GT(qt.at(i, k), 0.0);
            s += qt.at(i, k);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(DecPoolTest, EquidistantNodeGetsUniformAssignment) {
    // Four centers on the axes, one node at the origin.
    ParameterStore store;
    store.add("dec.centers",
              Tensor::matrix({{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}}));
    Graph g;
    ModelGraph m(g, store, false);
    Value nodes = g.input(Tensor::matrix(1, 2, {0.0, 0.0}));
    auto [q, pooled] = dec_pool(g, m, nodes);
    (void)pooled;
    for (std::size_t k = 0; k < 4; ++k)
        EXPECT_NEAR(g.value(q).at(0, k), 0.25, 1e-15);
}

TEST(DecPoolTest, CoincidentCenterDominates) {
    // Node sits on the first center; the other center is 10 away, so the
    // Student-t weight ratio is 1 : 1/101.
    ParameterStore store;
    store.add("dec.centers", Tensor::matrix({{2.0, 3.0}, {12.0, 3.0}}));
    Graph g;
    ModelGraph m(g, store, false);
    auto [q, pooled] = dec_pool(g, m, g.input(Tensor::matrix(1, 2, {2.0, 3.0})));
    (void)pooled;
    EXPECT_NEAR(g.value(q).at(0, 0), 101.0 / 102.0, 1e-12);
    EXPECT_GT(g.value(q).at(0, 0), 0.99);
}

TEST(DecPoolTest, PooledTokensAreClusterWeightedMeans) {
    // With one node per "cluster mass", column-normalized weights turn the
    // pooled token into a convex combination of node embeddings.
    EncoderConfig cfg = small_config(9);
    ParameterStore store = init_parameters(cfg);
    Rng rng(31);
    Tensor nt = random_matrix(cfg.n_rois, cfg.embed_dim, rng);
    Graph g;
    ModelGraph m(g, store, false);
    auto [q, pooled] = dec_pool(g, m, g.input(nt));
    const Tensor& qt = g.value(q);
    for (std::size_t k = 0; k < 3; ++k) {
        double mass = 0.0;
        for (std::size_t i = 0; i < 6; ++i) mass += qt.at(i, k);
        for (std::size_t jj = 0; jj < 8; ++jj) {
            double expect = 0.0;
            for (std::size_t i = 0; i < 6; ++i)
                expect += qt.at(i, k) / mass * nt.at(i, jj);
            EXPECT_NEAR(g.value(pooled).at(k, jj), expect, 1e-12);
        }
    }
}

TEST(LocalTokensTest, AttentionIsRowStochastic) {
    EncoderConfig cfg = small_config(13);
    ParameterStore store = init_parameters(cfg);
    Rng rng(41);
    Graph g;
    ModelGraph m(g, store, false);
    Value conn = g.input(random_matrix(cfg.n_rois, cfg.n_rois, rng));
    Value nodes = encode_nodes(g, m, conn);
    auto [q, pooled] = dec_pool(g, m, nodes);
    (void)q;
    auto [v_loc, a_loc] = local_image_tokens(g, m, pooled, nodes, cfg.heads);
    ASSERT_EQ(g.value(v_loc).shape(), (Shape{3, 8}));
    const Tensor& at = g.value(a_loc);
    ASSERT_EQ(at.shape(), (Shape{3, 6}));
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            EXPECT_GE(at.at(i, j), 0.0);
            s += at.at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(LocalTokensTest, SingleKeyGetsAllAttention) {
    Rng rng(51);
    Graph g;
    Value q_in = g.input(random_matrix(4, 8, rng));
    Value kv = g.input(random_matrix(1, 8, rng));
    Value wq = g.input(random_matrix(8, 8, rng));
    Value wk = g.input(random_matrix(8, 8, rng));
    Value wv = g.input(random_matrix(8, 8, rng));
    AttentionOut att = multihead_attention(g, q_in, kv, wq, wk, wv, 2);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_DOUBLE_EQ(g.value(att.attention).at(i, 0), 1.0);
}

TEST(LocalTokensTest, HeadCountMustDivide) {
    Rng rng(52);
    Graph g;
    Value x = g.input(random_matrix(2, 6, rng));
    Value w = g.input(random_matrix(6, 6, rng));
    EXPECT_THROW(multihead_attention(g, x, x, w, w, w, 4), ConfigError);
}

TEST(GlobalPoolTest, MatchesColumnMean) {
    Rng rng(61);
    Tensor pooled = Tensor::randn(Shape{3, 8}, rng, 1.0);
    Graph g;
    Value v_g = pool_global_image(g, g.input(pooled));
    ASSERT_EQ(g.value(v_g).shape(), (Shape{8}));
    for (std::size_t j = 0; j < 8; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i) s += pooled.at(i, j);
        EXPECT_NEAR(g.value(v_g)[j], s / 3.0, 1e-15);
    }
}

TEST(TextEncoderTest, ShapesAndPadHandling) {
    EncoderConfig cfg = small_config(17);
    ParameterStore store = init_parameters(cfg);
    TokenSequence seq = tokenize_record(make_record(DxGroup::positive, Sex::male, 12.0));
    Graph g;
    ModelGraph m(g, store, false);
    auto [t_loc, t_g] = encode_text(g, m, seq, cfg);
    const Tensor& tl = g.value(t_loc);
    ASSERT_EQ(tl.shape(), (Shape{kSeqLen, 8}));
    ASSERT_EQ(g.value(t_g).shape(), (Shape{8}));
    // The global embedding averages the 8 non-pad rows only.
    for (std::size_t j = 0; j < 8; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 8; ++i) s += tl.at(i, j);
        EXPECT_NEAR(g.value(t_g)[j], s / 8.0, 1e-12);
    }
}

TEST(TextEncoderTest, RejectsMalformedSequences) {
    EncoderConfig cfg = small_config();
    ParameterStore store = init_parameters(cfg);
    TokenSequence seq = tokenize_record(make_record(DxGroup::control, Sex::female, 30.0));

    TokenSequence short_seq = seq;
    short_seq.token_ids.pop_back();
    TokenSequence interior_pad = seq;
    interior_pad.token_ids[2] = vocabulary().pad_id();
    TokenSequence all_pad = seq;
    for (auto& id : all_pad.token_ids) id = vocabulary().pad_id();

    Graph g;
    ModelGraph m(g, store, false);
    EXPECT_THROW(encode_text(g, m, short_seq, cfg), ContractError);
    EXPECT_THROW(encode_text(g, m, interior_pad, cfg), ContractError);
    EXPECT_THROW(encode_text(g, m, all_pad, cfg), ContractError);
}

TEST(TextEncoderTest, DeterministicAndTextSensitive) {
    EncoderConfig cfg = small_config(19);
    ParameterStore store = init_parameters(cfg);
    TokenSequence a = tokenize_record(make_record(DxGroup::positive, Sex::male, 12.0));
    TokenSequence b = tokenize_record(make_record(DxGroup::control, Sex::male, 12.0));

    TextEncoding e1 = encode_text_infer(store, cfg, a);
    TextEncoding e2 = encode_text_infer(store, cfg, a);
    TextEncoding e3 = encode_text_infer(store, cfg, b);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(e1.t_g[j], e2.t_g[j]);
    double diff = 0.0;
    for (std::size_t j = 0; j < 8; ++j) diff += std::abs(e1.t_g[j] - e3.t_g[j]);
    EXPECT_GT(diff, 1e-6);
}

TEST(SubjectEncoderTest, WrapperIsConsistent) {
    EncoderConfig cfg = small_config(23);
    ParameterStore store = init_parameters(cfg);
    Rng rng(71);
    Tensor conn = random_matrix(cfg.n_rois, cfg.n_rois, rng);
    SubjectEncoding enc = encode_subject(store, cfg, conn);
    SubjectEncoding enc2 = encode_subject(store, cfg, conn);
    ASSERT_EQ(enc.v_loc.shape(), (Shape{3, 8}));
    ASSERT_EQ(enc.a_loc.shape(), (Shape{3, 6}));
    ASSERT_EQ(enc.v_g.shape(), (Shape{8}));
    for (std::size_t i = 0; i < enc.v_loc.size(); ++i)
        EXPECT_EQ(enc.v_loc[i], enc2.v_loc[i]);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) s += enc.a_loc.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(EncoderGradientTest, NodeEncoderPathChecks) {
    EncoderConfig cfg = small_config(29);
    ParameterStore store = init_parameters(cfg);
    Rng rng(81);
    Graph g;
    ModelGraph m(g, store);
    Value conn = g.input(random_matrix(cfg.n_rois, cfg.n_rois, rng, 0.5));
    Value nodes = encode_nodes(g, m, conn);
    Value loss = probe(g, nodes, rng);
    EXPECT_LT(grad_check(g, loss, 1e-5), 1e-5);
}

TEST(EncoderGradientTest, DecPoolPathChecks) {
    EncoderConfig cfg = small_config(31);
    ParameterStore store = init_parameters(cfg);
    Rng rng(83);
    Graph g;
    ModelGraph m(g, store);
    Value nodes = g.input(random_matrix(cfg.n_rois, cfg.embed_dim, rng, 0.5));
    auto [q, pooled] = dec_pool(g, m, nodes);
    Value loss = g.add(probe(g, q, rng), probe(g, pooled, rng));
    EXPECT_LT(grad_check(g, loss, 1e-5), 1e-5);
}

TEST(EncoderGradientTest, LocalTokenPathChecks) {
    EncoderConfig cfg = small_config(37);
    ParameterStore store = init_parameters(cfg);
    Rng rng(87);
    Graph g;
    ModelGraph m(g, store);
    Value conn = g.input(random_matrix(cfg.n_rois, cfg.n_rois, rng, 0.5));
    Value nodes = encode_nodes(g, m, conn);
    auto [q, pooled] = dec_pool(g, m, nodes);
    (void)q;
    auto [v_loc, a_loc] = local_image_tokens(g, m, pooled, nodes, cfg.heads);
    Value loss = g.add(g.add(probe(g, v_loc, rng), probe(g, a_loc, rng)),
                       probe(g, pool_global_image(g, pooled), rng));
    EXPECT_LT(grad_check(g, loss, 1e-5), 1e-5);
}

TEST(EncoderGradientTest, TextPathChecks) {
    EncoderConfig cfg = small_config(41);
    ParameterStore store = init_parameters(cfg);
    Rng rng(91);
    TokenSequence seq = tokenize_record(make_record(DxGroup::positive, Sex::female, 9.4));
    Graph g;
    ModelGraph m(g, store);
    auto [t_loc, t_g] = encode_text(g, m, seq, cfg);
    Value loss = g.add(probe(g, t_loc, rng), probe(g, t_g, rng));
    EXPECT_LT(grad_check(g, loss, 1e-5), 1e-5);
}

}  // namespace
}  // namespace phenalign
