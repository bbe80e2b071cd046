#include <doctest.h>

#include <cmath>

#include "mpfn/error.hpp"
#include "mpfn/fusion.hpp"
#include "mpfn/gradcheck.hpp"

#include "oracles.hpp"

using namespace mpfn;

namespace {

struct Triple {
    Tensor cbar, cp, cq;
};

Triple random_triple(Rng& rng, int rows, int cols) {
    return {Tensor::uniform(rows, cols, rng, -1, 1), Tensor::uniform(rows, cols, rng, -1, 1),
            Tensor::uniform(rows, cols, rng, -1, 1)};
}

}  // namespace

TEST_SUITE_BEGIN("fusion");

TEST_CASE("fusion config labels") {
    CHECK(FusionConfig::from_label("sdu").label() == "SDU");
    CHECK(FusionConfig::from_label("du").label() == "DU");
    CHECK(FusionConfig::from_label("U").label() == "U");
    CHECK(FusionConfig::from_label("sd").active_count() == 2);
    CHECK_THROWS_AS(FusionConfig::from_label(""), ConfigError);
    CHECK_THROWS_AS(FusionConfig::from_label("x"), UsageError);
}

TEST_CASE("context attention: single key and uniform scores") {
    Rng rng = make_rng(3);
    Tensor c = Tensor::uniform(3, 6, rng, -1, 1);
    Tensor single = Tensor::uniform(1, 6, rng, -1, 1);
    Tape tape;
    Tensor out = context_attention(tape, c, single);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) CHECK(out.at(i, j) == doctest::Approx(single.at(0, j)));

    // orthogonal query: all scores zero, output is the key mean
    Tensor q = Tensor::zeros(1, 6);
    Tensor keys = Tensor::uniform(4, 6, rng, -1, 1);
    Tensor mean_out = context_attention(tape, q, keys);
    for (int j = 0; j < 6; ++j) {
        double mean = 0.0;
        for (int i = 0; i < 4; ++i) mean += keys.at(i, j);
        CHECK(mean_out.at(0, j) == doctest::Approx(mean / 4.0));
    }
}

TEST_CASE("context attention matches the loop oracle") {
    Rng rng = make_rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor c = Tensor::uniform(2, 246, rng, -1, 1);
        Tensor p = Tensor::uniform(4, 246, rng, -1, 1);
        Tape tape;
        Tensor out = context_attention(tape, c, p);
        const auto expect =
            oracle::context_attention(oracle::from_tensor(c), oracle::from_tensor(p));
        CHECK(oracle::max_abs_diff(expect, out) <= 1e-10);
    }
}

TEST_CASE("fuse_union layout") {
    Rng rng = make_rng(7);
    auto [cbar, cp, cq] = random_triple(rng, 3, 246);
    Tape tape;
    Tensor u = fuse_union(tape, cbar, cp, cq);
    CHECK(u.cols() == 738);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 246; ++j) CHECK(u.at(i, j) == cbar.at(i, j));

    Tensor zeros = Tensor::zeros(3, 246);
    Tensor uz = fuse_union(tape, cbar, zeros, zeros);
    for (int i = 0; i < 3; ++i)
        for (int j = 246; j < 738; ++j) CHECK(uz.at(i, j) == 0.0);
}

TEST_CASE("fuse_difference annihilator and oracle") {
    Rng rng = make_rng(9);
    auto [cbar, cp, cq] = random_triple(rng, 2, 8);
    Tape tape;
    Tensor zero = fuse_difference(tape, cbar, cbar, cq);
    for (double v : zero.values()) CHECK(v == 0.0);

    Tensor zeros = Tensor::zeros(2, 8);
    Tensor sq = fuse_difference(tape, cbar, zeros, zeros);
    for (std::size_t i = 0; i < sq.size(); ++i) {
        CHECK(sq.values()[i] == doctest::Approx(cbar.values()[i] * cbar.values()[i]));
        CHECK(sq.values()[i] >= 0.0);
    }

    Tensor d = fuse_difference(tape, cbar, cp, cq);
    const auto expect = oracle::fuse_difference(oracle::from_tensor(cbar), oracle::from_tensor(cp),
                                                oracle::from_tensor(cq));
    CHECK(oracle::max_abs_diff(expect, d) == 0.0);
}

TEST_CASE("fuse_similarity identities and sign") {
    Rng rng = make_rng(11);
    auto [cbar, cp, cq] = random_triple(rng, 2, 8);
    Tape tape;
    Tensor ones = Tensor::full(2, 8, 1.0);
    Tensor two_way = fuse_similarity(tape, cbar, cp, ones);
    const auto expect_two = oracle::fuse_similarity(oracle::from_tensor(cbar),
                                                    oracle::from_tensor(cp),
                                                    oracle::Mat(2, std::vector<double>(8, 1.0)));
    CHECK(oracle::max_abs_diff(expect_two, two_way) == 0.0);

    Tensor zeros = Tensor::zeros(2, 8);
    Tensor wiped = fuse_similarity(tape, cbar, zeros, cq);
    for (double v : wiped.values()) CHECK(v == 0.0);

    Tensor pos = Tensor::full(1, 1, 2.0), neg1 = Tensor::full(1, 1, -3.0),
           neg2 = Tensor::full(1, 1, -5.0);
    CHECK(fuse_similarity(tape, pos, neg1, neg2).item() == 30.0);
}

TEST_CASE("difference swap symmetry (property)") {
    Rng rng = make_rng(13);
    Tape tape;
    for (int trial = 0; trial < 200; ++trial) {
        auto [cbar, cp, cq] = random_triple(rng, 2, 5);
        Tensor a = fuse_difference(tape, cbar, cp, cq);
        Tensor b = fuse_difference(tape, cbar, cq, cp);
        CHECK(a.values() == b.values());
    }
}

TEST_CASE("similarity permutation invariance (property)") {
    Rng rng = make_rng(15);
    Tape tape;
    for (int trial = 0; trial < 200; ++trial) {
        auto [a, b, c] = random_triple(rng, 2, 5);
        Tensor s0 = fuse_similarity(tape, a, b, c);
        for (const auto& [x, y, z] : {std::tie(a, c, b), std::tie(b, a, c), std::tie(b, c, a),
                                      std::tie(c, a, b), std::tie(c, b, a)}) {
            Tensor s = fuse_similarity(tape, x, y, z);
            for (std::size_t i = 0; i < s.size(); ++i) {
                CHECK(s.values()[i] == doctest::Approx(s0.values()[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("cross-op consistency: d == s(c-p, c-q, ones)") {
    Rng rng = make_rng(17);
    Tape tape;
    for (int trial = 0; trial < 100; ++trial) {
        auto [cbar, cp, cq] = random_triple(rng, 2, 6);
        Tensor d = fuse_difference(tape, cbar, cp, cq);
        Tensor ones = Tensor::full(2, 6, 1.0);
        Tensor s = fuse_similarity(tape, tape.sub(cbar, cp), tape.sub(cbar, cq), ones);
        CHECK(d.values() == s.values());
    }
}

TEST_CASE("global representation widths") {
    Rng rng = make_rng(19);
    const int ctx = 246;
    auto [cbar, cp, cq] = random_triple(rng, 2, ctx);

    FusionConfig all;  // SDU
    FusionParams params = FusionParams::init(all, ctx, rng);
    Tape tape;
    Tensor g = global_representation(tape, cbar, cp, cq, all, params);
    CHECK(g.cols() == 369);
    CHECK(g.rows() == 2);

    FusionConfig just_u = FusionConfig::from_label("u");
    FusionParams up = FusionParams::init(just_u, ctx, rng);
    CHECK(global_representation(tape, cbar, cp, cq, just_u, up).cols() == 123);

    // ReLU clamps negative pre-activations to zero
    for (double v : g.values()) CHECK(v >= 0.0);
}

TEST_CASE("mismatched config and params is a configuration error") {
    Rng rng = make_rng(21);
    auto [cbar, cp, cq] = random_triple(rng, 2, 10);
    FusionConfig du = FusionConfig::from_label("du");
    du.fnn_hidden = 4;
    FusionParams params = FusionParams::init(du, 10, rng);
    FusionConfig sdu = FusionConfig::from_label("sdu");
    sdu.fnn_hidden = 4;
    Tape tape;
    CHECK_THROWS_AS(global_representation(tape, cbar, cp, cq, sdu, params), ConfigError);
}

TEST_CASE("subset output equals the matching blocks of the full output") {
    Rng rng = make_rng(23);
    const int ctx = 10;
    FusionConfig sdu;
    sdu.fnn_hidden = 6;
    FusionParams params = FusionParams::init(sdu, ctx, rng);
    auto [cbar, cp, cq] = random_triple(rng, 3, ctx);
    Tape tape;
    Tensor full = global_representation(tape, cbar, cp, cq, sdu, params);

    struct Case {
        const char* label;
        int offset;  // block offset within the full (u,d,s) layout
    };
    for (auto [label, offset] : {Case{"u", 0}, Case{"d", 1}, Case{"s", 2}}) {
        FusionConfig sub = FusionConfig::from_label(label);
        sub.fnn_hidden = 6;
        FusionParams sub_params;
        sub_params.u = sub.use_union ? params.u : std::nullopt;
        sub_params.d = sub.use_difference ? params.d : std::nullopt;
        sub_params.s = sub.use_similarity ? params.s : std::nullopt;
        Tensor g = global_representation(tape, cbar, cp, cq, sub, sub_params);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 6; ++j) CHECK(g.at(i, j) == full.at(i, offset * 6 + j));
    }

    // two-perspective subset keeps the fixed (u,d,s) block order
    FusionConfig su = FusionConfig::from_label("su");
    su.fnn_hidden = 6;
    FusionParams su_params;
    su_params.u = params.u;
    su_params.s = params.s;
    Tensor g = global_representation(tape, cbar, cp, cq, su, su_params);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) {
            CHECK(g.at(i, j) == full.at(i, j));            // u block first
            CHECK(g.at(i, 6 + j) == full.at(i, 12 + j));   // then s block
        }
}

TEST_CASE("birnn post-aggregation keeps widths and differs from plain") {
    Rng rng = make_rng(25);
    const int ctx = 8;
    FusionConfig plain;
    plain.fnn_hidden = 5;
    FusionConfig agg = plain;
    agg.post_aggregation = PostAggregation::birnn;
    FusionParams pp = FusionParams::init(plain, ctx, rng);
    FusionParams ap = FusionParams::init(agg, ctx, rng);
    auto [cbar, cp, cq] = random_triple(rng, 3, ctx);
    Tape tape;
    Tensor g_plain = global_representation(tape, cbar, cp, cq, plain, pp);
    Tensor g_agg = global_representation(tape, cbar, cp, cq, agg, ap);
    CHECK(g_plain.cols() == g_agg.cols());
    CHECK(g_plain.rows() == g_agg.rows());
    bool differs = false;
    for (std::size_t i = 0; i < g_plain.size(); ++i) {
        differs = differs || g_plain.values()[i] != g_agg.values()[i];
    }
    CHECK(differs);
}

TEST_CASE("fusion FNN gradients pass finite differences") {
    Rng rng = make_rng(27);
    FusionConfig config;
    config.fnn_hidden = 4;
    FusionParams params = FusionParams::init(config, 6, rng);
    Tensor cbar = Tensor::uniform(2, 6, rng, -1, 1, true);
    Tensor cp = Tensor::uniform(2, 6, rng, -1, 1, true);
    Tensor cq = Tensor::uniform(2, 6, rng, -1, 1, true);
    std::vector<Tensor> leaves{cbar, cp, cq,
                               params.u->fnn_w[0], params.u->fnn_b[0],
                               params.d->fnn_w[0], params.d->fnn_b[0],
                               params.s->fnn_w[0], params.s->fnn_b[0]};
    auto result = gradcheck::check(
        "global_representation",
        [&](Tape& t) {
            Tensor g = global_representation(t, cbar, cp, cq, config, params);
            return t.sum(t.mul(g, g));
        },
        leaves);
    INFO("worst ", result.max_rel_err, " at ", result.worst_at);
    CHECK(result.pass);
}

TEST_SUITE_END();
