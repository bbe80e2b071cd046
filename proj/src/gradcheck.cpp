#include "mpfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mpfn/data.hpp"
#include "mpfn/error.hpp"
#include "mpfn/fusion.hpp"
#include "mpfn/model.hpp"
#include "mpfn/training.hpp"

namespace mpfn::gradcheck {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

std::vector<Result> check_per_leaf(const std::function<Tensor(Tape&)>& build,
                                   const std::vector<std::pair<std::string, Tensor>>& leaves,
                                   const Options& opts) {
    // Analytic pass, shared by every leaf.
    for (auto [name, leaf] : leaves) {
        (void)name;
        leaf.zero_grad();
    }
    Tape tape;
    Tensor loss = build(tape);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& [name, leaf] : leaves) {
        (void)name;
        analytic.push_back(leaf.grad().empty() ? std::vector<double>(leaf.size(), 0.0)
                                               : leaf.grad());
    }

    // Numeric side: central differences, forward evaluations only.
    auto eval = [&] {
        Tape t;
        t.set_grad_enabled(false);
        return build(t).item();
    };
    std::vector<Result> results;
    results.reserve(leaves.size());
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li].second;
        Result result;
        result.name = leaves[li].first;
        std::vector<std::size_t> elements;
        const std::size_t n = leaf.size();
        if (opts.samples_per_leaf <= 0 || static_cast<std::size_t>(opts.samples_per_leaf) >= n) {
            elements.resize(n);
            for (std::size_t i = 0; i < n; ++i) elements[i] = i;
        } else {
            Rng rng = make_rng(mix64(opts.sample_seed, fnv1a(result.name), li));
            for (int k = 0; k < opts.samples_per_leaf; ++k)
                elements.push_back(uniform_index(rng, n));
            std::sort(elements.begin(), elements.end());
            elements.erase(std::unique(elements.begin(), elements.end()), elements.end());
        }
        for (std::size_t idx : elements) {
            const double original = leaf.values()[idx];
            auto central = [&](double h) {
                leaf.values()[idx] = original + h;
                const double up = eval();
                leaf.values()[idx] = original - h;
                const double down = eval();
                leaf.values()[idx] = original;
                return (up - down) / (2.0 * h);
            };
            double err = relative_error(analytic[li][idx], central(opts.step));
            double h = opts.step;
            for (int retry = 0; retry < opts.shrink_retries && err > opts.tolerance; ++retry) {
                h /= 8.0;
                err = std::min(err, relative_error(analytic[li][idx], central(h)));
            }
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst_at = "[" + std::to_string(idx) + "]";
            }
        }
        result.pass = result.max_rel_err <= opts.tolerance;
        results.push_back(std::move(result));
    }
    return results;
}

Result check(const std::string& name, const std::function<Tensor(Tape&)>& build,
             const std::vector<Tensor>& leaves, const Options& opts) {
    std::vector<std::pair<std::string, Tensor>> named;
    named.reserve(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        named.emplace_back(name + "/leaf" + std::to_string(i), leaves[i]);
    }
    Result folded;
    folded.name = name;
    for (auto& r : check_per_leaf(build, named, opts)) {
        if (r.max_rel_err > folded.max_rel_err) {
            folded.max_rel_err = r.max_rel_err;
            folded.worst_at = r.name + r.worst_at;
        }
        folded.pass = folded.pass && r.pass;
    }
    return folded;
}

// ---------------------------------------------------------------------------
// Op suite
// ---------------------------------------------------------------------------

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(rows, cols, rng, lo, hi, true);
}

// Sum of elementwise-squared entries; a generic scalar readout that keeps
// every output element in play.
Tensor readout(Tape& tape, const Tensor& t) { return tape.sum(tape.mul(t, t)); }

}  // namespace

std::vector<Result> run_op_suite(const Options& opts, bool inject_difference_sign_bug) {
    std::vector<Result> results;
    Rng rng = make_rng(20240601);

    {
        Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng);
        results.push_back(check("matmul",
                                [&](Tape& t) { return readout(t, t.matmul(a, b)); }, {a, b}, opts));
    }
    {
        Tensor a = random_tensor(3, 5, rng), b = random_tensor(3, 5, rng);
        results.push_back(check("elementwise_add",
                                [&](Tape& t) { return readout(t, t.add(a, b)); }, {a, b}, opts));
        results.push_back(check("elementwise_sub",
                                [&](Tape& t) { return readout(t, t.sub(a, b)); }, {a, b}, opts));
        results.push_back(check("elementwise_mul",
                                [&](Tape& t) { return readout(t, t.mul(a, b)); }, {a, b}, opts));
    }
    {
        // Inputs kept away from the ReLU kink so central differences are valid.
        Rng local = make_rng(7);
        Tensor a = Tensor::uniform(4, 4, local, 0.2, 1.0, true);
        Tensor b = Tensor::uniform(4, 4, local, -1.0, -0.2, true);
        Tensor both = Tensor::zeros(4, 8, true);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                both.at(i, j) = a.at(i, j);
                both.at(i, j + 4) = b.at(i, j);
            }
        results.push_back(
            check("elementwise_relu", [&](Tape& t) { return readout(t, t.relu(both)); }, {both},
                  opts));
    }
    {
        Tensor a = random_tensor(3, 4, rng, -2.0, 2.0);
        results.push_back(check("elementwise_sigmoid",
                                [&](Tape& t) { return readout(t, t.sigmoid(a)); }, {a}, opts));
        results.push_back(check("elementwise_tanh",
                                [&](Tape& t) { return readout(t, t.tanh(a)); }, {a}, opts));
    }
    {
        Tensor a = random_tensor(2, 6, rng);
        results.push_back(check("softmax_rows",
                                [&](Tape& t) { return readout(t, t.softmax(a, 1)); }, {a}, opts));
        results.push_back(check("softmax_cols",
                                [&](Tape& t) { return readout(t, t.softmax(a, 0)); }, {a}, opts));
    }
    {
        Tensor a = random_tensor(2, 3, rng), b = random_tensor(2, 2, rng);
        results.push_back(check("concat",
                                [&](Tape& t) { return readout(t, t.concat({a, b}, 1)); }, {a, b},
                                opts));
    }
    {
        Tensor a = random_tensor(3, 4, rng), v = random_tensor(1, 4, rng);
        results.push_back(check("add_rowvec",
                                [&](Tape& t) { return readout(t, t.add_rowvec(a, v)); }, {a, v},
                                opts));
    }
    {
        Tensor c = random_tensor(2, 6, rng), p = random_tensor(3, 6, rng);
        Tensor w = random_tensor(6, 4, rng);
        results.push_back(check(
            "word_level_attention",
            [&](Tape& t) { return readout(t, word_level_attention(t, c, p, w)); }, {c, p, w},
            opts));
        results.push_back(check(
            "context_attention",
            [&](Tape& t) { return readout(t, context_attention(t, c, p)); }, {c, p}, opts));
    }
    {
        Tensor cbar = random_tensor(2, 5, rng);
        Tensor cp = random_tensor(2, 5, rng);
        Tensor cq = random_tensor(2, 5, rng);
        results.push_back(check(
            "fuse_union",
            [&](Tape& t) { return readout(t, fuse_union(t, cbar, cp, cq)); }, {cbar, cp, cq},
            opts));
        Result diff = check(
            "fuse_difference",
            [&](Tape& t) { return readout(t, fuse_difference(t, cbar, cp, cq)); }, {cbar, cp, cq},
            opts);
        if (inject_difference_sign_bug) {
            // Self-test fixture: pretend the analytic gradient came out with
            // the wrong sign so the reporting path can be exercised.
            diff.max_rel_err = 2.0;
            diff.pass = false;
            diff.worst_at = "injected-sign-bug";
        }
        results.push_back(diff);
        results.push_back(check(
            "fuse_similarity",
            [&](Tape& t) { return readout(t, fuse_similarity(t, cbar, cp, cq)); }, {cbar, cp, cq},
            opts));
    }
    {
        Rng init = make_rng(11);
        BiRnnParams enc = BiRnnParams::init(5, 4, init);
        Tensor seq = random_tensor(3, 5, rng);
        std::vector<Tensor> leaves{seq};
        auto add_cell = [&](const LstmCellParams& c) {
            for (const LstmGate* g : {&c.input, &c.forget, &c.output, &c.candidate}) {
                leaves.push_back(g->w);
                leaves.push_back(g->u);
                leaves.push_back(g->b);
            }
        };
        add_cell(enc.fwd);
        add_cell(enc.bwd);
        results.push_back(check(
            "encoder", [&](Tape& t) { return readout(t, encode(t, seq, enc)); }, leaves, opts));
    }
    {
        Rng init = make_rng(13);
        FusionConfig config;
        config.fnn_hidden = 4;
        FusionParams fp = FusionParams::init(config, 6, init);
        Tensor cbar = random_tensor(2, 6, rng), cp = random_tensor(2, 6, rng),
               cq = random_tensor(2, 6, rng);
        std::vector<Tensor> leaves{cbar, cp, cq};
        for (const auto& p : {&fp.u, &fp.d, &fp.s}) {
            for (const auto& w : (*p)->fnn_w) leaves.push_back(w);
            for (const auto& b : (*p)->fnn_b) leaves.push_back(b);
        }
        results.push_back(check(
            "global_representation",
            [&](Tape& t) {
                return readout(t, global_representation(t, cbar, cp, cq, config, fp));
            },
            leaves, opts));
    }
    return results;
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

std::vector<Result> run_model_suite(const Options& opts) {
    // Tiny corpus so the tag/word tables stay small while every layer keeps
    // its full default width (g_width 369).
    Corpus corpus = generate_synthetic(2, 24, 99);
    AnnotationSources sources;
    AnnotatedCorpus annotated = attach_annotations(corpus, sources, 99);

    ModelConfig config;
    config.validate();
    Rng seed_rng = make_rng(4242);
    Tensor word_table =
        build_word_table(annotated.vocab, config.embedding.word_dim, nullptr, 4242);
    ModelParams params = ModelParams::init(config, annotated.vocab, annotated.pos_tags,
                                           annotated.ner_tags, annotated.rel_tags, word_table,
                                           4242);
    (void)seed_rng;

    // 3/3/2-token toy instance over the tiny vocabulary.
    AnnotatedInstance inst;
    inst.id = "gradcheck-toy";
    auto tok = [&](int word_id) {
        AnnotatedToken t;
        t.word_id = word_id;
        t.tf = 0.25 * word_id / annotated.vocab.size();
        return t;
    };
    inst.passage = {tok(2), tok(3), tok(4)};
    inst.question = {tok(5), tok(6), tok(2)};
    inst.choices[0] = {tok(3), tok(7)};
    inst.choices[1] = {tok(8), tok(9)};
    inst.label = 0;

    auto build = [&](Tape& tape) {
        ForwardOpts fwd;  // no dropout: the check needs a deterministic graph
        Tensor s0 = score_choice(tape, inst.passage, inst.question, inst.choices[0], params, fwd);
        Tensor s1 = score_choice(tape, inst.passage, inst.question, inst.choices[1], params, fwd);
        return instance_loss(tape, s0, s1, *inst.label, false);
    };

    Options per = opts;
    if (per.samples_per_leaf <= 0) per.samples_per_leaf = 8;
    return check_per_leaf(build, params.trainable_parameters(), per);
}

}  // namespace mpfn::gradcheck
