#include "mpfn/fusion.hpp"

#include <algorithm>

#include "mpfn/error.hpp"

namespace mpfn {

void FusionConfig::validate() const {
    if (active_count() == 0) throw ConfigError("fusion: at least one perspective must be active");
    if (fnn_hidden <= 0) throw ConfigError("fusion: fnn_hidden must be positive");
    if (fnn_depth <= 0) throw ConfigError("fusion: fnn_depth must be positive");
}

FusionConfig FusionConfig::from_label(const std::string& label) {
    FusionConfig c;
    c.use_union = c.use_difference = c.use_similarity = false;
    for (char ch : label) {
        switch (std::tolower(static_cast<unsigned char>(ch))) {
            case 'u': c.use_union = true; break;
            case 'd': c.use_difference = true; break;
            case 's': c.use_similarity = true; break;
            default:
                throw UsageError("fusion: unknown perspective '" + std::string(1, ch) +
                                 "' in \"" + label + "\" (expected a subset of {u,d,s})");
        }
    }
    c.validate();
    return c;
}

std::string FusionConfig::label() const {
    std::string s;
    if (use_similarity) s += 'S';
    if (use_difference) s += 'D';
    if (use_union) s += 'U';
    return s;
}

namespace {

PerspectiveParams init_perspective(int input_width, const FusionConfig& config, Rng& rng) {
    PerspectiveParams p;
    int in = input_width;
    for (int layer = 0; layer < config.fnn_depth; ++layer) {
        p.fnn_w.push_back(Tensor::xavier(in, config.fnn_hidden, rng, true));
        // Biases start at 0.1 so the ReLU units begin in their linear region
        // (the similarity inputs are small three-way products, which would
        // otherwise pin the whole layer at the kink).
        p.fnn_b.push_back(Tensor::full(1, config.fnn_hidden, 0.1, true));
        in = config.fnn_hidden;
    }
    if (config.post_aggregation == PostAggregation::birnn) {
        p.agg = BiRnnParams::init(config.fnn_hidden, config.fnn_hidden, rng);
        p.agg_proj_w = Tensor::xavier(2 * config.fnn_hidden, config.fnn_hidden, rng, true);
        p.agg_proj_b = Tensor::zeros(1, config.fnn_hidden, true);
    }
    return p;
}

Tensor apply_perspective(Tape& tape, const PerspectiveParams& p, const Tensor& fused) {
    Tensor h = fused;
    for (std::size_t layer = 0; layer < p.fnn_w.size(); ++layer) {
        h = tape.relu(tape.add_rowvec(tape.matmul(h, p.fnn_w[layer]), p.fnn_b[layer]));
    }
    if (p.agg) {
        h = tape.add_rowvec(tape.matmul(encode(tape, h, *p.agg), p.agg_proj_w), p.agg_proj_b);
    }
    return h;
}

void require_equal_shapes(const char* op, const Tensor& a, const Tensor& b, const Tensor& c) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != c.rows() ||
        a.cols() != c.cols()) {
        throw DimensionError(std::string(op) + ": shapes disagree: " + a.shape_str() + ", " +
                             b.shape_str() + ", " + c.shape_str());
    }
}

}  // namespace

FusionParams FusionParams::init(const FusionConfig& config, int context_width, Rng& rng) {
    config.validate();
    FusionParams p;
    if (config.use_union) p.u = init_perspective(3 * context_width, config, rng);
    if (config.use_difference) p.d = init_perspective(context_width, config, rng);
    if (config.use_similarity) p.s = init_perspective(context_width, config, rng);
    return p;
}

Tensor context_attention(Tape& tape, const Tensor& cbar, const Tensor& other,
                         std::vector<double>* attn_out) {
    if (cbar.cols() != other.cols()) {
        throw DimensionError("context_attention: width mismatch " + cbar.shape_str() + " vs " +
                             other.shape_str());
    }
    Tensor scores = tape.matmul(cbar, tape.transpose(other));
    Tensor beta = tape.softmax(scores, 1);
    if (attn_out) *attn_out = beta.values();
    return tape.matmul(beta, other);
}

Tensor fuse_union(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq) {
    require_equal_shapes("fuse_union", cbar, cp, cq);
    return tape.concat({cbar, cp, cq}, 1);
}

Tensor fuse_difference(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq) {
    require_equal_shapes("fuse_difference", cbar, cp, cq);
    return tape.mul(tape.sub(cbar, cp), tape.sub(cbar, cq));
}

Tensor fuse_similarity(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq) {
    require_equal_shapes("fuse_similarity", cbar, cp, cq);
    return tape.mul(tape.mul(cbar, cp), cq);
}

Tensor global_representation(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq,
                             const FusionConfig& config, const FusionParams& params,
                             FusionTrace* trace) {
    config.validate();
    if (config.use_union != params.u.has_value() ||
        config.use_difference != params.d.has_value() ||
        config.use_similarity != params.s.has_value()) {
        throw ConfigError("global_representation: params do not match active perspectives " +
                          config.label());
    }
    std::vector<Tensor> blocks;
    auto run = [&](const std::optional<PerspectiveParams>& p, Tensor fused,
                   std::optional<FusionTrace::Pair>* slot) {
        Tensor projected = apply_perspective(tape, *p, fused);
        if (trace && slot) {
            FusionTrace::Pair pair;
            pair.raw = fused.values();
            pair.raw_cols = fused.cols();
            pair.projected = projected.values();
            pair.projected_cols = projected.cols();
            *slot = std::move(pair);
        }
        blocks.push_back(projected);
    };
    if (config.use_union)
        run(params.u, fuse_union(tape, cbar, cp, cq), trace ? &trace->u : nullptr);
    if (config.use_difference)
        run(params.d, fuse_difference(tape, cbar, cp, cq), trace ? &trace->d : nullptr);
    if (config.use_similarity)
        run(params.s, fuse_similarity(tape, cbar, cp, cq), trace ? &trace->s : nullptr);
    return blocks.size() == 1 ? blocks[0] : tape.concat(blocks, 1);
}

}  // namespace mpfn
