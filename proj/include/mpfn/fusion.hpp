#pragma once

#include <optional>
#include <string>

#include "mpfn/encoder.hpp"
#include "mpfn/tensor.hpp"

namespace mpfn {

enum class PostAggregation { none, birnn };

// Which perspectives feed the global representation, and how the projected
// perspectives are aggregated.  Concatenation order is fixed as (union,
// difference, similarity) for every subset, so checkpoints remain compatible
// across ablations.
struct FusionConfig {
    bool use_union = true;
    bool use_difference = true;
    bool use_similarity = true;
    PostAggregation post_aggregation = PostAggregation::none;
    int fnn_hidden = 123;
    int fnn_depth = 1;

    int active_count() const {
        return (use_union ? 1 : 0) + (use_difference ? 1 : 0) + (use_similarity ? 1 : 0);
    }
    int g_width() const { return fnn_hidden * active_count(); }

    void validate() const;

    // Perspective-set labels: "u", "d", "s", "du", "su", "sd", "sdu"
    // (order-insensitive on input; canonical label on output, e.g. "SDU").
    static FusionConfig from_label(const std::string& label);
    std::string label() const;
};

// FNN (+ optional post-aggregation BiRNN) for one perspective.
struct PerspectiveParams {
    std::vector<Tensor> fnn_w;  // depth layers: in->hidden, then hidden->hidden
    std::vector<Tensor> fnn_b;
    std::optional<BiRnnParams> agg;  // hidden per direction = fnn_hidden
    Tensor agg_proj_w;               // 2*fnn_hidden -> fnn_hidden
    Tensor agg_proj_b;
};

struct FusionParams {
    std::optional<PerspectiveParams> u, d, s;

    // context_width is the encoder output width (2h); the union FNN input is
    // 3*context_width, difference and similarity FNN inputs are context_width.
    static FusionParams init(const FusionConfig& config, int context_width, Rng& rng);
};

// Dot-product attention over `other` contexts for every row of cbar;
// beta_ij = softmax_j(cbar_i . other_j).  attn_out receives the weights.
Tensor context_attention(Tape& tape, const Tensor& cbar, const Tensor& other,
                         std::vector<double>* attn_out = nullptr);

// u_i = [cbar_i ; cp_i ; cq_i]
Tensor fuse_union(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq);
// d_i = (cbar_i - cp_i) (.) (cbar_i - cq_i)
Tensor fuse_difference(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq);
// s_i = cbar_i (.) cp_i (.) cq_i
Tensor fuse_similarity(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq);

// Raw and projected per-perspective matrices, captured for export.
struct FusionTrace {
    struct Pair {
        std::vector<double> raw, projected;
        int raw_cols = 0, projected_cols = 0;
    };
    std::optional<Pair> u, d, s;
};

// Applies each active perspective's ReLU FNN to its fusion output (then, in
// the birnn variant, that perspective's own BiRNN re-projected to fnn_hidden)
// and concatenates the results in fixed (u, d, s) order:
// |c| x (fnn_hidden * active_count).
Tensor global_representation(Tape& tape, const Tensor& cbar, const Tensor& cp, const Tensor& cq,
                             const FusionConfig& config, const FusionParams& params,
                             FusionTrace* trace = nullptr);

}  // namespace mpfn
