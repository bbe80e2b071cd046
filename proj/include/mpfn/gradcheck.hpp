#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mpfn/tensor.hpp"

namespace mpfn::gradcheck {

struct Result {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
    std::string worst_at;  // "leaf[i,j]" location of the worst error
};

struct Options {
    double step = 1e-5;       // central-difference half step
    double tolerance = 1e-4;  // relative error bound
    // 0 = check every element; otherwise sample up to this many elements per
    // leaf (deterministic, seeded by the leaf index).
    int samples_per_leaf = 0;
    std::uint64_t sample_seed = 17;
    // Elements over tolerance are re-measured at step/8 and step/64 and the
    // smallest error wins.  A wrong backward stays wrong at every step; a
    // ReLU kink inside the central-difference stencil does not.
    int shrink_retries = 2;
};

// Relative error between analytic and numeric derivatives; symmetric, with an
// absolute floor so that near-zero gradients compare absolutely.
double relative_error(double analytic, double numeric);

// Checks d(loss)/d(leaf) for every listed leaf against central finite
// differences.  `build` must construct the loss from the leaves on the given
// tape; it is re-run for every perturbed evaluation, so it must be a pure
// function of the leaf values.  The numeric side uses forward passes only and
// is therefore independent of every backward implementation it checks.
Result check(const std::string& name,
             const std::function<Tensor(Tape&)>& build,
             const std::vector<Tensor>& leaves,
             const Options& opts = {});

// Same check with one result per named leaf, sharing a single analytic pass.
std::vector<Result> check_per_leaf(const std::function<Tensor(Tape&)>& build,
                                   const std::vector<std::pair<std::string, Tensor>>& leaves,
                                   const Options& opts = {});

// Per-op finite-difference suite over the numeric core and the network
// building blocks, on random small shapes.  `inject_difference_sign_bug`
// flips the sign of the analytic gradient in the difference-fusion check; it
// exists so the reporting path itself can be exercised by tests.
std::vector<Result> run_op_suite(const Options& opts, bool inject_difference_sign_bug = false);

// Full-model check: every named trainable parameter of an SDU model at full
// widths (g_width 369) on a 3/3/2-token toy instance, sampled elements per
// parameter.
std::vector<Result> run_model_suite(const Options& opts);

}  // namespace mpfn::gradcheck
