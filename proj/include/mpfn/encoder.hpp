#pragma once

#include "mpfn/tensor.hpp"

namespace mpfn {

// One gate of an LSTM cell: y = act(x W + h U + b).
struct LstmGate {
    Tensor w;  // d_in x d_h
    Tensor u;  // d_h x d_h
    Tensor b;  // 1 x d_h
};

struct LstmCellParams {
    int input_dim = 0;
    int hidden_dim = 0;
    LstmGate input, forget, output, candidate;
};

// One-layer bidirectional recurrent encoder parameters.  Both directions have
// identical shapes; weights are Xavier-uniform, biases zero except the forget
// gate which starts at 1.
struct BiRnnParams {
    LstmCellParams fwd, bwd;

    static BiRnnParams init(int input_dim, int hidden_dim, Rng& rng);
    int input_dim() const { return fwd.input_dim; }
    int hidden_dim() const { return fwd.hidden_dim; }
    int output_dim() const { return 2 * fwd.hidden_dim; }
};

// Encodes an n x d_in sequence to n x 2h context rows, row t being
// [forward state at t ; backward state at t], with zero initial states and
// sequences processed at true length.
Tensor encode(Tape& tape, const Tensor& seq, const BiRnnParams& params);

}  // namespace mpfn
