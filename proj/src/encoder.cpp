#include "mpfn/encoder.hpp"

#include "mpfn/error.hpp"

namespace mpfn {

namespace {

LstmGate init_gate(int input_dim, int hidden_dim, double bias_init, Rng& rng) {
    LstmGate g;
    g.w = Tensor::xavier(input_dim, hidden_dim, rng, true);
    g.u = Tensor::xavier(hidden_dim, hidden_dim, rng, true);
    g.b = Tensor::full(1, hidden_dim, bias_init, true);
    return g;
}

LstmCellParams init_cell(int input_dim, int hidden_dim, Rng& rng) {
    LstmCellParams c;
    c.input_dim = input_dim;
    c.hidden_dim = hidden_dim;
    c.input = init_gate(input_dim, hidden_dim, 0.0, rng);
    c.forget = init_gate(input_dim, hidden_dim, 1.0, rng);
    c.output = init_gate(input_dim, hidden_dim, 0.0, rng);
    c.candidate = init_gate(input_dim, hidden_dim, 0.0, rng);
    return c;
}

struct State {
    Tensor h, c;  // 1 x d_h each
};

State lstm_step(Tape& tape, const LstmCellParams& p, const Tensor& x, const State& prev) {
    auto gate = [&](const LstmGate& g) {
        return tape.add(tape.add(tape.matmul(x, g.w), tape.matmul(prev.h, g.u)), g.b);
    };
    Tensor i = tape.sigmoid(gate(p.input));
    Tensor f = tape.sigmoid(gate(p.forget));
    Tensor o = tape.sigmoid(gate(p.output));
    Tensor g = tape.tanh(gate(p.candidate));
    Tensor c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
    Tensor h = tape.mul(o, tape.tanh(c));
    return {h, c};
}

}  // namespace

BiRnnParams BiRnnParams::init(int input_dim, int hidden_dim, Rng& rng) {
    BiRnnParams p;
    p.fwd = init_cell(input_dim, hidden_dim, rng);
    p.bwd = init_cell(input_dim, hidden_dim, rng);
    return p;
}

Tensor encode(Tape& tape, const Tensor& seq, const BiRnnParams& params) {
    const int n = seq.rows();
    const int h = params.hidden_dim();
    if (seq.cols() != params.input_dim()) {
        throw DimensionError("encode: input width " + std::to_string(seq.cols()) +
                             " != parameter width " + std::to_string(params.input_dim()));
    }
    State fwd{Tensor::zeros(1, h), Tensor::zeros(1, h)};
    State bwd{Tensor::zeros(1, h), Tensor::zeros(1, h)};
    std::vector<Tensor> fwd_h(static_cast<std::size_t>(n)), bwd_h(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        fwd = lstm_step(tape, params.fwd, tape.row(seq, t), fwd);
        fwd_h[static_cast<std::size_t>(t)] = fwd.h;
    }
    for (int t = n - 1; t >= 0; --t) {
        bwd = lstm_step(tape, params.bwd, tape.row(seq, t), bwd);
        bwd_h[static_cast<std::size_t>(t)] = bwd.h;
    }
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        rows.push_back(tape.concat({fwd_h[static_cast<std::size_t>(t)],
                                    bwd_h[static_cast<std::size_t>(t)]}, 1));
    }
    return rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
}

}  // namespace mpfn
