#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpfn/model.hpp"

namespace mpfn {

struct TrainConfig {
    int batch_size = 32;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double emb_dropout = 0.386;
    double rnn_dropout = 0.40;
    int max_epochs = 30;
    // Extra epochs allowed past the best-dev epoch; 0 stops after one epoch.
    int patience = 10;
    std::uint64_t seed = 1;
    // Global-norm gradient clip; 0 disables (the default -- clipping deviates
    // from the plain regime and is opt-in).
    double clip_norm = 0.0;
    int threads = 1;

    void validate() const;
};

struct OptimizerState {
    struct Slot {
        std::vector<double> m, v;
    };
    std::map<std::string, Slot> slots;
    long step = 0;
};

// Negative log probability of the true choice given the two score tensors,
// built on the tape so gradients flow.  With sigmoid scoring this is the mean
// per-choice binary cross-entropy instead of the softmax-pair form.
Tensor instance_loss(Tape& tape, const Tensor& score0, const Tensor& score1, int label,
                     bool sigmoid_scoring = false);

// Mean of per-instance scalar losses, on the tape.
Tensor batch_loss(Tape& tape, const std::vector<Tensor>& losses);

// Bias-corrected update for one parameter tensor at step `step` (1-based).
void adam_update(std::vector<double>& values, const std::vector<double>& grad,
                 OptimizerState::Slot& slot, long step, const TrainConfig& config);

// Bias-corrected Adam over every trainable parameter; frozen tables are
// untouched.  A trainable parameter with no populated gradient is an error.
void adam_step(ModelParams& params, OptimizerState& state, const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double dev_acc = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    ModelParams best;
    std::vector<EpochRecord> trace;
    int best_epoch = 0;
    double best_dev_acc = 0.0;
};

// Seeded-shuffle epochs over params' train split, dev evaluation after each
// epoch, best-dev checkpointing, early stop when patience epochs pass without
// a new best.  Deterministic for a fixed (seed, threads) pair; the default
// single-thread mode is bit-reproducible.
TrainResult train(const AnnotatedCorpus& corpus, ModelParams params, const TrainConfig& config);

// Fraction of correct argmax predictions; instances must be labeled.
double evaluate(const std::vector<AnnotatedInstance>& instances, const ModelParams& params,
                int threads = 1);

// Metric trace as a TSV with an `epoch train_loss train_acc dev_acc seconds`
// header, one line per epoch.
void write_trace(const std::vector<EpochRecord>& trace, const std::string& path);
std::string format_trace(const std::vector<EpochRecord>& trace);

}  // namespace mpfn
