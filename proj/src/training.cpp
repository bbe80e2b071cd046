#include "mpfn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mpfn/error.hpp"
#include "mpfn/parallel.hpp"

namespace mpfn {

void TrainConfig::validate() const {
    if (batch_size <= 0) throw UsageError("train: batch_size must be positive");
    if (lr <= 0.0) throw UsageError("train: learning rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw UsageError("train: Adam betas must be in [0,1)");
    }
    if (emb_dropout < 0.0 || emb_dropout >= 1.0 || rnn_dropout < 0.0 || rnn_dropout >= 1.0) {
        throw UsageError("train: dropout rates must be in [0,1)");
    }
    if (max_epochs <= 0) throw UsageError("train: max_epochs must be positive");
    if (patience < 0) throw UsageError("train: patience must be non-negative");
    if (threads < 1) throw UsageError("train: threads must be >= 1");
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

Tensor instance_loss(Tape& tape, const Tensor& score0, const Tensor& score1, int label,
                     bool sigmoid_scoring) {
    if (label != 0 && label != 1) throw UsageError("loss: label must be 0 or 1");
    if (!score0.is_scalar() || !score1.is_scalar()) {
        throw UsageError("loss: choice scores must be scalar");
    }
    if (sigmoid_scoring) {
        // Mean per-choice BCE; log(1-sigmoid(x)) written as log(sigmoid(-x)).
        const Tensor& st = label == 0 ? score0 : score1;
        const Tensor& sf = label == 0 ? score1 : score0;
        Tensor pos = tape.log(tape.sigmoid(st));
        Tensor neg = tape.log(tape.sigmoid(tape.neg(sf)));
        return tape.scale(tape.neg(tape.add(pos, neg)), 0.5);
    }
    Tensor pair = tape.concat({score0, score1}, 1);  // 1x2
    Tensor probs = tape.softmax(pair, 1);
    return tape.neg(tape.log(tape.pick(probs, 0, label)));
}

Tensor batch_loss(Tape& tape, const std::vector<Tensor>& losses) {
    if (losses.empty()) throw UsageError("loss: empty batch");
    Tensor total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);
    return tape.scale(total, 1.0 / static_cast<double>(losses.size()));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void adam_update(std::vector<double>& values, const std::vector<double>& grad,
                 OptimizerState::Slot& slot, long step, const TrainConfig& config) {
    if (slot.m.empty()) {
        slot.m.assign(values.size(), 0.0);
        slot.v.assign(values.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i];
        slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * g;
        slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = slot.m[i] / bc1;
        const double v_hat = slot.v[i] / bc2;
        values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
}

void adam_step(ModelParams& params, OptimizerState& state, const TrainConfig& config) {
    state.step += 1;
    for (auto& [name, tensor] : params.trainable_parameters()) {
        const auto& grad = tensor.grad();
        if (grad.empty()) {
            throw Error("adam_step: missing gradient for trainable parameter \"" + name + "\"");
        }
        adam_update(tensor.values(), grad, state.slots[name], state.step, config);
        apply_precision(tensor.values(), params.config.precision);
    }
}

namespace {

// Scales all gradients so their global norm does not exceed max_norm.
void clip_gradients(ModelParams& params, double max_norm) {
    double sq = 0.0;
    auto trainable = params.trainable_parameters();
    for (auto& [name, t] : trainable) {
        (void)name;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double factor = max_norm / norm;
    for (auto& [name, t] : trainable) {
        (void)name;
        for (double& g : t.grad_buffer()) g *= factor;
    }
}

// Forward + backward for one instance; gradients accumulate into `params`'
// tensors.  Returns the unscaled loss value.
double run_instance(const ModelParams& params, const AnnotatedInstance& inst,
                    const TrainConfig& config, int epoch, int dataset_index, int batch_size) {
    Rng rng = make_rng(mix64(config.seed, 0xd0d0ULL, static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(dataset_index)));
    Tape tape(params.config.precision);
    ForwardOpts opts;
    opts.train_mode = true;
    opts.emb_dropout = config.emb_dropout;
    opts.rnn_dropout = config.rnn_dropout;
    opts.rng = &rng;
    Tensor s0 = score_choice(tape, inst.passage, inst.question, inst.choices[0], params, opts);
    Tensor s1 = score_choice(tape, inst.passage, inst.question, inst.choices[1], params, opts);
    Tensor nll = instance_loss(tape, s0, s1, *inst.label, params.config.sigmoid_scoring);
    Tensor scaled = tape.scale(nll, 1.0 / static_cast<double>(batch_size));
    tape.backward(scaled);
    return nll.item();
}

}  // namespace

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(const AnnotatedCorpus& corpus, ModelParams params, const TrainConfig& config) {
    config.validate();
    if (corpus.train.empty()) throw UsageError("train: empty training split");
    if (corpus.dev.empty()) throw UsageError("train: empty dev split (needed for early stopping)");
    for (const auto& inst : corpus.train) {
        if (!inst.label) throw DataError("train: instance \"" + inst.id + "\" has no label");
    }

    TrainResult result;
    OptimizerState optimizer;
    double best_dev = -1.0;
    std::vector<int> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = make_rng(mix64(config.seed, 0x5455ULL, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const int batch = static_cast<int>(end - start);

            // Per-instance gradients always merge into the batch accumulator
            // in index order, so the result is bit-identical for any worker
            // count.
            auto trainable = params.trainable_parameters();
            std::vector<std::vector<double>> batch_grads(trainable.size());
            for (std::size_t p = 0; p < trainable.size(); ++p) {
                batch_grads[p].assign(trainable[p].second.size(), 0.0);
            }
            auto merge = [&](const std::vector<std::vector<double>>& grads) {
                for (std::size_t p = 0; p < trainable.size(); ++p) {
                    const auto& g = grads[p];
                    for (std::size_t j = 0; j < g.size(); ++j) batch_grads[p][j] += g[j];
                }
            };

            if (config.threads <= 1) {
                for (int i = 0; i < batch; ++i) {
                    const int idx = order[start + static_cast<std::size_t>(i)];
                    params.zero_grads();
                    loss_sum += run_instance(params, corpus.train[static_cast<std::size_t>(idx)],
                                             config, epoch, idx, batch);
                    for (std::size_t p = 0; p < trainable.size(); ++p) {
                        const auto& g = trainable[p].second.grad();
                        for (std::size_t j = 0; j < g.size(); ++j) batch_grads[p][j] += g[j];
                    }
                }
            } else {
                // Each worker job owns an immutable parameter snapshot.
                std::vector<double> losses(static_cast<std::size_t>(batch));
                std::vector<std::vector<std::vector<double>>> grads(
                    static_cast<std::size_t>(batch));
                parallel_for(batch, config.threads, [&](int i) {
                    ModelParams snapshot = params.clone();
                    const int idx = order[start + static_cast<std::size_t>(i)];
                    losses[static_cast<std::size_t>(i)] =
                        run_instance(snapshot, corpus.train[static_cast<std::size_t>(idx)], config,
                                     epoch, idx, batch);
                    auto snap_trainable = snapshot.trainable_parameters();
                    auto& slot = grads[static_cast<std::size_t>(i)];
                    slot.reserve(snap_trainable.size());
                    for (auto& [name, t] : snap_trainable) {
                        (void)name;
                        slot.push_back(t.grad());
                    }
                });
                for (int i = 0; i < batch; ++i) {
                    loss_sum += losses[static_cast<std::size_t>(i)];
                    merge(grads[static_cast<std::size_t>(i)]);
                }
            }
            params.zero_grads();
            for (std::size_t p = 0; p < trainable.size(); ++p) {
                trainable[p].second.grad_buffer() = std::move(batch_grads[p]);
            }
            if (config.clip_norm > 0.0) clip_gradients(params, config.clip_norm);
            adam_step(params, optimizer, config);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(order.size());
        record.train_acc = evaluate(corpus.train, params, config.threads);
        record.dev_acc = evaluate(corpus.dev, params, config.threads);
        record.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trace.push_back(record);

        if (record.dev_acc > best_dev) {
            best_dev = record.dev_acc;
            result.best = params.clone();
            result.best_epoch = epoch;
            result.best_dev_acc = record.dev_acc;
        }
        if (epoch - result.best_epoch >= config.patience) break;
    }
    return result;
}

double evaluate(const std::vector<AnnotatedInstance>& instances, const ModelParams& params,
                int threads) {
    if (instances.empty()) throw UsageError("evaluate: empty instance list");
    for (const auto& inst : instances) {
        if (!inst.label) throw DataError("evaluate: instance \"" + inst.id + "\" has no label");
    }
    std::vector<int> correct(instances.size(), 0);
    parallel_for(static_cast<int>(instances.size()), threads, [&](int i) {
        const auto& inst = instances[static_cast<std::size_t>(i)];
        correct[static_cast<std::size_t>(i)] =
            predict(inst, params).predicted == *inst.label ? 1 : 0;
    });
    const int hits = std::accumulate(correct.begin(), correct.end(), 0);
    return static_cast<double>(hits) / static_cast<double>(instances.size());
}

// ---------------------------------------------------------------------------
// Metric trace
// ---------------------------------------------------------------------------

std::string format_trace(const std::vector<EpochRecord>& trace) {
    std::string out = "epoch\ttrain_loss\ttrain_acc\tdev_acc\tseconds\n";
    char buf[160];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%d\t%.12g\t%.12g\t%.12g\t%.3f\n", r.epoch, r.train_loss,
                      r.train_acc, r.dev_acc, r.seconds);
        out += buf;
    }
    return out;
}

void write_trace(const std::vector<EpochRecord>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trace: " + path);
    out << format_trace(trace);
}

}  // namespace mpfn
