#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "mpfn/data.hpp"
#include "mpfn/encoder.hpp"
#include "mpfn/features.hpp"
#include "mpfn/fusion.hpp"

namespace mpfn {

// Full network geometry.  Defaults follow the reference setup: 300-d frozen
// word vectors, 123-wide BiLSTM per direction and 123-wide fusion FNNs.
struct ModelConfig {
    EmbeddingConfig embedding;
    FusionConfig fusion;
    int hidden = 123;  // BiLSTM hidden size per direction
    bool share_pq_encoder = false;  // tie passage and question encoder params
    // Score both choices with independent sigmoids instead of a softmax over
    // the pair (fidelity experiment; probabilities are renormalized so the
    // reported pair still sums to 1).
    bool sigmoid_scoring = false;
    Precision precision = Precision::f64;

    int context_width() const { return 2 * hidden; }
    int g_width() const { return fusion.g_width(); }
    void validate() const;
};

// Forward-pass behavior switches; dropout applies only in train mode and the
// rates come from the caller (training config).
struct ForwardOpts {
    bool train_mode = false;
    double emb_dropout = 0.0;
    double rnn_dropout = 0.0;
    Rng* rng = nullptr;  // required when train_mode and any rate > 0
    // Diagnostic harness for fusion export: substitutes the choice context
    // for the choice-aware passage context (so difference fusion vanishes).
    bool degenerate_self_fusion = false;
};

// Attention maps and fusion matrices captured from one choice scoring, as
// plain value copies for export/inspection.
struct ChoiceTrace {
    struct Mat {
        int rows = 0, cols = 0;
        std::vector<double> v;
    };
    Mat word_attn_passage;  // |c| x |p| alpha
    Mat word_attn_question;
    Mat ctx_attn_passage;  // |c| x |p| beta
    Mat ctx_attn_question;
    Mat self_attn;  // |c| x 1
    FusionTrace fusion;
    std::vector<double> g;  // |c| x g_width flattened
    int g_cols = 0;
};

// Every trainable matrix/vector plus the frozen word table, addressable by
// stable names, together with the vocabularies needed to annotate raw text
// at evaluation time.
struct ModelParams {
    ModelConfig config;
    EmbeddingBundle embeddings;
    BiRnnParams enc_passage;
    BiRnnParams enc_question;  // aliases enc_passage when share_pq_encoder
    BiRnnParams enc_choice;
    FusionParams fusion;
    Tensor self_attn_w;  // 1 x g_width
    Tensor score_w;      // g_width x 1
    Tensor score_b;      // 1 x 1

    Vocabulary vocab;
    TagVocab pos_tags, ner_tags, rel_tags;
    std::uint64_t init_seed = 0;

    static ModelParams init(const ModelConfig& config, const Vocabulary& vocab,
                            const TagVocab& pos_tags, const TagVocab& ner_tags,
                            const TagVocab& rel_tags, const Tensor& word_table,
                            std::uint64_t seed);

    // (name, tensor) pairs in a fixed order; includes the frozen word table.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    // Only tensors the optimizer may update.
    std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;

    void zero_grads();
    ModelParams clone() const;
};

// Runs features -> encoders -> fusion -> self-attention pooling for one
// (passage, question, choice) triple and returns the scalar score tensor on
// the tape.  `g_out`/`trace` are optional observers.
Tensor score_choice(Tape& tape, const AnnotatedSeq& passage, const AnnotatedSeq& question,
                    const AnnotatedSeq& choice, const ModelParams& params,
                    const ForwardOpts& opts, Tensor* g_out = nullptr,
                    ChoiceTrace* trace = nullptr);

struct Prediction {
    std::array<double, 2> score{};
    std::array<double, 2> probability{};  // sums to 1
    int predicted = 0;                    // argmax, ties toward choice 0
};

// Scores both choices (eval mode) and normalizes to a probability pair.
Prediction predict(const AnnotatedInstance& instance, const ModelParams& params);

// Majority vote over member predictions; vote ties broken by summed
// probabilities, then toward choice 0.
Prediction vote(const std::vector<Prediction>& members);
Prediction ensemble_predict(const AnnotatedInstance& instance,
                            const std::vector<const ModelParams*>& members);

// Versioned binary container with every named parameter, the model config,
// and the vocabularies; byte-stable across save/load round trips.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mpfn
