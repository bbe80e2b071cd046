#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpfn/tensor.hpp"

namespace mpfn {

// Word vocabulary with stable special ids: 0 = padding (zero vector),
// 1 = unknown (random but persisted row).
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary();

    int add(const std::string& token);       // inserts if absent, returns id
    int id(const std::string& token) const;  // kUnk for unseen tokens
    const std::string& token(int id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Tag vocabulary for POS/NER/relation names; id 0 is the stable "none" tag.
class TagVocab {
public:
    static constexpr int kNone = 0;

    TagVocab();

    int add(const std::string& tag);
    int id(const std::string& tag) const;  // kNone for unseen tags
    const std::string& tag(int id) const;
    int size() const { return static_cast<int>(tags_.size()); }
    const std::vector<std::string>& tags() const { return tags_; }

private:
    std::vector<std::string> tags_;
    std::unordered_map<std::string, int> ids_;
};

// Corpus-level word counts backing the term-frequency feature.
struct FreqTable {
    std::unordered_map<std::string, long long> counts;
    long long max_count = 0;

    // File format: `token<TAB>count` lines.
    static FreqTable load(const std::string& path);
};

// log-scaled, max-normalized frequency in [0,1]; unseen tokens map to 0.
double term_frequency(const std::string& token, const FreqTable& table);

// Lexical relation pairs, e.g. a flat dump of a commonsense knowledge graph.
// File format: `word1<TAB>word2<TAB>relation_name` lines.  Lookup is
// symmetric in the two words.
class RelationLexicon {
public:
    struct Entry {
        std::string other;
        std::string relation;
    };

    static RelationLexicon load(const std::string& path);

    void add(const std::string& w1, const std::string& w2, const std::string& relation);
    // Entries for `word`, in file order; empty vector when none.
    const std::vector<Entry>& entries(const std::string& word) const;
    const std::vector<std::string>& relation_names() const { return relation_names_; }
    bool empty() const { return by_word_.empty(); }

private:
    std::unordered_map<std::string, std::vector<Entry>> by_word_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, int> relation_seen_;
    static const std::vector<Entry> kEmpty;
};

// One token with its feature ids, produced by the annotation join.
struct AnnotatedToken {
    int word_id = Vocabulary::kPad;
    int pos_id = TagVocab::kNone;
    int ner_id = TagVocab::kNone;
    int rel_id = TagVocab::kNone;
    double tf = 0.0;
};

using AnnotatedSeq = std::vector<AnnotatedToken>;

enum class Role { passage, question, choice };

// Embedding geometry and input-ablation switches.
struct EmbeddingConfig {
    int word_dim = 300;
    int pos_dim = 12;
    int ner_dim = 8;
    int rel_dim = 10;
    int attn_dim = 123;  // projection width of word-level attention

    bool use_pos = true;
    bool use_ner = true;
    bool use_rel = true;
    bool use_tf = true;
    bool use_choice_aware_passage = true;   // C^p
    bool use_choice_aware_question = true;  // C^q
    bool share_attention_projection = true;

    // Composed row width for passage/question tokens.
    int pq_width() const {
        return word_dim + (use_pos ? pos_dim : 0) + (use_ner ? ner_dim : 0) +
               (use_rel ? rel_dim : 0) + (use_tf ? 1 : 0);
    }
    // Composed row width for choice tokens after compose_choice.
    int choice_width() const {
        return word_dim * (1 + (use_choice_aware_passage ? 1 : 0) +
                           (use_choice_aware_question ? 1 : 0));
    }
};

// All lookup tables and the attention projection(s).  The word table is
// frozen; the rest train.
struct EmbeddingBundle {
    EmbeddingConfig config;
    Tensor word_table;   // |V| x word_dim, requires_grad = false
    Tensor pos_table;    // |POS| x pos_dim
    Tensor ner_table;    // |NER| x ner_dim
    Tensor rel_table;    // |REL| x rel_dim
    Tensor attn_proj;    // word_dim x attn_dim, used for the passage path
    Tensor attn_proj_q;  // question path; defined only when unshared

    static EmbeddingBundle init(const EmbeddingConfig& config, const Tensor& word_table,
                                int pos_count, int ner_count, int rel_count, Rng& rng);

    const Tensor& passage_projection() const { return attn_proj; }
    const Tensor& question_projection() const {
        return config.share_attention_projection ? attn_proj : attn_proj_q;
    }
};

// Builds the frozen word table for a vocabulary: row 0 (padding) is zero,
// every other row takes its pretrained vector when available and otherwise a
// random draw from U(-0.1, 0.1) seeded by the corpus seed, so the unknown row
// and all out-of-vocabulary rows are reproducible and persist via checkpoints.
Tensor build_word_table(const Vocabulary& vocab, int word_dim,
                        const std::unordered_map<std::string, std::vector<double>>* pretrained,
                        std::uint64_t seed);

// Pretrained-vector text format: one line per token, `token v1 ... v<dim>`.
std::unordered_map<std::string, std::vector<double>> load_word_vectors(const std::string& path,
                                                                       int expect_dim);

// Per-token input rows.  Passage/question rows concatenate word, POS, NER,
// relation embeddings and the TF scalar (331 wide at default sizes); choice
// rows carry only the word vector here -- the attention-derived parts are
// appended by compose_choice.
Tensor lookup_sequence(Tape& tape, const EmbeddingBundle& bundle, const AnnotatedSeq& tokens,
                       Role role);

// Word ids only, as an n x word_dim matrix (attention operates on word
// vectors for all three roles).
Tensor lookup_words(Tape& tape, const EmbeddingBundle& bundle, const AnnotatedSeq& tokens);

// Attention over `other` for every row of `c`, with scores
// S(c_i, o_j) = relu(c_i W)^T relu(o_j W).  Each weight row sums to 1.
// When attn_out is given it receives a copy of the |c| x n weight matrix.
Tensor word_level_attention(Tape& tape, const Tensor& c_words, const Tensor& other_words,
                            const Tensor& proj, std::vector<double>* attn_out = nullptr);

// Row-wise [word ; passage-aware ; question-aware] in that order.  Either
// aware part may be an undefined Tensor when ablated, shrinking the width.
Tensor compose_choice(Tape& tape, const Tensor& c_words, const Tensor& passage_aware,
                      const Tensor& question_aware);

}  // namespace mpfn
