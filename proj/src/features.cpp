#include "mpfn/features.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mpfn/error.hpp"

namespace mpfn {

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
}

int Vocabulary::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw UsageError("vocabulary: id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) > 0; }

TagVocab::TagVocab() { add("<none>"); }

int TagVocab::add(const std::string& tag) {
    auto it = ids_.find(tag);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tags_.size());
    tags_.push_back(tag);
    ids_.emplace(tag, id);
    return id;
}

int TagVocab::id(const std::string& tag) const {
    auto it = ids_.find(tag);
    return it == ids_.end() ? kNone : it->second;
}

const std::string& TagVocab::tag(int id) const {
    if (id < 0 || id >= size()) throw UsageError("tag vocab: id out of range");
    return tags_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// Frequency table and relation lexicon
// ---------------------------------------------------------------------------

FreqTable FreqTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open frequency table: " + path);
    FreqTable table;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError("frequency table " + path + ": line " + std::to_string(lineno) +
                            ": expected `token<TAB>count`");
        }
        const std::string token = line.substr(0, tab);
        long long count = 0;
        try {
            count = std::stoll(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw DataError("frequency table " + path + ": line " + std::to_string(lineno) +
                            ": bad count");
        }
        if (count < 0) {
            throw DataError("frequency table " + path + ": line " + std::to_string(lineno) +
                            ": negative count");
        }
        table.counts[token] = count;
        table.max_count = std::max(table.max_count, count);
    }
    return table;
}

double term_frequency(const std::string& token, const FreqTable& table) {
    if (table.max_count <= 0) return 0.0;
    auto it = table.counts.find(token);
    if (it == table.counts.end()) return 0.0;
    return std::log1p(static_cast<double>(it->second)) /
           std::log1p(static_cast<double>(table.max_count));
}

const std::vector<RelationLexicon::Entry> RelationLexicon::kEmpty;

RelationLexicon RelationLexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open relation lexicon: " + path);
    RelationLexicon lex;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string w1, w2, rel;
        if (!std::getline(ss, w1, '\t') || !std::getline(ss, w2, '\t') ||
            !std::getline(ss, rel)) {
            throw DataError("relation lexicon " + path + ": line " + std::to_string(lineno) +
                            ": expected `word1<TAB>word2<TAB>relation`");
        }
        lex.add(w1, w2, rel);
    }
    return lex;
}

void RelationLexicon::add(const std::string& w1, const std::string& w2,
                          const std::string& relation) {
    by_word_[w1].push_back({w2, relation});
    by_word_[w2].push_back({w1, relation});
    if (relation_seen_.emplace(relation, 1).second) relation_names_.push_back(relation);
}

const std::vector<RelationLexicon::Entry>& RelationLexicon::entries(
    const std::string& word) const {
    auto it = by_word_.find(word);
    return it == by_word_.end() ? kEmpty : it->second;
}

// ---------------------------------------------------------------------------
// Embedding bundle
// ---------------------------------------------------------------------------

EmbeddingBundle EmbeddingBundle::init(const EmbeddingConfig& config, const Tensor& word_table,
                                      int pos_count, int ner_count, int rel_count, Rng& rng) {
    if (word_table.cols() != config.word_dim) {
        throw ConfigError("embedding init: word table width " +
                          std::to_string(word_table.cols()) + " != word_dim " +
                          std::to_string(config.word_dim));
    }
    EmbeddingBundle b;
    b.config = config;
    b.word_table = word_table;
    b.word_table.set_requires_grad(false);
    b.pos_table = Tensor::uniform(std::max(pos_count, 1), config.pos_dim, rng, -0.1, 0.1, true);
    b.ner_table = Tensor::uniform(std::max(ner_count, 1), config.ner_dim, rng, -0.1, 0.1, true);
    b.rel_table = Tensor::uniform(std::max(rel_count, 1), config.rel_dim, rng, -0.1, 0.1, true);
    b.attn_proj = Tensor::xavier(config.word_dim, config.attn_dim, rng, true);
    if (!config.share_attention_projection) {
        b.attn_proj_q = Tensor::xavier(config.word_dim, config.attn_dim, rng, true);
    }
    return b;
}

Tensor build_word_table(const Vocabulary& vocab, int word_dim,
                        const std::unordered_map<std::string, std::vector<double>>* pretrained,
                        std::uint64_t seed) {
    Tensor table = Tensor::zeros(vocab.size(), word_dim, false);
    for (int id = 1; id < vocab.size(); ++id) {  // row 0 stays zero (padding)
        const std::string& tok = vocab.token(id);
        const std::vector<double>* vec = nullptr;
        if (pretrained) {
            auto it = pretrained->find(tok);
            if (it != pretrained->end()) vec = &it->second;
        }
        if (vec) {
            for (int j = 0; j < word_dim; ++j) table.at(id, j) = (*vec)[static_cast<std::size_t>(j)];
        } else {
            // Seeded per id so the table is reproducible regardless of which
            // tokens the pretrained file happens to cover.
            Rng rng = make_rng(mix64(seed, 0x776f7264ULL, static_cast<std::uint64_t>(id)));
            for (int j = 0; j < word_dim; ++j) table.at(id, j) = uniform(rng, -0.1, 0.1);
        }
    }
    return table;
}

std::unordered_map<std::string, std::vector<double>> load_word_vectors(const std::string& path,
                                                                       int expect_dim) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open word vectors: " + path);
    std::unordered_map<std::string, std::vector<double>> vectors;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<double> vec;
        vec.reserve(static_cast<std::size_t>(expect_dim));
        double v;
        while (ss >> v) vec.push_back(v);
        if (static_cast<int>(vec.size()) != expect_dim) {
            throw DataError("word vectors " + path + ": line " + std::to_string(lineno) + ": " +
                            std::to_string(vec.size()) + " values, expected " +
                            std::to_string(expect_dim));
        }
        vectors[token] = std::move(vec);
    }
    return vectors;
}

// ---------------------------------------------------------------------------
// Feature composition ops
// ---------------------------------------------------------------------------

Tensor lookup_words(Tape& tape, const EmbeddingBundle& bundle, const AnnotatedSeq& tokens) {
    if (tokens.empty()) throw UsageError("lookup: empty token sequence");
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(t.word_id);
    return tape.embed_rows(bundle.word_table, ids);
}

Tensor lookup_sequence(Tape& tape, const EmbeddingBundle& bundle, const AnnotatedSeq& tokens,
                       Role role) {
    if (tokens.empty()) throw UsageError("lookup_sequence: empty token sequence");
    Tensor words = lookup_words(tape, bundle, tokens);
    if (role == Role::choice) return words;

    const auto& cfg = bundle.config;
    std::vector<Tensor> parts{words};
    auto gather = [&](auto field) {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(t.*field);
        return ids;
    };
    if (cfg.use_pos) parts.push_back(tape.embed_rows(bundle.pos_table, gather(&AnnotatedToken::pos_id)));
    if (cfg.use_ner) parts.push_back(tape.embed_rows(bundle.ner_table, gather(&AnnotatedToken::ner_id)));
    if (cfg.use_rel) parts.push_back(tape.embed_rows(bundle.rel_table, gather(&AnnotatedToken::rel_id)));
    if (cfg.use_tf) {
        std::vector<double> tf;
        tf.reserve(tokens.size());
        for (const auto& t : tokens) tf.push_back(t.tf);
        parts.push_back(Tensor::of(static_cast<int>(tokens.size()), 1, std::move(tf)));
    }
    return tape.concat(parts, 1);
}

Tensor word_level_attention(Tape& tape, const Tensor& c_words, const Tensor& other_words,
                            const Tensor& proj, std::vector<double>* attn_out) {
    if (c_words.cols() != proj.rows() || other_words.cols() != proj.rows()) {
        throw DimensionError("word_level_attention: projection " + proj.shape_str() +
                             " does not match inputs " + c_words.shape_str() + ", " +
                             other_words.shape_str());
    }
    Tensor pc = tape.relu(tape.matmul(c_words, proj));
    Tensor po = tape.relu(tape.matmul(other_words, proj));
    Tensor scores = tape.matmul(pc, tape.transpose(po));
    Tensor alpha = tape.softmax(scores, 1);
    if (attn_out) *attn_out = alpha.values();
    return tape.matmul(alpha, other_words);
}

Tensor compose_choice(Tape& tape, const Tensor& c_words, const Tensor& passage_aware,
                      const Tensor& question_aware) {
    std::vector<Tensor> parts{c_words};
    if (passage_aware.defined()) {
        if (passage_aware.rows() != c_words.rows()) {
            throw DimensionError("compose_choice: passage-aware rows " +
                                 passage_aware.shape_str() + " vs choice " + c_words.shape_str());
        }
        parts.push_back(passage_aware);
    }
    if (question_aware.defined()) {
        if (question_aware.rows() != c_words.rows()) {
            throw DimensionError("compose_choice: question-aware rows " +
                                 question_aware.shape_str() + " vs choice " + c_words.shape_str());
        }
        parts.push_back(question_aware);
    }
    if (parts.size() == 1) return c_words;
    return tape.concat(parts, 1);
}

}  // namespace mpfn
