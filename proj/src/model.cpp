#include "mpfn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mpfn/error.hpp"

using nlohmann::json;

namespace mpfn {

void ModelConfig::validate() const {
    fusion.validate();
    if (hidden <= 0) throw ConfigError("model: hidden must be positive");
    if (embedding.word_dim <= 0 || embedding.attn_dim <= 0) {
        throw ConfigError("model: embedding dims must be positive");
    }
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

ModelParams ModelParams::init(const ModelConfig& config, const Vocabulary& vocab,
                              const TagVocab& pos_tags, const TagVocab& ner_tags,
                              const TagVocab& rel_tags, const Tensor& word_table,
                              std::uint64_t seed) {
    config.validate();
    if (word_table.rows() != vocab.size()) {
        throw ConfigError("model init: word table rows " + std::to_string(word_table.rows()) +
                          " != vocabulary size " + std::to_string(vocab.size()));
    }
    ModelParams p;
    p.config = config;
    p.vocab = vocab;
    p.pos_tags = pos_tags;
    p.ner_tags = ner_tags;
    p.rel_tags = rel_tags;
    p.init_seed = seed;

    Rng rng = make_rng(mix64(seed, 0x6d6f64656cULL));
    p.embeddings = EmbeddingBundle::init(config.embedding, word_table, pos_tags.size(),
                                         ner_tags.size(), rel_tags.size(), rng);
    p.enc_passage = BiRnnParams::init(config.embedding.pq_width(), config.hidden, rng);
    p.enc_question = config.share_pq_encoder
                         ? p.enc_passage
                         : BiRnnParams::init(config.embedding.pq_width(), config.hidden, rng);
    p.enc_choice = BiRnnParams::init(config.embedding.choice_width(), config.hidden, rng);
    p.fusion = FusionParams::init(config.fusion, config.context_width(), rng);
    p.self_attn_w = Tensor::xavier(1, config.g_width(), rng, true);
    p.score_w = Tensor::xavier(config.g_width(), 1, rng, true);
    p.score_b = Tensor::zeros(1, 1, true);

    if (config.precision == Precision::f32) {
        for (auto& [name, t] : p.named_parameters()) {
            (void)name;
            apply_precision(t.values(), Precision::f32);
        }
    }
    return p;
}

namespace {

using Named = std::vector<std::pair<std::string, Tensor>>;

void add_gate(Named& out, const std::string& prefix, const LstmGate& g) {
    out.emplace_back(prefix + ".w", g.w);
    out.emplace_back(prefix + ".u", g.u);
    out.emplace_back(prefix + ".b", g.b);
}

void add_cell(Named& out, const std::string& prefix, const LstmCellParams& c) {
    add_gate(out, prefix + ".input", c.input);
    add_gate(out, prefix + ".forget", c.forget);
    add_gate(out, prefix + ".output", c.output);
    add_gate(out, prefix + ".candidate", c.candidate);
}

void add_birnn(Named& out, const std::string& prefix, const BiRnnParams& p) {
    add_cell(out, prefix + ".fwd", p.fwd);
    add_cell(out, prefix + ".bwd", p.bwd);
}

void add_perspective(Named& out, const std::string& prefix, const PerspectiveParams& p) {
    for (std::size_t layer = 0; layer < p.fnn_w.size(); ++layer) {
        out.emplace_back(prefix + "." + std::to_string(layer) + ".w", p.fnn_w[layer]);
        out.emplace_back(prefix + "." + std::to_string(layer) + ".b", p.fnn_b[layer]);
    }
    if (p.agg) {
        add_birnn(out, prefix + ".agg", *p.agg);
        out.emplace_back(prefix + ".agg_proj.w", p.agg_proj_w);
        out.emplace_back(prefix + ".agg_proj.b", p.agg_proj_b);
    }
}

}  // namespace

Named ModelParams::named_parameters() const {
    Named out;
    out.emplace_back("emb.word", embeddings.word_table);
    out.emplace_back("emb.pos", embeddings.pos_table);
    out.emplace_back("emb.ner", embeddings.ner_table);
    out.emplace_back("emb.rel", embeddings.rel_table);
    out.emplace_back("emb.attn_proj", embeddings.attn_proj);
    if (!config.embedding.share_attention_projection) {
        out.emplace_back("emb.attn_proj_q", embeddings.attn_proj_q);
    }
    add_birnn(out, "enc.passage", enc_passage);
    if (!config.share_pq_encoder) add_birnn(out, "enc.question", enc_question);
    add_birnn(out, "enc.choice", enc_choice);
    if (fusion.u) add_perspective(out, "fusion.u", *fusion.u);
    if (fusion.d) add_perspective(out, "fusion.d", *fusion.d);
    if (fusion.s) add_perspective(out, "fusion.s", *fusion.s);
    out.emplace_back("out.self_attn.w", self_attn_w);
    out.emplace_back("out.score.w", score_w);
    out.emplace_back("out.score.b", score_b);
    return out;
}

Named ModelParams::trainable_parameters() const {
    Named out;
    for (auto& [name, t] : named_parameters()) {
        if (t.requires_grad()) out.emplace_back(name, t);
    }
    return out;
}

void ModelParams::zero_grads() {
    for (auto& [name, t] : named_parameters()) {
        (void)name;
        t.zero_grad();
    }
}

ModelParams ModelParams::clone() const {
    ModelParams copy = *this;  // shallow: tensors still shared
    auto originals = named_parameters();
    std::map<std::string, Tensor> fresh;
    for (auto& [name, t] : originals) fresh.emplace(name, t.clone());
    auto take = [&](const std::string& name) { return fresh.at(name); };

    copy.embeddings.word_table = take("emb.word");
    copy.embeddings.pos_table = take("emb.pos");
    copy.embeddings.ner_table = take("emb.ner");
    copy.embeddings.rel_table = take("emb.rel");
    copy.embeddings.attn_proj = take("emb.attn_proj");
    if (!config.embedding.share_attention_projection) {
        copy.embeddings.attn_proj_q = take("emb.attn_proj_q");
    }
    auto clone_gate = [&](LstmGate& g, const std::string& prefix) {
        g.w = take(prefix + ".w");
        g.u = take(prefix + ".u");
        g.b = take(prefix + ".b");
    };
    auto clone_cell = [&](LstmCellParams& c, const std::string& prefix) {
        clone_gate(c.input, prefix + ".input");
        clone_gate(c.forget, prefix + ".forget");
        clone_gate(c.output, prefix + ".output");
        clone_gate(c.candidate, prefix + ".candidate");
    };
    auto clone_birnn = [&](BiRnnParams& p, const std::string& prefix) {
        clone_cell(p.fwd, prefix + ".fwd");
        clone_cell(p.bwd, prefix + ".bwd");
    };
    clone_birnn(copy.enc_passage, "enc.passage");
    if (config.share_pq_encoder) {
        copy.enc_question = copy.enc_passage;
    } else {
        clone_birnn(copy.enc_question, "enc.question");
    }
    clone_birnn(copy.enc_choice, "enc.choice");
    auto clone_perspective = [&](std::optional<PerspectiveParams>& p, const std::string& prefix) {
        if (!p) return;
        for (std::size_t layer = 0; layer < p->fnn_w.size(); ++layer) {
            p->fnn_w[layer] = take(prefix + "." + std::to_string(layer) + ".w");
            p->fnn_b[layer] = take(prefix + "." + std::to_string(layer) + ".b");
        }
        if (p->agg) {
            clone_birnn(*p->agg, prefix + ".agg");
            p->agg_proj_w = take(prefix + ".agg_proj.w");
            p->agg_proj_b = take(prefix + ".agg_proj.b");
        }
    };
    clone_perspective(copy.fusion.u, "fusion.u");
    clone_perspective(copy.fusion.d, "fusion.d");
    clone_perspective(copy.fusion.s, "fusion.s");
    copy.self_attn_w = take("out.self_attn.w");
    copy.score_w = take("out.score.w");
    copy.score_b = take("out.score.b");
    return copy;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

Tensor score_choice(Tape& tape, const AnnotatedSeq& passage, const AnnotatedSeq& question,
                    const AnnotatedSeq& choice, const ModelParams& params,
                    const ForwardOpts& opts, Tensor* g_out, ChoiceTrace* trace) {
    if (passage.empty() || question.empty() || choice.empty()) {
        throw UsageError("score_choice: empty sequence");
    }
    const auto& cfg = params.config;
    const bool drop = opts.train_mode && (opts.emb_dropout > 0.0 || opts.rnn_dropout > 0.0);
    if (drop && opts.rng == nullptr) {
        throw UsageError("score_choice: train-mode dropout requires an RNG");
    }
    auto emb_drop = [&](Tensor t) {
        return opts.train_mode && opts.emb_dropout > 0.0
                   ? tape.dropout(t, opts.emb_dropout, *opts.rng)
                   : t;
    };
    auto rnn_drop = [&](Tensor t) {
        return opts.train_mode && opts.rnn_dropout > 0.0
                   ? tape.dropout(t, opts.rnn_dropout, *opts.rng)
                   : t;
    };

    // Word-level composition (choice-aware parts use word vectors only).
    Tensor p_emb = lookup_sequence(tape, params.embeddings, passage, Role::passage);
    Tensor q_emb = lookup_sequence(tape, params.embeddings, question, Role::question);
    Tensor c_words = lookup_words(tape, params.embeddings, choice);
    Tensor cp_words, cq_words;
    if (cfg.embedding.use_choice_aware_passage) {
        Tensor p_words = lookup_words(tape, params.embeddings, passage);
        cp_words = word_level_attention(tape, c_words, p_words,
                                        params.embeddings.passage_projection(),
                                        trace ? &trace->word_attn_passage.v : nullptr);
        if (trace) {
            trace->word_attn_passage.rows = c_words.rows();
            trace->word_attn_passage.cols = p_words.rows();
        }
    }
    if (cfg.embedding.use_choice_aware_question) {
        Tensor q_words = lookup_words(tape, params.embeddings, question);
        cq_words = word_level_attention(tape, c_words, q_words,
                                        params.embeddings.question_projection(),
                                        trace ? &trace->word_attn_question.v : nullptr);
        if (trace) {
            trace->word_attn_question.rows = c_words.rows();
            trace->word_attn_question.cols = q_words.rows();
        }
    }
    Tensor c_emb = compose_choice(tape, c_words, cp_words, cq_words);

    // Context encoding.
    Tensor p_ctx = rnn_drop(encode(tape, emb_drop(p_emb), params.enc_passage));
    Tensor q_ctx = rnn_drop(encode(tape, emb_drop(q_emb), params.enc_question));
    Tensor c_ctx = rnn_drop(encode(tape, emb_drop(c_emb), params.enc_choice));

    // Context-level attention and multi-perspective fusion.
    Tensor ctp = context_attention(tape, c_ctx, p_ctx,
                                   trace ? &trace->ctx_attn_passage.v : nullptr);
    Tensor ctq = context_attention(tape, c_ctx, q_ctx,
                                   trace ? &trace->ctx_attn_question.v : nullptr);
    if (opts.degenerate_self_fusion) ctp = c_ctx;
    if (trace) {
        trace->ctx_attn_passage.rows = c_ctx.rows();
        trace->ctx_attn_passage.cols = p_ctx.rows();
        trace->ctx_attn_question.rows = c_ctx.rows();
        trace->ctx_attn_question.cols = q_ctx.rows();
    }
    Tensor g = global_representation(tape, c_ctx, ctp, ctq, cfg.fusion, params.fusion,
                                     trace ? &trace->fusion : nullptr);
    if (g_out) *g_out = g;
    if (trace) {
        trace->g = g.values();
        trace->g_cols = g.cols();
    }

    // Self-attention pooling and the final linear score.
    Tensor attn_scores = tape.matmul(g, tape.transpose(params.self_attn_w));  // |c| x 1
    Tensor b = tape.softmax(attn_scores, 0);
    if (trace) {
        trace->self_attn.rows = b.rows();
        trace->self_attn.cols = 1;
        trace->self_attn.v = b.values();
    }
    Tensor r = tape.matmul(tape.transpose(b), g);  // 1 x g_width
    return tape.add(tape.matmul(r, params.score_w), params.score_b);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

namespace {

std::array<double, 2> probabilities_from_scores(double s0, double s1, bool sigmoid_scoring) {
    if (sigmoid_scoring) {
        const auto sig = [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        };
        const double p0 = sig(s0), p1 = sig(s1);
        const double z = p0 + p1;
        if (z <= 0.0) return {0.5, 0.5};
        return {p0 / z, p1 / z};
    }
    const double m = std::max(s0, s1);
    const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace

Prediction predict(const AnnotatedInstance& instance, const ModelParams& params) {
    Tape tape(params.config.precision);
    tape.set_grad_enabled(false);
    ForwardOpts opts;  // eval mode
    Prediction pred;
    for (int k = 0; k < 2; ++k) {
        pred.score[static_cast<std::size_t>(k)] =
            score_choice(tape, instance.passage, instance.question,
                         instance.choices[static_cast<std::size_t>(k)], params, opts)
                .item();
    }
    pred.probability =
        probabilities_from_scores(pred.score[0], pred.score[1], params.config.sigmoid_scoring);
    pred.predicted = pred.probability[1] > pred.probability[0] ? 1 : 0;
    return pred;
}

Prediction vote(const std::vector<Prediction>& members) {
    if (members.empty()) throw UsageError("ensemble vote: no members");
    int votes[2] = {0, 0};
    double prob_sum[2] = {0.0, 0.0};
    double score_sum[2] = {0.0, 0.0};
    for (const Prediction& p : members) {
        ++votes[p.predicted];
        prob_sum[0] += p.probability[0];
        prob_sum[1] += p.probability[1];
        score_sum[0] += p.score[0];
        score_sum[1] += p.score[1];
    }
    Prediction out;
    const double n = static_cast<double>(members.size());
    out.score = {score_sum[0] / n, score_sum[1] / n};
    out.probability = {prob_sum[0] / n, prob_sum[1] / n};
    if (votes[0] != votes[1]) {
        out.predicted = votes[1] > votes[0] ? 1 : 0;
    } else {
        out.predicted = prob_sum[1] > prob_sum[0] ? 1 : 0;
    }
    return out;
}

Prediction ensemble_predict(const AnnotatedInstance& instance,
                            const std::vector<const ModelParams*>& members) {
    if (members.empty()) throw UsageError("ensemble_predict: no members");
    std::vector<Prediction> predictions;
    predictions.reserve(members.size());
    for (const ModelParams* m : members) predictions.push_back(predict(instance, *m));
    return vote(predictions);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'P', 'F', 'N', 'C', 'K', '0', '1'};

json config_to_json(const ModelParams& p) {
    const auto& c = p.config;
    json j;
    j["embedding"] = {{"word_dim", c.embedding.word_dim},
                      {"pos_dim", c.embedding.pos_dim},
                      {"ner_dim", c.embedding.ner_dim},
                      {"rel_dim", c.embedding.rel_dim},
                      {"attn_dim", c.embedding.attn_dim},
                      {"use_pos", c.embedding.use_pos},
                      {"use_ner", c.embedding.use_ner},
                      {"use_rel", c.embedding.use_rel},
                      {"use_tf", c.embedding.use_tf},
                      {"use_cp", c.embedding.use_choice_aware_passage},
                      {"use_cq", c.embedding.use_choice_aware_question},
                      {"share_attn_proj", c.embedding.share_attention_projection}};
    j["fusion"] = {{"union", c.fusion.use_union},
                   {"difference", c.fusion.use_difference},
                   {"similarity", c.fusion.use_similarity},
                   {"post_aggregation", c.fusion.post_aggregation == PostAggregation::birnn
                                            ? "birnn"
                                            : "none"},
                   {"fnn_hidden", c.fusion.fnn_hidden},
                   {"fnn_depth", c.fusion.fnn_depth}};
    j["hidden"] = c.hidden;
    j["share_pq_encoder"] = c.share_pq_encoder;
    j["sigmoid_scoring"] = c.sigmoid_scoring;
    j["precision"] = c.precision == Precision::f32 ? "f32" : "f64";
    j["init_seed"] = p.init_seed;
    j["vocab"] = p.vocab.tokens();
    j["pos_tags"] = p.pos_tags.tags();
    j["ner_tags"] = p.ner_tags.tags();
    j["rel_tags"] = p.rel_tags.tags();
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    const auto& e = j.at("embedding");
    c.embedding.word_dim = e.at("word_dim");
    c.embedding.pos_dim = e.at("pos_dim");
    c.embedding.ner_dim = e.at("ner_dim");
    c.embedding.rel_dim = e.at("rel_dim");
    c.embedding.attn_dim = e.at("attn_dim");
    c.embedding.use_pos = e.at("use_pos");
    c.embedding.use_ner = e.at("use_ner");
    c.embedding.use_rel = e.at("use_rel");
    c.embedding.use_tf = e.at("use_tf");
    c.embedding.use_choice_aware_passage = e.at("use_cp");
    c.embedding.use_choice_aware_question = e.at("use_cq");
    c.embedding.share_attention_projection = e.at("share_attn_proj");
    const auto& f = j.at("fusion");
    c.fusion.use_union = f.at("union");
    c.fusion.use_difference = f.at("difference");
    c.fusion.use_similarity = f.at("similarity");
    c.fusion.post_aggregation =
        f.at("post_aggregation") == "birnn" ? PostAggregation::birnn : PostAggregation::none;
    c.fusion.fnn_hidden = f.at("fnn_hidden");
    c.fusion.fnn_depth = f.at("fnn_depth");
    c.hidden = j.at("hidden");
    c.share_pq_encoder = j.at("share_pq_encoder");
    c.sigmoid_scoring = j.at("sigmoid_scoring");
    c.precision = j.at("precision") == "f32" ? Precision::f32 : Precision::f64;
    return c;
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& values) {
    for (double d : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64(out, bits);
    }
}

void read_doubles(std::istream& in, std::vector<double>& values) {
    for (double& d : values) {
        const std::uint64_t bits = read_u64(in);
        std::memcpy(&d, &bits, 8);
    }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::string config = config_to_json(params).dump();
    write_u64(out, config.size());
    out.write(config.data(), static_cast<std::streamsize>(config.size()));

    auto named = params.named_parameters();
    std::sort(named.begin(), named.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    write_u64(out, named.size());
    for (const auto& [name, t] : named) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, static_cast<std::uint64_t>(t.rows()));
        write_u64(out, static_cast<std::uint64_t>(t.cols()));
        write_doubles(out, t.values());
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    const std::uint64_t config_len = read_u64(in);
    std::string config_str(config_len, '\0');
    in.read(config_str.data(), static_cast<std::streamsize>(config_len));

    ModelConfig config;
    Vocabulary vocab;
    TagVocab pos_tags, ner_tags, rel_tags;
    std::uint64_t init_seed = 0;
    try {
        const json config_json = json::parse(config_str);
        config = config_from_json(config_json);
        for (const auto& t : config_json.at("vocab")) vocab.add(t.get<std::string>());
        for (const auto& t : config_json.at("pos_tags")) pos_tags.add(t.get<std::string>());
        for (const auto& t : config_json.at("ner_tags")) ner_tags.add(t.get<std::string>());
        for (const auto& t : config_json.at("rel_tags")) rel_tags.add(t.get<std::string>());
        init_seed = config_json.at("init_seed");
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path + ": bad config block: " + e.what());
    }

    // Rebuild the parameter skeleton, then overwrite every tensor's values.
    Tensor word_table = Tensor::zeros(vocab.size(), config.embedding.word_dim);
    ModelParams params =
        ModelParams::init(config, vocab, pos_tags, ner_tags, rel_tags, word_table, init_seed);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : params.named_parameters()) by_name.emplace(name, t);

    const std::uint64_t count = read_u64(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const auto rows = static_cast<int>(read_u64(in));
        const auto cols = static_cast<int>(read_u64(in));
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DataError("checkpoint " + path + ": unknown parameter \"" + name + "\"");
        }
        if (it->second.rows() != rows || it->second.cols() != cols) {
            throw DataError("checkpoint " + path + ": parameter \"" + name + "\" is " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                            it->second.shape_str());
        }
        read_doubles(in, it->second.values());
    }
    if (!in) throw DataError("checkpoint " + path + ": truncated");
    return params;
}

}  // namespace mpfn
