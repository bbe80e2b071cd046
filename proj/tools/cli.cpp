#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpfn/data.hpp"
#include "mpfn/error.hpp"
#include "mpfn/gradcheck.hpp"
#include "mpfn/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mpfn::cli {

namespace {

// ---------------------------------------------------------------------------
// Options shared across subcommands
// ---------------------------------------------------------------------------

struct Options {
    // data
    std::string corpus;  // path, or "synth" for the built-in generator
    std::string format = "auto";  // auto | jsonl | xml
    std::string split = "auto";   // evaluate/export: which split to read
    std::string embeddings;
    std::string freq_table;
    std::string relations;
    std::string pos_tags;  // sidecar prefix: <prefix>.train/.dev/.test
    std::string ner_tags;
    int synth_train = 256;
    int synth_dev = 64;
    int synth_test = 64;
    int synth_vocab = 120;

    // model
    std::string perspectives = "sdu";
    std::string post_agg = "none";
    std::string precision = "f64";
    int word_dim = -1;  // -1: 300, or 64 when --corpus synth
    int hidden = -1;    // -1: 123, or 32 when --corpus synth
    int attn_dim = -1;  // -1: follow hidden
    int fnn_depth = 1;
    bool share_pq_encoder = false;
    bool unshare_attn_proj = false;
    bool sigmoid_scoring = false;
    bool no_pos = false, no_ner = false, no_rel = false, no_tf = false;
    bool no_cp = false, no_cq = false;

    // training
    std::uint64_t seed = 1;
    int epochs = 30;
    int patience = 10;
    int batch_size = 32;
    double lr = 0.001;
    double emb_dropout = 0.386;
    double rnn_dropout = 0.40;
    double clip_norm = 0.0;

    // io
    std::string out;
    std::string checkpoint;
    std::vector<std::string> ensemble;

    // ablate
    std::string sweep = "perspectives";  // perspectives | inputs | interaction
    int sweep_seeds = 3;
    bool with_post_agg = false;

    // gradcheck
    double tolerance = 1e-4;
    int samples = 8;
    std::string inject_bug = "none";
    bool ops_only = false;

    // export
    std::string instance_id;
    bool degenerate_self_fusion = false;
};

CorpusFormat resolve_format(const Options& o) {
    if (o.format == "jsonl") return CorpusFormat::jsonl;
    if (o.format == "xml") return CorpusFormat::xml;
    if (o.format == "auto") {
        if (o.corpus.size() > 4 && o.corpus.substr(o.corpus.size() - 4) == ".xml") {
            return CorpusFormat::xml;
        }
        if (fs::is_directory(o.corpus) && fs::exists(fs::path(o.corpus) / "train.xml")) {
            return CorpusFormat::xml;
        }
        return CorpusFormat::jsonl;
    }
    throw UsageError("unknown --format: " + o.format);
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

struct LoadedData {
    Corpus raw;
    AnnotatedCorpus annotated;
    RelationLexicon lexicon;
    FreqTable freq;
    AnnotationSources sources;  // points into lexicon/freq above
};

AnnotationSources make_sources(const Options& o, const RelationLexicon* lex,
                               const FreqTable* freq) {
    AnnotationSources s;
    for (const std::string split : {"train", "dev", "test"}) {
        if (!o.pos_tags.empty()) {
            const std::string path = o.pos_tags + "." + split;
            if (fs::exists(path)) s.pos_files[split] = path;
        }
        if (!o.ner_tags.empty()) {
            const std::string path = o.ner_tags + "." + split;
            if (fs::exists(path)) s.ner_files[split] = path;
        }
    }
    if (lex && !lex->empty()) s.relations = lex;
    if (freq && freq->max_count > 0) s.frequencies = freq;
    return s;
}

LoadedData load_data(const Options& o) {
    LoadedData d;
    if (o.corpus == "synth") {
        d.raw = generate_synthetic(o.synth_train, o.synth_vocab, o.seed);
        Corpus dev = generate_synthetic(o.synth_dev, o.synth_vocab, mix64(o.seed, 2));
        Corpus test = generate_synthetic(o.synth_test, o.synth_vocab, mix64(o.seed, 3));
        for (auto& inst : dev.train) inst.id += "-dev";
        for (auto& inst : test.train) inst.id += "-test";
        d.raw.dev = std::move(dev.train);
        d.raw.test = std::move(test.train);
    } else {
        d.raw = load_corpus(o.corpus, resolve_format(o));
    }
    if (!o.relations.empty()) d.lexicon = RelationLexicon::load(o.relations);
    if (!o.freq_table.empty()) d.freq = FreqTable::load(o.freq_table);
    d.sources = make_sources(o, &d.lexicon, &d.freq);
    d.annotated = attach_annotations(d.raw, d.sources, o.seed);
    return d;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

ModelConfig make_model_config(const Options& o) {
    ModelConfig c;
    const bool synth = o.corpus == "synth";
    c.embedding.word_dim = o.word_dim > 0 ? o.word_dim : (synth ? 64 : 300);
    c.hidden = o.hidden > 0 ? o.hidden : (synth ? 32 : 123);
    c.embedding.attn_dim = o.attn_dim > 0 ? o.attn_dim : c.hidden;
    c.embedding.use_pos = !o.no_pos;
    c.embedding.use_ner = !o.no_ner;
    c.embedding.use_rel = !o.no_rel;
    c.embedding.use_tf = !o.no_tf;
    c.embedding.use_choice_aware_passage = !o.no_cp;
    c.embedding.use_choice_aware_question = !o.no_cq;
    c.embedding.share_attention_projection = !o.unshare_attn_proj;
    c.fusion = FusionConfig::from_label(o.perspectives);
    c.fusion.fnn_hidden = c.hidden;
    c.fusion.fnn_depth = o.fnn_depth;
    if (o.post_agg == "birnn") {
        c.fusion.post_aggregation = PostAggregation::birnn;
    } else if (o.post_agg != "none") {
        throw UsageError("unknown --post-agg: " + o.post_agg + " (expected none or birnn)");
    }
    c.share_pq_encoder = o.share_pq_encoder;
    c.sigmoid_scoring = o.sigmoid_scoring;
    if (o.precision == "f32") {
        c.precision = Precision::f32;
    } else if (o.precision != "f64") {
        throw UsageError("unknown --precision: " + o.precision + " (expected f32 or f64)");
    }
    return c;
}

ModelParams build_params(const Options& o, const ModelConfig& config,
                         const AnnotatedCorpus& annotated) {
    std::unordered_map<std::string, std::vector<double>> pretrained;
    const std::unordered_map<std::string, std::vector<double>>* pre = nullptr;
    if (!o.embeddings.empty()) {
        pretrained = load_word_vectors(o.embeddings, config.embedding.word_dim);
        pre = &pretrained;
    }
    Tensor words = build_word_table(annotated.vocab, config.embedding.word_dim, pre, o.seed);
    return ModelParams::init(config, annotated.vocab, annotated.pos_tags, annotated.ner_tags,
                             annotated.rel_tags, words, o.seed);
}

TrainConfig make_train_config(const Options& o) {
    TrainConfig tc;
    tc.batch_size = o.batch_size;
    tc.lr = o.lr;
    tc.emb_dropout = o.emb_dropout;
    tc.rnn_dropout = o.rnn_dropout;
    tc.max_epochs = o.epochs;
    tc.patience = o.patience;
    tc.seed = o.seed;
    tc.clip_norm = o.clip_norm;
    tc.threads = thread_count_from_env();
    return tc;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

json resolved_json(const Options& o, const ModelConfig& config) {
    json j;
    j["corpus"] = o.corpus;
    j["format"] = o.format;
    j["embeddings"] = o.embeddings;
    j["freq_table"] = o.freq_table;
    j["relations"] = o.relations;
    j["pos_tags"] = o.pos_tags;
    j["ner_tags"] = o.ner_tags;
    j["perspectives"] = config.fusion.label();
    j["post_agg"] = config.fusion.post_aggregation == PostAggregation::birnn ? "birnn" : "none";
    j["precision"] = config.precision == Precision::f32 ? "f32" : "f64";
    j["word_dim"] = config.embedding.word_dim;
    j["hidden"] = config.hidden;
    j["attn_dim"] = config.embedding.attn_dim;
    j["seed"] = o.seed;
    j["epochs"] = o.epochs;
    j["patience"] = o.patience;
    j["batch_size"] = o.batch_size;
    j["lr"] = o.lr;
    j["emb_dropout"] = o.emb_dropout;
    j["rnn_dropout"] = o.rnn_dropout;
    j["clip_norm"] = o.clip_norm;
    j["threads"] = thread_count_from_env();
    return j;
}

void write_manifest(const std::string& command, const std::vector<std::string>& argv,
                    const json& resolved, const std::string& out_dir) {
    json manifest;
    manifest["command"] = command;
    manifest["argv"] = argv;
    manifest["resolved"] = resolved;
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
}

// Original argv of the current invocation, captured by run() for manifests.
thread_local const std::vector<std::string>* g_current_argv = nullptr;

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_train(const Options& o) {
    LoadedData data = load_data(o);
    ModelConfig config = make_model_config(o);
    ModelParams params = build_params(o, config, data.annotated);
    TrainConfig tc = make_train_config(o);

    std::cerr << "training " << config.fusion.label() << " (word_dim " << config.embedding.word_dim
              << ", hidden " << config.hidden << ") on " << data.annotated.train.size()
              << " train / " << data.annotated.dev.size() << " dev instances\n";
    TrainResult result = train(data.annotated, std::move(params), tc);
    for (const auto& r : result.trace) {
        std::printf("epoch %3d  loss %.4f  train %.4f  dev %.4f  (%.1fs)\n", r.epoch,
                    r.train_loss, r.train_acc, r.dev_acc, r.seconds);
    }
    std::printf("best dev accuracy %.4f at epoch %d\n", result.best_dev_acc, result.best_epoch);

    if (!o.out.empty()) {
        fs::create_directories(o.out);
        save_checkpoint(result.best, (fs::path(o.out) / "best.ckpt").string());
        write_trace(result.trace, (fs::path(o.out) / "trace.tsv").string());
        write_manifest("train", *g_current_argv, resolved_json(o, config), o.out);
        std::cerr << "wrote " << o.out << "/best.ckpt, trace.tsv, manifest.json\n";
    }
    return kExitOk;
}

const std::vector<Instance>& pick_split(const Corpus& corpus, const std::string& split) {
    if (split == "auto") {
        if (!corpus.test.empty()) return corpus.test;
        if (!corpus.dev.empty()) return corpus.dev;
        return corpus.train;
    }
    return corpus.split(split);
}

int cmd_evaluate(const Options& o) {
    if (o.checkpoint.empty() && o.ensemble.empty()) {
        throw UsageError("evaluate: provide --checkpoint or --ensemble");
    }
    std::vector<ModelParams> members;
    if (!o.checkpoint.empty()) members.push_back(load_checkpoint(o.checkpoint));
    for (const auto& path : o.ensemble) members.push_back(load_checkpoint(path));

    Options data_opts = o;
    LoadedData data;
    data.raw = o.corpus == "synth" ? load_data(data_opts).raw
                                   : load_corpus(o.corpus, resolve_format(o));
    if (!o.relations.empty()) data.lexicon = RelationLexicon::load(o.relations);
    if (!o.freq_table.empty()) data.freq = FreqTable::load(o.freq_table);
    data.sources = make_sources(o, &data.lexicon, &data.freq);

    const auto& raw_split = pick_split(data.raw, o.split);
    if (raw_split.empty()) throw DataError("evaluate: selected split is empty");
    const ModelParams& head = members.front();
    auto instances = annotate_with(raw_split, data.sources, o.split == "auto" ? "test" : o.split,
                                   head.vocab, head.pos_tags, head.ner_tags, head.rel_tags,
                                   o.seed);

    int correct = 0, labeled = 0;
    std::vector<Prediction> predictions(instances.size());
    std::vector<const ModelParams*> member_ptrs;
    for (const auto& m : members) member_ptrs.push_back(&m);
    const int threads = thread_count_from_env();
    parallel_for(static_cast<int>(instances.size()), threads, [&](int i) {
        predictions[static_cast<std::size_t>(i)] =
            members.size() == 1 ? predict(instances[static_cast<std::size_t>(i)], head)
                                : ensemble_predict(instances[static_cast<std::size_t>(i)],
                                                   member_ptrs);
    });
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (!instances[i].label) continue;
        ++labeled;
        if (predictions[i].predicted == *instances[i].label) ++correct;
    }
    if (labeled == 0) throw DataError("evaluate: no labeled instances in the selected split");
    const double acc = static_cast<double>(correct) / labeled;
    std::printf("accuracy %.4f (%d/%d)%s\n", acc, correct, labeled,
                members.size() > 1 ? " [ensemble]" : "");

    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream pred_out(fs::path(o.out) / "predictions.tsv");
        pred_out << "id\tpredicted\tp0\tp1\tlabel\n";
        for (std::size_t i = 0; i < instances.size(); ++i) {
            pred_out << instances[i].id << "\t" << predictions[i].predicted << "\t"
                     << predictions[i].probability[0] << "\t" << predictions[i].probability[1]
                     << "\t" << (instances[i].label ? std::to_string(*instances[i].label) : "-")
                     << "\n";
        }
        json resolved = resolved_json(o, members.front().config);
        resolved["accuracy"] = acc;
        write_manifest("evaluate", *g_current_argv, resolved, o.out);
    }
    return kExitOk;
}

int cmd_gradcheck(const Options& o) {
    gradcheck::Options gopts;
    gopts.tolerance = o.tolerance;
    gopts.samples_per_leaf = o.samples;
    if (o.inject_bug != "none" && o.inject_bug != "eq8-sign") {
        throw UsageError("unknown --inject-bug: " + o.inject_bug);
    }

    bool all_pass = true;
    auto report = [&](const std::vector<gradcheck::Result>& results, const char* section) {
        std::printf("-- %s --\n", section);
        for (const auto& r : results) {
            std::printf("%-28s %s  worst rel err %.3e%s%s\n", r.name.c_str(),
                        r.pass ? "ok  " : "FAIL", r.max_rel_err,
                        r.worst_at.empty() ? "" : " at ", r.worst_at.c_str());
            all_pass = all_pass && r.pass;
        }
    };
    report(gradcheck::run_op_suite(gopts, o.inject_bug == "eq8-sign"), "per-op checks");
    if (!o.ops_only) {
        report(gradcheck::run_model_suite(gopts), "full model (SDU, g_width 369)");
    }
    std::printf("%s (tolerance %.1e)\n", all_pass ? "ALL CHECKS PASSED" : "CHECKS FAILED",
                o.tolerance);
    if (!all_pass) throw NumericError("gradient checks failed");
    return kExitOk;
}

// One training run per (config, seed); bounded worker pool over runs.
std::vector<AblationRun> sweep_runs(const AnnotatedCorpus& data,
                                    const std::vector<std::pair<std::string, ModelConfig>>& rows,
                                    const TrainConfig& base,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::string& ref_table) {
    struct Job {
        std::size_t row;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (auto s : seeds) jobs.push_back({r, s});
    std::vector<double> accs(jobs.size(), 0.0);
    const int pool = thread_count_from_env();
    TrainConfig tc = base;
    tc.threads = 1;  // each worker owns one whole run
    parallel_for(static_cast<int>(jobs.size()), pool, [&](int j) {
        const Job& job = jobs[static_cast<std::size_t>(j)];
        const ModelConfig& config = rows[job.row].second;
        Tensor words = build_word_table(data.vocab, config.embedding.word_dim, nullptr, job.seed);
        ModelParams params = ModelParams::init(config, data.vocab, data.pos_tags, data.ner_tags,
                                               data.rel_tags, words, job.seed);
        TrainConfig run_tc = tc;
        run_tc.seed = job.seed;
        accs[static_cast<std::size_t>(j)] = train(data, std::move(params), run_tc).best_dev_acc;
    });
    std::vector<AblationRun> out;
    std::size_t j = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        AblationRun run;
        run.label = rows[r].first;
        for (std::size_t s = 0; s < seeds.size(); ++s) run.dev_accs.push_back(accs[j++]);
        run.mean_dev_acc = 0.0;
        for (double a : run.dev_accs) run.mean_dev_acc += a;
        run.mean_dev_acc /= static_cast<double>(run.dev_accs.size());
        run.reference = reference_accuracy(ref_table, run.label);
        out.push_back(std::move(run));
    }
    return out;
}

void print_runs(const std::vector<AblationRun>& runs, std::ostream& tsv) {
    std::printf("%-14s %-12s %s\n", "config", "dev_acc", "ref_full_scale");
    tsv << "config\tdev_acc\tref_full_scale\tper_seed\n";
    for (const auto& r : runs) {
        std::string per_seed;
        for (double a : r.dev_accs) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", a);
            per_seed += per_seed.empty() ? buf : ("," + std::string(buf));
        }
        if (r.reference) {
            std::printf("%-14s %-12.4f %.2f\n", r.label.c_str(), r.mean_dev_acc, *r.reference);
            tsv << r.label << "\t" << r.mean_dev_acc << "\t" << *r.reference << "\t" << per_seed
                << "\n";
        } else {
            std::printf("%-14s %-12.4f -\n", r.label.c_str(), r.mean_dev_acc);
            tsv << r.label << "\t" << r.mean_dev_acc << "\t-\t" << per_seed << "\n";
        }
    }
}

int cmd_ablate(const Options& o) {
    LoadedData data = load_data(o);
    TrainConfig tc = make_train_config(o);
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < o.sweep_seeds; ++s) seeds.push_back(o.seed + static_cast<std::uint64_t>(s));

    std::vector<std::pair<std::string, ModelConfig>> rows;
    std::string ref_table;
    if (o.sweep == "perspectives") {
        ref_table = o.with_post_agg || o.post_agg == "birnn" ? "perspectives+birnn"
                                                             : "perspectives";
        for (const char* label : {"U", "D", "S", "DU", "SU", "SD", "SDU"}) {
            Options variant = o;
            variant.perspectives = label;
            if (o.with_post_agg) variant.post_agg = "birnn";
            rows.emplace_back(label, make_model_config(variant));
        }
    } else if (o.sweep == "inputs") {
        ref_table = "inputs";
        struct Drop {
            const char* label;
            bool Options::* flag;
        };
        rows.emplace_back("full", make_model_config(o));
        for (auto [label, flag] : std::initializer_list<Drop>{{"w/o POS", &Options::no_pos},
                                                              {"w/o NER", &Options::no_ner},
                                                              {"w/o Rel", &Options::no_rel},
                                                              {"w/o TF", &Options::no_tf},
                                                              {"w/o Cp", &Options::no_cp},
                                                              {"w/o Cq", &Options::no_cq}}) {
            Options variant = o;
            variant.*flag = true;
            rows.emplace_back(label, make_model_config(variant));
        }
        Options both = o;
        both.no_cp = both.no_cq = true;
        rows.emplace_back("w/o Cp&Cq", make_model_config(both));
    } else if (o.sweep == "interaction") {
        ref_table = "";
        struct Grid {
            const char* label;
            bool cp, cq;
        };
        for (auto [ilabel, cp, cq] : std::initializer_list<Grid>{{"C", false, false},
                                                                 {"C+Cp", true, false},
                                                                 {"C+Cq", false, true},
                                                                 {"C+Cp+Cq", true, true}}) {
            for (const char* p : {"U", "D", "S"}) {
                Options variant = o;
                variant.no_cp = !cp;
                variant.no_cq = !cq;
                variant.perspectives = p;
                rows.emplace_back(std::string(ilabel) + "/" + p, make_model_config(variant));
            }
        }
    } else {
        throw UsageError("unknown --sweep: " + o.sweep +
                         " (expected perspectives, inputs, or interaction)");
    }

    std::cerr << "ablation sweep \"" << o.sweep << "\": " << rows.size() << " configs x "
              << seeds.size() << " seeds\n";
    auto runs = sweep_runs(data.annotated, rows, tc, seeds, ref_table);

    std::ostringstream tsv;
    print_runs(runs, tsv);
    std::printf("(ref_full_scale: reference accuracy from full-scale MCScript training;"
                " desk-scale numbers are not comparable)\n");
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream table(fs::path(o.out) / "ablation.tsv");
        table << tsv.str();
        write_manifest("ablate", *g_current_argv, resolved_json(o, make_model_config(o)), o.out);
    }
    return kExitOk;
}

void write_matrix_tsv(const std::string& path, const std::vector<std::string>& row_labels,
                      const std::vector<double>& values, int cols,
                      const std::vector<std::string>* col_labels = nullptr) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "token";
    for (int j = 0; j < cols; ++j) {
        out << "\t" << (col_labels ? (*col_labels)[static_cast<std::size_t>(j)]
                                   : "d" + std::to_string(j));
    }
    out << "\n";
    const int rows = static_cast<int>(row_labels.size());
    for (int i = 0; i < rows; ++i) {
        out << row_labels[static_cast<std::size_t>(i)];
        for (int j = 0; j < cols; ++j) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6g", values[static_cast<std::size_t>(i) * cols + j]);
            out << "\t" << buf;
        }
        out << "\n";
    }
}

int cmd_export_fusion(const Options& o) {
    if (o.checkpoint.empty()) throw UsageError("export-fusion: --checkpoint is required");
    if (o.instance_id.empty()) throw UsageError("export-fusion: --instance is required");
    if (o.out.empty()) throw UsageError("export-fusion: --out is required");
    ModelParams params = load_checkpoint(o.checkpoint);

    Options data_opts = o;
    Corpus raw = o.corpus == "synth" ? load_data(data_opts).raw
                                     : load_corpus(o.corpus, resolve_format(o));
    RelationLexicon lexicon;
    FreqTable freq;
    if (!o.relations.empty()) lexicon = RelationLexicon::load(o.relations);
    if (!o.freq_table.empty()) freq = FreqTable::load(o.freq_table);
    AnnotationSources sources = make_sources(o, &lexicon, &freq);

    const Instance* found = nullptr;
    std::string found_split;
    for (const std::string split : {"train", "dev", "test"}) {
        for (const auto& inst : raw.split(split)) {
            if (inst.id == o.instance_id) {
                found = &inst;
                found_split = split;
            }
        }
    }
    if (!found) throw DataError("export-fusion: no instance with id \"" + o.instance_id + "\"");
    auto annotated = annotate_with({*found}, sources, found_split, params.vocab, params.pos_tags,
                                   params.ner_tags, params.rel_tags, o.seed);
    const AnnotatedInstance& inst = annotated[0];

    fs::create_directories(o.out);
    json summary;
    summary["instance"] = o.instance_id;
    summary["perspectives"] = params.config.fusion.label();
    summary["degenerate_self_fusion"] = o.degenerate_self_fusion;

    for (int k = 0; k < 2; ++k) {
        Tape tape(params.config.precision);
        tape.set_grad_enabled(false);
        ForwardOpts opts;
        opts.degenerate_self_fusion = o.degenerate_self_fusion;
        ChoiceTrace trace;
        const double score = score_choice(tape, inst.passage, inst.question,
                                          inst.choices[static_cast<std::size_t>(k)], params, opts,
                                          nullptr, &trace)
                                 .item();
        summary["scores"].push_back(score);

        const auto& tokens = inst.choice_tokens[static_cast<std::size_t>(k)];
        const std::string base = o.out + "/choice" + std::to_string(k);
        auto dump_pair = [&](const char* name, const std::optional<FusionTrace::Pair>& pair) {
            if (!pair) return;
            write_matrix_tsv(base + "." + name + ".pre.tsv", tokens, pair->raw, pair->raw_cols);
            write_matrix_tsv(base + "." + name + ".post.tsv", tokens, pair->projected,
                             pair->projected_cols);
        };
        dump_pair("union", trace.fusion.u);
        dump_pair("difference", trace.fusion.d);
        dump_pair("similarity", trace.fusion.s);
        write_matrix_tsv(base + ".attn.word_passage.tsv", tokens, trace.word_attn_passage.v,
                         trace.word_attn_passage.cols, &found->passage);
        write_matrix_tsv(base + ".attn.word_question.tsv", tokens, trace.word_attn_question.v,
                         trace.word_attn_question.cols, &found->question);
        write_matrix_tsv(base + ".attn.ctx_passage.tsv", tokens, trace.ctx_attn_passage.v,
                         trace.ctx_attn_passage.cols, &found->passage);
        write_matrix_tsv(base + ".attn.ctx_question.tsv", tokens, trace.ctx_attn_question.v,
                         trace.ctx_attn_question.cols, &found->question);
        write_matrix_tsv(base + ".attn.self.tsv", tokens, trace.self_attn.v, 1);
        write_matrix_tsv(base + ".g.tsv", tokens, trace.g, trace.g_cols);
    }
    std::ofstream(fs::path(o.out) / "export.json") << summary.dump(2) << "\n";
    write_manifest("export-fusion", *g_current_argv, resolved_json(o, params.config), o.out);
    std::cerr << "wrote fusion matrices for \"" << o.instance_id << "\" to " << o.out << "\n";
    return kExitOk;
}

int cmd_replay(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("manifest " + manifest_path + ": " + e.what());
    }
    std::vector<std::string> argv;
    for (const auto& a : manifest.at("argv")) argv.push_back(a.get<std::string>());
    std::cerr << "replaying: mpfn";
    for (const auto& a : argv) std::cerr << " " << a;
    std::cerr << "\n";
    return run(argv);
}

// ---------------------------------------------------------------------------
// Flag wiring
// ---------------------------------------------------------------------------

void add_data_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--corpus", o.corpus, "corpus path (file or split directory), or 'synth'")
        ->required();
    cmd->add_option("--format", o.format, "corpus format: auto|jsonl|xml");
    cmd->add_option("--embeddings", o.embeddings, "pretrained word-vector text file");
    cmd->add_option("--freq-table", o.freq_table, "token<TAB>count frequency table");
    cmd->add_option("--relations", o.relations, "word1<TAB>word2<TAB>relation lexicon");
    cmd->add_option("--pos-tags", o.pos_tags, "POS sidecar prefix (<prefix>.train/.dev/.test)");
    cmd->add_option("--ner-tags", o.ner_tags, "NER sidecar prefix");
    cmd->add_option("--synth-train", o.synth_train, "synthetic train size");
    cmd->add_option("--synth-dev", o.synth_dev, "synthetic dev size");
    cmd->add_option("--synth-test", o.synth_test, "synthetic test size");
    cmd->add_option("--synth-vocab", o.synth_vocab, "synthetic vocabulary size");
}

void add_model_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--perspectives", o.perspectives,
                    "active fusion perspectives, a subset of {u,d,s} (e.g. sdu, du)");
    cmd->add_option("--post-agg", o.post_agg, "post-fusion aggregation: none|birnn");
    cmd->add_option("--precision", o.precision, "stored value precision: f64|f32");
    cmd->add_option("--word-dim", o.word_dim, "word vector width (default 300; 64 for synth)");
    cmd->add_option("--hidden", o.hidden, "BiLSTM/FNN hidden size (default 123; 32 for synth)");
    cmd->add_option("--attn-dim", o.attn_dim, "word-attention projection width (default: hidden)");
    cmd->add_option("--fnn-depth", o.fnn_depth, "fusion FNN depth");
    cmd->add_flag("--share-pq-encoder", o.share_pq_encoder,
                  "tie passage and question encoder parameters");
    cmd->add_flag("--unshare-attn-proj", o.unshare_attn_proj,
                  "separate projections for passage and question word attention");
    cmd->add_flag("--sigmoid-scoring", o.sigmoid_scoring,
                  "per-choice sigmoid scores instead of a softmax over the pair");
    cmd->add_flag("--no-pos", o.no_pos, "drop POS embeddings");
    cmd->add_flag("--no-ner", o.no_ner, "drop NER embeddings");
    cmd->add_flag("--no-rel", o.no_rel, "drop relation embeddings");
    cmd->add_flag("--no-tf", o.no_tf, "drop the term-frequency feature");
    cmd->add_flag("--no-cp", o.no_cp, "drop the choice-aware passage embedding");
    cmd->add_flag("--no-cq", o.no_cq, "drop the choice-aware question embedding");
}

void add_train_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--epochs", o.epochs, "maximum epochs");
    cmd->add_option("--patience", o.patience, "epochs allowed past the best dev epoch");
    cmd->add_option("--batch-size", o.batch_size, "batch size");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    cmd->add_option("--emb-dropout", o.emb_dropout, "embedding dropout rate");
    cmd->add_option("--rnn-dropout", o.rnn_dropout, "encoder output dropout rate");
    cmd->add_option("--clip-norm", o.clip_norm, "global gradient-norm clip (0 = off)");
}

}  // namespace

// ---------------------------------------------------------------------------
// Reference accuracies (full-scale MCScript runs of this architecture)
// ---------------------------------------------------------------------------

std::optional<double> reference_accuracy(const std::string& table, const std::string& row) {
    static const std::map<std::string, std::map<std::string, double>> tables{
        {"perspectives",
         {{"U", 82.73}, {"D", 82.27}, {"S", 81.55}, {"DU", 82.84}, {"SU", 82.48}, {"SD", 83.12},
          {"SDU", 83.52}}},
        {"perspectives+birnn",
         {{"U", 82.73}, {"D", 81.77}, {"S", 80.59}, {"DU", 82.16}, {"SU", 82.87}, {"SD", 83.09},
          {"SDU", 82.70}}},
        {"inputs",
         {{"full", 83.52}, {"w/o POS", 82.70}, {"w/o NER", 82.62}, {"w/o Rel", 81.98},
          {"w/o TF", 81.91}, {"w/o Cp", 81.62}, {"w/o Cq", 82.16}, {"w/o Cp&Cq", 81.66}}},
        {"main", {{"single", 83.52}, {"ensemble", 84.84}}},
    };
    auto t = tables.find(table);
    if (t == tables.end()) return std::nullopt;
    auto r = t->second.find(row);
    if (r == t->second.end()) return std::nullopt;
    return r->second;
}

AblationRun run_config(const AnnotatedCorpus& data, const ModelConfig& config,
                       const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                       const std::string& label, std::optional<double> reference) {
    AblationRun run;
    run.label = label;
    run.reference = reference;
    for (auto seed : seeds) {
        Tensor words = build_word_table(data.vocab, config.embedding.word_dim, nullptr, seed);
        ModelParams params = ModelParams::init(config, data.vocab, data.pos_tags, data.ner_tags,
                                               data.rel_tags, words, seed);
        TrainConfig tc = base;
        tc.seed = seed;
        run.dev_accs.push_back(train(data, std::move(params), tc).best_dev_acc);
    }
    for (double a : run.dev_accs) run.mean_dev_acc += a;
    run.mean_dev_acc /= static_cast<double>(run.dev_accs.size());
    return run;
}

int run(const std::vector<std::string>& args) {
    Options o;
    std::string manifest_path;
    int exit_code = kExitOk;

    CLI::App app{"Multi-perspective fusion network for two-choice reading comprehension"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train a model and keep the best-dev checkpoint");
    add_data_flags(train_cmd, o);
    add_model_flags(train_cmd, o);
    add_train_flags(train_cmd, o);
    train_cmd->add_option("--out", o.out, "output directory (checkpoint, trace, manifest)");
    train_cmd->callback([&] { exit_code = cmd_train(o); });

    auto* eval_cmd = app.add_subcommand("evaluate", "accuracy of a checkpoint or ensemble");
    add_data_flags(eval_cmd, o);
    eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");
    eval_cmd->add_option("--ensemble", o.ensemble, "comma-separated member checkpoints")
        ->delimiter(',');
    eval_cmd->add_option("--split", o.split, "split to evaluate: auto|train|dev|test");
    eval_cmd->add_option("--seed", o.seed, "annotation seed");
    eval_cmd->add_option("--out", o.out, "output directory (predictions, manifest)");
    eval_cmd->callback([&] { exit_code = cmd_evaluate(o); });

    auto* ablate_cmd = app.add_subcommand("ablate", "perspective/input ablation sweeps");
    add_data_flags(ablate_cmd, o);
    add_model_flags(ablate_cmd, o);
    add_train_flags(ablate_cmd, o);
    ablate_cmd->add_option("--sweep", o.sweep, "perspectives|inputs|interaction");
    ablate_cmd->add_option("--seeds", o.sweep_seeds, "seeds per config");
    ablate_cmd->add_flag("--with-post-agg", o.with_post_agg,
                         "run the perspective sweep with BiRNN post-aggregation");
    ablate_cmd->add_option("--out", o.out, "output directory (table, manifest)");
    ablate_cmd->callback([&] { exit_code = cmd_ablate(o); });

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference verification suite");
    grad_cmd->add_option("--tolerance", o.tolerance, "relative-error bound (default 1e-4)");
    grad_cmd->add_option("--samples", o.samples, "sampled elements per parameter");
    grad_cmd->add_option("--inject-bug", o.inject_bug,
                         "self-test fixture: none|eq8-sign (reports a planted failure)");
    grad_cmd->add_flag("--ops-only", o.ops_only, "skip the full-model suite");
    grad_cmd->callback([&] { exit_code = cmd_gradcheck(o); });

    auto* export_cmd = app.add_subcommand("export-fusion",
                                          "write fusion matrices and attention maps for one instance");
    add_data_flags(export_cmd, o);
    export_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to load")->required();
    export_cmd->add_option("--instance", o.instance_id, "instance id to export")->required();
    export_cmd->add_option("--seed", o.seed, "annotation seed");
    export_cmd->add_option("--out", o.out, "output directory")->required();
    export_cmd->add_flag("--degenerate-self-fusion", o.degenerate_self_fusion,
                         "substitute the choice context for the choice-aware passage context");
    export_cmd->callback([&] { exit_code = cmd_export_fusion(o); });

    auto* replay_cmd = app.add_subcommand("replay", "re-run a command from its manifest");
    replay_cmd->add_option("--manifest", manifest_path, "manifest.json from a previous run")
        ->required();
    replay_cmd->callback([&] { exit_code = cmd_replay(manifest_path); });

    g_current_argv = &args;
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        g_current_argv = nullptr;
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        g_current_argv = nullptr;
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        g_current_argv = nullptr;
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        g_current_argv = nullptr;
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        g_current_argv = nullptr;
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        g_current_argv = nullptr;
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        g_current_argv = nullptr;
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    g_current_argv = nullptr;
    return exit_code;
}

}  // namespace mpfn::cli
