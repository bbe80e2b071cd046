#include "mpfn/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "mpfn/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mpfn {

const std::vector<Instance>& Corpus::split(const std::string& name) const {
    return const_cast<Corpus*>(this)->split(name);
}

std::vector<Instance>& Corpus::split(const std::string& name) {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw UsageError("unknown split: " + name);
}

const std::vector<AnnotatedInstance>& AnnotatedCorpus::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw UsageError("unknown split: " + name);
}

CorpusFormat format_from_string(const std::string& s) {
    if (s == "xml") return CorpusFormat::xml;
    if (s == "jsonl") return CorpusFormat::jsonl;
    throw UsageError("unknown corpus format: " + s + " (expected xml or jsonl)");
}

std::vector<std::string> tokenize(const std::string& text) {
    static const std::string punct = ".,!?;:\"'()[]";
    std::vector<std::string> tokens;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) {
        std::size_t begin = 0, end = word.size();
        while (begin < end && punct.find(word[begin]) != std::string::npos) {
            tokens.push_back(std::string(1, word[begin]));
            ++begin;
        }
        std::vector<std::string> trailing;
        while (end > begin && punct.find(word[end - 1]) != std::string::npos) {
            trailing.push_back(std::string(1, word[end - 1]));
            --end;
        }
        if (end > begin) tokens.push_back(word.substr(begin, end - begin));
        tokens.insert(tokens.end(), trailing.rbegin(), trailing.rend());
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> token_array(const json& j, const std::string& field,
                                     const std::string& where) {
    if (!j.contains(field) || !j[field].is_array()) {
        throw DataError(where + ": missing token array \"" + field + "\"");
    }
    std::vector<std::string> tokens;
    for (const auto& t : j[field]) {
        if (!t.is_string()) throw DataError(where + ": non-string token in \"" + field + "\"");
        tokens.push_back(t.get<std::string>());
    }
    if (tokens.empty()) throw DataError(where + ": empty token sequence \"" + field + "\"");
    return tokens;
}

std::vector<Instance> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::vector<Instance> instances;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where + ": " + e.what());
        }
        Instance inst;
        inst.id = j.value("id", "line-" + std::to_string(lineno));
        inst.passage = token_array(j, "passage", where);
        inst.question = token_array(j, "question", where);
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].size() != 2) {
            throw DataError(where + ": expected exactly 2 choices");
        }
        for (int k = 0; k < 2; ++k) {
            std::vector<std::string> toks;
            for (const auto& t : j["choices"][static_cast<std::size_t>(k)]) {
                if (!t.is_string()) throw DataError(where + ": non-string choice token");
                toks.push_back(t.get<std::string>());
            }
            if (toks.empty()) throw DataError(where + ": empty choice " + std::to_string(k));
            inst.choices[static_cast<std::size_t>(k)] = std::move(toks);
        }
        if (j.contains("label") && !j["label"].is_null()) {
            const int label = j["label"].get<int>();
            if (label != 0 && label != 1) throw DataError(where + ": label must be 0 or 1");
            inst.label = label;
        }
        if (j.contains("question_type")) inst.question_type = j["question_type"].get<std::string>();
        instances.push_back(std::move(inst));
    }
    return instances;
}

}  // namespace

void save_jsonl(const std::vector<Instance>& instances, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus file: " + path);
    for (const auto& inst : instances) {
        json j;
        j["id"] = inst.id;
        j["passage"] = inst.passage;
        j["question"] = inst.question;
        j["choices"] = {inst.choices[0], inst.choices[1]};
        if (inst.label) j["label"] = *inst.label;
        if (inst.question_type) j["question_type"] = *inst.question_type;
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// XML (SemEval-2018 Task 11 layout)
// ---------------------------------------------------------------------------

namespace {

struct XmlTag {
    std::string name;
    std::map<std::string, std::string> attrs;
    bool closing = false;
    bool self_closing = false;
};

std::string decode_entities(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '&') {
            out += s[i];
            continue;
        }
        const auto semi = s.find(';', i);
        const std::string ent = semi == std::string::npos ? "" : s.substr(i + 1, semi - i - 1);
        if (ent == "amp") out += '&';
        else if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else { out += s[i]; continue; }
        i = semi;
    }
    return out;
}

// Minimal reader sufficient for the flat question-answer layout: tags with
// quoted attributes, text content, comments and the xml declaration skipped.
class XmlReader {
public:
    explicit XmlReader(std::string content, std::string path)
        : content_(std::move(content)), path_(std::move(path)) {}

    // Returns false at end of input.  Text content between tags accumulates
    // into `pending_text`.
    bool next(XmlTag& tag, std::string& pending_text) {
        pending_text.clear();
        while (pos_ < content_.size()) {
            const auto lt = content_.find('<', pos_);
            if (lt == std::string::npos) {
                pos_ = content_.size();
                return false;
            }
            pending_text += content_.substr(pos_, lt - pos_);
            auto gt = content_.find('>', lt);
            if (gt == std::string::npos) fail(lt, "unterminated tag");
            std::string body = content_.substr(lt + 1, gt - lt - 1);
            pos_ = gt + 1;
            if (body.rfind("?", 0) == 0 || body.rfind("!--", 0) == 0 || body.rfind("!", 0) == 0) {
                continue;  // declaration / comment / doctype
            }
            parse_tag(body, lt, tag);
            pending_text = decode_entities(pending_text);
            return true;
        }
        return false;
    }

private:
    void parse_tag(std::string body, std::size_t at, XmlTag& tag) {
        tag = XmlTag{};
        if (!body.empty() && body.front() == '/') {
            tag.closing = true;
            body.erase(body.begin());
        }
        if (!body.empty() && body.back() == '/') {
            tag.self_closing = true;
            body.pop_back();
        }
        std::size_t i = 0;
        while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i]))) ++i;
        tag.name = body.substr(0, i);
        if (tag.name.empty()) fail(at, "empty tag name");
        while (i < body.size()) {
            while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
            if (i >= body.size()) break;
            const auto eq = body.find('=', i);
            if (eq == std::string::npos) fail(at, "attribute without value in <" + tag.name + ">");
            const std::string key = body.substr(i, eq - i);
            std::size_t q = eq + 1;
            if (q >= body.size() || (body[q] != '"' && body[q] != '\'')) {
                fail(at, "unquoted attribute value in <" + tag.name + ">");
            }
            const char quote = body[q];
            const auto close = body.find(quote, q + 1);
            if (close == std::string::npos) fail(at, "unterminated attribute in <" + tag.name + ">");
            tag.attrs[key] = decode_entities(body.substr(q + 1, close - q - 1));
            i = close + 1;
        }
    }

    [[noreturn]] void fail(std::size_t at, const std::string& msg) {
        int line = 1;
        for (std::size_t i = 0; i < at && i < content_.size(); ++i)
            if (content_[i] == '\n') ++line;
        throw DataError(path_ + ":" + std::to_string(line) + ": " + msg);
    }

    std::string content_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::vector<Instance> load_xml(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    XmlReader reader(buf.str(), path);

    std::vector<Instance> instances;
    std::string instance_id, passage_text;
    std::string question_id, question_text, question_type;
    std::vector<std::pair<std::string, std::string>> answers;  // (text, correct-attr)
    bool in_text = false;

    XmlTag tag;
    std::string text;
    while (reader.next(tag, text)) {
        if (in_text) passage_text += text;
        if (tag.name == "instance" && !tag.closing) {
            instance_id = tag.attrs.count("id") ? tag.attrs["id"] : std::to_string(instances.size());
            passage_text.clear();
        } else if (tag.name == "text") {
            in_text = !tag.closing && !tag.self_closing;
        } else if (tag.name == "question" && !tag.closing) {
            question_id = tag.attrs.count("id") ? tag.attrs["id"] : "q";
            question_text = tag.attrs.count("text") ? tag.attrs["text"] : "";
            question_type = tag.attrs.count("type") ? tag.attrs["type"] : "";
            answers.clear();
        } else if (tag.name == "answer") {
            answers.emplace_back(tag.attrs.count("text") ? tag.attrs["text"] : "",
                                 tag.attrs.count("correct") ? tag.attrs["correct"] : "");
        } else if (tag.name == "question" && tag.closing) {
            const std::string where = path + ": instance " + instance_id + " question " + question_id;
            if (answers.size() != 2) {
                throw DataError(where + ": expected exactly 2 answers, got " +
                                std::to_string(answers.size()));
            }
            Instance inst;
            inst.id = instance_id + "." + question_id;
            inst.passage = tokenize(passage_text);
            inst.question = tokenize(question_text);
            if (inst.passage.empty()) throw DataError(where + ": empty passage text");
            if (inst.question.empty()) throw DataError(where + ": empty question text");
            std::optional<int> label;
            for (int k = 0; k < 2; ++k) {
                inst.choices[static_cast<std::size_t>(k)] = tokenize(answers[static_cast<std::size_t>(k)].first);
                if (inst.choices[static_cast<std::size_t>(k)].empty()) {
                    throw DataError(where + ": empty answer " + std::to_string(k));
                }
                const std::string& correct = answers[static_cast<std::size_t>(k)].second;
                if (correct == "True" || correct == "true") {
                    if (label) throw DataError(where + ": multiple answers marked correct");
                    label = k;
                }
            }
            inst.label = label;
            if (!question_type.empty()) inst.question_type = question_type;
            instances.push_back(std::move(inst));
        }
    }
    return instances;
}

}  // namespace

std::vector<Instance> load_split(const std::string& path, CorpusFormat format) {
    auto instances = format == CorpusFormat::jsonl ? load_jsonl(path) : load_xml(path);
    if (instances.empty()) {
        std::cerr << "warning: " << path << " contains no instances\n";
    }
    std::unordered_set<std::string> seen;
    for (const auto& inst : instances) {
        if (!seen.insert(inst.id).second) {
            throw DataError(path + ": duplicate instance id \"" + inst.id + "\"");
        }
    }
    return instances;
}

Corpus load_corpus(const std::string& path, CorpusFormat format) {
    Corpus corpus;
    corpus.metadata["tokenizer"] = "whitespace+punct, case-preserved";
    const std::string ext = format == CorpusFormat::jsonl ? ".jsonl" : ".xml";
    if (fs::is_directory(path)) {
        for (const std::string name : {"train", "dev", "test"}) {
            const fs::path file = fs::path(path) / (name + ext);
            if (fs::exists(file)) {
                corpus.split(name) = load_split(file.string(), format);
            } else {
                std::cerr << "warning: no " << name << " split at " << file.string() << "\n";
            }
        }
    } else if (fs::exists(path)) {
        corpus.train = load_split(path, format);
    } else {
        throw IoError("corpus path does not exist: " + path);
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Annotation join
// ---------------------------------------------------------------------------

namespace {

// Tags for one split: per instance, a flat tag list aligned with the tokens
// of passage|question|choice0|choice1.
std::vector<std::vector<std::string>> load_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tag sidecar: " + path);
    std::vector<std::vector<std::string>> lines;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::vector<std::string> tags;
        std::string tag;
        while (ss >> tag) tags.push_back(tag);
        lines.push_back(std::move(tags));
    }
    return lines;
}

struct VocabRefs {
    Vocabulary* vocab_mut = nullptr;
    const Vocabulary* vocab = nullptr;
    TagVocab* pos_mut = nullptr;
    const TagVocab* pos = nullptr;
    TagVocab* ner_mut = nullptr;
    const TagVocab* ner = nullptr;
    const TagVocab* rel = nullptr;

    int word_id(const std::string& t) const { return vocab_mut ? vocab_mut->add(t) : vocab->id(t); }
    int pos_id(const std::string& t) const { return pos_mut ? pos_mut->add(t) : pos->id(t); }
    int ner_id(const std::string& t) const { return ner_mut ? ner_mut->add(t) : ner->id(t); }
};

std::vector<AnnotatedInstance> annotate_split(const std::vector<Instance>& instances,
                                              const AnnotationSources& sources,
                                              const std::string& split_name, VocabRefs refs,
                                              std::uint64_t seed) {
    std::vector<std::vector<std::string>> pos_lines, ner_lines;
    if (auto it = sources.pos_files.find(split_name); it != sources.pos_files.end()) {
        pos_lines = load_sidecar(it->second);
        if (pos_lines.size() != instances.size()) {
            throw DataError("POS sidecar " + it->second + ": " + std::to_string(pos_lines.size()) +
                            " lines for " + std::to_string(instances.size()) + " instances");
        }
    }
    if (auto it = sources.ner_files.find(split_name); it != sources.ner_files.end()) {
        ner_lines = load_sidecar(it->second);
        if (ner_lines.size() != instances.size()) {
            throw DataError("NER sidecar " + it->second + ": " + std::to_string(ner_lines.size()) +
                            " lines for " + std::to_string(instances.size()) + " instances");
        }
    }

    std::vector<AnnotatedInstance> out;
    out.reserve(instances.size());
    for (std::size_t idx = 0; idx < instances.size(); ++idx) {
        const Instance& inst = instances[idx];
        const std::size_t total = inst.passage.size() + inst.question.size() +
                                  inst.choices[0].size() + inst.choices[1].size();
        const std::vector<std::string>* pos_tags_line =
            pos_lines.empty() ? nullptr : &pos_lines[idx];
        const std::vector<std::string>* ner_tags_line =
            ner_lines.empty() ? nullptr : &ner_lines[idx];
        if (pos_tags_line && pos_tags_line->size() != total) {
            throw DataError("POS tags misaligned for instance \"" + inst.id + "\": " +
                            std::to_string(pos_tags_line->size()) + " tags for " +
                            std::to_string(total) + " tokens");
        }
        if (ner_tags_line && ner_tags_line->size() != total) {
            throw DataError("NER tags misaligned for instance \"" + inst.id + "\": " +
                            std::to_string(ner_tags_line->size()) + " tags for " +
                            std::to_string(total) + " tokens");
        }

        // Sets of tokens on the "other side" for relation matching.
        auto to_set = [](std::initializer_list<const std::vector<std::string>*> seqs) {
            std::unordered_set<std::string> s;
            for (const auto* seq : seqs)
                for (const auto& t : *seq) s.insert(t);
            return s;
        };
        const auto pq_other = to_set({&inst.question, &inst.choices[0], &inst.choices[1]});
        const auto q_other = to_set({&inst.passage, &inst.choices[0], &inst.choices[1]});
        const auto c_other = to_set({&inst.passage, &inst.question});

        AnnotatedInstance ai;
        ai.id = inst.id;
        ai.label = inst.label;
        ai.choice_tokens = inst.choices;

        std::size_t flat = 0;  // position within the sidecar tag line
        auto annotate_seq = [&](const std::vector<std::string>& tokens,
                                const std::unordered_set<std::string>& others,
                                std::uint64_t seq_tag) {
            AnnotatedSeq seq;
            seq.reserve(tokens.size());
            for (std::size_t t = 0; t < tokens.size(); ++t, ++flat) {
                AnnotatedToken at;
                at.word_id = refs.word_id(tokens[t]);
                if (pos_tags_line) at.pos_id = refs.pos_id((*pos_tags_line)[flat]);
                if (ner_tags_line) at.ner_id = refs.ner_id((*ner_tags_line)[flat]);
                if (sources.frequencies) at.tf = term_frequency(tokens[t], *sources.frequencies);
                if (sources.relations) {
                    std::vector<std::string> candidates;
                    for (const auto& e : sources.relations->entries(tokens[t])) {
                        if (others.count(e.other)) candidates.push_back(e.relation);
                    }
                    if (candidates.size() == 1) {
                        at.rel_id = refs.rel->id(candidates[0]);
                    } else if (candidates.size() > 1) {
                        Rng rng = make_rng(mix64(seed, fnv1a(inst.id), seq_tag,
                                                 static_cast<std::uint64_t>(t)));
                        at.rel_id = refs.rel->id(candidates[uniform_index(rng, candidates.size())]);
                    }
                }
                seq.push_back(at);
            }
            return seq;
        };

        ai.passage = annotate_seq(inst.passage, pq_other, 0);
        ai.question = annotate_seq(inst.question, q_other, 1);
        ai.choices[0] = annotate_seq(inst.choices[0], c_other, 2);
        ai.choices[1] = annotate_seq(inst.choices[1], c_other, 3);
        out.push_back(std::move(ai));
    }
    return out;
}

}  // namespace

AnnotatedCorpus attach_annotations(const Corpus& corpus, const AnnotationSources& sources,
                                   std::uint64_t seed) {
    AnnotatedCorpus out;
    if (sources.relations) {
        for (const auto& name : sources.relations->relation_names()) out.rel_tags.add(name);
    }
    VocabRefs refs;
    refs.vocab_mut = &out.vocab;
    refs.pos_mut = &out.pos_tags;
    refs.ner_mut = &out.ner_tags;
    refs.rel = &out.rel_tags;
    out.train = annotate_split(corpus.train, sources, "train", refs, seed);
    out.dev = annotate_split(corpus.dev, sources, "dev", refs, seed);
    out.test = annotate_split(corpus.test, sources, "test", refs, seed);
    return out;
}

std::vector<AnnotatedInstance> annotate_with(const std::vector<Instance>& instances,
                                             const AnnotationSources& sources,
                                             const std::string& split_name,
                                             const Vocabulary& vocab, const TagVocab& pos_tags,
                                             const TagVocab& ner_tags, const TagVocab& rel_tags,
                                             std::uint64_t seed) {
    VocabRefs refs;
    refs.vocab = &vocab;
    refs.pos = &pos_tags;
    refs.ner = &ner_tags;
    refs.rel = &rel_tags;
    return annotate_split(instances, sources, split_name, refs, seed);
}

// ---------------------------------------------------------------------------
// Synthetic overlap corpus
// ---------------------------------------------------------------------------

Corpus generate_synthetic(int n, int vocab_size, std::uint64_t seed) {
    if (n < 2) throw UsageError("generate_synthetic: n must be >= 2");
    if (vocab_size < 20) throw UsageError("generate_synthetic: vocab_size must be >= 20");

    std::vector<std::string> vocab;
    vocab.reserve(static_cast<std::size_t>(vocab_size));
    for (int i = 0; i < vocab_size; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "w%03d", i);
        vocab.emplace_back(buf);
    }
    // Passages and questions use the content range; wrong choices draw from
    // the disjoint distractor range.
    const int content = vocab_size * 3 / 5;
    Rng rng = make_rng(mix64(seed, 0x53594e5448ULL));

    auto sample_distinct = [&](int lo, int hi, int count) {
        std::vector<int> pool;
        for (int i = lo; i < hi; ++i) pool.push_back(i);
        std::vector<std::string> picked;
        for (int k = 0; k < count; ++k) {
            const std::size_t j = uniform_index(rng, pool.size());
            picked.push_back(vocab[static_cast<std::size_t>(pool[j])]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
        }
        return picked;
    };

    Corpus corpus;
    corpus.metadata["generator"] = "synthetic-overlap";
    corpus.metadata["n"] = std::to_string(n);
    corpus.metadata["vocab_size"] = std::to_string(vocab_size);
    corpus.metadata["seed"] = std::to_string(seed);
    corpus.metadata["tokenizer"] = "pre-tokenized";

    for (int i = 0; i < n; ++i) {
        Instance inst;
        inst.id = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
        const int plen = 8 + static_cast<int>(uniform_index(rng, 5));  // 8..12
        inst.passage = sample_distinct(0, content, plen);
        inst.question = sample_distinct(0, content, 4 + static_cast<int>(uniform_index(rng, 3)));

        // Correct choice: a 3-token passage span plus distractor noise.
        const std::size_t start = uniform_index(rng, static_cast<std::size_t>(plen - 2));
        std::vector<std::string> correct(inst.passage.begin() + static_cast<std::ptrdiff_t>(start),
                                         inst.passage.begin() + static_cast<std::ptrdiff_t>(start + 3));
        for (const auto& noise : sample_distinct(content, vocab_size,
                                                 1 + static_cast<int>(uniform_index(rng, 2)))) {
            correct.push_back(noise);
        }
        // Wrong choice: distractor tokens only, disjoint from every passage.
        std::vector<std::string> wrong =
            sample_distinct(content, vocab_size, 4 + static_cast<int>(uniform_index(rng, 2)));

        const int label = i % 2;
        inst.choices[static_cast<std::size_t>(label)] = std::move(correct);
        inst.choices[static_cast<std::size_t>(1 - label)] = std::move(wrong);
        inst.label = label;
        corpus.train.push_back(std::move(inst));
    }
    return corpus;
}

int overlap_count(const std::vector<std::string>& choice,
                  const std::vector<std::string>& passage) {
    std::unordered_set<std::string> pset(passage.begin(), passage.end());
    int count = 0;
    for (const auto& t : choice)
        if (pset.count(t)) ++count;
    return count;
}

}  // namespace mpfn
