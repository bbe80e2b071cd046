#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpfn/features.hpp"

namespace mpfn {

// One (passage, question, choice-pair, label) example with raw tokens.
struct Instance {
    std::string id;
    std::vector<std::string> passage;
    std::vector<std::string> question;
    std::array<std::vector<std::string>, 2> choices;
    std::optional<int> label;  // absent for unlabeled test data
    std::optional<std::string> question_type;  // "commonsense" | "text"
};

struct Corpus {
    std::vector<Instance> train, dev, test;
    std::map<std::string, std::string> metadata;  // tokenizer note, generator seed, ...

    const std::vector<Instance>& split(const std::string& name) const;
    std::vector<Instance>& split(const std::string& name);
};

enum class CorpusFormat { xml, jsonl };

CorpusFormat format_from_string(const std::string& s);

// Whitespace split with leading/trailing ASCII punctuation peeled off into
// separate tokens; fixtures and XML text go through this, JSONL instances are
// pre-tokenized.
std::vector<std::string> tokenize(const std::string& text);

// Loads one split file.  JSONL: one object per line,
// {"id", "passage": [tokens], "question": [tokens],
//  "choices": [[tokens],[tokens]], "label": 0|1}  (label optional).
// XML: the SemEval-2018 Task 11 layout (instance/text/questions/question/
// answer elements, correctness in the answer's `correct` attribute).
std::vector<Instance> load_split(const std::string& path, CorpusFormat format);

// Loads a corpus.  If `path` is a directory, reads train/dev/test.<ext>
// (missing split files become empty splits with a warning); if it is a file,
// its instances land in the train split.
Corpus load_corpus(const std::string& path, CorpusFormat format);

void save_jsonl(const std::vector<Instance>& instances, const std::string& path);

// ---------------------------------------------------------------------------
// Annotation join
// ---------------------------------------------------------------------------

// Sidecar tag file: one line per instance, tags space-separated, aligned 1:1
// with the instance's tokens in the order passage, question, choice 0,
// choice 1.
struct AnnotationSources {
    std::map<std::string, std::string> pos_files;  // split name -> path
    std::map<std::string, std::string> ner_files;
    const RelationLexicon* relations = nullptr;
    const FreqTable* frequencies = nullptr;
};

struct AnnotatedInstance {
    std::string id;
    AnnotatedSeq passage;
    AnnotatedSeq question;
    std::array<AnnotatedSeq, 2> choices;
    std::optional<int> label;
    // Raw tokens kept for export row labels.
    std::array<std::vector<std::string>, 2> choice_tokens;
};

struct AnnotatedCorpus {
    std::vector<AnnotatedInstance> train, dev, test;
    Vocabulary vocab;
    TagVocab pos_tags, ner_tags, rel_tags;

    const std::vector<AnnotatedInstance>& split(const std::string& name) const;
};

// Joins raw instances with tag sidecars, relation lexicon hits, and term
// frequencies.  Vocabularies are built from the corpus (deterministic
// first-seen order); token text and counts are never altered.  When a token
// bears multiple candidate relations one is picked uniformly with an RNG
// seeded by (seed, instance id, sequence, position), so the pick is
// reproducible run to run.
AnnotatedCorpus attach_annotations(const Corpus& corpus, const AnnotationSources& sources,
                                   std::uint64_t seed);

// Same join against fixed vocabularies (e.g. from a checkpoint); unseen
// tokens map to the unknown id.
std::vector<AnnotatedInstance> annotate_with(const std::vector<Instance>& instances,
                                             const AnnotationSources& sources,
                                             const std::string& split_name,
                                             const Vocabulary& vocab, const TagVocab& pos_tags,
                                             const TagVocab& ner_tags, const TagVocab& rel_tags,
                                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic overlap corpus
// ---------------------------------------------------------------------------

// Desk-scale corpus learnable by lexical overlap: the correct choice copies a
// passage span plus distractor noise, the wrong choice draws from a vocabulary
// range disjoint from passages.  Labels are exactly balanced; output is
// bit-reproducible from (n, vocab_size, seed).  All instances land in the
// train split.
Corpus generate_synthetic(int n, int vocab_size, std::uint64_t seed);

// Bag-of-words overlap count between choice and passage; classifies the
// synthetic corpus perfectly by construction.
int overlap_count(const std::vector<std::string>& choice, const std::vector<std::string>& passage);

}  // namespace mpfn
