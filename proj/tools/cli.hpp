#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mpfn/model.hpp"
#include "mpfn/training.hpp"

namespace mpfn::cli {

// Exit code classes.
constexpr int kExitOk = 0;
constexpr int kExitError = 1;    // unclassified
constexpr int kExitUsage = 2;    // bad flags / API misuse / bad config
constexpr int kExitData = 3;     // malformed or inconsistent input data
constexpr int kExitNumeric = 4;  // non-finite values or failed numeric checks
constexpr int kExitIo = 5;       // missing or unwritable files

// Entry point for `mpfn <subcommand> ...`; args excludes argv[0].
int run(const std::vector<std::string>& args);

// One ablation row: a config trained once per seed.
struct AblationRun {
    std::string label;
    std::vector<double> dev_accs;      // best dev accuracy per seed
    double mean_dev_acc = 0.0;
    std::optional<double> reference;   // full-scale MCScript accuracy, when known
};

// Trains `base` (with fresh parameters per seed) on the corpus and records
// best-dev accuracies.  Used by the ablate command and the acceptance suite.
AblationRun run_config(const AnnotatedCorpus& data, const ModelConfig& config,
                       const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                       const std::string& label, std::optional<double> reference);

// Reference full-scale MCScript accuracies for the perspective sweep, the
// post-aggregation variant, and the encoding-input ablations.
std::optional<double> reference_accuracy(const std::string& table, const std::string& row);

}  // namespace mpfn::cli
