#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cldl/attacks.hpp"
#include "cldl/trainer.hpp"

namespace cldl {

// Shortest round-trip decimal form of a double ("0.1", not
// "0.10000000000000001"); reading it back recovers the exact bits.
std::string format_double(double v);

// Training log CSV with header epoch,step,mean_kl,l_ld,l_gd,total.
void write_training_log_csv(const std::string& path,
                            const std::vector<StepRecord>& log);

// Attack results CSV with header
// dataset,family,epsilon,n_examples,clean_accuracy,adversarial_accuracy.
void write_attack_csv(const std::string& path,
                      const std::vector<TransferCell>& cells);
std::string attack_csv_text(const std::vector<TransferCell>& cells);

// Parses a file produced by write_attack_csv. Throws config_error on a
// missing file, wrong header, or malformed rows.
std::vector<TransferCell> read_attack_csv(const std::string& path);

// A named run for side-by-side comparison.
using NamedRun = std::pair<std::string, std::vector<TransferCell>>;

// Merged CSV over runs, keyed on (family, epsilon) in first-seen family
// order with epsilons ascending; per run it emits
// n_<id>,clean_<id>,adv_<id> columns. Cells absent from a run are empty.
std::string merged_attack_csv(const std::vector<NamedRun>& runs);

// Fixed-width text table of adversarial accuracy, one column per run,
// grouped by family and sorted by epsilon within each group.
std::string comparison_text_table(const std::vector<NamedRun>& runs);

}  // namespace cldl
