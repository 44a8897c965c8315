#include "cldl/results.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cldl/errors.hpp"

namespace cldl {
namespace {

constexpr const char* kAttackHeader =
    "dataset,family,epsilon,n_examples,clean_accuracy,adversarial_accuracy";

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot open file for writing: " + path);
  out << text;
  if (!out) throw config_error("failed to write file: " + path);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_csv_double(const std::string& s, const std::string& path) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw config_error("malformed number '" + s + "' in " + path);
  return v;
}

std::int64_t parse_csv_int(const std::string& s, const std::string& path) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw config_error("malformed integer '" + s + "' in " + path);
  return v;
}

// (family, sorted epsilons) rows in first-seen family order across runs.
std::vector<std::pair<std::string, double>> merged_keys(
    const std::vector<NamedRun>& runs) {
  std::vector<std::string> families;
  for (const NamedRun& run : runs)
    for (const TransferCell& c : run.second)
      if (std::find(families.begin(), families.end(), c.family) ==
          families.end())
        families.push_back(c.family);

  std::vector<std::pair<std::string, double>> keys;
  for (const std::string& fam : families) {
    std::vector<double> eps;
    for (const NamedRun& run : runs)
      for (const TransferCell& c : run.second)
        if (c.family == fam &&
            std::find(eps.begin(), eps.end(), c.epsilon) == eps.end())
          eps.push_back(c.epsilon);
    std::sort(eps.begin(), eps.end());
    for (double e : eps) keys.emplace_back(fam, e);
  }
  return keys;
}

const TransferCell* find_cell(const std::vector<TransferCell>& cells,
                              const std::string& family, double epsilon) {
  for (const TransferCell& c : cells)
    if (c.family == family && c.epsilon == epsilon) return &c;
  return nullptr;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_training_log_csv(const std::string& path,
                            const std::vector<StepRecord>& log) {
  std::string text = "epoch,step,mean_kl,l_ld,l_gd,total\n";
  for (const StepRecord& r : log) {
    text += std::to_string(r.epoch);
    text += ',';
    text += std::to_string(r.step);
    text += ',';
    text += format_double(r.mean_kl);
    text += ',';
    text += format_double(r.label_diversity);
    text += ',';
    text += format_double(r.gradient_alignment);
    text += ',';
    text += format_double(r.total);
    text += '\n';
  }
  write_text_file(path, text);
}

std::string attack_csv_text(const std::vector<TransferCell>& cells) {
  std::string text = std::string(kAttackHeader) + "\n";
  for (const TransferCell& c : cells) {
    text += c.dataset;
    text += ',';
    text += c.family;
    text += ',';
    text += format_double(c.epsilon);
    text += ',';
    text += std::to_string(c.n_examples);
    text += ',';
    text += format_double(c.clean_accuracy);
    text += ',';
    text += format_double(c.adversarial_accuracy);
    text += '\n';
  }
  return text;
}

void write_attack_csv(const std::string& path,
                      const std::vector<TransferCell>& cells) {
  write_text_file(path, attack_csv_text(cells));
}

std::vector<TransferCell> read_attack_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open results file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw config_error("empty results file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kAttackHeader)
    throw config_error("unexpected results header in " + path + ": " + line);

  std::vector<TransferCell> cells;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_commas(line);
    if (f.size() != 6)
      throw config_error("expected 6 columns in " + path + ", got " +
                         std::to_string(f.size()));
    TransferCell c;
    c.dataset = f[0];
    c.family = f[1];
    c.epsilon = parse_csv_double(f[2], path);
    c.n_examples = parse_csv_int(f[3], path);
    c.clean_accuracy = parse_csv_double(f[4], path);
    c.adversarial_accuracy = parse_csv_double(f[5], path);
    cells.push_back(std::move(c));
  }
  return cells;
}

std::string merged_attack_csv(const std::vector<NamedRun>& runs) {
  if (runs.empty()) throw config_error("nothing to merge");
  std::string text = "family,epsilon";
  for (const NamedRun& run : runs)
    text += ",n_" + run.first + ",clean_" + run.first + ",adv_" + run.first;
  text += '\n';

  for (const auto& [family, epsilon] : merged_keys(runs)) {
    text += family;
    text += ',';
    text += format_double(epsilon);
    for (const NamedRun& run : runs) {
      const TransferCell* c = find_cell(run.second, family, epsilon);
      if (c) {
        text += ',' + std::to_string(c->n_examples);
        text += ',' + format_double(c->clean_accuracy);
        text += ',' + format_double(c->adversarial_accuracy);
      } else {
        text += ",,,";
      }
    }
    text += '\n';
  }
  return text;
}

std::string comparison_text_table(const std::vector<NamedRun>& runs) {
  if (runs.empty()) throw config_error("nothing to compare");
  std::ostringstream out;
  out << std::left << std::setw(10) << "family" << std::right << std::setw(10)
      << "epsilon";
  for (const NamedRun& run : runs) {
    std::string id = run.first;
    if (id.size() > 14) id = id.substr(0, 14);
    out << std::setw(16) << id;
  }
  out << '\n';

  std::string prev_family;
  for (const auto& [family, epsilon] : merged_keys(runs)) {
    if (!prev_family.empty() && family != prev_family) out << '\n';
    prev_family = family;
    out << std::left << std::setw(10) << family << std::right << std::setw(10)
        << std::fixed << std::setprecision(4) << epsilon;
    for (const NamedRun& run : runs) {
      const TransferCell* c = find_cell(run.second, family, epsilon);
      if (c)
        out << std::setw(16) << std::fixed << std::setprecision(4)
            << c->adversarial_accuracy;
      else
        out << std::setw(16) << "-";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cldl
