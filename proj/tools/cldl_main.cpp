// Command-line front end: train ensembles, craft transfer attacks against a
// surrogate, evaluate checkpoints, and compare result tables.
//
// Exit codes: 0 success, 2 configuration problem (bad flags, files, or
// settings), 3 numerical abort during training, 1 unexpected internal error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cldl/attacks.hpp"
#include "cldl/checkpoint.hpp"
#include "cldl/config.hpp"
#include "cldl/dataset.hpp"
#include "cldl/errors.hpp"
#include "cldl/results.hpp"
#include "cldl/synth.hpp"
#include "cldl/trainer.hpp"

namespace fs = std::filesystem;
using namespace cldl;

namespace {

std::vector<std::string> split_list(const std::string& joined) {
  std::vector<std::string> out;
  std::stringstream ss(joined);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Dataset load_split(const AppConfig& cfg, const std::string& stem) {
  const fs::path dir(cfg.data_dir);
  return load_idx((dir / (stem + "-images.idx")).string(),
                  (dir / (stem + "-labels.idx")).string());
}

std::vector<double> default_sweep(const std::string& dataset_tag) {
  if (dataset_tag.find("cifar") != std::string::npos)
    return {0.01, 0.02, 0.03, 0.04};
  return {0.1, 0.15, 0.2, 0.25};
}

std::string run_id_from_path(const std::string& path) {
  return fs::path(path).stem().string();
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::uint64_t* seed_override) {
  AppConfig cfg = parse_config_file(config_path);
  if (seed_override) cfg.train.seed = *seed_override;
  cfg.train.validate();

  const Dataset data = load_split(cfg, "train");
  data.validate();

  const TrainResult result = train(cfg.train, data);

  ModelBundle bundle;
  bundle.ensemble = result.ensemble;
  bundle.lcm = result.lcm;
  bundle.arch = cfg.train.arch;
  bundle.dataset = cfg.train.dataset;
  save_checkpoint(out_path, bundle);
  write_training_log_csv(out_path + ".log.csv", result.log);

  std::cout << "trained " << cfg.train.n_members << " member(s) for "
            << cfg.train.epochs << " epoch(s); final total "
            << format_double(result.log.back().total) << "\n"
            << "checkpoint: " << out_path << "\n"
            << "log: " << out_path << ".log.csv\n";
  return 0;
}

int cmd_attack(const std::string& target_path, const std::string& surrogate_path,
               const std::string& out_path, const std::string& config_path,
               const std::string& families_joined,
               const std::string& epsilons_joined, std::uint64_t seed) {
  const ModelBundle target = load_checkpoint(target_path);
  const ModelBundle surrogate = load_checkpoint(surrogate_path);
  AppConfig cfg;
  if (!config_path.empty()) cfg = parse_config_file(config_path);

  const std::vector<std::string> families = split_list(families_joined);
  if (families.empty()) throw config_error("empty attack family list");

  std::vector<double> epsilons;
  if (epsilons_joined == "@default") {
    epsilons = default_sweep(target.dataset);
  } else {
    for (const std::string& tok : split_list(epsilons_joined)) {
      try {
        epsilons.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw config_error("bad epsilon value: " + tok);
      }
    }
  }
  if (epsilons.empty()) throw config_error("empty epsilon sweep");

  std::vector<AttackConfig> attacks;
  for (const std::string& family : families) {
    for (double eps : epsilons) {
      AttackConfig a;
      a.family = family;
      a.epsilon = eps;
      a.steps = cfg.attack_steps;
      a.step_size = cfg.attack_step_size;
      a.momentum = cfg.attack_momentum;
      a.loss = cfg.attack_loss;
      a.seed = seed;
      a.validate();
      attacks.push_back(std::move(a));
    }
  }

  const Dataset data = load_split(cfg, "test");
  data.validate();
  const std::int64_t n = std::min<std::int64_t>(cfg.eval_count, data.size());

  const LabelConfusionModel* lcm =
      cfg.attack_loss == "kl-to-sld" ? &surrogate.lcm : nullptr;
  const std::vector<TransferCell> cells =
      blackbox_transfer_eval(target.ensemble, surrogate.ensemble, lcm, data, n,
                             cfg.attack_batch, attacks, target.dataset);

  write_attack_csv(out_path, cells);
  std::cout << comparison_text_table({{run_id_from_path(out_path), cells}});
  std::cout << "results: " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& target_path, const std::string& config_path,
             const std::string& out_path) {
  const ModelBundle target = load_checkpoint(target_path);
  AppConfig cfg;
  if (!config_path.empty()) cfg = parse_config_file(config_path);

  const Dataset data = load_split(cfg, "test");
  data.validate();
  const std::int64_t n = std::min<std::int64_t>(cfg.eval_count, data.size());

  const std::vector<TransferCell> cells = blackbox_transfer_eval(
      target.ensemble, target.ensemble, nullptr, data, n, cfg.attack_batch, {},
      target.dataset);
  std::cout << "clean_accuracy " << format_double(cells[0].clean_accuracy)
            << " on " << n << " example(s)\n";
  if (!out_path.empty()) {
    write_attack_csv(out_path, cells);
    std::cout << "results: " << out_path << "\n";
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& csv_paths,
                const std::string& out_path) {
  std::vector<NamedRun> runs;
  runs.reserve(csv_paths.size());
  for (const std::string& path : csv_paths)
    runs.emplace_back(run_id_from_path(path), read_attack_csv(path));

  std::cout << comparison_text_table(runs);
  if (!out_path.empty()) {
    const std::string merged = merged_attack_csv(runs);
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot open file for writing: " + out_path);
    out << merged;
    std::cout << "merged: " << out_path << "\n";
  }
  return 0;
}

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed,
                 std::int64_t train_count, std::int64_t eval_count) {
  if (train_count < 1 || eval_count < 1)
    throw config_error("gen-data counts must be positive");
  fs::create_directories(out_dir);
  Rng root(seed);
  const Dataset train_split = make_synthetic_digits(
      train_count, root.child("train").next_u64(), "train");
  const Dataset test_split =
      make_synthetic_digits(eval_count, root.child("eval").next_u64(), "test");

  const fs::path dir(out_dir);
  save_idx(train_split, (dir / "train-images.idx").string(),
           (dir / "train-labels.idx").string());
  save_idx(test_split, (dir / "test-images.idx").string(),
           (dir / "test-labels.idx").string());
  std::cout << "wrote " << train_count << " train and " << eval_count
            << " test example(s) under " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensemble training with a label confusion model, plus "
               "black-box transfer attack evaluation"};
  app.require_subcommand(0, 1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train an ensemble from a config");
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  train_cmd->add_option("--config", train_config, "key=value settings file")
      ->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path")
      ->required();
  train_cmd->add_option("--seed", train_seed, "override the config seed")
      ->each([&](const std::string&) { train_seed_set = true; });

  // attack
  auto* attack_cmd =
      app.add_subcommand("attack", "transfer-attack a target via a surrogate");
  std::string atk_target, atk_surrogate, atk_out, atk_config;
  std::string atk_families = "fgsm,bim,pgd,mim";
  std::string atk_epsilons = "@default";
  std::uint64_t atk_seed = 1;
  attack_cmd->add_option("--target", atk_target, "checkpoint under evaluation")
      ->required();
  attack_cmd
      ->add_option("--surrogate", atk_surrogate,
                   "checkpoint the attacks are crafted against")
      ->required();
  attack_cmd->add_option("--out", atk_out, "results CSV path")->required();
  attack_cmd->add_option("--config", atk_config,
                         "optional settings file (attack_* and data keys)");
  attack_cmd->add_option("--families", atk_families,
                         "comma-separated attack families");
  attack_cmd->add_option("--epsilons", atk_epsilons,
                         "comma-separated max-norm budgets");
  attack_cmd->add_option("--seed", atk_seed, "root seed for randomized starts");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "clean accuracy of a checkpoint");
  std::string eval_target, eval_config, eval_out;
  eval_cmd->add_option("--target", eval_target, "checkpoint to score")
      ->required();
  eval_cmd->add_option("--config", eval_config, "optional settings file");
  eval_cmd->add_option("--out", eval_out, "optional results CSV path");

  // compare
  auto* compare_cmd =
      app.add_subcommand("compare", "align several results CSVs side by side");
  std::vector<std::string> compare_inputs;
  std::string compare_out;
  compare_cmd->add_option("csvs", compare_inputs, "results CSV files")
      ->required()
      ->expected(-1);
  compare_cmd->add_option("--out", compare_out, "merged CSV output path");

  // gen-data
  auto* gen_cmd = app.add_subcommand(
      "gen-data", "write a synthetic digit dataset in IDX format");
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  std::int64_t gen_train = 10000, gen_eval = 2000;
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--seed", gen_seed, "generation seed");
  gen_cmd->add_option("--train-count", gen_train, "training examples");
  gen_cmd->add_option("--eval-count", gen_eval, "held-out examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd)
      return cmd_train(train_config, train_out,
                       train_seed_set ? &train_seed : nullptr);
    if (*attack_cmd)
      return cmd_attack(atk_target, atk_surrogate, atk_out, atk_config,
                        atk_families, atk_epsilons, atk_seed);
    if (*eval_cmd) return cmd_eval(eval_target, eval_config, eval_out);
    if (*compare_cmd) return cmd_compare(compare_inputs, compare_out);
    if (*gen_cmd) return cmd_gen_data(gen_out, gen_seed, gen_train, gen_eval);
    std::cerr << app.help();
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const numerical_error& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
