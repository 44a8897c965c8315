#include "cldl/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cldl/errors.hpp"

namespace cldl {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::int64_t out = 0;
  const auto* begin = value.data();
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    throw config_error("key " + key + ": expected an integer, got '" + value +
                       "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* begin = value.data();
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    throw config_error("key " + key + ": expected an unsigned integer, got '" +
                       value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* begin = value.data();
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    throw config_error("key " + key + ": expected a number, got '" + value +
                       "'");
  return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& key,
                                         const std::string& value) {
  std::vector<std::int64_t> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_int(key, trim(item)));
  return out;
}

void apply(AppConfig& cfg, const std::string& key, const std::string& value) {
  TrainConfig& t = cfg.train;
  if (key == "arch") t.arch = value;
  else if (key == "dataset") t.dataset = value;
  else if (key == "objective") t.objective = value;
  else if (key == "n_members") t.n_members = parse_int(key, value);
  else if (key == "repr_dim") t.repr_dim = parse_int(key, value);
  else if (key == "embed_dim") t.embed_dim = parse_int(key, value);
  else if (key == "epochs") t.epochs = parse_int(key, value);
  else if (key == "batch_size") t.batch_size = parse_int(key, value);
  else if (key == "train_count") t.train_count = parse_int(key, value);
  else if (key == "lr_members") t.lr_members = parse_double(key, value);
  else if (key == "lr_lcm") t.lr_lcm = parse_double(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "lr_drop_epochs") t.lr_drop_epochs = parse_int_list(key, value);
  else if (key == "lr_drop_factor") t.lr_drop_factor = parse_double(key, value);
  else if (key == "gamma") t.gamma = parse_double(key, value);
  else if (key == "alpha") t.alpha = parse_double(key, value);
  else if (key == "beta") t.beta = parse_double(key, value);
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "eval_count") cfg.eval_count = parse_int(key, value);
  else if (key == "attack_batch") cfg.attack_batch = parse_int(key, value);
  else if (key == "attack_steps") cfg.attack_steps = parse_int(key, value);
  else if (key == "attack_step_size") cfg.attack_step_size = parse_double(key, value);
  else if (key == "attack_momentum") cfg.attack_momentum = parse_double(key, value);
  else if (key == "attack_loss") cfg.attack_loss = value;
  else throw config_error("unknown config key: " + key);
}

}  // namespace

AppConfig parse_config_text(const std::string& text,
                            const std::string& origin) {
  AppConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": expected key=value, got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": empty key");
    try {
      apply(cfg, key, value);
    } catch (const config_error& e) {
      throw config_error(origin + ":" + std::to_string(lineno) + ": " +
                         e.what());
    }
  }
  return cfg;
}

AppConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace cldl
