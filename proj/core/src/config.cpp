#include "parsrec/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace parsrec {

namespace {

[[noreturn]] void bad_key(const std::string& section, const std::string& key) {
  throw std::runtime_error("config: unknown key '" + key + "' in section [" +
                           section + "]");
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' wants an integer, got '" +
                             v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' wants a number, got '" +
                             v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config: key '" + key + "' wants true/false, got '" +
                           v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' wants a seed, got '" +
                             v + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// "group;members;i:j=v,..." appends one covariance block to that group's
// plan; e.g. "0;2,3,4;0:1=0.6,1:2=-0.4".
void parse_plan_block(RunConfig& cfg, const std::string& value) {
  const auto parts = split(value, ';');
  if (parts.size() != 3) {
    throw std::runtime_error("config: plan wants 'group;members;pairs', got '" +
                             value + "'");
  }
  const int group = to_int("plan", parts[0]);
  if (group < 0) throw std::runtime_error("config: plan group < 0");
  CovBlock block;
  for (const auto& m : split(parts[1], ',')) {
    block.members.push_back(to_int("plan", m));
  }
  const int n = static_cast<int>(block.members.size());
  block.corr.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) block.corr[static_cast<std::size_t>(i) * n + i] = 1.0;
  if (!parts[2].empty()) {
    for (const auto& pair : split(parts[2], ',')) {
      const auto eq = pair.find('=');
      const auto colon = pair.find(':');
      if (eq == std::string::npos || colon == std::string::npos || colon > eq) {
        throw std::runtime_error("config: plan pair wants 'i:j=v', got '" +
                                 pair + "'");
      }
      const int i = to_int("plan", pair.substr(0, colon));
      const int j = to_int("plan", pair.substr(colon + 1, eq - colon - 1));
      const double v = to_double("plan", pair.substr(eq + 1));
      if (i < 0 || i >= n || j < 0 || j >= n) {
        throw std::runtime_error("config: plan pair index out of block");
      }
      block.corr[static_cast<std::size_t>(i) * n + j] = v;
      block.corr[static_cast<std::size_t>(j) * n + i] = v;
    }
  }
  if (static_cast<int>(cfg.synth.plans.size()) <= group) {
    cfg.synth.plans.resize(static_cast<std::size_t>(group) + 1);
  }
  cfg.synth.plans[static_cast<std::size_t>(group)].blocks.push_back(
      std::move(block));
}

}  // namespace

void apply_config_value(RunConfig& cfg, const std::string& section,
                        const std::string& key, const std::string& value) {
  if (section == "run") {
    if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "dataset") cfg.dataset_path = value;
    else if (key == "checkpoint") cfg.checkpoint_path = value;
    else bad_key(section, key);
    return;
  }
  if (section == "synth") {
    auto& s = cfg.synth;
    if (key == "n_users") s.n_users = to_int(key, value);
    else if (key == "n_groups") s.n_groups = to_int(key, value);
    else if (key == "sessions_per_user") s.sessions_per_user = to_int(key, value);
    else if (key == "n_categories") s.n_categories = to_int(key, value);
    else if (key == "products_per_category") s.products_per_category = to_int(key, value);
    else if (key == "alpha") s.alpha = to_double(key, value);
    else if (key == "beta") s.beta = to_double(key, value);
    else if (key == "sigma") s.sigma = to_double(key, value);
    else if (key == "tau") s.tau = to_double(key, value);
    else if (key == "weibull_shape") s.weibull_shape = to_double(key, value);
    else if (key == "weibull_scale") s.weibull_scale = to_double(key, value);
    else if (key == "basket_min") s.basket_min = to_int(key, value);
    else if (key == "basket_max") s.basket_max = to_int(key, value);
    else if (key == "price_mu") s.price_mu = to_double(key, value);
    else if (key == "price_sigma") s.price_sigma = to_double(key, value);
    else if (key == "vine_beta_a") s.vine_beta_a = to_double(key, value);
    else if (key == "vine_beta_b") s.vine_beta_b = to_double(key, value);
    else if (key == "plan") parse_plan_block(cfg, value);
    else bad_key(section, key);
    return;
  }
  if (section == "model") {
    auto& m = cfg.model;
    if (key == "d_u") m.d_u = to_int(key, value);
    else if (key == "d_v") m.d_v = to_int(key, value);
    else if (key == "heads") m.heads = to_int(key, value);
    else if (key == "layers") m.layers = to_int(key, value);
    else if (key == "dropout") m.dropout = to_double(key, value);
    else if (key == "use_ln") m.use_ln = to_bool(key, value);
    else if (key == "use_dropout") m.use_dropout = to_bool(key, value);
    else if (key == "add_q_at_ln") m.add_q_at_ln = to_bool(key, value);
    else if (key == "ffn_pre_rnn") m.ffn_pre_rnn = to_bool(key, value);
    else if (key == "ffn_post_rnn") m.ffn_post_rnn = to_bool(key, value);
    else bad_key(section, key);
    return;
  }
  if (section == "train") {
    auto& t = cfg.train;
    if (key == "batch_size") t.batch_size = to_int(key, value);
    else if (key == "max_epochs") t.max_epochs = to_int(key, value);
    else if (key == "patience") t.patience = to_int(key, value);
    else if (key == "lr") t.adam.lr = to_double(key, value);
    else if (key == "beta1") t.adam.beta1 = to_double(key, value);
    else if (key == "beta2") t.adam.beta2 = to_double(key, value);
    else if (key == "eps") t.adam.eps = to_double(key, value);
    else if (key == "clip_norm") t.clip_norm = to_double(key, value);
    else bad_key(section, key);
    return;
  }
  if (section == "analysis") {
    if (key == "heatmap_threshold") cfg.heatmap_threshold = to_double(key, value);
    else if (key == "spillover_k") cfg.spillover_k = to_int(key, value);
    else if (key == "removed_category") cfg.removed_category = to_int(key, value);
    else bad_key(section, key);
    return;
  }
  throw std::runtime_error("config: unknown section [" + section + "]");
}

RunConfig load_config(const std::string& path,
                      const std::vector<ConfigOverride>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line, section = "run";
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::istringstream ls(line);
      std::string first;
      if (!(ls >> first)) continue;
      if (first.size() >= 2 && first.front() == '[' && first.back() == ']') {
        section = first.substr(1, first.size() - 2);
        continue;
      }
      std::string value;
      std::getline(ls, value);
      const auto start = value.find_first_not_of(" \t");
      const auto end = value.find_last_not_of(" \t\r");
      if (start == std::string::npos) {
        throw std::runtime_error("config: line " + std::to_string(lineno) +
                                 ": key '" + first + "' has no value");
      }
      value = value.substr(start, end - start + 1);
      apply_config_value(cfg, section, first, value);
    }
  }
  for (const auto& [key, value] : overrides) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      apply_config_value(cfg, "run", key, value);
    } else {
      apply_config_value(cfg, key.substr(0, dot), key.substr(dot + 1), value);
    }
  }
  cfg.synth.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

std::string config_echo(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# resolved configuration (version " << kArtifactVersion << ")\n";
  out << "[run]\n";
  out << "seed " << cfg.seed << "\n";
  out << "out_dir " << cfg.out_dir << "\n";
  if (!cfg.dataset_path.empty()) out << "dataset " << cfg.dataset_path << "\n";
  if (!cfg.checkpoint_path.empty()) {
    out << "checkpoint " << cfg.checkpoint_path << "\n";
  }
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  const auto& s = cfg.synth;
  out << "[synth]\n";
  out << "n_users " << s.n_users << "\n";
  out << "n_groups " << s.n_groups << "\n";
  out << "sessions_per_user " << s.sessions_per_user << "\n";
  out << "n_categories " << s.n_categories << "\n";
  out << "products_per_category " << s.products_per_category << "\n";
  out << "alpha " << num(s.alpha) << "\n";
  out << "beta " << num(s.beta) << "\n";
  out << "sigma " << num(s.sigma) << "\n";
  out << "tau " << num(s.tau) << "\n";
  out << "weibull_shape " << num(s.weibull_shape) << "\n";
  out << "weibull_scale " << num(s.weibull_scale) << "\n";
  out << "basket_min " << s.basket_min << "\n";
  out << "basket_max " << s.basket_max << "\n";
  out << "price_mu " << num(s.price_mu) << "\n";
  out << "price_sigma " << num(s.price_sigma) << "\n";
  out << "vine_beta_a " << num(s.vine_beta_a) << "\n";
  out << "vine_beta_b " << num(s.vine_beta_b) << "\n";
  for (std::size_t g = 0; g < s.plans.size(); ++g) {
    for (const auto& block : s.plans[g].blocks) {
      out << "plan " << g << ";";
      for (std::size_t i = 0; i < block.members.size(); ++i) {
        out << (i ? "," : "") << block.members[i];
      }
      out << ";";
      const int n = static_cast<int>(block.members.size());
      bool first = true;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          const double v = block.corr[static_cast<std::size_t>(i) * n + j];
          if (v == 0.0) continue;
          out << (first ? "" : ",") << i << ":" << j << "=" << num(v);
          first = false;
        }
      }
      out << "\n";
    }
  }
  const auto& m = cfg.model;
  out << "[model]\n";
  out << "d_u " << m.d_u << "\n";
  out << "d_v " << m.d_v << "\n";
  out << "heads " << m.heads << "\n";
  out << "layers " << m.layers << "\n";
  out << "dropout " << num(m.dropout) << "\n";
  out << "use_ln " << (m.use_ln ? "true" : "false") << "\n";
  out << "use_dropout " << (m.use_dropout ? "true" : "false") << "\n";
  out << "add_q_at_ln " << (m.add_q_at_ln ? "true" : "false") << "\n";
  out << "ffn_pre_rnn " << (m.ffn_pre_rnn ? "true" : "false") << "\n";
  out << "ffn_post_rnn " << (m.ffn_post_rnn ? "true" : "false") << "\n";
  const auto& t = cfg.train;
  out << "[train]\n";
  out << "batch_size " << t.batch_size << "\n";
  out << "max_epochs " << t.max_epochs << "\n";
  out << "patience " << t.patience << "\n";
  out << "lr " << num(t.adam.lr) << "\n";
  out << "beta1 " << num(t.adam.beta1) << "\n";
  out << "beta2 " << num(t.adam.beta2) << "\n";
  out << "eps " << num(t.adam.eps) << "\n";
  out << "clip_norm " << num(t.clip_norm) << "\n";
  out << "[analysis]\n";
  out << "heatmap_threshold " << num(cfg.heatmap_threshold) << "\n";
  out << "spillover_k " << cfg.spillover_k << "\n";
  out << "removed_category " << cfg.removed_category << "\n";
  return out.str();
}

}  // namespace parsrec
