// SPDX-License-Identifier: Apache-2.0

#include "config.hpp"

#include <fstream>
#include <sstream>

namespace fis::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for " + key + ": " + v);
  }
}

long to_long(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for " + key + ": " + v);
  }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for " + key + ": " + v);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean value for " + key + ": " + v);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at line " +
                          std::to_string(lineno));
      section = line.substr(1, line.size() - 2);
      if (section != "target" && section != "schedule" && section != "train" &&
          section != "sample" && section != "estimate" &&
          section != "langevin" && section != "moments" && section != "run")
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " +
                        std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    const std::string qual = section + "." + key;

    if (section == "target") {
      if (key == "id") cfg.target.id = val;
      else if (key == "d") cfg.target.d = static_cast<int>(to_long(val, qual));
      else if (key == "w") cfg.target.w = static_cast<int>(to_long(val, qual));
      else if (key == "delta") cfg.target.delta = to_double(val, qual);
      else if (key == "beta") cfg.target.beta = to_double(val, qual);
      else if (key == "sigma") cfg.target.sigma = to_double(val, qual);
      else if (key == "seed") cfg.target.seed = to_u64(val, qual);
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "schedule") {
      if (key == "preset") cfg.schedule.preset = val;
      else if (key == "T") cfg.schedule.T = to_double(val, qual);
      else if (key == "T_split") cfg.schedule.T_split = to_double(val, qual);
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "train") {
      if (key == "steps") cfg.train.steps = to_long(val, qual);
      else if (key == "batch") cfg.train.batch = static_cast<int>(to_long(val, qual));
      else if (key == "sde_steps") cfg.train.sde_steps = static_cast<int>(to_long(val, qual));
      else if (key == "delta") cfg.train.delta = to_double(val, qual);
      else if (key == "lambda") cfg.train.lambda = to_double(val, qual);
      else if (key == "monitor_every") cfg.train.monitor_every = to_long(val, qual);
      else if (key == "monitor_paths") cfg.train.monitor_paths = static_cast<int>(to_long(val, qual));
      else if (key == "monitor_steps") cfg.train.monitor_steps = static_cast<int>(to_long(val, qual));
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "sample") {
      if (key == "n_samples") cfg.sample.n_samples = static_cast<int>(to_long(val, qual));
      else if (key == "n_steps") cfg.sample.n_steps = static_cast<int>(to_long(val, qual));
      else if (key == "eps") cfg.sample.eps = to_double(val, qual);
      else if (key == "mode") {
        if (val != "sde" && val != "ode")
          throw ConfigError("config: sample.mode must be sde or ode");
        cfg.sample.mode = val;
      } else if (key == "use_ema") cfg.sample.use_ema = to_bool(val, qual);
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "estimate") {
      if (key == "n_paths") cfg.estimate.n_paths = static_cast<int>(to_long(val, qual));
      else if (key == "n_steps") cfg.estimate.n_steps = static_cast<int>(to_long(val, qual));
      else if (key == "use_ema") cfg.estimate.use_ema = to_bool(val, qual);
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "langevin") {
      if (key == "step_size") cfg.langevin.step_size = to_double(val, qual);
      else if (key == "n_steps") cfg.langevin.n_steps = static_cast<int>(to_long(val, qual));
      else if (key == "n_samples") cfg.langevin.n_samples = static_cast<int>(to_long(val, qual));
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "moments") {
      if (key == "samples_in") cfg.moments.samples_in = val;
      else throw ConfigError("config: unknown key " + qual);
    } else if (section == "run") {
      if (key == "seed") cfg.run.seed = to_u64(val, qual);
      else if (key == "threads") cfg.run.threads = static_cast<int>(to_long(val, qual));
      else if (key == "out_dir") cfg.run.out_dir = val;
      else if (key == "checkpoint_in") cfg.run.checkpoint_in = val;
      else if (key == "checkpoint_out") cfg.run.checkpoint_out = val;
      else throw ConfigError("config: unknown key " + qual);
    } else {
      throw ConfigError("config: key outside of any section at line " +
                        std::to_string(lineno));
    }
  }
  return cfg;
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "[target]\n";
  out << "id = " << c.target.id << "\n";
  out << "d = " << c.target.d << "\n";
  out << "w = " << c.target.w << "\n";
  out << "delta = " << c.target.delta << "\n";
  out << "beta = " << c.target.beta << "\n";
  out << "sigma = " << c.target.sigma << "\n";
  out << "seed = " << c.target.seed << "\n";
  out << "\n[schedule]\n";
  out << "preset = " << c.schedule.preset << "\n";
  out << "T = " << c.schedule.T << "\n";
  out << "T_split = " << c.schedule.T_split << "\n";
  out << "\n[train]\n";
  out << "steps = " << c.train.steps << "\n";
  out << "batch = " << c.train.batch << "\n";
  out << "sde_steps = " << c.train.sde_steps << "\n";
  out << "delta = " << c.train.delta << "\n";
  out << "lambda = " << c.train.lambda << "\n";
  out << "monitor_every = " << c.train.monitor_every << "\n";
  out << "monitor_paths = " << c.train.monitor_paths << "\n";
  out << "monitor_steps = " << c.train.monitor_steps << "\n";
  out << "\n[sample]\n";
  out << "n_samples = " << c.sample.n_samples << "\n";
  out << "n_steps = " << c.sample.n_steps << "\n";
  out << "eps = " << c.sample.eps << "\n";
  out << "mode = " << c.sample.mode << "\n";
  out << "use_ema = " << (c.sample.use_ema ? "true" : "false") << "\n";
  out << "\n[estimate]\n";
  out << "n_paths = " << c.estimate.n_paths << "\n";
  out << "n_steps = " << c.estimate.n_steps << "\n";
  out << "use_ema = " << (c.estimate.use_ema ? "true" : "false") << "\n";
  out << "\n[langevin]\n";
  out << "step_size = " << c.langevin.step_size << "\n";
  out << "n_steps = " << c.langevin.n_steps << "\n";
  out << "n_samples = " << c.langevin.n_samples << "\n";
  out << "\n[moments]\n";
  out << "samples_in = " << c.moments.samples_in << "\n";
  out << "\n[run]\n";
  out << "seed = " << c.run.seed << "\n";
  out << "threads = " << c.run.threads << "\n";
  out << "out_dir = " << c.run.out_dir << "\n";
  out << "checkpoint_in = " << c.run.checkpoint_in << "\n";
  out << "checkpoint_out = " << c.run.checkpoint_out << "\n";
  return out.str();
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace fis::cli
