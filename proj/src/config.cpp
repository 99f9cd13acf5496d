#include "ssam/config.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ssam::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return std::size_t(out);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void TrainConfig::full_schedule() {
  stage1.epochs = 100;
  stage1.batch = 32;
  stage2.epochs = 400;
  stage2.batch = 16;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  auto stage = [&](StageConfig& s, const std::string& field) {
    if (field == "epochs") s.epochs = to_size(key, v);
    else if (field == "batch") s.batch = to_size(key, v);
    else if (field == "lr") s.lr = to_double(key, v);
    else if (field == "beta1") s.beta1 = to_double(key, v);
    else if (field == "beta2") s.beta2 = to_double(key, v);
    else if (field == "eps") s.eps = to_double(key, v);
    else if (field == "weight_decay") s.weight_decay = to_double(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  };
  if (key.rfind("stage1.", 0) == 0) return stage(stage1, key.substr(7));
  if (key.rfind("stage2.", 0) == 0) return stage(stage2, key.substr(7));
  if (key == "lambda_bce") weights.lambda_bce = to_double(key, v);
  else if (key == "lambda_dice") weights.lambda_dice = to_double(key, v);
  else if (key == "lambda_sparse") weights.lambda_sparse = to_double(key, v);
  else if (key == "lambda_topo") weights.lambda_topo = to_double(key, v);
  else if (key == "alpha_sparse") weights.alpha_sparse = to_double(key, v);
  else if (key == "dice_smooth") weights.dice_smooth = to_double(key, v);
  else if (key == "insertion") insertion = v;
  else if (key == "experts") experts = parse_experts(v);
  else if (key == "seed") seed = to_size(key, v);
  else if (key == "backbone_seed") backbone_seed = to_size(key, v);
  else if (key == "eval_every") eval_every = to_size(key, v);
  else if (key == "threshold") threshold = to_double(key, v);
  else if (key == "manifest") manifest = v;
  else if (key == "out_dir") out_dir = v;
  else if (key == "encoder.channels") encoder.channels = to_size(key, v);
  else if (key == "encoder.layers") encoder.layers = to_size(key, v);
  else if (key == "encoder.heads") encoder.heads = to_size(key, v);
  else if (key == "encoder.mlp_hidden") encoder.mlp_hidden = to_size(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::validate() const {
  for (const StageConfig* s : {&stage1, &stage2}) {
    if (s->batch == 0) throw ConfigError("batch size must be positive");
    if (!(s->lr > 0)) throw ConfigError("learning rate must be positive");
    if (s->beta1 < 0 || s->beta1 >= 1 || s->beta2 < 0 || s->beta2 >= 1) throw ConfigError("betas must lie in [0, 1)");
    if (s->weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  }
  weights.validate();
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");
  if (experts.empty()) throw ContractError("expert subset is empty");
  if (encoder.channels % 4 != 0 || encoder.heads == 0 || encoder.channels % encoder.heads != 0) {
    throw ConfigError("encoder channels must be a multiple of 4 and of the head count");
  }
  injected_layers();
}

std::vector<std::size_t> TrainConfig::injected_layers() const { return parse_insertion(insertion, encoder.layers); }

std::string TrainConfig::text() const {
  std::ostringstream os;
  auto stage = [&](const char* name, const StageConfig& s) {
    os << name << ".epochs = " << s.epochs << '\n'
       << name << ".batch = " << s.batch << '\n'
       << name << ".lr = " << fmt(s.lr) << '\n'
       << name << ".beta1 = " << fmt(s.beta1) << '\n'
       << name << ".beta2 = " << fmt(s.beta2) << '\n'
       << name << ".eps = " << fmt(s.eps) << '\n'
       << name << ".weight_decay = " << fmt(s.weight_decay) << '\n';
  };
  stage("stage1", stage1);
  stage("stage2", stage2);
  os << "lambda_bce = " << fmt(weights.lambda_bce) << '\n'
     << "lambda_dice = " << fmt(weights.lambda_dice) << '\n'
     << "lambda_sparse = " << fmt(weights.lambda_sparse) << '\n'
     << "lambda_topo = " << fmt(weights.lambda_topo) << '\n'
     << "alpha_sparse = " << fmt(weights.alpha_sparse) << '\n'
     << "dice_smooth = " << fmt(weights.dice_smooth) << '\n'
     << "insertion = " << insertion << '\n'
     << "experts = " << experts_text(experts) << '\n'
     << "seed = " << seed << '\n'
     << "backbone_seed = " << backbone_seed << '\n'
     << "eval_every = " << eval_every << '\n'
     << "threshold = " << fmt(threshold) << '\n'
     << "encoder.channels = " << encoder.channels << '\n'
     << "encoder.layers = " << encoder.layers << '\n'
     << "encoder.heads = " << encoder.heads << '\n'
     << "encoder.mlp_hidden = " << encoder.mlp_hidden << '\n';
  return os.str();
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

std::vector<std::size_t> parse_insertion(const std::string& name, std::size_t layers) {
  std::vector<std::size_t> out;
  if (name == "none") return out;
  if (name == "all" || name == "first_half" || name == "last_half" || name == "last_2") {
    for (std::size_t l = 1; l <= layers; ++l) {
      const bool take = name == "all" || (name == "first_half" && l <= layers / 2) ||
                        (name == "last_half" && l > layers / 2) || (name == "last_2" && l + 2 > layers);
      if (take) out.push_back(l);
    }
    return out;
  }
  std::stringstream ss(name);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t l = to_size("insertion", trim(item));
    if (l == 0 || l > layers) throw ConfigError("insertion layer " + std::to_string(l) + " outside 1.." + std::to_string(layers));
    out.push_back(l);
  }
  if (out.empty()) throw ConfigError("insertion: empty layer list");
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw ConfigError("insertion: repeated layer");
  return out;
}

std::vector<moe::ExpertKind> parse_experts(const std::string& list) {
  std::vector<moe::ExpertKind> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto kind = moe::parse_expert(item);
    if (std::find(out.begin(), out.end(), kind) != out.end()) throw ConfigError("experts: repeated " + item);
    out.push_back(kind);
  }
  if (out.empty()) throw ContractError("expert subset is empty");
  return out;
}

std::string experts_text(const std::vector<moe::ExpertKind>& kinds) {
  std::string out;
  for (std::size_t i = 0; i < kinds.size(); ++i) out += (i ? "," : "") + moe::expert_name(kinds[i]);
  return out;
}

}  // namespace ssam::pipeline
