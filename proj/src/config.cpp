#include "pumfa/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace pumfa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  }
  if (pos != v.size() || n < 0) throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  if (pos != v.size()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: " + key + " expects a boolean, got '" + v + "'");
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

PipelineConfig PipelineConfig::paper() { return PipelineConfig{}; }

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.profile = "desk";
  c.model = ModelConfig::desk();
  c.train.epochs = 4;
  c.train.batch_size = 4;
  c.train.lr = 1e-3;
  c.data.pairs_per_mesh = 32;
  c.data.dense_points = 4096;
  c.eval.input_points = 512;
  return c;
}

PipelineConfig PipelineConfig::for_profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown profile '" + name + "' (expected paper or desk)");
}

void PipelineConfig::apply(const std::map<std::string, std::string>& values) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto sz = [](std::size_t& f) -> Setter { return [&f](const std::string& k, const std::string& v) { f = to_size(k, v); }; };
  auto dbl = [](double& f) -> Setter { return [&f](const std::string& k, const std::string& v) { f = to_double(k, v); }; };
  auto str = [](std::string& f) -> Setter { return [&f](const std::string&, const std::string& v) { f = v; }; };
  auto flag = [](bool& f) -> Setter { return [&f](const std::string& k, const std::string& v) { f = to_bool(k, v); }; };
  auto u64 = [](std::uint64_t& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = static_cast<std::uint64_t>(to_size(k, v)); };
  };
  const std::map<std::string, Setter> setters{
      {"profile", [this](const std::string&, const std::string& v) { profile = v; }},
      {"model.points", sz(model.points)},
      {"model.ratio", sz(model.ratio)},
      {"model.depth", sz(model.depth)},
      {"model.channels", sz(model.channels)},
      {"model.expansion", sz(model.expansion)},
      {"model.coarse_channels", sz(model.coarse_channels)},
      {"model.coarse_expansion", sz(model.coarse_expansion)},
      {"model.heads", sz(model.heads)},
      {"model.patch_size", sz(model.patch_size)},
      {"model.sab_depth", sz(model.sab_depth)},
      {"model.zero_init_residual", flag(model.zero_init_residual)},
      {"train.epochs", sz(train.epochs)},
      {"train.batch_size", sz(train.batch_size)},
      {"train.lr", dbl(train.lr)},
      {"train.seed", u64(train.seed)},
      {"train.alpha_start", dbl(train.alpha_start)},
      {"train.alpha_end", dbl(train.alpha_end)},
      {"train.checkpoint", str(train.checkpoint)},
      {"train.log", str(train.log)},
      {"train.resume", flag(train.resume)},
      {"data.meshes", [this](const std::string&, const std::string& v) { data.meshes = split_list(v); }},
      {"data.pairs_per_mesh", sz(data.pairs_per_mesh)},
      {"data.dense_points", sz(data.dense_points)},
      {"data.dataset", str(data.dataset)},
      {"augment.rotate", flag(augment.rotate)},
      {"augment.scale_min", dbl(augment.scale_min)},
      {"augment.scale_max", dbl(augment.scale_max)},
      {"augment.perturb_sigma", dbl(augment.perturb_sigma)},
      {"augment.perturb_clip", dbl(augment.perturb_clip)},
      {"upsample.coverage_factor", dbl(coverage_factor)},
      {"eval.meshes", [this](const std::string&, const std::string& v) { eval.meshes = split_list(v); }},
      {"eval.input_points", sz(eval.input_points)},
      {"eval.noise_levels",
       [this](const std::string& k, const std::string& v) {
         eval.noise_levels.clear();
         for (const auto& item : split_list(v)) eval.noise_levels.push_back(to_double(k, item));
       }},
      {"eval.seed", u64(eval.seed)},
      {"eval.table", str(eval.table)},
      {"eval.csv", str(eval.csv)},
      {"attention.top_k", sz(attention.top_k)},
      {"attention.heads",
       [this](const std::string& k, const std::string& v) {
         attention.heads.clear();
         for (const auto& item : split_list(v)) attention.heads.push_back(to_size(k, item));
       }},
      {"attention.output", str(attention.output)},
  };
  for (const auto& [key, value] : values) {
    auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second(key, value);
  }
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  os << "profile = " << profile << "\n\n[model]\n";
  for (const auto& [k, v] : model.to_map()) os << k << " = " << v << '\n';
  os << "\n[train]\n"
     << "epochs = " << train.epochs << "\nbatch_size = " << train.batch_size << "\nlr = " << fmt(train.lr)
     << "\nseed = " << train.seed << "\nalpha_start = " << fmt(train.alpha_start)
     << "\nalpha_end = " << fmt(train.alpha_end) << "\ncheckpoint = " << train.checkpoint << "\nlog = " << train.log
     << "\nresume = " << (train.resume ? 1 : 0) << '\n';
  os << "\n[data]\nmeshes = " << join(data.meshes) << "\npairs_per_mesh = " << data.pairs_per_mesh
     << "\ndense_points = " << data.dense_points << "\ndataset = " << data.dataset << '\n';
  os << "\n[augment]\nrotate = " << (augment.rotate ? 1 : 0) << "\nscale_min = " << fmt(augment.scale_min)
     << "\nscale_max = " << fmt(augment.scale_max) << "\nperturb_sigma = " << fmt(augment.perturb_sigma)
     << "\nperturb_clip = " << fmt(augment.perturb_clip) << '\n';
  os << "\n[upsample]\ncoverage_factor = " << fmt(coverage_factor) << '\n';
  os << "\n[eval]\nmeshes = " << join(eval.meshes) << "\ninput_points = " << eval.input_points
     << "\nnoise_levels = " << join(eval.noise_levels) << "\nseed = " << eval.seed << "\ntable = " << eval.table
     << "\ncsv = " << eval.csv << '\n';
  os << "\n[attention]\ntop_k = " << attention.top_k << "\nheads = " << join(attention.heads)
     << "\noutput = " << attention.output << '\n';
  return os.str();
}

void PipelineConfig::validate() const {
  model.validate();
  if (train.epochs == 0 || train.batch_size == 0) throw std::invalid_argument("config: epochs and batch_size must be positive");
  if (!(train.lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (data.meshes.empty()) throw std::invalid_argument("config: data.meshes is empty");
  if (data.dense_points < model.points * model.ratio) {
    throw std::invalid_argument("config: data.dense_points must be at least points·ratio");
  }
  if (augment.scale_min <= 0.0 || augment.scale_min > augment.scale_max || augment.perturb_sigma < 0.0) {
    throw std::invalid_argument("config: invalid augmentation ranges");
  }
  if (!(coverage_factor > 0.0)) throw std::invalid_argument("config: coverage_factor must be positive");
  for (double l : eval.noise_levels) {
    if (l < 0.0) throw std::invalid_argument("config: noise levels must be non-negative");
  }
  if (attention.top_k == 0) throw std::invalid_argument("config: attention.top_k must be positive");
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, const std::string& profile_override) {
  auto values = load_key_values(path);
  std::string profile = profile_override;
  if (profile.empty()) {
    auto it = values.find("profile");
    profile = it == values.end() ? "paper" : it->second;
  }
  values.erase("profile");
  PipelineConfig cfg = PipelineConfig::for_profile(profile);
  cfg.apply(values);
  return cfg;
}

}  // namespace pumfa
