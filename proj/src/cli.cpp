#include "pumfa/cli.hpp"

#include "pumfa/cloud_io.hpp"
#include "pumfa/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace pumfa {

namespace {

// Raised for anything the user can fix by changing the command line or config.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> ratio;
  std::string in;
  std::string out;
  std::string ckpt;
  std::vector<double> noise_levels;
  std::optional<std::size_t> top_k;
  std::vector<std::size_t> heads;
  bool resume = false;
};

PipelineConfig resolve(const Options& o) {
  try {
    PipelineConfig cfg =
        o.config.empty() ? PipelineConfig::for_profile(o.profile.empty() ? "paper" : o.profile) : PipelineConfig{};
    if (!o.config.empty()) {
      if (!std::filesystem::exists(o.config)) throw std::runtime_error("config file not found: " + o.config);
      cfg = load_pipeline_config(o.config, o.profile);
    }
    if (o.seed) {
      cfg.train.seed = *o.seed;
      cfg.eval.seed = *o.seed;
    }
    if (!o.ckpt.empty()) cfg.train.checkpoint = o.ckpt;
    if (!o.noise_levels.empty()) cfg.eval.noise_levels = o.noise_levels;
    if (o.top_k) cfg.attention.top_k = *o.top_k;
    if (!o.heads.empty()) cfg.attention.heads = o.heads;
    if (o.resume) cfg.train.resume = true;
    cfg.validate();
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void echo(const PipelineConfig& cfg, std::ostream& out) {
  out << "# resolved configuration\n" << cfg.to_text() << "# end configuration\n";
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  PipelineConfig cfg = resolve(o);
  if (!o.out.empty()) cfg.data.dataset = o.out;
  echo(cfg, out);
  const auto pairs = generate_dataset(cfg);
  save_dataset(cfg.data.dataset, pairs);
  out << "wrote " << pairs.size() << " patch pairs (" << cfg.model.points << " -> "
      << cfg.model.points * cfg.model.ratio << " points) to " << cfg.data.dataset << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  PipelineConfig cfg = resolve(o);
  if (!o.in.empty()) cfg.data.dataset = o.in;
  echo(cfg, out);
  std::vector<PatchPair> data;
  if (std::filesystem::exists(cfg.data.dataset)) {
    data = load_dataset(cfg.data.dataset);
    out << "loaded " << data.size() << " patch pairs from " << cfg.data.dataset << '\n';
  } else {
    data = generate_dataset(cfg);
    out << "generated " << data.size() << " patch pairs\n";
  }
  Trainer trainer(cfg, std::move(data));
  if (cfg.train.resume && std::filesystem::exists(cfg.train.checkpoint)) {
    trainer.load(cfg.train.checkpoint);
    out << "resumed at step " << trainer.step() << " of " << trainer.total_steps() << '\n';
  }
  out << "training " << trainer.model().parameter_count() << " parameters for " << trainer.total_steps()
      << " steps\n";
  std::ofstream log_file;
  if (!cfg.train.log.empty()) {
    log_file.open(cfg.train.log, std::ios::app);
    if (!log_file) throw std::runtime_error("cannot open log " + cfg.train.log);
  }
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return !EOF;
      if (a->sputc(static_cast<char>(c)) == EOF) return EOF;
      if (b && b->sputc(static_cast<char>(c)) == EOF) return EOF;
      return c;
    }
    int sync() override { return (a->pubsync() | (b ? b->pubsync() : 0)) == 0 ? 0 : -1; }
  } tee;
  tee.a = out.rdbuf();
  tee.b = log_file.is_open() ? log_file.rdbuf() : nullptr;
  std::ostream log(&tee);
  trainer.run(log, cfg.train.checkpoint);
  trainer.save(cfg.train.checkpoint);
  out << "checkpoint " << cfg.train.checkpoint << '\n';
  return kExitOk;
}

ModelParams model_from(const PipelineConfig& cfg) {
  if (!std::filesystem::exists(cfg.train.checkpoint)) {
    throw std::runtime_error("checkpoint not found: " + cfg.train.checkpoint);
  }
  return load_model(cfg.train.checkpoint);
}

int cmd_upsample(const Options& o, std::ostream& out) {
  require(o.in, "--in");
  require(o.out, "--out");
  require(o.ckpt, "--ckpt");
  PipelineConfig cfg = resolve(o);
  echo(cfg, out);
  ModelParams model = model_from(cfg);
  const std::size_t ratio = o.ratio.value_or(model.config.ratio);
  std::size_t p = model.config.ratio;
  while (p < ratio) p *= model.config.ratio;
  if (ratio < model.config.ratio || p != ratio) {
    throw UsageError("--ratio " + std::to_string(ratio) + " is not a power of " + std::to_string(model.config.ratio));
  }
  const PointCloud cloud = read_cloud(o.in);
  const PointCloud dense = upsample_chain(model, cloud, ratio, cfg.coverage_factor);
  write_cloud(o.out, dense);
  out << "upsampled " << cloud.size() << " -> " << dense.size() << " points into " << o.out << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  PipelineConfig cfg = resolve(o);
  if (!o.out.empty()) {
    cfg.eval.table = o.out;
    cfg.eval.csv = std::filesystem::path(o.out).replace_extension(".csv").string();
  }
  echo(cfg, out);
  ModelParams model = model_from(cfg);
  const EvalReport report = evaluate(model, cfg);
  const std::string table = format_metric_table(report.rows, report.note) + '\n' + format_noise_table(report.rows);
  write_file_atomic(cfg.eval.table, table);
  write_file_atomic(cfg.eval.csv, format_metric_csv(report.rows));
  out << table << "table " << cfg.eval.table << ", csv " << cfg.eval.csv << '\n';
  return kExitOk;
}

int cmd_attn_dump(const Options& o, std::ostream& out) {
  require(o.in, "--in");
  PipelineConfig cfg = resolve(o);
  if (!o.out.empty()) cfg.attention.output = o.out;
  echo(cfg, out);
  ModelParams model = model_from(cfg);
  for (std::size_t h : cfg.attention.heads) {
    if (h >= model.config.heads) {
      throw UsageError("--heads " + std::to_string(h) + " out of range (model has " +
                       std::to_string(model.config.heads) + " heads)");
    }
  }
  const PointCloud cloud = read_cloud(o.in);
  const AttentionReport report = dump_attention(model, cloud, cfg.attention.heads, cfg.attention.top_k);
  const auto files = write_attention_overlays(report, cfg.attention.output);
  std::ostringstream listing;
  for (const auto& layer : report.layers) {
    for (const auto& h : layer.heads) {
      listing << "layer " << layer.layer << " head " << h.head << ':';
      for (std::size_t i : h.top) listing << ' ' << i;
      listing << '\n';
    }
  }
  write_file_atomic(std::filesystem::path(cfg.attention.output) / "top_points.txt", listing.str());
  out << listing.str() << "wrote " << files.size() << " overlays to " << cfg.attention.output << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pumfa: point cloud upsampling with multi-scale features and global context refinement", "pumfa"};
  app.require_subcommand(0, 1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "config file (key = value with [sections])");
    sub->add_option("--profile", o.profile, "base profile")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--seed", o.seed, "random seed");
  };
  auto* gen = app.add_subcommand("gen-data", "sample meshes and cut training patch pairs");
  add_common(gen);
  gen->add_option("--out", o.out, "dataset file (overrides data.dataset)");

  auto* train = app.add_subcommand("train", "train a model and write its checkpoint");
  add_common(train);
  train->add_option("--in", o.in, "dataset file (overrides data.dataset)");
  train->add_option("--ckpt", o.ckpt, "checkpoint path");
  train->add_flag("--resume", o.resume, "continue from an existing checkpoint");

  auto* up = app.add_subcommand("upsample", "upsample a point cloud file");
  add_common(up);
  up->add_option("--in", o.in, "input cloud (.xyz or .ply)");
  up->add_option("--out", o.out, "output cloud (.xyz or .ply)");
  up->add_option("--ckpt", o.ckpt, "model checkpoint");
  up->add_option("--ratio", o.ratio, "upsampling ratio, a power of the model ratio");

  auto* ev = app.add_subcommand("eval", "metric table over test shapes and noise levels");
  add_common(ev);
  ev->add_option("--ckpt", o.ckpt, "model checkpoint");
  ev->add_option("--noise-level", o.noise_levels, "noise levels (repeatable)");
  ev->add_option("--out", o.out, "table path (the CSV goes next to it)");

  auto* attn = app.add_subcommand("attn-dump", "top attended points per refiner layer and head");
  add_common(attn);
  attn->add_option("--in", o.in, "cloud with exactly N points");
  attn->add_option("--ckpt", o.ckpt, "model checkpoint");
  attn->add_option("--out", o.out, "overlay directory");
  attn->add_option("--top-k", o.top_k, "points per head");
  attn->add_option("--heads", o.heads, "head indices")->delimiter(',');

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return kExitUsage;
  }
  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (up->parsed()) return cmd_upsample(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    return cmd_attn_dump(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run_cli(int argc, char** argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace pumfa
