#include "cloze/cli/commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "cloze/cli/checks.hpp"
#include "cloze/cli/experiments.hpp"
#include "cloze/cli/manifest.hpp"
#include "cloze/cli/run_config.hpp"
#include "cloze/textdata/vocab.hpp"

namespace cloze::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path corpus_file(const fs::path& p) { return fs::is_directory(p) ? p / "corpus.txt" : p; }

std::vector<RawDoc> load_docs(const fs::path& p) {
  const auto file = corpus_file(p);
  if (!fs::exists(file)) throw ConfigError("no corpus at " + file.string());
  return textdata::load_corpus(file.string());
}

/// A pretraining output directory (checkpoints/ + tokenizer/) or a
/// checkpoint directory itself, with the tokenizer next to or above it.
struct Located {
  fs::path model;
  fs::path tokenizer;
};

Located locate_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("checkpoint " + p.string() + " does not exist");
  Located l;
  l.model = fs::exists(p / "checkpoints") ? trainer::resolve_checkpoint(p / "checkpoints") : trainer::resolve_checkpoint(p);
  for (auto dir = fs::absolute(l.model); !dir.empty(); dir = dir.parent_path()) {
    if (fs::exists(dir / "tokenizer" / "vocab.txt")) {
      l.tokenizer = dir / "tokenizer";
      break;
    }
    if (dir == dir.parent_path()) break;
  }
  return l;
}

textdata::Tokenizer load_tokenizer(const Located& l) {
  if (l.tokenizer.empty()) throw ConfigError("no tokenizer/ directory found for checkpoint " + l.model.string());
  return textdata::Tokenizer::load(l.tokenizer.string());
}

KeyValues load_settings(const std::string& config, const std::vector<std::string>& overrides) {
  KeyValues kv;
  if (!config.empty()) kv = KeyValues::load(config);
  kv.merge(parse_overrides(overrides));
  return kv;
}

RunConfig resolve_run_config(const KeyValues& kv, std::optional<std::uint64_t> seed) {
  RunConfig rc;
  rc.apply(kv);
  rc.set_seed(seed.value_or(rc.train.seed));
  rc.validate();
  return rc;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& s, const std::string& what) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(std::stod(item, &used));
      } else {
        if (item.front() == '-') throw std::invalid_argument("negative");
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw ConfigError("bad " + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty " + what + " list");
  return out;
}

std::vector<std::string> model_types(const model::ModelConfig& mc, const textdata::Tokenizer& tok) {
  return mc.encoder == model::EncoderKind::char_cnn ? tok.vocab().types() : std::vector<std::string>{};
}

bool synthetic_key(const std::string& k) {
  return k.rfind("corpus", 0) == 0 || k.rfind("task_", 0) == 0 || k == "inner_vocab" || k == "class_size" ||
         k == "line_tokens" || k == "lines_per_doc";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "neighbor";
  std::size_t size = 4000;
  std::uint64_t seed = 1;
  std::size_t inner_vocab = 8;
  std::size_t class_size = 16;
  std::size_t line_tokens = 9;
  std::size_t lines_per_doc = 8;
  std::size_t task_train = 0;
  std::size_t task_dev = 300;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  textdata::SynthOptions so;
  try {
    so.kind = textdata::parse_synth_kind(a.kind);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  so.seed = a.seed;
  so.size = a.size;
  so.inner_vocab = a.inner_vocab;
  so.class_size = a.class_size;
  so.line_tokens = a.line_tokens;
  so.lines_per_doc = a.lines_per_doc;
  const fs::path out = a.out;
  RunManifest manifest;
  manifest.command = "synth";
  manifest.seed = a.seed;
  manifest.config.set("kind", textdata::to_string(so.kind));
  manifest.config.set("size", std::to_string(so.size));
  manifest.config.set("inner_vocab", std::to_string(so.inner_vocab));
  manifest.config.set("class_size", std::to_string(so.class_size));
  manifest.config.set("line_tokens", std::to_string(so.line_tokens));
  manifest.config.set("lines_per_doc", std::to_string(so.lines_per_doc));
  manifest.config.set("task_train", std::to_string(a.task_train));
  manifest.config.set("task_dev", std::to_string(a.task_dev));

  std::optional<finetune::SyntheticTask> task;
  if (a.task_train > 0) {
    task = finetune::downstream_task(so, a.task_train, a.task_dev, numerics::derive_seed(a.seed, "task"));
    if (!task) throw ConfigError("the " + textdata::to_string(so.kind) + " language has no downstream task");
  }
  const auto corpus = textdata::synth_corpus(so);
  fs::create_directories(out);
  std::ostringstream text;
  textdata::write_corpus(text, corpus.docs);
  write_text(out / "corpus.txt", text.str());
  std::cout << "corpus: " << textdata::corpus_lines(corpus.docs).size() << " lines in " << corpus.docs.size()
            << " documents -> " << (out / "corpus.txt").string() << "\n";
  if (task) {
    auto spec = task->spec;
    spec.train = "train.tsv";
    spec.dev = "dev.tsv";
    finetune::save_records(out / "task" / "train.tsv", task->train, spec.kind);
    finetune::save_records(out / "task" / "dev.tsv", task->dev, spec.kind);
    spec.save(out / "task" / "task.cfg");
    std::cout << "task " << spec.name << ": " << task->train.size() << " train, " << task->dev.size() << " dev -> "
              << (out / "task" / "task.cfg").string() << "\n";
  }
  manifest.write(out);
  return kExitSuccess;
}

struct VocabArgs {
  std::string input;
  std::string mode = "bpe";
  std::size_t merges = 30000;
  std::uint64_t min_freq = 3;
  std::size_t max_types = 0;
  std::string out;
};

int cmd_build_vocab(const VocabArgs& a) {
  textdata::TokenizerOptions to;
  try {
    to.mode = textdata::parse_token_mode(a.mode);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  to.merges = a.merges;
  to.min_freq = a.min_freq;
  to.max_types = a.max_types;
  RunManifest manifest;
  manifest.command = "build-vocab";
  manifest.add_input("input", corpus_file(a.input));
  manifest.config.set("mode", textdata::to_string(to.mode));
  manifest.config.set("merges", std::to_string(to.merges));
  manifest.config.set("min_freq", std::to_string(to.min_freq));
  manifest.config.set("max_types", std::to_string(to.max_types));
  const auto tok = textdata::Tokenizer::build(textdata::corpus_lines(load_docs(a.input)), to);
  fs::create_directories(a.out);
  tok.save(a.out);
  std::cout << "vocabulary: " << tok.vocab().size() << " types, " << tok.code().size() << " merges -> " << a.out
            << "\n";
  manifest.write(a.out);
  return kExitSuccess;
}

struct PretrainArgs {
  std::string config;
  std::string data;
  std::string vocab;
  std::string objective;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
  bool resume = false;
  std::string out;
};

int cmd_pretrain(const PretrainArgs& a) {
  auto kv = load_settings(a.config, a.set);
  if (!a.objective.empty()) kv.set("objective", a.objective);
  const auto rc = resolve_run_config(kv, a.seed);
  const fs::path out = a.out;

  RunManifest manifest;
  manifest.command = "pretrain";
  manifest.seed = rc.train.seed;
  manifest.add_input("data", corpus_file(a.data));
  if (!a.config.empty()) manifest.add_input("config", a.config);
  if (!a.vocab.empty()) manifest.add_input("vocab", a.vocab);

  std::optional<textdata::Tokenizer> given;
  if (!a.vocab.empty()) given = textdata::Tokenizer::load(a.vocab);
  const auto data = prepare_data(load_docs(a.data), rc.data, given ? &*given : nullptr);
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
  const auto mc = model_for(rc, data.tokenizer);
  // Corpus generator and downstream keys do not apply to a run on given data.
  KeyValues resolved;
  const auto all = rc.to_kv();
  for (const auto& [k, val] : all.entries()) {
    if (!synthetic_key(k)) resolved.set(k, val);
  }
  resolved.merge(mc.to_kv());
  manifest.config = resolved;

  fs::create_directories(out);
  data.tokenizer.save((out / "tokenizer").string());
  resolved.save(out / "run.cfg");

  model::TwoTowerModel<float> m(mc, model_types(mc, data.tokenizer));
  trainer::Pretrainer<float> t(m, rc.train, data.train, data.heldout);
  const bool resuming = a.resume && fs::exists(out / "checkpoints" / "latest");
  trainer::MetricsLog log(out / "metrics.jsonl", resuming);
  t.set_metrics(&log);
  t.set_checkpoint_dir(out / "checkpoints");
  if (resuming) {
    t.load_checkpoint(trainer::resolve_checkpoint(out / "checkpoints"));
    std::cout << "resuming at update " << t.step_count() << "\n";
  }
  std::cout << "pretrain " << objectives::to_string(rc.train.objective) << ": " << data.train.size()
            << " examples, " << content_tokens(data.train) << " tokens, vocab " << mc.vocab_size << ", "
            << m.parameter_count() << " parameters\n";
  t.run();
  json summary{{"updates", t.step_count()}, {"train_tokens", content_tokens(data.train)}};
  if (!data.heldout.empty()) {
    const auto r = t.evaluate();
    summary["heldout"] = json::parse(r.to_json());
    std::cout << "heldout cloze ppl " << r.cloze.perplexity();
    if (r.fwd.tokens) std::cout << ", bilm ppl " << r.bilm_perplexity();
    std::cout << "\n";
  }
  write_json(out / "summary.json", summary);
  manifest.write(out);
  return kExitSuccess;
}

struct FinetuneArgs {
  std::string checkpoint;
  std::string task;
  std::string grid = "default";
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> set;
  bool random_init = false;
  std::string out;
};

int cmd_finetune(const FinetuneArgs& a) {
  const auto spec = finetune::TaskSpec::load(a.task);
  auto fc = finetune::FinetuneConfig::for_task(spec.kind);
  const auto kv = load_settings(a.config, a.set);
  const auto unknown = kv.unknown_keys(finetune::FinetuneConfig::keys());
  if (!unknown.empty()) throw ConfigError("unknown fine-tuning key '" + unknown.front() + "'");
  fc.apply(kv);
  if (a.grid != "default") fc.lrs = parse_numbers<double>(a.grid, "--grid");
  if (a.seeds) fc.seeds = *a.seeds;
  if (a.seed) fc.seed = *a.seed;
  fc.validate();

  const auto loc = locate_checkpoint(a.checkpoint);
  RunManifest manifest;
  manifest.command = "finetune";
  manifest.seed = fc.seed;
  manifest.config = fc.to_kv();
  manifest.config.merge(spec.to_kv());
  manifest.config.set("random_init", a.random_init ? "true" : "false");
  manifest.add_input("checkpoint", loc.model);
  manifest.add_input("task", a.task);
  if (spec.train.empty() || spec.dev.empty()) throw ConfigError("task spec needs train and dev files");
  manifest.add_input("train", spec.train);
  manifest.add_input("dev", spec.dev);

  const auto tok = load_tokenizer(loc);
  auto base = std::make_unique<model::TwoTowerModel<float>>(model::TwoTowerModel<float>::load(loc.model));
  if (a.random_init) {
    auto mc = base->config();
    mc.init_seed = numerics::derive_seed(fc.seed, "random-init");
    base = std::make_unique<model::TwoTowerModel<float>>(mc, base->type_strings());
  }
  const auto train = finetune::encode_records(finetune::load_records(spec.train, spec.kind), spec, tok);
  const auto dev = finetune::encode_records(finetune::load_records(spec.dev, spec.kind), spec, tok);
  std::cout << "finetune " << spec.name << ": " << train.size() << " train, " << dev.size() << " dev, "
            << fc.lrs.size() << " lrs x " << fc.seeds << " seeds" << (a.random_init ? " (random init)" : "") << "\n";
  auto result = finetune::finetune_task(*base, spec, train, dev, fc);
  const fs::path out = a.out;
  fs::create_directories(out);
  result.best->save(out / "model");
  tok.save((out / "tokenizer").string());
  write_json(out / "report.json", result.report.to_json());
  for (const auto& w : result.report.warnings) std::cerr << "warning: " << w << "\n";
  const auto& b = result.report.best;
  std::cout << "best " << to_string(spec.metric) << " " << b.dev_score << " (lr " << b.lr << ", seed " << b.seed
            << ", epoch " << b.epoch << ")\n";
  manifest.write(out);
  return kExitSuccess;
}

struct EvalArgs {
  std::string checkpoint;
  std::string task;
  std::string split = "dev";
  std::string data;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  RunManifest manifest;
  manifest.command = "eval";
  manifest.config.set("split", a.split);
  const fs::path out = a.out;
  if (!a.task.empty()) {
    if (a.split != "dev" && a.split != "test") throw ConfigError("--split must be dev or test");
    const fs::path dir = a.checkpoint;
    if (!fs::exists(dir / "model" / "task.cfg")) throw ConfigError(dir.string() + " is not a fine-tuning output");
    const auto spec = finetune::TaskSpec::load(a.task);
    const auto path = a.split == "dev" ? spec.dev : spec.test;
    if (path.empty()) throw ConfigError("task spec has no " + a.split + " file");
    manifest.add_input("checkpoint", dir);
    manifest.add_input("task", a.task);
    manifest.add_input(a.split, path);
    const auto tm = finetune::TaskModel<float>::load(dir / "model");
    const auto tok = textdata::Tokenizer::load((dir / "tokenizer").string());
    const auto examples = finetune::encode_records(finetune::load_records(path, spec.kind), tm.spec(), tok);
    const auto ev = tm.evaluate(examples);
    fs::create_directories(out);
    std::ostringstream preds;
    if (spec.kind == finetune::TaskKind::regression) {
      for (double v : ev.prediction.values) preds << format_double(v) << "\n";
    } else {
      for (auto l : ev.prediction.labels) preds << tm.spec().label_name(l) << "\n";
    }
    write_text(out / "predictions.txt", preds.str());
    json j{{"split", a.split},   {"metric", to_string(tm.spec().metric)}, {"score", ev.score},
           {"loss", ev.loss},    {"examples", examples.size()}};
    if (!ev.warnings.empty()) j["warnings"] = ev.warnings;
    write_json(out / "eval.json", j);
    std::cout << a.split << " " << to_string(tm.spec().metric) << " " << ev.score << " loss " << ev.loss << "\n";
  } else {
    if (a.data.empty()) throw ConfigError("eval needs --task (fine-tuned model) or --data (pretrained model)");
    const auto loc = locate_checkpoint(a.checkpoint);
    manifest.add_input("checkpoint", loc.model);
    manifest.add_input("data", corpus_file(a.data));
    const auto m = model::TwoTowerModel<float>::load(loc.model);
    const auto tok = load_tokenizer(loc);
    const auto examples = textdata::make_examples(load_docs(a.data), tok, {});
    if (examples.empty()) throw ConfigError("no examples in " + a.data);
    const auto r = objectives::evaluate(m, examples, Objective::triplet);
    fs::create_directories(out);
    write_json(out / "eval.json", json::parse(r.to_json()));
    std::cout << "cloze ppl " << r.cloze.perplexity() << ", bilm ppl " << r.bilm_perplexity() << "\n";
  }
  manifest.write(out);
  return kExitSuccess;
}

struct CheckArgs {
  std::string checkpoint;
  std::string suite = "all";
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  std::size_t grad_elements = 0;
  bool sabotage = false;
  std::string out;
};

int cmd_check(const CheckArgs& a) {
  CheckOptions opts;
  opts.trials = a.trials;
  opts.seed = a.seed;
  opts.grad_elements = a.grad_elements;
  opts.sabotage_mask = a.sabotage;
  RunManifest manifest;
  manifest.command = "check";
  manifest.seed = a.seed;
  manifest.config.set("suite", a.suite);
  manifest.config.set("trials", std::to_string(a.trials));
  manifest.config.set("grad_elements", std::to_string(a.grad_elements));
  manifest.config.set("grad_tolerance", format_double(opts.grad_tolerance));
  manifest.config.set("sabotage_mask", a.sabotage ? "true" : "false");
  std::optional<model::TwoTowerModel<float>> m;
  if (!a.checkpoint.empty()) {
    const auto loc = locate_checkpoint(a.checkpoint);
    manifest.add_input("checkpoint", loc.model);
    m.emplace(model::TwoTowerModel<float>::load(loc.model));
  }
  const auto report = run_checks(a.suite, m ? &*m : nullptr, opts);
  for (const auto& r : report.results) std::cout << r.line() << "\n";
  if (!a.out.empty()) {
    write_json(fs::path(a.out) / "report.json", report.to_json());
    manifest.write(a.out);
  }
  return report.passed() ? kExitSuccess : kExitInvariantFailure;
}

struct ExperimentArgs {
  std::string config;
  std::string data;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::string objectives = "cloze,bilm,triplet";
  std::optional<std::size_t> budget;
  std::string budgets;
  bool no_task = false;
  std::string out;
};

struct ExperimentSetup {
  RunConfig config;
  PreparedData data;
  std::optional<DownstreamData> task;
  bool synthetic = false;
  RunManifest manifest;
};

ExperimentSetup setup_experiment(const std::string& command, const ExperimentArgs& a) {
  auto kv = load_settings(a.config, a.set);
  if (a.budget) kv.set("max_updates", std::to_string(*a.budget));
  ExperimentSetup s;
  s.config = resolve_run_config(kv, a.seed);
  s.manifest.command = command;
  s.manifest.seed = s.config.train.seed;
  if (!a.config.empty()) s.manifest.add_input("config", a.config);
  std::vector<RawDoc> docs;
  if (!a.data.empty()) {
    s.manifest.add_input("data", corpus_file(a.data));
    docs = load_docs(a.data);
  } else {
    s.synthetic = true;
    docs = textdata::synth_corpus(s.config.corpus).docs;
  }
  s.data = prepare_data(docs, s.config.data);
  s.manifest.config = s.config.to_kv();
  s.manifest.config.merge(model_for(s.config, s.data.tokenizer).to_kv());
  if (s.synthetic && !a.no_task) s.task = synthetic_downstream(s.config, s.data.tokenizer);
  return s;
}

int cmd_ablate(const ExperimentArgs& a) {
  std::vector<Objective> objs;
  for (const auto& name : split_list(a.objectives)) {
    try {
      objs.push_back(objectives::parse_objective(name));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  auto s = setup_experiment("ablate", a);
  s.manifest.config.set("objectives", a.objectives);
  const bool determined = s.synthetic && s.config.corpus.kind == textdata::SynthKind::neighbor_determined;
  const auto table = run_ablation(s.config, s.data, objs, s.task, determined);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_text(out / "ablation.tsv", table.to_tsv());
  std::ostringstream lines;
  for (const auto& r : table.rows) lines << r.to_json().dump() << "\n";
  write_text(out / "ablation.jsonl", lines.str());
  std::cout << table.to_tsv();
  s.manifest.write(out);
  return kExitSuccess;
}

int cmd_datascale(const ExperimentArgs& a) {
  const auto budgets = parse_numbers<std::size_t>(a.budgets, "--budgets");
  auto s = setup_experiment("datascale", a);
  s.manifest.config.set("budgets", join_sizes(budgets));
  const auto rows = run_datascale(s.config, s.data, budgets, s.task);
  const fs::path out = a.out;
  fs::create_directories(out);
  std::ostringstream lines;
  for (const auto& r : rows) {
    lines << r.to_json().dump() << "\n";
    std::cout << r.to_json().dump() << "\n";
  }
  write_text(out / "datascale.jsonl", lines.str());
  s.manifest.write(out);
  return kExitSuccess;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Two-tower cloze pretraining: data, training, fine-tuning and verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus (and its downstream task)");
  s->add_option("--kind", synth.kind, "neighbor | ngram | copy | class-chain")->capture_default_str();
  s->add_option("--size", synth.size, "Number of lines")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--inner-vocab", synth.inner_vocab, "Context types K, or classes for class-chain")->capture_default_str();
  s->add_option("--class-size", synth.class_size, "Tokens per class (class-chain)")->capture_default_str();
  s->add_option("--line-tokens", synth.line_tokens)->capture_default_str();
  s->add_option("--lines-per-doc", synth.lines_per_doc)->capture_default_str();
  s->add_option("--task-train", synth.task_train, "Downstream task examples to write (0 = none)")->capture_default_str();
  s->add_option("--task-dev", synth.task_dev)->capture_default_str();
  s->add_option("--out", synth.out)->required();

  VocabArgs vocab;
  auto* v = app.add_subcommand("build-vocab", "Learn a BPE, word or character vocabulary");
  v->add_option("--input", vocab.input, "Corpus file (one example per line)")->required();
  v->add_option("--mode", vocab.mode, "bpe | word | char")->capture_default_str();
  v->add_option("--merges", vocab.merges)->capture_default_str();
  v->add_option("--min-freq", vocab.min_freq)->capture_default_str();
  v->add_option("--max-types", vocab.max_types, "0 = unlimited")->capture_default_str();
  v->add_option("--output,--out", vocab.out)->required();

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Pretrain a two-tower model");
  p->add_option("--config", pre.config, "key=value configuration file");
  p->add_option("--data", pre.data, "Corpus file or directory holding corpus.txt")->required();
  p->add_option("--vocab", pre.vocab, "Tokenizer directory from build-vocab (default: build from the data)");
  p->add_option("--objective", pre.objective, "cloze | bilm | triplet");
  p->add_option("--seed", pre.seed);
  p->add_option("--set", pre.set, "key=value override (repeatable)");
  p->add_flag("--resume", pre.resume, "Continue from <out>/checkpoints/latest");
  p->add_option("--out", pre.out)->required();

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint on a task");
  f->add_option("--checkpoint", ft.checkpoint, "Pretraining output or checkpoint directory")->required();
  f->add_option("--task", ft.task, "Task spec file")->required();
  f->add_option("--grid", ft.grid, "default, or comma-separated learning rates")->capture_default_str();
  f->add_option("--seeds", ft.seeds);
  f->add_option("--seed", ft.seed);
  f->add_option("--config", ft.config, "key=value fine-tuning configuration");
  f->add_option("--set", ft.set, "key=value override (repeatable)");
  f->add_flag("--random-init", ft.random_init, "Start from a random model of the same shape");
  f->add_option("--out", ft.out)->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a fine-tuned model on a split, or a pretrained model on text");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--task", ev.task, "Task spec (fine-tuned model)");
  e->add_option("--split", ev.split, "dev | test")->capture_default_str();
  e->add_option("--data", ev.data, "Corpus for held-out perplexity (pretrained model)");
  e->add_option("--out", ev.out)->required();

  CheckArgs ck;
  auto* c = app.add_subcommand("check", "Run the leakage, causality and gradient invariant suites");
  c->add_option("--checkpoint", ck.checkpoint, "Model to check (default: fresh random models)");
  c->add_option("--suite", ck.suite, "leakage | gradcheck | causality | all")->capture_default_str();
  c->add_option("--trials", ck.trials)->capture_default_str();
  c->add_option("--seed", ck.seed)->capture_default_str();
  c->add_option("--grad-elements", ck.grad_elements, "Elements per tensor (0 = all)")->capture_default_str();
  c->add_flag("--sabotage-mask", ck.sabotage, "Negative control: expose each target to itself");
  c->add_option("--out", ck.out);

  ExperimentArgs ab;
  auto* b = app.add_subcommand("ablate", "Compare objectives under one budget");
  b->add_option("--config", ab.config);
  b->add_option("--data", ab.data, "Corpus (default: generate from the corpus_* keys)");
  b->add_option("--objectives", ab.objectives)->capture_default_str();
  b->add_option("--budget", ab.budget, "Updates per objective");
  b->add_option("--seed", ab.seed);
  b->add_option("--set", ab.set, "key=value override (repeatable)");
  b->add_flag("--no-task", ab.no_task, "Skip downstream scoring");
  b->add_option("--out", ab.out)->required();

  ExperimentArgs ds;
  auto* d = app.add_subcommand("datascale", "Pretrain on ascending token budgets");
  d->add_option("--config", ds.config);
  d->add_option("--data", ds.data, "Corpus (default: generate from the corpus_* keys)");
  d->add_option("--budgets", ds.budgets, "Comma-separated content-token budgets")->required();
  d->add_option("--seed", ds.seed);
  d->add_option("--set", ds.set, "key=value override (repeatable)");
  d->add_flag("--no-task", ds.no_task, "Skip downstream scoring");
  d->add_option("--out", ds.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitSuccess : kExitConfigError;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*v) return cmd_build_vocab(vocab);
    if (*p) return cmd_pretrain(pre);
    if (*f) return cmd_finetune(ft);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_check(ck);
    if (*b) return cmd_ablate(ab);
    if (*d) return cmd_datascale(ds);
  } catch (const std::invalid_argument& err) {
    // ConfigError, malformed task data and bad batches are configuration problems.
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const textdata::FormatError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitConfigError;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"cloze"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace cloze::cli
