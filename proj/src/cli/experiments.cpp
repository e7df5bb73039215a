#include "cloze/cli/experiments.hpp"

#include <cmath>
#include <sstream>

#include "cloze/textdata/synth.hpp"
#include "cloze/trainer/pretrain.hpp"

namespace cloze::cli {

namespace fs = std::filesystem;

std::pair<std::vector<RawDoc>, std::vector<RawDoc>> split_heldout(const std::vector<RawDoc>& docs, double fraction) {
  if (fraction <= 0 || docs.empty()) return {docs, {}};
  if (docs.size() == 1) {
    const auto& lines = docs.front();
    const auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(lines.size())));
    if (held == 0 || held >= lines.size()) throw ConfigError("corpus too small to hold out " + format_double(fraction));
    const auto cut = lines.begin() + static_cast<std::ptrdiff_t>(lines.size() - held);
    return {{RawDoc(lines.begin(), cut)}, {RawDoc(cut, lines.end())}};
  }
  const auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(docs.size())));
  if (held >= docs.size()) throw ConfigError("corpus too small to hold out " + format_double(fraction));
  const auto cut = docs.begin() + static_cast<std::ptrdiff_t>(docs.size() - held);
  return {std::vector<RawDoc>(docs.begin(), cut), std::vector<RawDoc>(cut, docs.end())};
}

PreparedData prepare_data(const std::vector<RawDoc>& docs, const DataConfig& data, const textdata::Tokenizer* tokenizer) {
  PreparedData out;
  const auto [train, heldout] = split_heldout(docs, data.heldout_fraction);
  out.tokenizer = tokenizer ? *tokenizer : textdata::Tokenizer::build(textdata::corpus_lines(train), data.tokenizer());
  const textdata::ExampleOptions eo{data.examples, data.block_len};
  out.train = textdata::make_examples(train, out.tokenizer, eo, &out.warnings);
  out.heldout = textdata::make_examples(heldout, out.tokenizer, eo, &out.warnings);
  if (out.train.empty()) throw ConfigError("no training examples in the corpus");
  return out;
}

std::size_t content_tokens(const std::vector<Example>& examples) {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.content_tokens();
  return n;
}

std::vector<Example> budget_prefix(const std::vector<Example>& examples, std::size_t budget) {
  const std::size_t total = content_tokens(examples);
  if (budget > total) {
    throw ConfigError("budget of " + std::to_string(budget) + " tokens exceeds the " + std::to_string(total) +
                      " training tokens of the corpus");
  }
  std::vector<Example> out;
  std::size_t n = 0;
  for (const auto& e : examples) {
    if (n + e.content_tokens() > budget) break;
    n += e.content_tokens();
    out.push_back(e);
  }
  if (out.empty()) throw ConfigError("budget of " + std::to_string(budget) + " tokens holds no whole example");
  return out;
}

model::ModelConfig model_for(const RunConfig& config, const textdata::Tokenizer& tokenizer) {
  auto mc = config.model;
  mc.vocab_size = tokenizer.vocab().size();
  mc.validate();
  return mc;
}

std::unique_ptr<model::TwoTowerModel<float>> pretrain_model(const RunConfig& config, const textdata::Tokenizer& tokenizer,
                                                            std::vector<Example> train, std::vector<Example> heldout,
                                                            Objective objective, const fs::path* out_dir) {
  auto m = std::make_unique<model::TwoTowerModel<float>>(model_for(config, tokenizer), tokenizer.vocab().types());
  auto tc = config.train;
  tc.objective = objective;
  trainer::Pretrainer<float> t(*m, tc, std::move(train), std::move(heldout));
  trainer::MetricsLog log;
  if (out_dir) {
    log = trainer::MetricsLog(*out_dir / "metrics.jsonl", false);
    t.set_metrics(&log);
    t.set_checkpoint_dir(*out_dir / "checkpoints");
  }
  t.run();
  return m;
}

double own_perplexity(const LossReport& report, Objective objective) {
  return objective == Objective::bilm ? report.bilm_perplexity() : report.cloze.perplexity();
}

std::optional<DownstreamData> synthetic_downstream(const RunConfig& config, const textdata::Tokenizer& tokenizer) {
  const auto task = finetune::downstream_task(config.corpus, config.task.train, config.task.dev,
                                              numerics::derive_seed(config.train.seed, "downstream"));
  if (!task) return std::nullopt;
  DownstreamData d;
  d.spec = task->spec;
  d.train = finetune::encode_records(task->train, d.spec, tokenizer);
  d.dev = finetune::encode_records(task->dev, d.spec, tokenizer);
  return d;
}

double downstream_score(const model::TwoTowerModel<float>& pretrained, const DownstreamData& task,
                        const RunConfig& config) {
  const auto fc = config.task.finetune_config(numerics::derive_seed(config.train.seed, "downstream-finetune"));
  return finetune::finetune_task(pretrained, task.spec, task.train, task.dev, fc).report.best.dev_score;
}

namespace {

LossReport heldout_report(const model::TwoTowerModel<float>& m, const std::vector<Example>& heldout,
                          const RunConfig& config, const objectives::TargetFilter& filter = {}) {
  objectives::EvalOptions eo;
  eo.max_tokens = config.train.max_tokens;
  eo.lambda = config.train.lambda;
  eo.filter = filter;
  return objectives::evaluate(m, heldout, Objective::triplet, eo);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json AblationRow::to_json() const {
  return {{"objective", objectives::to_string(objective)},
          {"perplexity", perplexity},
          {"cloze_perplexity", heldout.cloze.perplexity()},
          {"bilm_perplexity", heldout.bilm_perplexity()},
          {"determined_perplexity", optional_json(determined)},
          {"task_score", optional_json(task_score)}};
}

std::string AblationTable::to_tsv() const {
  std::ostringstream o;
  o << "objective\tppl\tcloze_ppl\tbilm_ppl\tdetermined_ppl\t" << (task.empty() ? "task" : task) << "\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("n/a"); };
  for (const auto& r : rows) {
    o << objectives::to_string(r.objective) << '\t' << format_double(r.perplexity) << '\t'
      << format_double(r.heldout.cloze.perplexity()) << '\t' << format_double(r.heldout.bilm_perplexity()) << '\t'
      << opt(r.determined) << '\t' << opt(r.task_score) << "\n";
  }
  return o.str();
}

AblationTable run_ablation(const RunConfig& config, const PreparedData& data, const std::vector<Objective>& objs,
                           const std::optional<DownstreamData>& task, bool determined_positions) {
  if (data.heldout.empty()) throw ConfigError("ablation needs held-out data (heldout_fraction > 0)");
  if (objs.empty()) throw ConfigError("no objectives to compare");
  AblationTable table;
  if (task) table.task = task->spec.name;
  const auto& vocab = data.tokenizer.vocab();
  for (const auto o : objs) {
    const auto m = pretrain_model(config, data.tokenizer, data.train, data.heldout, o);
    AblationRow row;
    row.objective = o;
    row.heldout = heldout_report(*m, data.heldout, config);
    row.perplexity = own_perplexity(row.heldout, o);
    if (determined_positions) {
      const auto r = heldout_report(*m, data.heldout, config,
                                    [&](std::size_t id) { return textdata::is_determined_token(vocab.str(id)); });
      row.determined = r.cloze.perplexity();
    }
    if (task) row.task_score = downstream_score(*m, *task, config);
    table.rows.push_back(row);
  }
  return table;
}

nlohmann::json ScaleRow::to_json() const {
  return {{"budget", budget},
          {"tokens", tokens},
          {"examples", examples},
          {"heldout_ppl", perplexity},
          {"task_score", optional_json(task_score)}};
}

std::vector<ScaleRow> run_datascale(const RunConfig& config, const PreparedData& data,
                                    const std::vector<std::size_t>& budgets, const std::optional<DownstreamData>& task) {
  if (budgets.empty()) throw ConfigError("no budgets given");
  for (std::size_t i = 1; i < budgets.size(); ++i) {
    if (budgets[i] <= budgets[i - 1]) throw ConfigError("budgets must be strictly ascending");
  }
  if (data.heldout.empty()) throw ConfigError("datascale needs held-out data (heldout_fraction > 0)");
  // Validate every budget before spending time on training.
  for (auto b : budgets) budget_prefix(data.train, b);
  std::vector<ScaleRow> rows;
  for (auto b : budgets) {
    auto train = budget_prefix(data.train, b);
    ScaleRow row;
    row.budget = b;
    row.tokens = content_tokens(train);
    row.examples = train.size();
    const auto m = pretrain_model(config, data.tokenizer, std::move(train), data.heldout, config.train.objective);
    row.perplexity = own_perplexity(heldout_report(*m, data.heldout, config), config.train.objective);
    if (task) row.task_score = downstream_score(*m, *task, config);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace cloze::cli
