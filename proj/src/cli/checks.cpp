#include "cloze/cli/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cloze/numerics/grad_check.hpp"
#include "cloze/objectives/objectives.hpp"

namespace cloze::cli {

namespace {

using model::CombineMode;
using model::ForwardOptions;
using model::ModelConfig;
using model::TwoTowerModel;
using numerics::ForwardContext;
using numerics::Rng;
using textdata::Batch;

ModelConfig tiny_config(std::uint64_t seed, std::size_t trial) {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 16;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.ffn_dim = 24;
  c.final_heads = 2;
  c.max_len = 64;
  c.query_mode = trial % 2 ? model::QueryMode::concat : model::QueryMode::sum;
  c.init_seed = numerics::derive_seed(seed, "check-model-" + std::to_string(trial));
  return c;
}

Batch random_batch(Rng& rng, std::size_t vocab, std::size_t max_len) {
  const std::size_t rows = 1 + rng.index(3);
  std::vector<std::vector<std::size_t>> ids(rows);
  std::vector<const std::vector<std::size_t>*> ptrs;
  std::vector<std::size_t> source;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t len = 1 + rng.index(std::min<std::size_t>(12, max_len));
    for (std::size_t t = 0; t < len; ++t) {
      const bool boundary = len >= 2 && (t == 0 || t + 1 == len);
      ids[r].push_back(boundary ? textdata::kBoundaryId : textdata::kNumReserved + rng.index(vocab - textdata::kNumReserved));
    }
    ptrs.push_back(&ids[r]);
    source.push_back(r);
  }
  return textdata::make_batch(ptrs, source);
}

std::size_t substitute(Rng& rng, std::size_t old, std::size_t vocab) {
  std::size_t id;
  do id = textdata::kNumReserved + rng.index(vocab - textdata::kNumReserved);
  while (id == old);
  return id;
}

template <typename T>
double row_delta(const numerics::Tensor<T>& a, const numerics::Tensor<T>& b, std::size_t row, bool* identical) {
  const std::size_t w = a.shape().back();
  const auto x = a.data(), y = b.data();
  double worst = 0;
  for (std::size_t c = 0; c < w; ++c) {
    const T u = x[row * w + c], v = y[row * w + c];
    if (!(u == v)) *identical = false;
    worst = std::max(worst, std::abs(static_cast<double>(u) - static_cast<double>(v)));
  }
  return worst;
}

std::string where(std::size_t trial, std::size_t row, std::size_t pos) {
  return "trial " + std::to_string(trial) + " row " + std::to_string(row) + " position " + std::to_string(pos);
}

void check_vocab(const TwoTowerModel<float>& m) {
  if (m.config().vocab_size < textdata::kNumReserved + 2) throw ConfigError("model vocabulary too small to perturb");
}

}  // namespace

nlohmann::json CheckResult::to_json() const {
  nlohmann::json j{{"name", name}, {"passed", passed}, {"residual", residual}, {"cases", cases}, {"detail", detail}};
  if (!extra.is_null()) j["extra"] = extra;
  return j;
}

std::string CheckResult::line() const {
  std::ostringstream o;
  o << (passed ? "PASS " : "FAIL ") << name << " residual=" << residual << " cases=" << cases;
  if (!detail.empty()) o << " " << detail;
  return o.str();
}

bool CheckReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

nlohmann::json CheckReport::to_json() const {
  nlohmann::json j{{"suite", suite}, {"passed", passed()}, {"results", nlohmann::json::array()}};
  for (const auto& r : results) j["results"].push_back(r.to_json());
  return j;
}

CheckResult leakage_check(const TwoTowerModel<float>* given, const CheckOptions& options) {
  CheckResult res;
  res.name = options.sabotage_mask ? "leakage(sabotaged)" : "leakage";
  Rng rng(numerics::derive_seed(options.seed, "leakage"));
  std::size_t sensitive = 0;
  const ForwardOptions fo{.mode = CombineMode::train_masked, .unmask_target = options.sabotage_mask};
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    std::unique_ptr<TwoTowerModel<float>> fresh;
    if (!given) fresh = std::make_unique<TwoTowerModel<float>>(tiny_config(options.seed, trial));
    const auto& m = given ? *given : *fresh;
    check_vocab(m);
    const auto batch = random_batch(rng, m.config().vocab_size, m.config().max_len);
    ForwardContext c0;
    const auto base = m.log_probs(m.forward(batch, c0, fo).features);
    for (std::size_t b = 0; b < batch.rows; ++b) {
      for (std::size_t i = 0; i < batch.lengths[b]; ++i) {
        auto pert = batch;
        pert.ids[b * batch.width + i] = substitute(rng, batch.at(b, i), m.config().vocab_size);
        ForwardContext c1;
        const auto after = m.log_probs(m.forward(pert, c1, fo).features);
        bool same = true;
        const double d = row_delta(base, after, b * batch.width + i, &same);
        res.residual = std::max(res.residual, d);
        if (!same && res.passed) {
          res.passed = false;
          res.detail = "logits at the substituted token changed: " + where(trial, b, i);
        }
        bool others = false;
        for (std::size_t k = 0; k < batch.lengths[b]; ++k) {
          bool s = true;
          if (k != i) row_delta(base, after, b * batch.width + k, &s);
          others = others || !s;
        }
        sensitive += others ? 1 : 0;
        ++res.cases;
      }
    }
  }
  if (res.passed) res.detail = "max logit delta at the target position";
  res.extra = {{"substitutions_moving_other_positions", sensitive}};
  return res;
}

CheckResult causality_check(const TwoTowerModel<float>* given, const CheckOptions& options) {
  CheckResult res;
  res.name = "causality";
  Rng rng(numerics::derive_seed(options.seed, "causality"));
  std::size_t own_changed = 0;
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    std::unique_ptr<TwoTowerModel<float>> fresh;
    if (!given) fresh = std::make_unique<TwoTowerModel<float>>(tiny_config(options.seed, trial));
    const auto& m = given ? *given : *fresh;
    check_vocab(m);
    const auto batch = random_batch(rng, m.config().vocab_size, m.config().max_len);
    const std::size_t b = rng.index(batch.rows);
    const std::size_t j = rng.index(batch.lengths[b]);
    auto pert = batch;
    pert.ids[b * batch.width + j] = substitute(rng, batch.at(b, j), m.config().vocab_size);
    ForwardContext c0, c1;
    const ForwardOptions fo{.combine = false};
    const auto base = m.forward(batch, c0, fo);
    const auto after = m.forward(pert, c1, fo);
    auto layers = [](const model::TowerStates<float>& s) {
      auto v = s.layers;
      v.push_back(s.final);
      return v;
    };
    const auto fa = layers(base.fwd), fb = layers(after.fwd), ba = layers(base.bwd), bb = layers(after.bwd);
    bool moved = false;
    for (std::size_t l = 0; l < fa.size(); ++l) {
      for (std::size_t i = 0; i < batch.lengths[b]; ++i) {
        const std::size_t row = b * batch.width + i;
        bool same = true;
        if (i < j) res.residual = std::max(res.residual, row_delta(fa[l], fb[l], row, &same));
        if (i > j) res.residual = std::max(res.residual, row_delta(ba[l], bb[l], row, &same));
        if (i == j) {
          bool s = true;
          row_delta(fa[l], fb[l], row, &s);
          moved = moved || !s;
        }
        if (!same && res.passed) {
          res.passed = false;
          res.detail = std::string(i < j ? "forward" : "backward") + " block " + std::to_string(l) +
                       " saw a later token: " + where(trial, b, i) + " perturbed " + std::to_string(j);
        }
      }
    }
    own_changed += moved ? 1 : 0;
    res.cases += 2;
  }
  if (res.passed) res.detail = "max state delta on the unreachable side, both directions";
  res.extra = {{"trials_moving_own_position", own_changed}};
  return res;
}

std::vector<CheckResult> gradcheck_suite(const CheckOptions& options) {
  std::vector<CheckResult> out;
  auto cfg = tiny_config(options.seed, 0);
  TwoTowerModel<double> m(cfg);
  Rng rng(numerics::derive_seed(options.seed, "gradcheck"));
  std::vector<std::vector<std::size_t>> rows;
  for (std::size_t len : {4, 6}) {
    std::vector<std::size_t> r{textdata::kBoundaryId};
    for (std::size_t i = 0; i + 2 < len; ++i) r.push_back(textdata::kNumReserved + rng.index(cfg.vocab_size - 4));
    r.push_back(textdata::kBoundaryId);
    rows.push_back(r);
  }
  const auto batch = textdata::make_batch({&rows[0], &rows[1]}, {0, 1});
  std::vector<numerics::NamedParam> params;
  for (std::size_t i = 0; i < m.params().size(); ++i) params.push_back({m.params().names()[i], m.params().at(i)});
  numerics::GradCheckOptions go;
  go.tolerance = options.grad_tolerance;
  go.max_elements = options.grad_elements;
  go.seed = options.seed;
  for (auto o : {objectives::Objective::cloze, objectives::Objective::bilm, objectives::Objective::triplet}) {
    CheckResult res;
    res.name = "gradcheck(" + objectives::to_string(o) + ")";
    const auto report = numerics::grad_check(
        [&] {
          ForwardContext ctx;
          ctx.train = true;
          ctx.seed = options.seed;
          return objectives::compute_loss(m, batch, o, objectives::kDefaultBilmScale, ctx).total;
        },
        params, go);
    res.passed = report.passed;
    res.residual = report.worst();
    std::string worst_name;
    double worst = -1;
    for (const auto& e : report.entries) {
      res.cases += e.checked;
      res.extra[e.name] = e.max_rel_error;
      if (e.max_rel_error > worst) {
        worst = e.max_rel_error;
        worst_name = e.name;
      }
      if (!e.passed && res.detail.empty()) res.detail = "tensor " + e.name + " exceeds tolerance";
    }
    if (res.passed) {
      res.detail = std::to_string(report.entries.size()) + " tensors, worst " + worst_name;
    }
    out.push_back(std::move(res));
  }
  return out;
}

CheckReport run_checks(const std::string& suite, const TwoTowerModel<float>* model, const CheckOptions& options) {
  if (suite != "leakage" && suite != "causality" && suite != "gradcheck" && suite != "all") {
    throw ConfigError("unknown check suite '" + suite + "' (leakage|gradcheck|causality|all)");
  }
  CheckReport report;
  report.suite = suite;
  if (suite == "leakage" || suite == "all") report.results.push_back(leakage_check(model, options));
  if (suite == "causality" || suite == "all") report.results.push_back(causality_check(model, options));
  if (suite == "gradcheck" || suite == "all") {
    for (auto& r : gradcheck_suite(options)) report.results.push_back(std::move(r));
  }
  return report;
}

}  // namespace cloze::cli
