#include "cloze/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cloze/numerics/ops.hpp"
#include "json.hpp"

namespace cloze::objectives {

namespace nx = cloze::numerics;

Objective parse_objective(const std::string& name) {
  if (name == "cloze") return Objective::cloze;
  if (name == "bilm") return Objective::bilm;
  if (name == "triplet") return Objective::triplet;
  throw std::invalid_argument("unknown objective '" + name + "' (expected cloze, bilm or triplet)");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::cloze:
      return "cloze";
    case Objective::bilm:
      return "bilm";
    case Objective::triplet:
      return "triplet";
  }
  return "?";
}

double LossComponent::perplexity() const { return std::exp(mean()); }

double combine_means(Objective objective, double lambda, double cloze, double fwd, double bwd) {
  switch (objective) {
    case Objective::cloze:
      return cloze;
    case Objective::bilm:
      return fwd + bwd;
    case Objective::triplet:
      return cloze + lambda * (fwd + bwd);
  }
  return 0;
}

double LossReport::total() const { return combine_means(objective, lambda, cloze.mean(), fwd.mean(), bwd.mean()); }

double LossReport::bilm_perplexity() const {
  LossComponent both = fwd;
  both += bwd;
  return both.perplexity();
}

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["objective"] = to_string(objective);
  j["total"] = total();
  if (objective == Objective::triplet) j["lambda"] = lambda;
  auto component = [](const LossComponent& c) {
    return nlohmann::json{{"nll_sum", c.nll_sum}, {"tokens", c.tokens}, {"perplexity", c.perplexity()}};
  };
  if (objective != Objective::bilm) j["cloze"] = component(cloze);
  if (objective != Objective::cloze) {
    j["fwd"] = component(fwd);
    j["bwd"] = component(bwd);
  }
  return j.dump();
}

namespace {

enum class Shift { none, next, previous };

// Target ids and 0/1 weights for each row of a [rows*width x V] log-prob
// matrix. Row (b, t) predicts token t, t+1 or t-1 depending on the shift.
template <typename T>
void targets_for(const Batch& batch, Shift shift, const TargetFilter& filter, std::vector<std::size_t>& targets,
                 std::vector<T>& weights) {
  const std::size_t n = batch.rows * batch.width;
  targets.assign(n, 0);
  weights.assign(n, T(0));
  for (std::size_t b = 0; b < batch.rows; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t src = t;
      if (shift == Shift::next) {
        if (t + 1 >= len) continue;
        src = t + 1;
      } else if (shift == Shift::previous) {
        if (t == 0) continue;
        src = t - 1;
      }
      const std::size_t id = batch.at(b, src);
      if (filter && !filter(id)) continue;
      targets[b * batch.width + t] = id;
      weights[b * batch.width + t] = T(1);
    }
  }
}

template <typename T>
std::size_t count_weights(const std::vector<T>& w) {
  return static_cast<std::size_t>(std::count(w.begin(), w.end(), T(1)));
}

template <typename T>
struct Scored {
  Tensor<T> nll;  // summed NLL, scalar
  std::size_t tokens = 0;
};

template <typename T>
Scored<T> score(const TwoTowerModel<T>& model, const Tensor<T>& features, const Batch& batch, Shift shift,
                const TargetFilter& filter) {
  std::vector<std::size_t> targets;
  std::vector<T> weights;
  targets_for(batch, shift, filter, targets, weights);
  const auto logp = model.log_probs(features);
  return {nx::nll_sum(logp, std::span<const std::size_t>(targets), std::span<const T>(weights)),
          count_weights(weights)};
}

template <typename T>
Tensor<T> per_token(const Scored<T>& s) {
  return nx::scale(s.nll, s.tokens ? T(1) / static_cast<T>(s.tokens) : T(0));
}

}  // namespace

template <typename T>
LossTerms<T> compute_loss(const TwoTowerModel<T>& model, const Batch& batch, Objective objective, double lambda,
                          ForwardContext& ctx, const TargetFilter& filter) {
  if (!(lambda >= 0)) throw std::invalid_argument("bilm scale must be non-negative");
  const bool want_cloze = objective != Objective::bilm;
  const bool want_bilm = objective != Objective::cloze;

  model::ForwardOptions opts;
  opts.mode = model::CombineMode::train_masked;
  opts.combine = want_cloze;
  const auto out = model.forward(batch, ctx, opts);

  LossTerms<T> terms;
  terms.report.objective = objective;
  terms.report.lambda = objective == Objective::triplet ? lambda : 0.0;
  if (want_cloze) {
    const auto s = score(model, out.features, batch, Shift::none, filter);
    terms.cloze = per_token(s);
    terms.report.cloze = {static_cast<double>(s.nll.item()), s.tokens};
  }
  if (want_bilm) {
    const auto f = score(model, out.fwd.final, batch, Shift::next, filter);
    const auto b = score(model, out.bwd.final, batch, Shift::previous, filter);
    terms.fwd = per_token(f);
    terms.bwd = per_token(b);
    terms.report.fwd = {static_cast<double>(f.nll.item()), f.tokens};
    terms.report.bwd = {static_cast<double>(b.nll.item()), b.tokens};
  }
  switch (objective) {
    case Objective::cloze:
      terms.total = terms.cloze;
      break;
    case Objective::bilm:
      terms.total = nx::add(terms.fwd, terms.bwd);
      break;
    case Objective::triplet:
      terms.total = nx::add(terms.cloze, nx::scale(nx::add(terms.fwd, terms.bwd), static_cast<T>(lambda)));
      break;
  }
  return terms;
}

namespace {

// Per-row NLL sums read straight from a log-prob matrix.
template <typename T>
void row_sums(const Tensor<T>& logp, const Batch& batch, Shift shift, const TargetFilter& filter,
              std::vector<double>& sums, std::vector<std::size_t>& counts) {
  std::vector<std::size_t> targets;
  std::vector<T> weights;
  targets_for(batch, shift, filter, targets, weights);
  const std::size_t V = logp.dim(1);
  const auto data = logp.data();
  for (std::size_t b = 0; b < batch.rows; ++b) {
    double s = 0;
    std::size_t c = 0;
    for (std::size_t t = 0; t < batch.width; ++t) {
      const std::size_t r = b * batch.width + t;
      if (weights[r] == T(0)) continue;
      s -= static_cast<double>(data[r * V + targets[r]]);
      ++c;
    }
    sums[batch.source[b]] = s;
    counts[batch.source[b]] = c;
  }
}

LossComponent pooled(std::vector<double> sums, const std::vector<std::size_t>& counts) {
  LossComponent c;
  std::sort(sums.begin(), sums.end());
  for (double s : sums) c.nll_sum += s;
  for (auto n : counts) c.tokens += n;
  return c;
}

}  // namespace

template <typename T>
LossReport evaluate(const TwoTowerModel<T>& model, const std::vector<Example>& heldout, Objective objective,
                    const EvalOptions& options) {
  if (heldout.empty()) throw std::invalid_argument("evaluation set is empty");
  if (!(options.lambda >= 0)) throw std::invalid_argument("bilm scale must be non-negative");
  nx::NoGradGuard guard;
  nx::ForwardContext ctx;
  ctx.train = false;

  const bool want_cloze = objective != Objective::bilm;
  const bool want_bilm = objective != Objective::cloze;
  const std::size_t n = heldout.size();
  std::vector<double> cs(n, 0), fs(n, 0), bs(n, 0);
  std::vector<std::size_t> cc(n, 0), fc(n, 0), bc(n, 0);

  for (const auto& batch : textdata::make_batches(heldout, options.max_tokens)) {
    model::ForwardOptions opts;
    opts.combine = want_cloze;
    const auto out = model.forward(batch, ctx, opts);
    if (want_cloze) row_sums(model.log_probs(out.features), batch, Shift::none, options.filter, cs, cc);
    if (want_bilm) {
      row_sums(model.log_probs(out.fwd.final), batch, Shift::next, options.filter, fs, fc);
      row_sums(model.log_probs(out.bwd.final), batch, Shift::previous, options.filter, bs, bc);
    }
  }
  LossReport report;
  report.objective = objective;
  report.lambda = objective == Objective::triplet ? options.lambda : 0.0;
  if (want_cloze) report.cloze = pooled(cs, cc);
  if (want_bilm) {
    report.fwd = pooled(fs, fc);
    report.bwd = pooled(bs, bc);
  }
  return report;
}

template <typename T>
void zero_classifier(TwoTowerModel<T>& model) {
  auto& params = model.params();
  for (const auto& name : params.names()) {
    const bool cls = name.rfind("cls.", 0) == 0;
    const bool tied = name == "enc.embedding" && model.config().classifier == model::ClassifierKind::flat_tied;
    if (!cls && !tied) continue;
    auto d = params.get(name).mutable_data();
    std::fill(d.begin(), d.end(), T(0));
  }
  // Adaptive head: weight each band pointer by its band size so every type gets 1/V.
  const auto& cfg = model.config();
  if (cfg.classifier != model::ClassifierKind::adaptive || cfg.cutoffs.empty()) return;
  auto bias = params.get("cls.head.bias").mutable_data();
  for (std::size_t k = 0; k < cfg.cutoffs.size(); ++k) {
    const std::size_t hi = k + 1 < cfg.cutoffs.size() ? cfg.cutoffs[k + 1] : cfg.vocab_size;
    bias[cfg.cutoffs[0] + k] = static_cast<T>(std::log(static_cast<double>(hi - cfg.cutoffs[k])));
  }
}

#define CLOZE_INSTANTIATE(T)                                                                                       \
  template LossTerms<T> compute_loss(const TwoTowerModel<T>&, const Batch&, Objective, double, ForwardContext&, \
                                     const TargetFilter&);                                                        \
  template LossReport evaluate(const TwoTowerModel<T>&, const std::vector<Example>&, Objective, const EvalOptions&); \
  template void zero_classifier(TwoTowerModel<T>&);

CLOZE_INSTANTIATE(float)
CLOZE_INSTANTIATE(double)
#undef CLOZE_INSTANTIATE

}  // namespace cloze::objectives
