#include "cloze/trainer/pretrain.hpp"

#include <cmath>
#include <cstdio>

#include "cloze/numerics/ops.hpp"
#include "cloze/numerics/rng.hpp"

namespace cloze::trainer {

namespace fs = std::filesystem;
namespace nx = cloze::numerics;

void PretrainConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (max_updates == 0) throw ConfigError("max_updates must be positive");
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
  if (accumulation == 0) throw ConfigError("accumulation must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(grad_norm_threshold > 0)) throw ConfigError("grad_norm_threshold must be positive");
  schedule().validate();
}

Schedule PretrainConfig::schedule() const { return {lr_init, lr_peak, lr_floor, warmup_steps, max_updates}; }

KeyValues PretrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("objective", objectives::to_string(objective));
  kv.set("lambda", format_double(lambda));
  kv.set("max_updates", std::to_string(max_updates));
  kv.set("warmup_steps", std::to_string(warmup_steps));
  kv.set("lr_init", format_double(lr_init));
  kv.set("lr_peak", format_double(lr_peak));
  kv.set("lr_floor", format_double(lr_floor));
  kv.set("momentum", format_double(momentum));
  kv.set("grad_norm_threshold", format_double(grad_norm_threshold));
  kv.set("seed", std::to_string(seed));
  kv.set("max_tokens", std::to_string(max_tokens));
  kv.set("accumulation", std::to_string(accumulation));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("eval_every", std::to_string(eval_every));
  return kv;
}

void PretrainConfig::apply(const KeyValues& kv) {
  if (kv.has("objective")) {
    try {
      objective = objectives::parse_objective(kv.get("objective"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  lambda = kv.get_double("lambda", lambda);
  max_updates = kv.get_size("max_updates", max_updates);
  warmup_steps = kv.get_size("warmup_steps", warmup_steps);
  lr_init = kv.get_double("lr_init", lr_init);
  lr_peak = kv.get_double("lr_peak", lr_peak);
  lr_floor = kv.get_double("lr_floor", lr_floor);
  momentum = kv.get_double("momentum", momentum);
  grad_norm_threshold = kv.get_double("grad_norm_threshold", grad_norm_threshold);
  seed = kv.get_u64("seed", seed);
  max_tokens = kv.get_size("max_tokens", max_tokens);
  accumulation = kv.get_size("accumulation", accumulation);
  checkpoint_every = kv.get_size("checkpoint_every", checkpoint_every);
  eval_every = kv.get_size("eval_every", eval_every);
}

PretrainConfig PretrainConfig::from_kv(const KeyValues& kv) {
  PretrainConfig c;
  c.apply(kv);
  return c;
}

const std::vector<std::string>& PretrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    const auto kv = PretrainConfig{}.to_kv();
    for (const auto& [key, value] : kv.entries()) out.push_back(key);
    return out;
  }();
  return k;
}

MetricsLog::MetricsLog(const fs::path& path, bool append) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
}

void MetricsLog::write(const nlohmann::json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
}

template <typename T>
Pretrainer<T>::Pretrainer(TwoTowerModel<T>& model, PretrainConfig config, std::vector<Example> train,
                          std::vector<Example> heldout)
    : model_(model),
      config_(std::move(config)),
      heldout_(std::move(heldout)),
      optimizer_(model.params(), config_.momentum),
      start_(std::chrono::steady_clock::now()) {
  config_.validate();
  if (train.empty()) throw std::invalid_argument("pretraining corpus is empty");
  for (const auto& e : train) {
    if (e.size() > model_.config().max_len) {
      throw std::invalid_argument("training example of length " + std::to_string(e.size()) + " exceeds max_len " +
                                  std::to_string(model_.config().max_len));
    }
  }
  batches_ = textdata::make_batches(train, config_.max_tokens);
}

template <typename T>
const textdata::Batch& Pretrainer<T>::next_batch() {
  const std::size_t epoch = batches_seen_ / batches_.size();
  if (epoch != order_epoch_) {
    order_.resize(batches_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nx::Rng rng(nx::derive_seed(config_.seed, "batch-order/" + std::to_string(epoch)));
    rng.shuffle(order_);
    order_epoch_ = epoch;
  }
  const auto& b = batches_[order_[batches_seen_ % batches_.size()]];
  ++batches_seen_;
  return b;
}

template <typename T>
StepResult Pretrainer<T>::step() {
  StepResult r;
  r.step = updates_;
  r.lr = lr_schedule(updates_, config_.schedule());
  model_.params().zero_grad();
  r.report.objective = config_.objective;
  r.report.lambda = config_.objective == Objective::triplet ? config_.lambda : 0.0;
  const T inv = T(1) / static_cast<T>(config_.accumulation);
  for (std::size_t k = 0; k < config_.accumulation; ++k) {
    const std::size_t micro = batches_seen_;
    const auto& batch = next_batch();
    nx::ForwardContext ctx;
    ctx.train = true;
    ctx.seed = nx::derive_seed(config_.seed, "dropout");
    ctx.step = micro;
    auto terms = objectives::compute_loss(model_, batch, config_.objective, config_.lambda, ctx);
    const double loss = static_cast<double>(terms.total.item());
    if (!std::isfinite(loss)) {
      std::string where = checkpoint_dir_ ? " (last good checkpoint: " + resolve_checkpoint(*checkpoint_dir_).string() + ")" : "";
      if (metrics_) metrics_->write({{"event", "diverged"}, {"step", updates_}, {"loss", nullptr}});
      throw TrainingDiverged("non-finite loss at step " + std::to_string(updates_) + where);
    }
    nx::backward(config_.accumulation == 1 ? terms.total : nx::scale(terms.total, inv));
    r.report.cloze += terms.report.cloze;
    r.report.fwd += terms.report.fwd;
    r.report.bwd += terms.report.bwd;
    r.tokens += batch.tokens();
  }
  r.renorm = renorm_grads(model_.params(), config_.grad_norm_threshold);
  if (!r.renorm.finite) {
    r.skipped = true;
    ++skipped_;
    if (metrics_) metrics_->write({{"event", "nonfinite_grad"}, {"step", updates_}});
  } else {
    optimizer_.step(model_.params(), r.lr);
  }
  ++updates_;
  log_step(r);
  return r;
}

template <typename T>
void Pretrainer<T>::run(std::optional<std::size_t> until) {
  const std::size_t target = std::min(until.value_or(config_.max_updates), config_.max_updates);
  while (updates_ < target) {
    step();
    if (config_.eval_every && !heldout_.empty() && updates_ % config_.eval_every == 0) log_eval(evaluate());
    if (config_.checkpoint_every && checkpoint_dir_ && updates_ % config_.checkpoint_every == 0) {
      write_periodic_checkpoint();
    }
  }
  if (done()) {
    if (!heldout_.empty() && !(config_.eval_every && updates_ % config_.eval_every == 0)) log_eval(evaluate());
    if (checkpoint_dir_ && !(config_.checkpoint_every && updates_ % config_.checkpoint_every == 0)) {
      write_periodic_checkpoint();
    }
  }
}

template <typename T>
LossReport Pretrainer<T>::evaluate() const {
  objectives::EvalOptions opts;
  opts.max_tokens = config_.max_tokens;
  opts.lambda = config_.lambda;
  return objectives::evaluate(model_, heldout_, config_.objective, opts);
}

template <typename T>
void Pretrainer<T>::log_step(const StepResult& r) {
  if (!metrics_) return;
  auto j = nlohmann::json::parse(r.report.to_json());
  j["event"] = "step";
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["grad_norm"] = r.renorm.finite ? nlohmann::json(r.renorm.norm) : nlohmann::json(nullptr);
  j["grad_scale"] = r.renorm.scale;
  j["tokens"] = r.tokens;
  j["skipped"] = r.skipped;
  j["wall"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  metrics_->write(j);
}

template <typename T>
void Pretrainer<T>::log_eval(const LossReport& r) {
  if (!metrics_) return;
  auto j = nlohmann::json::parse(r.to_json());
  j["event"] = "eval";
  j["step"] = updates_;
  j["wall"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  metrics_->write(j);
}

namespace {

// Keys that must match for a resumed run to continue the same trajectory.
bool trajectory_key(const std::string& k) { return k != "checkpoint_every" && k != "eval_every"; }

}  // namespace

template <typename T>
void Pretrainer<T>::save_checkpoint(const fs::path& dir) const {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  model_.save(tmp);
  optimizer_.save(tmp / "optimizer");
  auto kv = config_.to_kv();
  kv.set("state.updates", std::to_string(updates_));
  kv.set("state.batches_seen", std::to_string(batches_seen_));
  kv.set("state.skipped", std::to_string(skipped_));
  kv.save(tmp / "trainer.txt");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

template <typename T>
void Pretrainer<T>::load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "trainer.txt")) throw model::CheckpointError("no trainer state in " + dir.string());
  const auto kv = KeyValues::load(dir / "trainer.txt");
  const auto mine = config_.to_kv();
  for (const auto& [k, v] : mine.entries()) {
    if (trajectory_key(k) && kv.get(k, "") != v) {
      throw model::CheckpointError("checkpoint " + dir.string() + " was trained with " + k + "=" + kv.get(k, "?") +
                                   ", this run has " + v);
    }
  }
  model_.load_parameters(dir);
  optimizer_.load(dir / "optimizer");
  updates_ = kv.get_size("state.updates");
  batches_seen_ = kv.get_size("state.batches_seen");
  skipped_ = kv.get_size("state.skipped");
  order_epoch_ = static_cast<std::size_t>(-1);
}

template <typename T>
fs::path Pretrainer<T>::write_periodic_checkpoint() {
  if (!checkpoint_dir_) throw std::logic_error("no checkpoint directory set");
  char name[32];
  std::snprintf(name, sizeof name, "step-%07zu", updates_);
  const auto dir = *checkpoint_dir_ / name;
  save_checkpoint(dir);
  std::ofstream latest(*checkpoint_dir_ / "latest", std::ios::trunc);
  latest << name << '\n';
  if (metrics_) metrics_->write({{"event", "checkpoint"}, {"step", updates_}, {"path", dir.string()}});
  return dir;
}

PretrainConfig load_pretrain_config(const fs::path& dir) {
  return PretrainConfig::from_kv(KeyValues::load(dir / "trainer.txt"));
}

fs::path resolve_checkpoint(const fs::path& dir) {
  std::ifstream latest(dir / "latest");
  std::string name;
  if (latest && std::getline(latest, name) && !name.empty()) return dir / name;
  return dir;
}

template class Pretrainer<float>;
template class Pretrainer<double>;

}  // namespace cloze::trainer
