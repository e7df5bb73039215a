#include "cloze/model/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "cloze/numerics/ops.hpp"

namespace cloze::model {

namespace fs = std::filesystem;
namespace nx = numerics;

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw nx::DimensionError("sinusoidal_positions: d must be even, got " + std::to_string(d));
  std::vector<T> pe(length * d);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(d));
      pe[t * d + 2 * k] = static_cast<T>(std::sin(angle));
      pe[t * d + 2 * k + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>({length, d}, std::move(pe));
}

AttentionMask tower_mask(const Batch& batch, Direction direction) {
  const std::size_t T = batch.width;
  AttentionMask mask(batch.rows, T, T);
  for (std::size_t b = 0; b < batch.rows; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        const bool ok = direction == Direction::forward ? j <= i : j >= i;
        if (ok) mask.set(b, i, j, true);
      }
    }
  }
  return mask;
}

AttentionMask combination_mask(const Batch& batch, CombineMode mode, bool unmask_target) {
  const std::size_t T = batch.width;
  AttentionMask mask(batch.rows, T, 2 * T);
  for (std::size_t b = 0; b < batch.rows; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        const bool all = mode == CombineMode::finetune_unmasked;
        const bool fwd = all || j < i || (unmask_target && j == i);
        const bool bwd = all || j > i || (unmask_target && j == i);
        if (fwd) mask.set(b, i, j, true);
        if (bwd) mask.set(b, i, T + j, true);
      }
    }
  }
  return mask;
}

template <typename T>
Tensor<T> highway(const Tensor<T>& x, const Tensor<T>& wh, const Tensor<T>& bh, const Tensor<T>& wg,
                  const Tensor<T>& bg) {
  const auto g = nx::sigmoid(nx::linear(x, wg, bg));
  const auto h = nx::relu(nx::linear(x, wh, bh));
  const auto carry = nx::add_scalar(nx::scale(g, T(-1)), T(1));
  return nx::add(nx::mul(g, h), nx::mul(carry, x));
}

template <typename T>
void TwoTowerModel<T>::add_norm(const std::string& name) {
  params_.add(name + ".gain", {config_.d_model}, Init::ones);
  params_.add(name + ".bias", {config_.d_model}, Init::zeros);
}

template <typename T>
void TwoTowerModel<T>::add_attention(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* p : {"q", "k", "v", "o"}) {
    params_.add(prefix + ".w" + p, {d, d}, Init::normal, sd);
    params_.add(prefix + ".b" + p, {d}, Init::zeros);
  }
}

template <typename T>
void TwoTowerModel<T>::add_ffn(const std::string& prefix, std::size_t hidden) {
  const std::size_t d = config_.d_model;
  params_.add(prefix + ".w1", {d, hidden}, Init::normal, 1.0 / std::sqrt(static_cast<double>(d)));
  params_.add(prefix + ".b1", {hidden}, Init::zeros);
  params_.add(prefix + ".w2", {hidden, d}, Init::normal, 1.0 / std::sqrt(static_cast<double>(hidden)));
  params_.add(prefix + ".b2", {d}, Init::zeros);
}

template <typename T>
TwoTowerModel<T>::TwoTowerModel(ModelConfig config, std::vector<std::string> type_strings)
    : config_(std::move(config)), types_(std::move(type_strings)), params_(config_.init_seed) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t V = config_.vocab_size;

  if (config_.encoder == EncoderKind::embedding) {
    params_.add("enc.embedding", {V, d}, Init::normal, 1.0 / std::sqrt(static_cast<double>(d)));
  } else {
    if (types_.size() != V) {
      throw ConfigError("char_cnn encoder needs one type string per vocabulary id (" + std::to_string(V) + "), got " +
                        std::to_string(types_.size()));
    }
    const std::size_t cd = config_.char_dim;
    params_.add("enc.char_embedding", {textdata::kCharVocabSize, cd}, Init::normal, 1.0 / std::sqrt(static_cast<double>(cd)));
    for (std::size_t i = 0; i < config_.char_widths.size(); ++i) {
      const std::size_t w = config_.char_widths[i];
      const std::string p = "enc.conv" + std::to_string(w);
      params_.add(p + ".weight", {w * cd, config_.char_channels[i]}, Init::normal,
                  1.0 / std::sqrt(static_cast<double>(w * cd)));
      params_.add(p + ".bias", {config_.char_channels[i]}, Init::zeros);
    }
    const std::size_t c = config_.char_total_channels();
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    params_.add("enc.highway.wh", {c, c}, Init::normal, sd);
    params_.add("enc.highway.bh", {c}, Init::zeros);
    params_.add("enc.highway.wg", {c, c}, Init::normal, sd);
    params_.add("enc.highway.bg", {c}, Init::zeros);
    params_.add("enc.proj.weight", {c, d}, Init::normal, sd);
    params_.add("enc.proj.bias", {d}, Init::zeros);
  }

  for (const char* dir : {"fwd", "bwd"}) {
    for (std::size_t l = 0; l < config_.n_blocks; ++l) {
      const std::string p = std::string(dir) + "." + std::to_string(l);
      add_norm(p + ".ln_attn");
      add_attention(p + ".attn");
      add_norm(p + ".ln_ffn");
      add_ffn(p + ".ffn", config_.ffn_dim);
    }
    add_norm(std::string(dir) + ".ln_final");
  }

  if (config_.query_mode == QueryMode::concat) {
    params_.add("comb.query_proj", {2 * d, d}, Init::normal, 1.0 / std::sqrt(2.0 * static_cast<double>(d)));
  }
  add_norm("comb.ln_attn");
  add_attention("comb.attn");
  add_norm("comb.ln_ffn");
  add_ffn("comb.ffn", config_.comb_ffn_dim());
  add_norm("comb.ln_out");

  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  switch (config_.classifier) {
    case ClassifierKind::flat_tied:
      params_.add("cls.bias", {V}, Init::zeros);
      break;
    case ClassifierKind::flat:
      params_.add("cls.weight", {d, V}, Init::normal, sd);
      params_.add("cls.bias", {V}, Init::zeros);
      break;
    case ClassifierKind::adaptive: {
      const std::size_t nb = config_.cutoffs.size();
      const std::size_t head = nb ? config_.cutoffs[0] : V;
      params_.add("cls.head.weight", {d, head + nb}, Init::normal, sd);
      params_.add("cls.head.bias", {head + nb}, Init::zeros);
      for (std::size_t k = 0; k < nb; ++k) {
        const std::size_t lo = config_.cutoffs[k];
        const std::size_t hi = k + 1 < nb ? config_.cutoffs[k + 1] : V;
        const std::size_t dk = config_.band_dims[k];
        const std::string p = "cls.tail" + std::to_string(k);
        params_.add(p + ".proj", {d, dk}, Init::normal, sd);
        params_.add(p + ".out", {dk, hi - lo}, Init::normal, 1.0 / std::sqrt(static_cast<double>(dk)));
      }
      break;
    }
  }
}

template <typename T>
Tensor<T> TwoTowerModel<T>::char_cnn(const Batch& batch) const {
  // Encode each distinct type once, then scatter back to positions.
  std::map<std::size_t, std::ptrdiff_t> slot;
  for (std::size_t id : batch.ids) slot.emplace(id, 0);
  std::vector<std::size_t> chars;
  std::ptrdiff_t next = 0;
  for (auto& [id, s] : slot) {
    if (id >= types_.size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    s = next++;
    const auto enc = textdata::encode_chars(types_[id], config_.max_chars);
    chars.insert(chars.end(), enc.begin(), enc.end());
  }
  const auto emb = nx::embedding(params_.get("enc.char_embedding"), std::span<const std::size_t>(chars));
  std::vector<Tensor<T>> pooled;
  for (std::size_t w : config_.char_widths) {
    const std::string p = "enc.conv" + std::to_string(w);
    pooled.push_back(nx::conv1d_maxpool(emb, params_.get(p + ".weight"), params_.get(p + ".bias"), config_.max_chars, w));
  }
  const auto cat = nx::concat(std::span<const Tensor<T>>(pooled), 1);
  const auto hw = highway(cat, params_.get("enc.highway.wh"), params_.get("enc.highway.bh"),
                          params_.get("enc.highway.wg"), params_.get("enc.highway.bg"));
  const auto types = nx::linear(hw, params_.get("enc.proj.weight"), params_.get("enc.proj.bias"));
  std::vector<std::ptrdiff_t> rows;
  rows.reserve(batch.ids.size());
  for (std::size_t id : batch.ids) rows.push_back(slot.at(id));
  return nx::gather_rows(types, std::span<const std::ptrdiff_t>(rows));
}

template <typename T>
Tensor<T> TwoTowerModel<T>::encode_inputs(const Batch& batch, ForwardContext& ctx) const {
  const std::size_t T_ = batch.width;
  const std::size_t d = config_.d_model;
  if (T_ > config_.max_len) {
    throw nx::DimensionError("sequence length " + std::to_string(T_) + " exceeds max_len " +
                             std::to_string(config_.max_len));
  }
  for (std::size_t id : batch.ids) {
    if (id >= config_.vocab_size) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
  Tensor<T> tokens;
  if (config_.encoder == EncoderKind::embedding) {
    tokens = nx::scale(nx::embedding(params_.get("enc.embedding"), std::span<const std::size_t>(batch.ids)),
                       static_cast<T>(std::sqrt(static_cast<double>(d))));
  } else {
    tokens = char_cnn(batch);
  }
  const auto pe = sinusoidal_positions<T>(T_, d);
  std::vector<T> tiled(batch.rows * T_ * d);
  for (std::size_t b = 0; b < batch.rows; ++b) std::copy(pe.data().begin(), pe.data().end(), tiled.begin() + b * T_ * d);
  const auto x = nx::add(tokens, Tensor<T>({batch.rows * T_, d}, std::move(tiled)));
  return nx::dropout(x, static_cast<T>(config_.dropout), ctx);
}

template <typename T>
Tensor<T> TwoTowerModel<T>::attention_block(const std::string& prefix, const Tensor<T>& query_in,
                                            const Tensor<T>& memory, const AttentionMask& mask, std::size_t heads,
                                            ForwardContext& ctx) const {
  auto P = [&](const char* n) -> const Tensor<T>& { return params_.get(prefix + "." + n); };
  const auto q = nx::linear(query_in, P("wq"), P("bq"));
  const auto k = nx::linear(memory, P("wk"), P("bk"));
  const auto v = nx::linear(memory, P("wv"), P("bv"));
  const auto att = nx::masked_attention(q, k, v, mask, heads, static_cast<T>(config_.attention_dropout), ctx);
  return nx::dropout(nx::linear(att, P("wo"), P("bo")), static_cast<T>(config_.dropout), ctx);
}

template <typename T>
Tensor<T> TwoTowerModel<T>::ffn_block(const std::string& prefix, const Tensor<T>& x, ForwardContext& ctx) const {
  auto P = [&](const char* n) -> const Tensor<T>& { return params_.get(prefix + "." + n); };
  const auto h = nx::dropout(nx::relu(nx::linear(x, P("w1"), P("b1"))), static_cast<T>(config_.relu_dropout), ctx);
  return nx::dropout(nx::linear(h, P("w2"), P("b2")), static_cast<T>(config_.dropout), ctx);
}

namespace {

template <typename T>
Tensor<T> norm(const ParamSet<T>& params, const std::string& name, const Tensor<T>& x) {
  return nx::layer_norm(x, params.get(name + ".gain"), params.get(name + ".bias"));
}

}  // namespace

template <typename T>
TowerStates<T> TwoTowerModel<T>::tower(const Tensor<T>& input, const Batch& batch, Direction direction,
                                       ForwardContext& ctx) const {
  const std::string dir = direction == Direction::forward ? "fwd" : "bwd";
  const auto mask = tower_mask(batch, direction);
  TowerStates<T> out;
  Tensor<T> h = input;
  for (std::size_t l = 0; l < config_.n_blocks; ++l) {
    const std::string p = dir + "." + std::to_string(l);
    const auto a = norm(params_, p + ".ln_attn", h);
    h = nx::add(h, attention_block(p + ".attn", a, a, mask, config_.n_heads, ctx));
    h = nx::add(h, ffn_block(p + ".ffn", norm(params_, p + ".ln_ffn", h), ctx));
    out.layers.push_back(h);
  }
  out.final = norm(params_, dir + ".ln_final", h);
  return out;
}

template <typename T>
Tensor<T> TwoTowerModel<T>::combine(const TowerStates<T>& fwd, const TowerStates<T>& bwd, const Batch& batch,
                                    const ForwardOptions& options, ForwardContext& ctx) const {
  const std::size_t B = batch.rows, T_ = batch.width;
  if (fwd.final.shape() != bwd.final.shape() || fwd.final.dim(0) != B * T_) {
    throw nx::DimensionError("combine: tower states " + nx::to_string(fwd.final.shape()) + " and " +
                             nx::to_string(bwd.final.shape()) + " do not match the batch");
  }
  std::vector<std::ptrdiff_t> left(B * T_), right(B * T_), mem(B * 2 * T_);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t i = 0; i < T_; ++i) {
      left[b * T_ + i] = i >= 1 && i - 1 < len ? static_cast<std::ptrdiff_t>(b * T_ + i - 1) : -1;
      right[b * T_ + i] = i + 1 < len ? static_cast<std::ptrdiff_t>(b * T_ + i + 1) : -1;
      mem[b * 2 * T_ + i] = static_cast<std::ptrdiff_t>(b * T_ + i);
      mem[b * 2 * T_ + T_ + i] = static_cast<std::ptrdiff_t>(B * T_ + b * T_ + i);
    }
  }
  const auto qf = nx::gather_rows(fwd.final, std::span<const std::ptrdiff_t>(left));
  const auto qb = nx::gather_rows(bwd.final, std::span<const std::ptrdiff_t>(right));
  Tensor<T> x = config_.query_mode == QueryMode::sum
                    ? nx::add(qf, qb)
                    : nx::linear(nx::concat({qf, qb}, 1), params_.get("comb.query_proj"), Tensor<T>());
  const auto memory =
      nx::gather_rows(nx::concat({fwd.final, bwd.final}, 0), std::span<const std::ptrdiff_t>(mem));
  const auto mask = combination_mask(batch, options.mode, options.unmask_target);
  x = nx::add(x, attention_block("comb.attn", norm(params_, "comb.ln_attn", x), memory, mask, config_.final_heads, ctx));
  x = nx::add(x, ffn_block("comb.ffn", norm(params_, "comb.ln_ffn", x), ctx));
  return norm(params_, "comb.ln_out", x);
}

template <typename T>
ModelOutput<T> TwoTowerModel<T>::forward(const Batch& batch, ForwardContext& ctx, const ForwardOptions& options) const {
  ModelOutput<T> out;
  out.input = encode_inputs(batch, ctx);
  out.fwd = tower(out.input, batch, Direction::forward, ctx);
  out.bwd = tower(out.input, batch, Direction::backward, ctx);
  if (options.combine) out.features = combine(out.fwd, out.bwd, batch, options, ctx);
  return out;
}

template <typename T>
Tensor<T> TwoTowerModel<T>::log_probs(const Tensor<T>& features) const {
  if (features.rank() != 2 || features.dim(1) != config_.d_model) {
    throw nx::DimensionError("classifier: features " + nx::to_string(features.shape()) + " do not have width " +
                             std::to_string(config_.d_model));
  }
  switch (config_.classifier) {
    case ClassifierKind::flat_tied:
      return nx::log_softmax(
          nx::linear(features, nx::transpose(params_.get("enc.embedding")), params_.get("cls.bias")));
    case ClassifierKind::flat:
      return nx::log_softmax(nx::linear(features, params_.get("cls.weight"), params_.get("cls.bias")));
    case ClassifierKind::adaptive:
      break;
  }
  const std::size_t nb = config_.cutoffs.size();
  const std::size_t V = config_.vocab_size;
  const std::size_t head = nb ? config_.cutoffs[0] : V;
  const auto head_lp =
      nx::log_softmax(nx::linear(features, params_.get("cls.head.weight"), params_.get("cls.head.bias")));
  std::vector<std::size_t> sizes{head};
  for (std::size_t k = 0; k < nb; ++k) sizes.push_back(1);
  auto pieces = nx::split(head_lp, std::span<const std::size_t>(sizes), 1);
  std::vector<Tensor<T>> parts{pieces[0]};
  for (std::size_t k = 0; k < nb; ++k) {
    const std::size_t lo = config_.cutoffs[k];
    const std::size_t hi = k + 1 < nb ? config_.cutoffs[k + 1] : V;
    const std::string p = "cls.tail" + std::to_string(k);
    const auto band_lp = nx::log_softmax(
        nx::linear(nx::linear(features, params_.get(p + ".proj"), Tensor<T>()), params_.get(p + ".out"), Tensor<T>()));
    // log p(type) = log p(pointer_k) + log p(type | band k); the pointer column is broadcast by an outer product.
    const auto pointer = nx::matmul(pieces[1 + k], Tensor<T>({1, hi - lo}, T(1)));
    parts.push_back(nx::add(band_lp, pointer));
  }
  if (parts.size() == 1) return parts[0];
  return nx::concat(std::span<const Tensor<T>>(parts), 1);
}

ModelConfig load_model_config(const fs::path& dir) {
  return ModelConfig::from_kv(KeyValues::load(dir / "config.txt"));
}

template <typename T>
void TwoTowerModel<T>::save(const fs::path& dir) const {
  fs::create_directories(dir);
  config_.to_kv().save(dir / "config.txt");
  if (config_.encoder == EncoderKind::char_cnn) {
    std::ofstream out(dir / "types.txt", std::ios::binary);
    for (const auto& t : types_) out << t << '\n';
  }
  params_.save(dir);
}

template <typename T>
void TwoTowerModel<T>::load_parameters(const fs::path& dir) {
  const auto stored = load_model_config(dir);
  if (!(stored == config_)) {
    std::string diff;
    const auto a = stored.to_kv().entries();
    const auto b = config_.to_kv().entries();
    for (const auto& [k, v] : a) {
      if (b.at(k) != v) diff += " " + k + " (checkpoint " + v + ", model " + b.at(k) + ")";
    }
    throw CheckpointError("checkpoint config in " + dir.string() + " differs:" + diff);
  }
  params_.load(dir);
}

template <typename T>
TwoTowerModel<T> TwoTowerModel<T>::load(const fs::path& dir) {
  const auto config = load_model_config(dir);
  std::vector<std::string> types;
  if (config.encoder == EncoderKind::char_cnn) {
    std::ifstream in(dir / "types.txt", std::ios::binary);
    if (!in) throw CheckpointError("char_cnn checkpoint without types.txt in " + dir.string());
    std::string line;
    while (std::getline(in, line)) types.push_back(line);
  }
  TwoTowerModel<T> model(config, std::move(types));
  model.params_.load(dir);
  return model;
}

template Tensor<float> sinusoidal_positions<float>(std::size_t, std::size_t);
template Tensor<double> sinusoidal_positions<double>(std::size_t, std::size_t);
template Tensor<float> highway(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                               const Tensor<float>&);
template Tensor<double> highway(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                const Tensor<double>&, const Tensor<double>&);
template class TwoTowerModel<float>;
template class TwoTowerModel<double>;

}  // namespace cloze::model
