#include "cloze/model/params.hpp"

#include <fstream>
#include <sstream>

#include "cloze/numerics/rng.hpp"
#include "cloze/numerics/serialize.hpp"

namespace cloze::model {

namespace fs = std::filesystem;

template <typename T>
Tensor<T>& ParamSet<T>::add(const std::string& name, Shape shape, Init init, double stddev) {
  if (index_.contains(name)) throw std::logic_error("duplicate parameter " + name);
  std::vector<T> data(numerics::numel(shape), T(0));
  if (init == Init::ones) {
    std::fill(data.begin(), data.end(), T(1));
  } else if (init == Init::normal) {
    numerics::Rng rng(numerics::derive_seed(seed_, name));
    for (auto& x : data) x = static_cast<T>(stddev * rng.normal());
  }
  index_.emplace(name, names_.size());
  names_.push_back(name);
  tensors_.emplace_back(std::move(shape), std::move(data), true);
  return tensors_.back();
}

template <typename T>
Tensor<T>& ParamSet<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return tensors_[it->second];
}

template <typename T>
const Tensor<T>& ParamSet<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return tensors_[it->second];
}

template <typename T>
std::size_t ParamSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
std::size_t ParamSet<T>::element_count_excluding(const std::string& prefix) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].rfind(prefix, 0) != 0) n += tensors_[i].size();
  }
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

namespace {

std::string extents(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

template <typename T>
void ParamSet<T>::save(const fs::path& dir) const {
  fs::create_directories(dir / "params");
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw CheckpointError("cannot write " + (dir / "manifest.txt").string());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    manifest << names_[i] << '\t' << extents(tensors_[i].shape()) << '\n';
    numerics::save_tensor(dir / "params" / (names_[i] + ".cltz"), tensors_[i]);
  }
}

template <typename T>
void ParamSet<T>::load(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw CheckpointError("missing parameter manifest in " + dir.string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
    entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (entries.size() != names_.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(entries.size()) + " parameters, model expects " +
                          std::to_string(names_.size()));
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (entries[i].first != names_[i]) {
      throw CheckpointError("checkpoint parameter " + std::to_string(i) + " is " + entries[i].first + ", model expects " +
                            names_[i]);
    }
    if (entries[i].second != extents(tensors_[i].shape())) {
      throw CheckpointError("shape mismatch for " + names_[i] + ": checkpoint " + entries[i].second + ", model " +
                            extents(tensors_[i].shape()));
    }
    const auto loaded = numerics::load_tensor<T>(dir / "params" / (names_[i] + ".cltz"));
    if (loaded.shape() != tensors_[i].shape()) throw CheckpointError("blob shape mismatch for " + names_[i]);
    auto dst = tensors_[i].mutable_data();
    std::copy(loaded.data().begin(), loaded.data().end(), dst.begin());
  }
}

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace cloze::model
