#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tate/numerics/autodiff.hpp"

namespace tate {

/// Named, ordered collection of trainable leaves.
class ParameterSet {
 public:
  Var add(std::string name, Tensor init) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_.emplace(name, vars_.size());
    vars_.push_back(parameter(std::move(init), std::move(name)));
    return vars_.back();
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const Var& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
    return vars_[it->second];
  }

  const std::vector<Var>& all() const noexcept { return vars_; }
  std::size_t size() const noexcept { return vars_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : vars_) n += v->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& v : vars_) v->zero_grad();
  }

  /// Deep copy: fresh leaves holding the same values.
  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& v : vars_) out.add(v->name, v->value);
    return out;
  }

 private:
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Glorot-uniform matrix in +-sqrt(6 / (fan_in + fan_out)).
template <typename Rng>
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

/// Independent generator streams derived from one run seed.
enum class Stream : std::uint64_t { init = 1, shuffle = 2, dropout = 3, teacher_init = 4, teacher_shuffle = 5 };

inline std::mt19937_64 stream_rng(std::uint64_t seed, Stream stream) {
  const auto s = static_cast<std::uint64_t>(stream);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), 0x57ea3u, 0x9e37u};
  return std::mt19937_64(seq);
}

}  // namespace tate
