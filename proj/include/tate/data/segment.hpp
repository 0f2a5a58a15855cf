#pragma once

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <unordered_set>
#include <vector>

#include "tate/numerics/tensor.hpp"

namespace tate {

enum class Modality : std::size_t { visual = 0, acoustic = 1, textual = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::visual, Modality::acoustic, Modality::textual};
inline constexpr std::array<std::string_view, 3> kModalityNames{"visual", "acoustic", "textual"};

// Longest sequence kept per modality; longer inputs are truncated on load.
inline constexpr std::array<std::size_t, 3> kMaxLength{100, 150, 25};

constexpr std::size_t index_of(Modality m) noexcept { return static_cast<std::size_t>(m); }
constexpr std::string_view name_of(Modality m) noexcept { return kModalityNames[index_of(m)]; }

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Which of the three modalities are absent from a sample.
class MissingPattern {
 public:
  MissingPattern() = default;
  MissingPattern(std::initializer_list<Modality> missing) {
    for (Modality m : missing) bits_.set(index_of(m));
    validate();
  }

  static MissingPattern from_bits(unsigned bits) {
    MissingPattern p;
    p.bits_ = std::bitset<3>(bits & 0b111u);
    p.validate();
    return p;
  }

  bool contains(Modality m) const { return bits_.test(index_of(m)); }
  bool empty() const { return bits_.none(); }
  std::size_t count() const { return bits_.count(); }
  unsigned bits() const { return static_cast<unsigned>(bits_.to_ulong()); }

  friend bool operator==(const MissingPattern&, const MissingPattern&) = default;

 private:
  void validate() const {
    if (bits_.all()) throw ContractError("missing pattern cannot drop all three modalities");
  }
  std::bitset<3> bits_;
};

/// The seven admissible patterns: none, the three singletons, the three pairs.
inline std::vector<MissingPattern> all_valid_patterns() {
  std::vector<MissingPattern> out;
  for (unsigned b : {0u, 1u, 2u, 4u, 3u, 5u, 6u}) out.push_back(MissingPattern::from_bits(b));
  return out;
}

/// Four binary digits: "complete" flag, then visual/acoustic/textual missing flags.
struct Tag {
  std::array<std::uint8_t, 4> digits{1, 0, 0, 0};

  std::string to_string() const {
    std::string s;
    for (auto d : digits) s.push_back(d ? '1' : '0');
    return s;
  }
  std::vector<double> as_doubles() const { return {double(digits[0]), double(digits[1]), double(digits[2]), double(digits[3])}; }

  friend bool operator==(const Tag&, const Tag&) = default;
};

inline Tag encode_tag(const MissingPattern& p) {
  Tag t;
  t.digits[0] = p.empty() ? 1 : 0;
  for (Modality m : kModalities) t.digits[1 + index_of(m)] = p.contains(m) ? 1 : 0;
  return t;
}

/// Inverse of encode_tag on thresholded values (e.g. a recovered tag in [0, 1]).
inline MissingPattern decode_tag(std::span<const double> values, double threshold = 0.5) {
  if (values.size() != 4) throw DimensionError("decode_tag expects 4 values");
  unsigned bits = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (values[1 + i] > threshold) bits |= 1u << i;
  }
  return MissingPattern::from_bits(bits);
}

struct Segment {
  std::string id;
  std::size_t label = 0;
  std::array<Tensor, 3> features;  // [n_m x d_m] per modality
  MissingPattern missing;          // what has been zero-masked so far

  const Tensor& operator[](Modality m) const { return features[index_of(m)]; }
  Tensor& operator[](Modality m) { return features[index_of(m)]; }
};

/// Zero every modality in `p`; present modalities are copied untouched.
inline Segment mask_missing(const Segment& s, const MissingPattern& p) {
  Segment out = s;
  unsigned bits = s.missing.bits();
  for (Modality m : kModalities) {
    if (p.contains(m)) {
      out[m].fill(0.0);
      bits |= 1u << index_of(m);
    }
  }
  out.missing = MissingPattern::from_bits(bits);
  return out;
}

enum class MissingMode { single, multiple };

inline std::string_view to_string(MissingMode m) { return m == MissingMode::single ? "single" : "multiple"; }

inline MissingMode parse_missing_mode(std::string_view s) {
  if (s == "single") return MissingMode::single;
  if (s == "multiple") return MissingMode::multiple;
  throw std::invalid_argument("unknown missing mode '" + std::string(s) + "' (expected single|multiple)");
}

/// Draws one sample's pattern: empty with probability 1 - eta, otherwise a
/// uniform choice among the singletons (single) or the six patterns of size
/// one or two (multiple). Always consumes two draws so streams stay aligned
/// across eta values; with a shared stream, incomplete sets are nested in eta.
template <typename Rng>
MissingPattern sample_missing_pattern(Rng& rng, double eta, MissingMode mode) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("missing rate must lie in [0, 1]");
  static constexpr std::array<unsigned, 6> kChoices{1u, 2u, 4u, 3u, 5u, 6u};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  std::uniform_int_distribution<std::size_t> pick(0, mode == MissingMode::single ? 2 : 5);
  const std::size_t k = pick(rng);
  if (!(u < eta)) return {};
  return MissingPattern::from_bits(kChoices[k]);
}

/// Generator dedicated to sample `index` under `seed`.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x7a7e5u};
  return std::mt19937_64(seq);
}

inline std::vector<MissingPattern> assign_patterns(std::size_t count, double eta, MissingMode mode,
                                                   std::uint64_t seed) {
  std::vector<MissingPattern> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = sample_rng(seed, i);
    out.push_back(sample_missing_pattern(rng, eta, mode));
  }
  return out;
}

struct Dataset {
  std::vector<Segment> segments;
  std::size_t class_count = 0;
  std::array<std::size_t, 3> widths{0, 0, 0};

  std::size_t size() const noexcept { return segments.size(); }
  bool empty() const noexcept { return segments.empty(); }

  /// Checks homogeneous widths, nonempty sequences, label range and unique ids.
  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& s : segments) {
      if (!ids.insert(s.id).second) throw SchemaError("duplicate segment id '" + s.id + "'");
      if (s.label >= class_count) {
        throw SchemaError("segment '" + s.id + "' label " + std::to_string(s.label) + " >= class count " +
                          std::to_string(class_count));
      }
      for (Modality m : kModalities) {
        const Tensor& t = s[m];
        if (t.rank() != 2 || t.rows() == 0) {
          throw SchemaError("segment '" + s.id + "' has an empty " + std::string(name_of(m)) + " sequence");
        }
        if (t.cols() != widths[index_of(m)]) {
          throw SchemaError("segment '" + s.id + "' " + std::string(name_of(m)) + " width " +
                            std::to_string(t.cols()) + " differs from dataset width " +
                            std::to_string(widths[index_of(m)]));
        }
      }
    }
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (const auto& s : segments) ++counts[s.label];
    return counts;
  }
};

/// Seeded split into (train, held_out) with `held_out_fraction` of the samples
/// held out.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double held_out_fraction,
                                                 std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction <= 1.0)) {
    throw std::invalid_argument("held-out fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto held = static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(ds.size())));
  Dataset train{{}, ds.class_count, ds.widths};
  Dataset test{{}, ds.class_count, ds.widths};
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < held ? test : train).segments.push_back(ds.segments[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace tate
