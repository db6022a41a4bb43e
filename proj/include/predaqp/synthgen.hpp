#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "predaqp/dataset.hpp"

namespace predaqp {

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double sd = 1.0;
};

/// Categorical column. Without parents `weights` is the marginal; with
/// parents `conditional[t]` is the distribution given parent tuple t
/// (mixed radix, first parent most significant). One-hot rows make the child
/// a deterministic function of its parents.
struct SynthCategorical {
  std::string name;
  std::vector<std::string> values;
  std::vector<double> weights;
  std::vector<std::size_t> parents;  // indices of earlier categorical columns
  std::vector<std::vector<double>> conditional;
};

/// Numerical column drawn from a Gaussian mixture chosen by the parent tuple.
struct SynthNumerical {
  std::string name;
  std::vector<std::size_t> parents;  // categorical indices
  std::vector<std::vector<MixtureComponent>> mixtures;
};

struct SynthSpec {
  std::size_t rows = 1000;
  std::uint64_t seed = 0;
  std::vector<SynthCategorical> categorical;
  std::vector<SynthNumerical> numerical;

  /// Throws kInvalidSpec: weights must sum to 1, parents must precede their
  /// children (which keeps the graph acyclic), table shapes must match.
  void validate() const;
  /// Categorical columns first, then numerical ones.
  Schema schema() const;
};

SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
std::string to_json(const SynthSpec& spec);

/// Reproducible table: same spec and seed give identical bytes.
Table generate_table(const SynthSpec& spec);

/// Closed-form quantities computed from the spec, not from a sample.
class SynthTruth {
 public:
  explicit SynthTruth(SynthSpec spec);

  /// P(all conditions) for equality conditions on categorical columns
  /// (schema positions).
  double selectivity(const std::vector<Condition>& conditions) const;
  /// E[numerical column | conditions]; throws kInvalidArgument when the
  /// conditions have probability zero.
  double conditional_mean(std::size_t numerical_position, const std::vector<Condition>& conditions) const;

 private:
  /// Sums weight(assignment) * f(assignment) over categorical assignments
  /// consistent with the conditions.
  template <class F>
  double accumulate(const std::vector<Condition>& conditions, F&& f) const;

  SynthSpec spec_;
};

/// Six categorical columns (with dependencies) and two numerical ones. The
/// conjunction returned by rare_group_conjunction() selects about 0.2% of
/// rows and shifts the mean of the first numerical column.
SynthSpec rare_group_preset(std::size_t rows = 100000, std::uint64_t seed = 1);
std::vector<Condition> rare_group_conjunction();

/// Two uniform categories with numerical N(10,1) / N(20,1).
SynthSpec two_group_preset(std::size_t rows, std::uint64_t seed);

}  // namespace predaqp
