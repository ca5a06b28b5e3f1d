#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mega {

using Rng = std::mt19937_64;

/// Raised when a genotype, plan or network does not have the shape an
/// operation requires.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kMaxPrecision = 8;

/// Binary module-routing genotype for one task at one stage.
///
/// Bits are stored in layer order: row i (1-based) contributes i groups of
/// `precision` bits, each read most-significant bit first.
struct GenotypePolicy {
  std::vector<std::uint8_t> bits;
  int precision = 0;
  int stage = 0;
  std::optional<double> fitness;
  int eval_count = 0;
  // Serial number assigned by the owning population; 0 when unassigned.
  std::uint64_t id = 0;

  std::size_t length() const { return bits.size(); }
  bool operator==(const GenotypePolicy&) const = default;
};

/// Number of bits needed for `stage` modules at `precision` bits per weight.
std::size_t genotype_length(int precision, int stage);

/// Throws StructuralError if `g` violates any of its invariants.
void validate(const GenotypePolicy& g);

GenotypePolicy random_genotype(int precision, int stage, Rng& rng);

/// Integer codes, one row per module; row i has i entries in
/// [0, 2^precision - 1].
struct DecodedSegments {
  std::vector<std::vector<int>> rows;
};

DecodedSegments decode_segments(const GenotypePolicy& g);

/// Inverse of decode_segments: packs integer codes back into MSB-first bits.
std::vector<std::uint8_t> encode_segments(const DecodedSegments& segments, int precision);

/// Lower-triangular module weights. Row i (0-based) weights the embedding
/// output and the outputs of modules 1..i, so it has i + 1 entries.
struct WeightPlan {
  std::vector<Eigen::VectorXd> rows;

  int depth() const { return static_cast<int>(rows.size()); }
};

enum class WeightMode { half_softmax, softmax };

WeightMode parse_weight_mode(const std::string& name);
std::string to_string(WeightMode mode);

/// (e^d - 0.99) normalized over the row; a zero code maps to a near-zero
/// weight.
Eigen::VectorXd half_softmax(std::span<const int> codes);

/// Plain exponential normalization of the codes.
Eigen::VectorXd softmax_baseline(std::span<const int> codes);

WeightPlan decode_to_weights(const GenotypePolicy& g, WeightMode mode);

/// Plan for a chain with every row routing only from the previous output.
WeightPlan chain_plan(int depth);

/// Throws StructuralError unless every row is non-negative, sums to one and
/// row i has i + 1 entries.
void validate(const WeightPlan& plan);

// CSV line format: task_id,stage,p_w,bitstring,fitness,eval_count
// fitness is left empty when the genotype has not been evaluated.
std::string to_csv_line(int task_id, const GenotypePolicy& g);

struct CsvGenotype {
  int task_id = 0;
  GenotypePolicy genotype;
};

CsvGenotype parse_csv_line(const std::string& line);

}  // namespace mega
