#include "mega/genotype.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace mega {

std::size_t genotype_length(int precision, int stage) {
  if (precision < 1 || stage < 1) {
    throw ConfigError("genotype_length: precision and stage must be positive");
  }
  if (precision > kMaxPrecision) {
    throw ConfigError("genotype_length: precision above 8 overflows e^(2^p - 1) in double");
  }
  const auto p = static_cast<std::size_t>(precision);
  const auto n = static_cast<std::size_t>(stage);
  return p * n * (n + 1) / 2;
}

void validate(const GenotypePolicy& g) {
  if (g.bits.size() != genotype_length(g.precision, g.stage)) {
    throw StructuralError("genotype length " + std::to_string(g.bits.size()) +
                          " does not match stage " + std::to_string(g.stage) +
                          " at precision " + std::to_string(g.precision));
  }
  for (auto b : g.bits) {
    if (b > 1) throw StructuralError("genotype contains a non-binary digit");
  }
  if (g.eval_count < 0 || (g.eval_count == 0) != !g.fitness.has_value()) {
    throw StructuralError("genotype fitness and eval_count disagree");
  }
}

GenotypePolicy random_genotype(int precision, int stage, Rng& rng) {
  GenotypePolicy g;
  g.precision = precision;
  g.stage = stage;
  g.bits.resize(genotype_length(precision, stage));
  std::bernoulli_distribution coin(0.5);
  for (auto& b : g.bits) b = coin(rng) ? 1 : 0;
  return g;
}

DecodedSegments decode_segments(const GenotypePolicy& g) {
  validate(g);
  DecodedSegments out;
  out.rows.reserve(static_cast<std::size_t>(g.stage));
  std::size_t cursor = 0;
  for (int row = 1; row <= g.stage; ++row) {
    std::vector<int> codes(static_cast<std::size_t>(row), 0);
    for (auto& code : codes) {
      for (int k = 0; k < g.precision; ++k) code = (code << 1) | g.bits[cursor++];
    }
    out.rows.push_back(std::move(codes));
  }
  return out;
}

std::vector<std::uint8_t> encode_segments(const DecodedSegments& segments, int precision) {
  std::vector<std::uint8_t> bits;
  const int max_code = (1 << precision) - 1;
  for (std::size_t row = 0; row < segments.rows.size(); ++row) {
    if (segments.rows[row].size() != row + 1) {
      throw StructuralError("encode_segments: row " + std::to_string(row + 1) + " has wrong width");
    }
    for (int code : segments.rows[row]) {
      if (code < 0 || code > max_code) throw StructuralError("encode_segments: code out of range");
      for (int k = precision - 1; k >= 0; --k) bits.push_back(static_cast<std::uint8_t>((code >> k) & 1));
    }
  }
  return bits;
}

WeightMode parse_weight_mode(const std::string& name) {
  if (name == "halfsoftmax") return WeightMode::half_softmax;
  if (name == "softmax") return WeightMode::softmax;
  throw ConfigError("unknown decode mode '" + name + "'");
}

std::string to_string(WeightMode mode) {
  return mode == WeightMode::half_softmax ? "halfsoftmax" : "softmax";
}

Eigen::VectorXd half_softmax(std::span<const int> codes) {
  if (codes.empty()) throw StructuralError("half_softmax: empty input");
  // No max-shift here: subtracting 0.99 does not commute with rescaling.
  Eigen::VectorXd shifted(static_cast<Eigen::Index>(codes.size()));
  for (std::size_t j = 0; j < codes.size(); ++j) {
    shifted[static_cast<Eigen::Index>(j)] = std::exp(static_cast<double>(codes[j])) - 0.99;
  }
  return shifted / shifted.sum();
}

Eigen::VectorXd softmax_baseline(std::span<const int> codes) {
  if (codes.empty()) throw StructuralError("softmax_baseline: empty input");
  Eigen::VectorXd v(static_cast<Eigen::Index>(codes.size()));
  for (std::size_t j = 0; j < codes.size(); ++j) v[static_cast<Eigen::Index>(j)] = codes[j];
  v = (v.array() - v.maxCoeff()).exp();
  return v / v.sum();
}

WeightPlan decode_to_weights(const GenotypePolicy& g, WeightMode mode) {
  const auto segments = decode_segments(g);
  WeightPlan plan;
  plan.rows.reserve(segments.rows.size());
  for (const auto& row : segments.rows) {
    plan.rows.push_back(mode == WeightMode::half_softmax ? half_softmax(row) : softmax_baseline(row));
  }
  return plan;
}

WeightPlan chain_plan(int depth) {
  WeightPlan plan;
  for (int i = 0; i < depth; ++i) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(i + 1);
    row[i] = 1.0;
    plan.rows.push_back(std::move(row));
  }
  return plan;
}

void validate(const WeightPlan& plan) {
  for (int i = 0; i < plan.depth(); ++i) {
    const auto& row = plan.rows[static_cast<std::size_t>(i)];
    if (row.size() != i + 1) throw StructuralError("weight plan row has wrong width");
    if ((row.array() < 0.0).any()) throw StructuralError("weight plan has a negative weight");
    if (std::abs(row.sum() - 1.0) > 1e-12) throw StructuralError("weight plan row does not sum to one");
  }
}

std::string to_csv_line(int task_id, const GenotypePolicy& g) {
  std::string bitstring;
  bitstring.reserve(g.bits.size());
  for (auto b : g.bits) bitstring.push_back(b ? '1' : '0');
  std::string fitness;
  if (g.fitness) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *g.fitness);
    fitness = buf;
  }
  return std::to_string(task_id) + "," + std::to_string(g.stage) + "," + std::to_string(g.precision) + "," +
         bitstring + "," + fitness + "," + std::to_string(g.eval_count);
}

CsvGenotype parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  if (fields.size() != 6) throw StructuralError("genotype CSV line needs 6 fields: '" + line + "'");

  CsvGenotype out;
  try {
    out.task_id = std::stoi(fields[0]);
    out.genotype.stage = std::stoi(fields[1]);
    out.genotype.precision = std::stoi(fields[2]);
    for (char c : fields[3]) {
      if (c != '0' && c != '1') throw StructuralError("genotype bitstring contains '" + std::string(1, c) + "'");
      out.genotype.bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    if (!fields[4].empty()) out.genotype.fitness = std::stod(fields[4]);
    out.genotype.eval_count = std::stoi(fields[5]);
  } catch (const std::logic_error&) {
    throw StructuralError("malformed genotype CSV line: '" + line + "'");
  }
  validate(out.genotype);
  return out;
}

}  // namespace mega
