#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace lemie {

/// A set of parameter draws, one row per draw.  `source` records provenance
/// ("local:3", "laplace:1", "pooled", "truth") and travels with the draws
/// through pooling so estimators can recover block structure.
struct ParamDraws {
  Eigen::MatrixXd draws;
  std::string source;
  std::uint64_t seed = 0;

  Eigen::Index count() const { return draws.rows(); }
  Eigen::Index dim() const { return draws.cols(); }
};

/// Throws std::invalid_argument on empty draw sets or non-finite rows.
void validate_draws(const ParamDraws& d);

/// Sidecar metadata persisted with a draw set.
struct DrawSetMeta {
  std::string model;
  int part_id = -1;  // -1 for pooled or non-part sets
  long burnin = 0;
};

/// One row per draw, columns coord_0..coord_{p-1}, plus a JSON sidecar with
/// the model name, part id, draw count, seed and burn-in.
void write_draws_csv(const ParamDraws& d, const DrawSetMeta& meta,
                     const std::string& csv_path, const std::string& json_path);
ParamDraws read_draws_csv(const std::string& csv_path);

}  // namespace lemie
