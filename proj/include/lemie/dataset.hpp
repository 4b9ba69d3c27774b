#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lemie {

/// Columnar table of observations, one row per observation.
struct Dataset {
  Eigen::MatrixXd rows;
  std::vector<std::string> columns;

  Eigen::Index n() const { return rows.rows(); }
  Eigen::Index num_columns() const { return rows.cols(); }
  /// Column index by name; throws if absent.
  Eigen::Index column(const std::string& name) const;
};

void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path);

enum class PartitionStrategy { random, block, by_label };

PartitionStrategy partition_strategy_from_string(const std::string& s);
std::string to_string(PartitionStrategy s);

/// Disjoint cover of the dataset's row indices.
struct PartitionedData {
  std::shared_ptr<const Dataset> data;
  std::vector<std::vector<int>> part_rows;  // sorted indices per part
  PartitionStrategy strategy = PartitionStrategy::block;
  std::uint64_t seed = 0;

  int num_parts() const { return static_cast<int>(part_rows.size()); }
  int part_size(int j) const { return static_cast<int>(part_rows.at(j).size()); }
  /// Materialised copy of one part's rows.
  Eigen::MatrixXd part_matrix(int j) const;
};

/// Splits rows into M parts.  random/block keep sizes within 1 of each other;
/// by_label groups rows by the integer value found in `label_column` and
/// assigns each label group its own (proportional) share of parts, so a
/// 500/500 binary split with M=100 yields 50 all-positive and 50 all-negative
/// parts.  Deterministic given seed.
PartitionedData partition_data(std::shared_ptr<const Dataset> data, int M,
                               PartitionStrategy strategy, std::uint64_t seed,
                               Eigen::Index label_column = -1);

void write_partition_manifest(const PartitionedData& pd, const std::string& path);

}  // namespace lemie
