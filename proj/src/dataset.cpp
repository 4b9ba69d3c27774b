#include "lemie/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "lemie/rng.hpp"

namespace lemie {

Eigen::Index Dataset::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<Eigen::Index>(i);
  }
  throw std::invalid_argument("Dataset: no column named '" + name + "'");
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t i = 0; i < data.columns.size(); ++i) {
    if (i) out << ',';
    out << data.columns[i];
  }
  out << '\n';
  out.precision(17);
  for (Eigen::Index r = 0; r < data.rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.rows.cols(); ++c) {
      if (c) out << ',';
      out << data.rows(r, c);
    }
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
  Dataset data;
  {
    std::stringstream header(line);
    std::string name;
    while (std::getline(header, name, ',')) data.columns.push_back(name);
  }
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> parsed;
    while (std::getline(row, cell, ',')) parsed.push_back(std::stod(cell));
    if (parsed.size() != data.columns.size()) {
      throw std::runtime_error("ragged CSV row in " + path);
    }
    values.push_back(std::move(parsed));
  }
  data.rows.resize(static_cast<Eigen::Index>(values.size()),
                   static_cast<Eigen::Index>(data.columns.size()));
  for (std::size_t r = 0; r < values.size(); ++r) {
    for (std::size_t c = 0; c < data.columns.size(); ++c) {
      data.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          values[r][c];
    }
  }
  return data;
}

PartitionStrategy partition_strategy_from_string(const std::string& s) {
  if (s == "random") return PartitionStrategy::random;
  if (s == "block") return PartitionStrategy::block;
  if (s == "by_label") return PartitionStrategy::by_label;
  throw std::invalid_argument("unknown partition strategy: " + s);
}

std::string to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::random: return "random";
    case PartitionStrategy::block: return "block";
    case PartitionStrategy::by_label: return "by_label";
  }
  throw std::logic_error("unreachable");
}

Eigen::MatrixXd PartitionedData::part_matrix(int j) const {
  const auto& rows = part_rows.at(j);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), data->rows.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = data->rows.row(rows[i]);
  }
  return out;
}

namespace {

// Splits `indices` into `parts` contiguous chunks whose sizes differ by at
// most one (larger chunks first).
std::vector<std::vector<int>> chunk_indices(const std::vector<int>& indices,
                                            int parts) {
  std::vector<std::vector<int>> out(parts);
  const int n = static_cast<int>(indices.size());
  const int base = n / parts;
  const int extra = n % parts;
  int pos = 0;
  for (int j = 0; j < parts; ++j) {
    const int size = base + (j < extra ? 1 : 0);
    out[j].assign(indices.begin() + pos, indices.begin() + pos + size);
    pos += size;
  }
  return out;
}

}  // namespace

PartitionedData partition_data(std::shared_ptr<const Dataset> data, int M,
                               PartitionStrategy strategy, std::uint64_t seed,
                               Eigen::Index label_column) {
  if (!data) throw std::invalid_argument("partition_data: null dataset");
  const int n = static_cast<int>(data->n());
  if (M < 1) throw std::invalid_argument("partition_data: M must be >= 1");
  if (M > n) throw std::invalid_argument("partition_data: M exceeds number of rows");

  PartitionedData pd;
  pd.data = data;
  pd.strategy = strategy;
  pd.seed = seed;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  switch (strategy) {
    case PartitionStrategy::block:
      pd.part_rows = chunk_indices(order, M);
      break;
    case PartitionStrategy::random: {
      RngStream rng(seed, "partition");
      for (int i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
      }
      pd.part_rows = chunk_indices(order, M);
      break;
    }
    case PartitionStrategy::by_label: {
      if (label_column < 0 || label_column >= data->num_columns()) {
        throw std::invalid_argument("partition_data: by_label needs a valid label column");
      }
      std::map<long, std::vector<int>> groups;
      for (int i = 0; i < n; ++i) {
        groups[std::lround(data->rows(i, label_column))].push_back(i);
      }
      // Largest-remainder allocation of parts to label groups, at least one
      // part per nonempty group.
      std::vector<std::pair<long, std::vector<int>>> ordered(groups.begin(), groups.end());
      const int g = static_cast<int>(ordered.size());
      if (M < g) throw std::invalid_argument("partition_data: fewer parts than label groups");
      std::vector<int> alloc(g, 1);
      int assigned = g;
      std::vector<double> frac(g);
      for (int k = 0; k < g; ++k) {
        const double share = static_cast<double>(ordered[k].second.size()) * M / n;
        const int whole = std::max(1, static_cast<int>(std::floor(share)));
        alloc[k] = whole;
        frac[k] = share - whole;
      }
      assigned = std::accumulate(alloc.begin(), alloc.end(), 0);
      while (assigned < M) {
        const int k = static_cast<int>(std::max_element(frac.begin(), frac.end()) - frac.begin());
        ++alloc[k];
        frac[k] -= 1.0;
        ++assigned;
      }
      while (assigned > M) {
        const int k = static_cast<int>(std::min_element(frac.begin(), frac.end()) - frac.begin());
        if (alloc[k] <= 1) { frac[k] += 1.0; continue; }
        --alloc[k];
        frac[k] += 1.0;
        --assigned;
      }
      for (int k = 0; k < g; ++k) {
        auto chunks = chunk_indices(ordered[k].second, alloc[k]);
        for (auto& c : chunks) pd.part_rows.push_back(std::move(c));
      }
      break;
    }
  }

  for (auto& rows : pd.part_rows) std::sort(rows.begin(), rows.end());
  return pd;
}

void write_partition_manifest(const PartitionedData& pd, const std::string& path) {
  nlohmann::json j;
  j["num_rows"] = pd.data->n();
  j["num_parts"] = pd.num_parts();
  j["strategy"] = to_string(pd.strategy);
  j["seed"] = pd.seed;
  j["parts"] = nlohmann::json::array();
  for (int p = 0; p < pd.num_parts(); ++p) {
    j["parts"].push_back({{"part_id", p}, {"row_indices", pd.part_rows[p]}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace lemie
