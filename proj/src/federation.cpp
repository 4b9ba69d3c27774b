#include "lemie/federation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace lemie {

namespace {

constexpr long kHeaderBytes = 24;

std::uint64_t fnv1a_bytes(std::uint64_t state, const unsigned char* p, size_t n) {
  constexpr std::uint64_t kPrime = 1099511628211ULL;
  for (size_t i = 0; i < n; ++i) {
    state ^= p[i];
    state *= kPrime;
  }
  return state;
}

std::uint64_t fnv1a_accumulate(std::uint64_t state, double x) {
  unsigned char bytes[8];
  std::memcpy(bytes, &x, 8);  // little-endian on every supported target
  return fnv1a_bytes(state, bytes, 8);
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;

/// Digest of a draw matrix in wire order (draw by draw, coordinate by
/// coordinate), matching serialize_rowmajor below.
std::uint64_t digest_rowmajor(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  std::uint64_t s = kFnvOffset;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) s = fnv1a_accumulate(s, m(r, c));
  }
  return s;
}

/// Serialise a block of pooled draws to wire bytes and back.  Every value a
/// worker evaluates passes through this boundary so a real transport could be
/// substituted without changing results (doubles round-trip exactly).
std::vector<unsigned char> serialize_rowmajor(
    const Eigen::Ref<const Eigen::MatrixXd>& m) {
  std::vector<unsigned char> out(static_cast<size_t>(m.size()) * 8);
  size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      std::memcpy(out.data() + 8 * k, &v, 8);
      ++k;
    }
  }
  return out;
}

Eigen::MatrixXd deserialize_rowmajor(const std::vector<unsigned char>& bytes,
                                     Eigen::Index rows, Eigen::Index cols) {
  if (bytes.size() != static_cast<size_t>(rows) * cols * 8) {
    throw std::runtime_error("protocol error: payload size mismatch");
  }
  Eigen::MatrixXd m(rows, cols);
  size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::memcpy(&m(r, c), bytes.data() + 8 * k, 8);
      ++k;
    }
  }
  return m;
}

/// Run fn(j) for j in [0, m) on up to worker_parallelism() threads.  Exceptions
/// are captured and rethrown on the caller thread.
void for_each_worker(int m, const std::function<void(int)>& fn) {
  const int threads = std::min(m, worker_parallelism());
  if (threads <= 1) {
    for (int j = 0; j < m; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (int j = next.fetch_add(1); j < m; j = next.fetch_add(1)) {
        try {
          fn(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Fill loglik rows for columns [col0, col0 + draws.rows()) from a chunk of
/// pooled draws that already crossed the serialisation boundary.
void evaluate_chunk(const ModelSpec& model, const Eigen::MatrixXd& chunk,
                    long col0, Eigen::MatrixXd& loglik) {
  const int m = model.num_parts;
  for_each_worker(m, [&](int j) {
    const Eigen::VectorXd row = model.log_lik_part_all(j, chunk);
    for (Eigen::Index k = 0; k < row.size(); ++k) {
      const double v = row[k];
      if (std::isnan(v)) {
        throw std::runtime_error("contract violation: worker " + std::to_string(j) +
                                 " returned NaN log-likelihood");
      }
      loglik(j, col0 + k) = v;
    }
  });
}

/// Chunked likelihood phase over columns [col0, col1); returns the per-worker
/// row digests for the logliks_in messages.
std::vector<std::uint64_t> likelihood_phase(const ModelSpec& model,
                                            const Eigen::MatrixXd& pooled,
                                            long col0, long col1, long chunk_size,
                                            Eigen::MatrixXd& loglik) {
  if (chunk_size < 1) throw std::invalid_argument("chunk_size must be >= 1");
  for (long c = col0; c < col1; c += chunk_size) {
    const long len = std::min(chunk_size, col1 - c);
    const auto bytes = serialize_rowmajor(pooled.middleRows(c - col0, len));
    const Eigen::MatrixXd chunk = deserialize_rowmajor(bytes, len, pooled.cols());
    evaluate_chunk(model, chunk, c, loglik);
  }
  std::vector<std::uint64_t> digests(model.num_parts);
  for (int j = 0; j < model.num_parts; ++j) {
    std::uint64_t s = kFnvOffset;
    for (long c = col0; c < col1; ++c) s = fnv1a_accumulate(s, loglik(j, c));
    digests[j] = s;
  }
  return digests;
}

}  // namespace

std::string to_string(MessageKind k) {
  switch (k) {
    case MessageKind::samples_in: return "samples_in";
    case MessageKind::pooled_out: return "pooled_out";
    case MessageKind::logliks_in: return "logliks_in";
  }
  throw std::logic_error("unknown MessageKind");
}

std::uint64_t fnv1a_digest_doubles(const double* data, long n) {
  std::uint64_t s = kFnvOffset;
  for (long i = 0; i < n; ++i) s = fnv1a_accumulate(s, data[i]);
  return s;
}

long message_byte_count(long n_doubles) { return kHeaderBytes + 8 * n_doubles; }

int worker_parallelism() {
  const char* env = std::getenv("LEMIE_WORKER_THREADS");
  if (env == nullptr) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  return static_cast<int>(std::min<long>(v, 64));
}

FederatedRun run_in_out_in(const std::vector<ParamDraws>& worker_draws,
                           const ModelSpec& model, long chunk_size) {
  const int m = static_cast<int>(worker_draws.size());
  if (m < 1) throw std::invalid_argument("protocol error: no workers");
  if (m != model.num_parts) {
    throw std::invalid_argument("protocol error: worker count != model parts");
  }
  const Eigen::Index p = worker_draws[0].dim();
  long total = 0;
  for (int j = 0; j < m; ++j) {
    if (worker_draws[j].count() < 1) {
      throw std::invalid_argument("protocol error: worker " + std::to_string(j) +
                                  " has no draws");
    }
    if (worker_draws[j].dim() != p) {
      throw std::invalid_argument("protocol error: parameter dimension mismatch at worker " +
                                  std::to_string(j));
    }
    total += worker_draws[j].count();
  }

  FederatedRun run;
  run.num_parts = m;
  run.rounds = 1;
  run.pooled.source = "pooled";
  run.pooled.draws.resize(total, p);
  run.origin.reserve(total);
  run.block_offsets.push_back(0);
  long at = 0;
  for (int j = 0; j < m; ++j) {
    const long nj = worker_draws[j].count();
    run.pooled.draws.middleRows(at, nj) = worker_draws[j].draws;
    for (long h = 0; h < nj; ++h) run.origin.push_back(j);
    run.block_counts.push_back(nj);
    run.block_labels.push_back("part:" + std::to_string(j));
    run.block_offsets.push_back(at + nj);
    at += nj;
  }
  run.loglik.column_source.reserve(total);
  for (int j = 0; j < m; ++j) {
    for (long h = 0; h < worker_draws[j].count(); ++h) {
      run.loglik.column_source.push_back(run.block_labels[j]);
    }
  }

  // Phase 1: samples in.
  for (int j = 0; j < m; ++j) {
    ProtocolMessage msg;
    msg.kind = MessageKind::samples_in;
    msg.origin = j;
    msg.round = 0;
    msg.n_doubles = worker_draws[j].count() * p;
    msg.payload_digest = digest_rowmajor(worker_draws[j].draws);
    msg.byte_count = message_byte_count(msg.n_doubles);
    run.transcript.push_back(msg);
  }

  // Phase 2: pooled set out (identical payload to every worker).
  const std::uint64_t pooled_digest = digest_rowmajor(run.pooled.draws);
  for (int j = 0; j < m; ++j) {
    ProtocolMessage msg;
    msg.kind = MessageKind::pooled_out;
    msg.origin = j;
    msg.round = 0;
    msg.n_doubles = total * p;
    msg.payload_digest = pooled_digest;
    msg.byte_count = message_byte_count(msg.n_doubles);
    run.transcript.push_back(msg);
  }

  // Phase 3: likelihood rows in.
  run.loglik.values.resize(m, total);
  const auto digests =
      likelihood_phase(model, run.pooled.draws, 0, total, chunk_size, run.loglik.values);
  for (int j = 0; j < m; ++j) {
    ProtocolMessage msg;
    msg.kind = MessageKind::logliks_in;
    msg.origin = j;
    msg.round = 0;
    msg.n_doubles = total;
    msg.payload_digest = digests[j];
    msg.byte_count = message_byte_count(msg.n_doubles);
    run.transcript.push_back(msg);
  }
  return run;
}

void extend_with_proposal_draws(
    FederatedRun& run,
    const std::vector<std::pair<std::string, Eigen::MatrixXd>>& extras,
    const ModelSpec& model, long chunk_size) {
  if (extras.empty()) return;
  const int m = run.num_parts;
  const Eigen::Index p = run.pooled.dim();
  long added = 0;
  for (const auto& [label, draws] : extras) {
    if (draws.rows() < 1) {
      throw std::invalid_argument("protocol error: empty proposal component " + label);
    }
    if (draws.cols() != p) {
      throw std::invalid_argument("protocol error: parameter dimension mismatch in " + label);
    }
    added += draws.rows();
  }

  const long old_total = run.total_draws();
  run.pooled.draws.conservativeResize(old_total + added, p);
  run.loglik.values.conservativeResize(m, old_total + added);
  long at = old_total;
  for (const auto& [label, draws] : extras) {
    const long nj = draws.rows();
    run.pooled.draws.middleRows(at, nj) = draws;
    const int comp = run.num_components();
    for (long h = 0; h < nj; ++h) {
      run.origin.push_back(comp);
      run.loglik.column_source.push_back(label);
    }
    run.block_counts.push_back(nj);
    run.block_labels.push_back(label);
    run.block_offsets.push_back(at + nj);
    at += nj;
  }

  const int round = run.rounds;
  const Eigen::MatrixXd extra_block = run.pooled.draws.middleRows(old_total, added);
  const std::uint64_t out_digest = digest_rowmajor(extra_block);
  for (int j = 0; j < m; ++j) {
    ProtocolMessage msg;
    msg.kind = MessageKind::pooled_out;
    msg.origin = j;
    msg.round = round;
    msg.n_doubles = added * p;
    msg.payload_digest = out_digest;
    msg.byte_count = message_byte_count(msg.n_doubles);
    run.transcript.push_back(msg);
  }
  const auto digests = likelihood_phase(model, extra_block, old_total,
                                        old_total + added, chunk_size,
                                        run.loglik.values);
  for (int j = 0; j < m; ++j) {
    ProtocolMessage msg;
    msg.kind = MessageKind::logliks_in;
    msg.origin = j;
    msg.round = round;
    msg.n_doubles = added;
    msg.payload_digest = digests[j];
    msg.byte_count = message_byte_count(msg.n_doubles);
    run.transcript.push_back(msg);
  }
  run.rounds = round + 1;
}

void write_transcript_jsonl(const std::vector<ProtocolMessage>& transcript,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  char digest_hex[19];
  for (const auto& msg : transcript) {
    std::snprintf(digest_hex, sizeof(digest_hex), "0x%016llx",
                  static_cast<unsigned long long>(msg.payload_digest));
    nlohmann::json line = {
        {"round", msg.round},
        {"kind", to_string(msg.kind)},
        {"worker", msg.origin},
        {"n_doubles", msg.n_doubles},
        {"byte_count", msg.byte_count},
        {"payload_digest", digest_hex},
    };
    out << line.dump() << "\n";
  }
}

long transcript_total_bytes(const std::vector<ProtocolMessage>& transcript) {
  long total = 0;
  for (const auto& msg : transcript) total += msg.byte_count;
  return total;
}

}  // namespace lemie
