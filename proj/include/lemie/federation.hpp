#pragma once

// Master/worker simulation of the three-transfer protocol: workers send their
// local draws in, the master broadcasts the pooled set, and workers return
// per-part log-likelihood rows.  Raw observations never cross the boundary;
// payloads hold only parameter vectors and log-likelihood scalars, and the
// transcript records their sizes and digests for the communication report.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lemie/draws.hpp"
#include "lemie/model.hpp"

namespace lemie {

enum class MessageKind { samples_in, pooled_out, logliks_in };

std::string to_string(MessageKind k);

/// One protocol transfer.  byte_count is the serialised payload size: a
/// 24-byte envelope header plus 8 bytes per double.
struct ProtocolMessage {
  MessageKind kind;
  int origin = 0;  // worker id the transfer belongs to
  int round = 0;   // 0 = initial in-out-in, 1+ = proposal extension rounds
  long n_doubles = 0;
  std::uint64_t payload_digest = 0;
  long byte_count = 0;
};

/// M x N matrix of log p(x_j | theta_k); column k labels where draw k came
/// from ("part:3", "laplace:1", ...).  Column sums give the full-data
/// log-likelihood at each pooled draw.
struct LogLikMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> column_source;
};

/// Everything the master holds after a protocol run: the pooled draws with
/// their origin components (contiguous blocks, parts first), the likelihood
/// matrix, and the transfer transcript.
struct FederatedRun {
  ParamDraws pooled;
  std::vector<int> origin;            // per-draw component index
  std::vector<long> block_counts;     // draws per component
  std::vector<std::string> block_labels;
  std::vector<long> block_offsets;    // size num_components()+1
  LogLikMatrix loglik;
  std::vector<ProtocolMessage> transcript;
  int num_parts = 0;
  int rounds = 0;

  int num_components() const { return static_cast<int>(block_counts.size()); }
  long total_draws() const { return pooled.count(); }
};

/// FNV-1a (64-bit) over the little-endian bytes of n doubles.
std::uint64_t fnv1a_digest_doubles(const double* data, long n);

long message_byte_count(long n_doubles);

/// Worker-phase parallelism degree, from LEMIE_WORKER_THREADS (default 1;
/// results are identical for any value, threads only split the column work).
int worker_parallelism();

/// The in-out-in protocol: one (part, draws) entry per worker, in part order.
/// Produces the pooled draw set, the M x N log-likelihood matrix (row j
/// computed from part j only, in chunks of chunk_size columns) and a
/// transcript of exactly 3M messages sorted by (round, phase, worker).
FederatedRun run_in_out_in(const std::vector<ParamDraws>& worker_draws,
                           const ModelSpec& model, long chunk_size = 8192);

/// Second protocol round: appends proposal draws constructed at the master
/// (one new component per labelled set), returns their part log-likelihood
/// columns, and extends the transcript by 2M messages.  Empty input is the
/// identity.
void extend_with_proposal_draws(
    FederatedRun& run,
    const std::vector<std::pair<std::string, Eigen::MatrixXd>>& extras,
    const ModelSpec& model, long chunk_size = 8192);

/// One JSON envelope per line; payloads are elided to digests.
void write_transcript_jsonl(const std::vector<ProtocolMessage>& transcript,
                            const std::string& path);

long transcript_total_bytes(const std::vector<ProtocolMessage>& transcript);

}  // namespace lemie
