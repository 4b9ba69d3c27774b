#pragma once

// The three multiple importance weighting schemes over a pooled draw set and
// its per-part log-likelihood matrix, plus weighted density and quantile
// estimation.  Everything runs in log space; mixture denominators use
// log-sum-exp with max subtraction because weights span hundreds of orders of
// magnitude at large part counts.

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lemie/draws.hpp"
#include "lemie/federation.hpp"
#include "lemie/model.hpp"
#include "lemie/rng.hpp"

namespace lemie {

/// Draws with importance weights in raw and self-normalised form.  For the
/// per-block scheme (mie1/lemie1) norm_weights are the global effective
/// weights q_c x (block-normalised weight), so they always sum to one and
/// 1/sum(norm_weights^2) is the scheme's effective sample size.
struct WeightedSampleSet {
  ParamDraws draws;
  Eigen::VectorXd log_weights;   // unnormalised, -inf allowed, never NaN
  Eigen::VectorXd norm_weights;  // >= 0, sums to 1
  std::string scheme;            // mie1..3 / lemie1..3
  Eigen::VectorXd component_q;
  Eigen::VectorXd log_chat;
  std::vector<int> origin;       // per-draw component index
  bool kl_floor_applied = false; // mie3: some D-hat was floored at epsilon
};

/// Read-only view tying a protocol run to the quantities the weighting
/// schemes need: per-draw log prior and log target, plus optional extra
/// proposal components whose normalised log densities are known exactly
/// (rows over all pooled draws) together with their closed-form entropies.
struct MixtureView {
  const FederatedRun* run = nullptr;
  Eigen::VectorXd log_prior;
  Eigen::VectorXd log_target;
  Eigen::MatrixXd exact_rows;           // L x N
  std::vector<double> exact_entropies;  // length L

  int num_local() const { return run->num_parts; }
  int num_components() const { return run->num_components(); }
  long total() const { return run->total_draws(); }
  long count(int c) const { return run->block_counts[c]; }
  long offset(int c) const { return run->block_offsets[c]; }
  bool is_exact(int c) const { return c >= num_local(); }

  /// Unnormalised log density of mixture component c at pooled draw k
  /// (part components include the prior; exact components are normalised).
  double log_comp(int c, long k) const {
    if (c < num_local()) return run->loglik.values(c, k) + log_prior[k];
    return exact_rows(c - num_local(), k);
  }
};

/// Builds the view for the local components only (no exact extras).
MixtureView build_mixture_view(const FederatedRun& run, const ModelSpec& model);

/// Variant with extra exact components appended; rows must cover every pooled
/// draw and match the number of non-part components in the run.
MixtureView build_mixture_view(const FederatedRun& run, const ModelSpec& model,
                               Eigen::MatrixXd exact_rows,
                               std::vector<double> exact_entropies);

/// Log importance weights of component c's own draws against the full target
/// (prior and own-part likelihood cancel for local components).
Eigen::VectorXd snis_weights_single(const MixtureView& view, int c);

/// Per-component log c-hat: the log-mean of each component's own importance
/// weights, estimating log(Z_pi / Z_c) for local components and log Z_pi for
/// exact (normalised) ones.
Eigen::VectorXd chat_log(const MixtureView& view);

/// KL(component c || full posterior) estimated from component c's own draws;
/// exact components use their closed-form entropy so only the cross term is
/// Monte Carlo.  Can be slightly negative from MC noise; callers floor it.
double kl_hat_local(const MixtureView& view, int c, const Eigen::VectorXd& log_chat);

using EstimandFn = std::function<Eigen::VectorXd(const Eigen::RowVectorXd&)>;

struct MieResult {
  Eigen::VectorXd estimate;
  WeightedSampleSet ws;
};

/// Weighted average of per-block self-normalised estimators with block
/// weights q_c = N_c / N.  A block whose weights are all zero is an error.
MieResult mie1_estimate(const MixtureView& view, const EstimandFn& f = nullptr);

/// Mixture weighting: log w(k) = log target(k) - logsumexp_c(log q_c +
/// log chat_c + log comp_c(k)).  Self-normalised by default; the unnormalised
/// (1/N) sum w f form is kept for bias studies.  q defaults to N_c / N.
MieResult mie2_estimate(const MixtureView& view, const EstimandFn& f = nullptr,
                        const Eigen::VectorXd& q = Eigen::VectorXd(),
                        bool self_normalised = true);

/// KL-prioritised resampling: component weights proportional to 1/D-hat
/// (floored at kKlFloor), N-bar = min_c N_c draws resampled (without
/// replacement within a component when the count allows), then mie2-style
/// weights with the original c-hat estimates, self-normalised.
MieResult mie3_estimate(const MixtureView& view, std::uint64_t seed,
                        const EstimandFn& f = nullptr,
                        bool without_replacement = true);

inline constexpr double kKlFloor = 1e-8;

enum class DensityKernel { rect, normal };

/// Weighted kernel density at a point: sum_h w_h K(point, draw_h) with a
/// rectangular window (indicator / width per dimension) or an independent
/// normal kernel with per-dimension bandwidths.
double weighted_density(const WeightedSampleSet& ws,
                        const Eigen::Ref<const Eigen::VectorXd>& point,
                        DensityKernel kernel,
                        const Eigen::Ref<const Eigen::VectorXd>& bandwidth);

/// Smallest draw value (along one coordinate) whose cumulative normalised
/// weight reaches prob.
double weighted_quantile(const WeightedSampleSet& ws, int coordinate, double prob);

/// Draw coordinates + log/normalised weights + origin to CSV, with a JSON
/// sidecar recording scheme, q, and log c-hat.
void write_weighted_set(const WeightedSampleSet& ws, const std::string& csv_path,
                        const std::string& json_path);

/// Inverse of write_weighted_set.  The sidecar is optional; without it the
/// scheme and component metadata are left empty.
WeightedSampleSet read_weighted_set(const std::string& csv_path,
                                    const std::string& json_path = "");

}  // namespace lemie
