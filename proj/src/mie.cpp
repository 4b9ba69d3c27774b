#include "lemie/mie.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "lemie/special.hpp"

namespace lemie {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd default_q(const MixtureView& view) {
  const int c = view.num_components();
  Eigen::VectorXd q(c);
  for (int i = 0; i < c; ++i) {
    q[i] = static_cast<double>(view.count(i)) / static_cast<double>(view.total());
  }
  return q;
}

std::string scheme_name(const MixtureView& view, int k) {
  const bool enriched = view.num_components() > view.num_local();
  return (enriched ? "lemie" : "mie") + std::to_string(k);
}

/// exp-normalise a log-weight vector; returns the normalised weights and the
/// log of the mean raw weight.  All -inf input is reported via ok = false.
bool softmax(const Eigen::VectorXd& lw, Eigen::VectorXd& out) {
  const double m = lw.maxCoeff();
  if (m == -kInf) return false;
  out = (lw.array() - m).exp();
  out /= out.sum();
  return true;
}

Eigen::VectorXd apply_weighted(const Eigen::Ref<const Eigen::MatrixXd>& draws,
                               const Eigen::VectorXd& w, const EstimandFn& f) {
  if (!f) return draws.transpose() * w;
  Eigen::VectorXd acc;
  for (Eigen::Index h = 0; h < draws.rows(); ++h) {
    const Eigen::VectorXd val = f(draws.row(h));
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(val.size());
    acc += w[h] * val;
  }
  return acc;
}

/// log w(k) = log target(k) - logsumexp_c(coeff_c + log comp_c(k)) for one
/// pooled draw; -inf denominators are positivity violations collected by the
/// caller (coeff_c = log q_c + log chat_c, -inf skips the component).
double mixture_log_weight(const MixtureView& view, const Eigen::VectorXd& coeff,
                          long k, bool& denom_zero) {
  const int n_comp = view.num_components();
  double m = -kInf;
  for (int c = 0; c < n_comp; ++c) {
    if (coeff[c] == -kInf) continue;
    const double v = coeff[c] + view.log_comp(c, k);
    if (v > m) m = v;
  }
  if (m == -kInf) {
    denom_zero = true;
    return -kInf;
  }
  double s = 0.0;
  for (int c = 0; c < n_comp; ++c) {
    if (coeff[c] == -kInf) continue;
    const double v = coeff[c] + view.log_comp(c, k);
    if (v != -kInf) s += std::exp(v - m);
  }
  const double denom = m + std::log(s);
  const double t = view.log_target[k];
  if (t == -kInf) return -kInf;
  return t - denom;
}

WeightedSampleSet make_ws_from_indices(const MixtureView& view,
                                       const std::vector<long>& indices,
                                       std::string scheme) {
  WeightedSampleSet ws;
  ws.scheme = std::move(scheme);
  const Eigen::Index p = view.run->pooled.dim();
  ws.draws.source = ws.scheme;
  ws.draws.draws.resize(static_cast<long>(indices.size()), p);
  ws.origin.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    ws.draws.draws.row(static_cast<long>(i)) = view.run->pooled.draws.row(indices[i]);
    ws.origin.push_back(view.run->origin[indices[i]]);
  }
  return ws;
}

}  // namespace

MixtureView build_mixture_view(const FederatedRun& run, const ModelSpec& model) {
  return build_mixture_view(run, model, Eigen::MatrixXd(0, run.total_draws()), {});
}

MixtureView build_mixture_view(const FederatedRun& run, const ModelSpec& model,
                               Eigen::MatrixXd exact_rows,
                               std::vector<double> exact_entropies) {
  const int extra = run.num_components() - run.num_parts;
  if (exact_rows.rows() != extra ||
      static_cast<int>(exact_entropies.size()) != extra) {
    throw std::invalid_argument(
        "mixture view: exact component rows must match the run's non-part components");
  }
  if (extra > 0 && exact_rows.cols() != run.total_draws()) {
    throw std::invalid_argument("mixture view: exact rows must cover every pooled draw");
  }
  MixtureView view;
  view.run = &run;
  view.log_prior = model.log_prior_batch(run.pooled.draws);
  view.log_target = run.loglik.values.colwise().sum().transpose() + view.log_prior;
  view.exact_rows = std::move(exact_rows);
  view.exact_entropies = std::move(exact_entropies);
  return view;
}

Eigen::VectorXd snis_weights_single(const MixtureView& view, int c) {
  const long off = view.offset(c);
  const long n = view.count(c);
  Eigen::VectorXd w(n);
  for (long h = 0; h < n; ++h) {
    const long k = off + h;
    const double comp = view.log_comp(c, k);
    const double target = view.log_target[k];
    if (comp == -kInf) {
      if (target == -kInf) {
        w[h] = -kInf;  // draw outside the posterior support carries no weight
        continue;
      }
      throw std::runtime_error("component " + std::to_string(c) +
                               " has zero density at its own draw " +
                               std::to_string(h));
    }
    w[h] = target - comp;
  }
  return w;
}

Eigen::VectorXd chat_log(const MixtureView& view) {
  const int n_comp = view.num_components();
  Eigen::VectorXd chat(n_comp);
  for (int c = 0; c < n_comp; ++c) {
    if (view.count(c) < 1) throw std::invalid_argument("empty mixture component");
    const Eigen::VectorXd w = snis_weights_single(view, c);
    chat[c] = log_sum_exp(w) - std::log(static_cast<double>(w.size()));
  }
  return chat;
}

double kl_hat_local(const MixtureView& view, int c, const Eigen::VectorXd& log_chat) {
  const long off = view.offset(c);
  const long n = view.count(c);
  double mean_term;
  if (view.is_exact(c)) {
    // H(phi) is closed-form; only the cross term -E[log target] needs MC.
    double acc = 0.0;
    for (long h = 0; h < n; ++h) acc += view.log_target[off + h];
    mean_term = acc / static_cast<double>(n) +
                view.exact_entropies[static_cast<size_t>(c - view.num_local())];
  } else {
    const Eigen::VectorXd w = snis_weights_single(view, c);
    mean_term = w.mean();
  }
  if (mean_term == -kInf) return kInf;
  return -mean_term + log_chat[c];
}

MieResult mie1_estimate(const MixtureView& view, const EstimandFn& f) {
  const int n_comp = view.num_components();
  const long total = view.total();
  WeightedSampleSet ws;
  ws.scheme = scheme_name(view, 1);
  ws.draws = view.run->pooled;
  ws.draws.source = ws.scheme;
  ws.origin = view.run->origin;
  ws.log_weights.resize(total);
  ws.norm_weights.resize(total);
  ws.component_q = default_q(view);
  ws.log_chat = chat_log(view);

  Eigen::VectorXd est;
  for (int c = 0; c < n_comp; ++c) {
    const long off = view.offset(c);
    const long n = view.count(c);
    const Eigen::VectorXd w = snis_weights_single(view, c);
    Eigen::VectorXd nw;
    if (!softmax(w, nw)) {
      throw std::runtime_error("degenerate block: all importance weights vanish in component " +
                               std::to_string(c));
    }
    ws.log_weights.segment(off, n) = w;
    ws.norm_weights.segment(off, n) = ws.component_q[c] * nw;
    const Eigen::VectorXd part =
        apply_weighted(view.run->pooled.draws.middleRows(off, n), nw, f);
    if (est.size() == 0) est = Eigen::VectorXd::Zero(part.size());
    est += ws.component_q[c] * part;
  }
  ws.norm_weights /= ws.norm_weights.sum();
  MieResult res;
  res.estimate = std::move(est);
  res.ws = std::move(ws);
  return res;
}

MieResult mie2_estimate(const MixtureView& view, const EstimandFn& f,
                        const Eigen::VectorXd& q_in, bool self_normalised) {
  const int n_comp = view.num_components();
  const long total = view.total();
  Eigen::VectorXd q = q_in.size() == 0 ? default_q(view) : q_in;
  if (q.size() != n_comp) {
    throw std::invalid_argument("mie2: component weight vector has wrong length");
  }
  if (q.minCoeff() < 0.0 || std::abs(q.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("mie2: component weights must be a distribution");
  }
  const Eigen::VectorXd chat = chat_log(view);
  Eigen::VectorXd coeff(n_comp);
  for (int c = 0; c < n_comp; ++c) {
    coeff[c] = q[c] > 0.0 ? std::log(q[c]) + chat[c] : -kInf;
  }

  Eigen::VectorXd lw(total);
  std::vector<long> violations;
  for (long k = 0; k < total; ++k) {
    bool denom_zero = false;
    lw[k] = mixture_log_weight(view, coeff, k, denom_zero);
    if (denom_zero && violations.size() < 16) violations.push_back(k);
  }
  if (!violations.empty()) {
    std::string list;
    for (long k : violations) list += " " + std::to_string(k);
    throw std::runtime_error(
        "mixture positivity violation: zero proposal density at draws" + list);
  }

  WeightedSampleSet ws;
  ws.scheme = scheme_name(view, 2);
  ws.draws = view.run->pooled;
  ws.draws.source = ws.scheme;
  ws.origin = view.run->origin;
  ws.log_weights = std::move(lw);
  ws.component_q = q;
  ws.log_chat = chat;
  if (!softmax(ws.log_weights, ws.norm_weights)) {
    throw std::runtime_error("mie2: all importance weights vanish");
  }
  ws.norm_weights /= ws.norm_weights.sum();

  MieResult res;
  if (self_normalised) {
    res.estimate = apply_weighted(view.run->pooled.draws, ws.norm_weights, f);
  } else {
    const double m = ws.log_weights.maxCoeff();
    const Eigen::VectorXd scaled = (ws.log_weights.array() - m).exp();
    res.estimate = apply_weighted(view.run->pooled.draws, scaled, f) *
                   (std::exp(m) / static_cast<double>(total));
  }
  res.ws = std::move(ws);
  return res;
}

MieResult mie3_estimate(const MixtureView& view, std::uint64_t seed,
                        const EstimandFn& f, bool without_replacement) {
  const int n_comp = view.num_components();
  const Eigen::VectorXd chat = chat_log(view);

  bool floored = false;
  Eigen::VectorXd qt(n_comp);
  for (int c = 0; c < n_comp; ++c) {
    const double kl = kl_hat_local(view, c, chat);
    if (kl == kInf) {
      qt[c] = 0.0;  // infinite divergence: component never resampled
      continue;
    }
    if (kl < kKlFloor) floored = true;
    qt[c] = 1.0 / std::max(kl, kKlFloor);
  }
  const double qt_sum = qt.sum();
  if (!(qt_sum > 0.0)) {
    throw std::runtime_error("mie3: every component has infinite estimated divergence");
  }
  const Eigen::VectorXd q = qt / qt_sum;

  long nbar = view.count(0);
  for (int c = 1; c < n_comp; ++c) nbar = std::min(nbar, view.count(c));

  // Component counts ~ Multinomial(nbar, q) by CDF inversion per draw.
  RngStream rng(seed, "mie3-resample");
  std::vector<long> comp_counts(n_comp, 0);
  for (long t = 0; t < nbar; ++t) {
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = n_comp - 1;
    for (int c = 0; c < n_comp; ++c) {
      acc += q[c];
      if (u <= acc) {
        pick = c;
        break;
      }
    }
    comp_counts[static_cast<size_t>(pick)]++;
  }

  std::vector<long> indices;
  indices.reserve(nbar);
  for (int c = 0; c < n_comp; ++c) {
    const long want = comp_counts[static_cast<size_t>(c)];
    if (want == 0) continue;
    const long off = view.offset(c);
    const long n = view.count(c);
    if (without_replacement && want <= n) {
      // Partial Fisher-Yates over the block's local indices.
      std::vector<long> pool(n);
      std::iota(pool.begin(), pool.end(), 0L);
      for (long i = 0; i < want; ++i) {
        const long j = i + static_cast<long>(rng.uniform_int(n - i));
        std::swap(pool[i], pool[j]);
        indices.push_back(off + pool[i]);
      }
    } else {
      for (long i = 0; i < want; ++i) {
        indices.push_back(off + static_cast<long>(rng.uniform_int(n)));
      }
    }
  }

  Eigen::VectorXd coeff(n_comp);
  for (int c = 0; c < n_comp; ++c) {
    coeff[c] = q[c] > 0.0 ? std::log(q[c]) + chat[c] : -kInf;
  }
  WeightedSampleSet ws = make_ws_from_indices(view, indices, scheme_name(view, 3));
  ws.component_q = q;
  ws.log_chat = chat;
  ws.kl_floor_applied = floored;
  ws.log_weights.resize(static_cast<long>(indices.size()));
  std::vector<long> violations;
  for (size_t i = 0; i < indices.size(); ++i) {
    bool denom_zero = false;
    ws.log_weights[static_cast<long>(i)] =
        mixture_log_weight(view, coeff, indices[i], denom_zero);
    if (denom_zero && violations.size() < 16) violations.push_back(indices[i]);
  }
  if (!violations.empty()) {
    std::string list;
    for (long k : violations) list += " " + std::to_string(k);
    throw std::runtime_error(
        "mixture positivity violation: zero proposal density at draws" + list);
  }
  if (!softmax(ws.log_weights, ws.norm_weights)) {
    throw std::runtime_error("mie3: all resampled weights vanish");
  }
  ws.norm_weights /= ws.norm_weights.sum();

  MieResult res;
  res.estimate = apply_weighted(ws.draws.draws, ws.norm_weights, f);
  res.ws = std::move(ws);
  return res;
}

double weighted_density(const WeightedSampleSet& ws,
                        const Eigen::Ref<const Eigen::VectorXd>& point,
                        DensityKernel kernel,
                        const Eigen::Ref<const Eigen::VectorXd>& bandwidth) {
  const Eigen::Index p = ws.draws.dim();
  if (point.size() != p || bandwidth.size() != p) {
    throw std::invalid_argument("weighted_density: dimension mismatch");
  }
  if (bandwidth.minCoeff() <= 0.0) {
    throw std::invalid_argument("weighted_density: bandwidth must be positive");
  }
  const long n = ws.draws.count();
  double acc = 0.0;
  if (kernel == DensityKernel::rect) {
    double inv_vol = 1.0;
    for (Eigen::Index d = 0; d < p; ++d) inv_vol /= bandwidth[d];
    for (long h = 0; h < n; ++h) {
      bool inside = true;
      for (Eigen::Index d = 0; d < p; ++d) {
        if (std::abs(ws.draws.draws(h, d) - point[d]) > 0.5 * bandwidth[d]) {
          inside = false;
          break;
        }
      }
      if (inside) acc += ws.norm_weights[h] * inv_vol;
    }
    return acc;
  }
  double log_norm = 0.0;
  for (Eigen::Index d = 0; d < p; ++d) {
    log_norm -= std::log(bandwidth[d]) + 0.5 * std::log(2.0 * M_PI);
  }
  for (long h = 0; h < n; ++h) {
    double quad = 0.0;
    for (Eigen::Index d = 0; d < p; ++d) {
      const double z = (ws.draws.draws(h, d) - point[d]) / bandwidth[d];
      quad += z * z;
    }
    acc += ws.norm_weights[h] * std::exp(log_norm - 0.5 * quad);
  }
  return acc;
}

double weighted_quantile(const WeightedSampleSet& ws, int coordinate, double prob) {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw std::invalid_argument("weighted_quantile: prob must lie in (0, 1)");
  }
  if (coordinate < 0 || coordinate >= ws.draws.dim()) {
    throw std::invalid_argument("weighted_quantile: coordinate out of range");
  }
  const long n = ws.draws.count();
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    return ws.draws.draws(a, coordinate) < ws.draws.draws(b, coordinate);
  });
  double cum = 0.0;
  for (long i = 0; i < n; ++i) {
    cum += ws.norm_weights[order[i]];
    if (cum >= prob - 1e-15) return ws.draws.draws(order[i], coordinate);
  }
  return ws.draws.draws(order[n - 1], coordinate);
}

void write_weighted_set(const WeightedSampleSet& ws, const std::string& csv_path,
                        const std::string& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  csv.precision(17);
  const Eigen::Index p = ws.draws.dim();
  for (Eigen::Index d = 0; d < p; ++d) csv << "coord_" << d << ",";
  csv << "log_weight,norm_weight,origin\n";
  for (long h = 0; h < ws.draws.count(); ++h) {
    for (Eigen::Index d = 0; d < p; ++d) csv << ws.draws.draws(h, d) << ",";
    csv << ws.log_weights[h] << "," << ws.norm_weights[h] << "," << ws.origin[h]
        << "\n";
  }
  nlohmann::json side;
  side["scheme"] = ws.scheme;
  side["component_q"] = std::vector<double>(ws.component_q.data(),
                                            ws.component_q.data() + ws.component_q.size());
  side["log_chat"] = std::vector<double>(ws.log_chat.data(),
                                         ws.log_chat.data() + ws.log_chat.size());
  side["kl_floor_applied"] = ws.kl_floor_applied;
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("cannot open " + json_path);
  js << side.dump(2) << "\n";
}

WeightedSampleSet read_weighted_set(const std::string& csv_path,
                                    const std::string& json_path) {
  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  std::string line;
  if (!std::getline(csv, line)) {
    throw std::runtime_error("empty weighted-set file " + csv_path);
  }
  int p = -3;
  {
    std::stringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) ++p;
  }
  if (p < 1) throw std::runtime_error("bad weighted-set header in " + csv_path);

  std::vector<double> coords, lw, nw;
  std::vector<int> org;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    for (int d = 0; d < p; ++d) {
      std::getline(ls, tok, ',');
      coords.push_back(std::stod(tok));
    }
    std::getline(ls, tok, ',');
    lw.push_back(std::stod(tok));  // stod parses the inf spellings
    std::getline(ls, tok, ',');
    nw.push_back(std::stod(tok));
    std::getline(ls, tok, ',');
    org.push_back(std::stoi(tok));
  }
  const long n = static_cast<long>(lw.size());
  if (n == 0) throw std::runtime_error("weighted-set file has no rows");

  WeightedSampleSet ws;
  ws.draws.draws.resize(n, p);
  for (long h = 0; h < n; ++h) {
    for (int d = 0; d < p; ++d) ws.draws.draws(h, d) = coords[h * p + d];
  }
  ws.draws.source = "file:" + csv_path;
  ws.log_weights = Eigen::VectorXd::Map(lw.data(), n);
  ws.norm_weights = Eigen::VectorXd::Map(nw.data(), n);
  ws.origin = std::move(org);

  if (!json_path.empty()) {
    std::ifstream js(json_path);
    if (!js) throw std::runtime_error("cannot open " + json_path);
    const nlohmann::json side = nlohmann::json::parse(js);
    ws.scheme = side.value("scheme", "");
    const auto q = side.value("component_q", std::vector<double>{});
    ws.component_q =
        Eigen::VectorXd::Map(q.data(), static_cast<Eigen::Index>(q.size()));
    const auto lc = side.value("log_chat", std::vector<double>{});
    ws.log_chat =
        Eigen::VectorXd::Map(lc.data(), static_cast<Eigen::Index>(lc.size()));
    ws.kl_floor_applied = side.value("kl_floor_applied", false);
  }
  return ws;
}

}  // namespace lemie
