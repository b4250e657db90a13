#include "mcausal/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "mcausal/errors.hpp"

namespace mcausal {

namespace {

VectorXd subset(const VectorXd& v, const std::vector<int>& rows) {
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

VectorXd logit_vec(const VectorXd& p) {
  VectorXd out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = logit(p[i]);
  return out;
}

VectorXd expit_shift(const VectorXd& logits, double eps) {
  VectorXd out(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[i] = expit(logits[i] + eps);
  return out;
}

// Floors probabilities in place and records min/max/floored counts.
VectorXd floor_probs(VectorXd p, double p_floor, PositivityStat& stat) {
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    stat.max_prob = std::max(stat.max_prob, p[i]);
    if (p[i] < p_floor) {
      ++stat.floored;
      p[i] = p_floor;
    }
    stat.min_prob = std::min(stat.min_prob, p[i]);
    ++stat.evaluated;
  }
  return p;
}

std::vector<int> all_rows(Eigen::Index n) {
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = static_cast<int>(i);
  return rows;
}

std::vector<int> position_map(Eigen::Index n, const std::vector<int>& rows) {
  std::vector<int> pos(static_cast<std::size_t>(n), -1);
  for (std::size_t idx = 0; idx < rows.size(); ++idx) pos[static_cast<std::size_t>(rows[idx])] =
      static_cast<int>(idx);
  return pos;
}

std::vector<ColumnRef> full_l_refs(const ObservedDataset& data, const GroupOrdering& ordering) {
  auto refs = lm_group_refs(data, ordering);
  const auto lo = all_lo_refs(data);
  refs.insert(refs.end(), lo.begin(), lo.end());
  return refs;
}

void note_small_stratum(Diagnostics& diag, const std::string& name, std::size_t size,
                        int threshold) {
  if (size < static_cast<std::size_t>(threshold)) {
    diag.warnings.push_back("small stratum '" + name + "' (" + std::to_string(size) + " units)");
  }
}

void flag_positivity(Diagnostics& diag) {
  if (diag.positivity.total_floored() > 0) {
    diag.warnings.push_back("positivity: " + std::to_string(diag.positivity.total_floored()) +
                            " probabilities floored");
  }
}

ArrayXi exposure_stratum(const ObservedDataset& data, const ArrayXi& base, int a) {
  ArrayXi s = base;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (s[i] == 1 && (data.r_a[i] != 1 || data.a[i] != static_cast<double>(a))) s[i] = 0;
  }
  return s;
}

}  // namespace

EstimateResult observed_mean_result(const ObservedDataset& data) {
  EstimateResult res;
  res.estimator_id = "observed_mean";
  res.psi_hat = data.y.mean();
  res.influence_values = data.y.array() - res.psi_hat;
  return res;
}

// ---------------------------------------------------------------------------
// Complete-data TMLE and complete-case analysis
// ---------------------------------------------------------------------------

EstimateResult tmle_complete_data(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                                  const EstimatorOptions& opt) {
  if (!data.fully_observed()) {
    throw DataError("tmle_complete_data requires fully observed data");
  }
  const Eigen::Index n = data.n();
  const std::vector<int> all = all_rows(n);
  const auto full_l = full_l_refs(data, identity_ordering(data.q()));

  EstimateResult res;
  res.estimator_id = "tmle_complete";

  const ArrayXi s_mask = exposure_stratum(data, ArrayXi::Ones(n), a);
  const std::vector<int> rows_s = rows_where(s_mask);
  if (rows_s.empty()) throw EmptyStratum("no units with A=" + std::to_string(a));
  res.diagnostics.stratum_counts["exposure"] = static_cast<int>(rows_s.size());
  note_small_stratum(res.diagnostics, "exposure", rows_s.size(), opt.small_stratum_warn);

  const FittedModel q_model = FittedModel::fit(data, specs.outcome, {{}, full_l, true}, all,
                                               data.y, Link::Logit);
  const FittedModel a_model = FittedModel::fit(data, specs.exposure, {{}, full_l, false}, all,
                                               data.a, Link::Logit);

  VectorXd pa = a_model.predict(data, rows_s, std::nullopt, &res.diagnostics.fallback_predictions);
  if (a == 0) pa = VectorXd::Ones(pa.size()) - pa;
  PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
  pa = floor_probs(std::move(pa), opt.p_floor, s_a);
  const VectorXd w_s = pa.cwiseInverse();
  for (Eigen::Index i = 0; i < w_s.size(); ++i) {
    res.diagnostics.positivity.max_combined_weight =
        std::max(res.diagnostics.positivity.max_combined_weight, w_s[i]);
  }

  const VectorXd q_a_all =
      q_model.predict(data, all, static_cast<double>(a), &res.diagnostics.fallback_predictions);
  const VectorXd q_a_logit = logit_vec(q_a_all);
  VectorXd offs(static_cast<Eigen::Index>(rows_s.size()));
  for (std::size_t i = 0; i < rows_s.size(); ++i) offs[static_cast<Eigen::Index>(i)] =
      q_a_logit[rows_s[i]];

  const FluctuationFit fl = fluctuate(subset(data.y, rows_s), offs, w_s);
  res.epsilons.push_back(fl.epsilon);
  if (!fl.converged) res.diagnostics.warnings.push_back("fluctuation clamped");

  const VectorXd q_star = expit_shift(q_a_logit, fl.epsilon);
  res.psi_hat = q_star.mean();

  VectorXd phi = q_star.array() - res.psi_hat;
  for (std::size_t idx = 0; idx < rows_s.size(); ++idx) {
    const int i = rows_s[idx];
    phi[i] += w_s[static_cast<Eigen::Index>(idx)] * (data.y[i] - q_star[i]);
  }
  res.influence_values = phi;
  res.diagnostics.positivity.models.push_back(s_a);
  flag_positivity(res.diagnostics);
  return res;
}

EstimateResult estimate_complete_case(const ObservedDataset& data, const NuisanceSpecs& specs,
                                      int a, const EstimatorOptions& opt) {
  ArrayXi complete = block_rl_indicator(data) * data.r_a;
  const std::vector<int> rows_cc = rows_where(complete);
  if (rows_cc.empty()) throw EmptyStratum("no fully observed units");
  EstimateResult res = tmle_complete_data(take_rows(data, rows_cc), specs, a, opt);
  res.estimator_id = "cc";
  res.diagnostics.stratum_counts["complete_cases"] = static_cast<int>(rows_cc.size());
  res.diagnostics.stratum_counts["dropped"] = static_cast<int>(data.n()) -
                                              static_cast<int>(rows_cc.size());
  return res;
}

// ---------------------------------------------------------------------------
// A family: block covariate missingness
// ---------------------------------------------------------------------------

namespace {

struct AFamilyParts {
  ObservedDataset data;  // block-coarsened copy
  NuisanceSet ns;
  ArrayXi rl, r_full, s_mask;
  std::vector<int> all, rows_rl, rows_r, rows_s;
};

AFamilyParts prepare_a_family(const ObservedDataset& raw, const NuisanceSpecs& specs, int a,
                              double p_floor) {
  AFamilyParts parts;
  parts.data = to_block_rl(raw);
  const ObservedDataset& d = parts.data;
  parts.ns = fit_nuisances_mnar_a(d, specs, a, p_floor);
  parts.rl = block_rl_indicator(d);
  parts.r_full = parts.rl * d.r_a;
  parts.s_mask = exposure_stratum(d, parts.rl, a);
  parts.all = all_rows(d.n());
  parts.rows_rl = rows_where(parts.rl);
  parts.rows_r = rows_where(parts.r_full);
  parts.rows_s = rows_where(parts.s_mask);
  return parts;
}

}  // namespace

EstimateResult estimate_ice_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const EstimatorOptions& opt) {
  AFamilyParts p = prepare_a_family(data, specs, a, opt.p_floor);
  EstimateResult res;
  res.estimator_id = "ice_a";
  res.diagnostics.stratum_counts["r_l"] = static_cast<int>(p.rows_rl.size());
  res.diagnostics.stratum_counts["r_full"] = static_cast<int>(p.rows_r.size());

  const VectorXd t1 = p.ns.outcome.predict(p.data, p.rows_rl, static_cast<double>(a),
                                           &res.diagnostics.fallback_predictions);
  const FittedModel t0_model = FittedModel::fit(p.data, specs.outcome,
                                                {{}, all_lo_refs(p.data), false}, p.rows_rl, t1,
                                                Link::Logit);
  const VectorXd t0 = t0_model.predict(p.data, p.all, std::nullopt,
                                       &res.diagnostics.fallback_predictions);
  res.psi_hat = t0.mean();
  return res;
}

EstimateResult estimate_ipw_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const EstimatorOptions& opt) {
  AFamilyParts p = prepare_a_family(data, specs, a, opt.p_floor);
  if (p.rows_s.empty()) throw EmptyStratum("no units with A=a and everything observed");

  EstimateResult res;
  res.estimator_id = "ipw_a";
  res.diagnostics.stratum_counts["targeting"] = static_cast<int>(p.rows_s.size());
  note_small_stratum(res.diagnostics, "targeting", p.rows_s.size(), opt.small_stratum_warn);

  PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
  PositivityStat s_ra{"pi_ra", 1.0, 0.0, 0, 0};
  PositivityStat s_rl{"pi_rl", 1.0, 0.0, 0, 0};
  const VectorXd pa = floor_probs(p.ns.exposure_prob(p.data, p.rows_s), opt.p_floor, s_a);
  const VectorXd pra = floor_probs(p.ns.pi_ra.predict(p.data, p.rows_s), opt.p_floor, s_ra);
  const VectorXd prl = floor_probs(p.ns.pi_rl[0].predict(p.data, p.rows_s), opt.p_floor, s_rl);

  double num = 0.0, den = 0.0;
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    const auto i = static_cast<Eigen::Index>(idx);
    const double w = 1.0 / (pa[i] * pra[i] * prl[i]);
    res.diagnostics.positivity.max_combined_weight =
        std::max(res.diagnostics.positivity.max_combined_weight, w);
    num += w * p.data.y[p.rows_s[idx]];
    den += w;
  }
  if (den <= 0.0) throw DegenerateWeights("ipw_a: weights sum to zero");
  res.psi_hat = num / den;
  res.diagnostics.positivity.models = {s_a, s_ra, s_rl};
  flag_positivity(res.diagnostics);
  return res;
}

EstimateResult estimate_tmle_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                               const EstimatorOptions& opt) {
  AFamilyParts p = prepare_a_family(data, specs, a, opt.p_floor);
  const ObservedDataset& d = p.data;
  if (p.rows_s.empty()) throw EmptyStratum("no units with A=a and everything observed");

  EstimateResult res;
  res.estimator_id = "tmle_a";
  res.diagnostics.stratum_counts["r_l"] = static_cast<int>(p.rows_rl.size());
  res.diagnostics.stratum_counts["r_full"] = static_cast<int>(p.rows_r.size());
  res.diagnostics.stratum_counts["targeting"] = static_cast<int>(p.rows_s.size());
  note_small_stratum(res.diagnostics, "targeting", p.rows_s.size(), opt.small_stratum_warn);

  PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
  PositivityStat s_ra{"pi_ra", 1.0, 0.0, 0, 0};
  PositivityStat s_rl{"pi_rl", 1.0, 0.0, 0, 0};

  // Step C weights on the targeting stratum.
  const VectorXd pa_s = floor_probs(p.ns.exposure_prob(d, p.rows_s), opt.p_floor, s_a);
  const VectorXd pra_s = floor_probs(p.ns.pi_ra.predict(d, p.rows_s), opt.p_floor, s_ra);
  VectorXd prl_s = p.ns.pi_rl[0].predict(d, p.rows_s);
  for (Eigen::Index i = 0; i < prl_s.size(); ++i) prl_s[i] = std::max(prl_s[i], opt.p_floor);
  VectorXd w_s(prl_s.size());
  for (Eigen::Index i = 0; i < w_s.size(); ++i) {
    w_s[i] = 1.0 / (pa_s[i] * pra_s[i] * prl_s[i]);
    res.diagnostics.positivity.max_combined_weight =
        std::max(res.diagnostics.positivity.max_combined_weight, w_s[i]);
  }

  // Initial outcome predictions at A = a among R_L = 1.
  const VectorXd t1_0 = p.ns.outcome.predict(d, p.rows_rl, static_cast<double>(a),
                                             &res.diagnostics.fallback_predictions);
  const VectorXd t1_0_logit = logit_vec(t1_0);
  const std::vector<int> pos_rl = position_map(d.n(), p.rows_rl);

  // The targeting stratum is a subset of R_L = 1, so every position exists.
  VectorXd offs_s(static_cast<Eigen::Index>(p.rows_s.size()));
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    offs_s[static_cast<Eigen::Index>(idx)] = t1_0_logit[pos_rl[p.rows_s[idx]]];
  }

  // Targeting step for T_1.
  const FluctuationFit fl1 = fluctuate(subset(d.y, p.rows_s), offs_s, w_s);
  res.epsilons.push_back(fl1.epsilon);
  if (!fl1.converged) res.diagnostics.warnings.push_back("T1 fluctuation clamped");
  const VectorXd t1_star = expit_shift(t1_0_logit, fl1.epsilon);

  // Initial regression of the targeted T_1 on L_O among R_L = 1.
  const FittedModel t0_model = FittedModel::fit(d, specs.outcome, {{}, all_lo_refs(d), false},
                                                p.rows_rl, t1_star, Link::Logit);
  const VectorXd t0_0_rl = t0_model.predict(d, p.rows_rl, std::nullopt,
                                            &res.diagnostics.fallback_predictions);
  const VectorXd prl_rl = floor_probs(p.ns.pi_rl[0].predict(d, p.rows_rl), opt.p_floor, s_rl);
  const VectorXd w0 = prl_rl.cwiseInverse();

  // Targeting step for T_0.
  const FluctuationFit fl0 = fluctuate(t1_star, logit_vec(t0_0_rl), w0);
  res.epsilons.push_back(fl0.epsilon);
  if (!fl0.converged) res.diagnostics.warnings.push_back("T0 fluctuation clamped");

  const VectorXd t0_0_all = t0_model.predict(d, p.all, std::nullopt,
                                             &res.diagnostics.fallback_predictions);
  const VectorXd t0_star = expit_shift(logit_vec(t0_0_all), fl0.epsilon);
  res.psi_hat = t0_star.mean();

  // Influence values: plug-in of the MNAR-A influence function.
  VectorXd phi = t0_star.array() - res.psi_hat;
  for (std::size_t idx = 0; idx < p.rows_rl.size(); ++idx) {
    const int i = p.rows_rl[idx];
    phi[i] += w0[static_cast<Eigen::Index>(idx)] *
              (t1_star[static_cast<Eigen::Index>(idx)] - t0_star[i]);
  }
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    const int i = p.rows_s[idx];
    phi[i] += w_s[static_cast<Eigen::Index>(idx)] *
              (d.y[i] - t1_star[pos_rl[i]]);
  }
  res.influence_values = phi;
  res.diagnostics.positivity.models = {s_a, s_ra, s_rl};
  flag_positivity(res.diagnostics);
  return res;
}

// ---------------------------------------------------------------------------
// B family: sequential covariate missingness
// ---------------------------------------------------------------------------

namespace {

struct BFamilyParts {
  ObservedDataset data;  // monotone-coarsened copy
  NuisanceSet ns;
  GroupOrdering ordering;
  Eigen::ArrayXXi rbar;
  std::vector<std::vector<int>> rows_k;  // k = 0..q
  std::vector<int> rows_s;

  // Floored pi_{R_Lk} cumulative products, full length, valid on rows_k[k].
  std::vector<VectorXd> cum_prl;
  std::vector<PositivityStat> rl_stats;
};

BFamilyParts prepare_b_family(const ObservedDataset& raw, const NuisanceSpecs& specs, int a,
                              const GroupOrdering& ordering0, double p_floor) {
  BFamilyParts parts;
  parts.ordering = ordering0.empty() ? identity_ordering(raw.q()) : ordering0;
  parts.data = coarsen_monotone(raw, parts.ordering);
  const ObservedDataset& d = parts.data;
  const int q = d.q();
  parts.ns = fit_nuisances_mnar_b(d, specs, a, parts.ordering, p_floor);
  parts.rbar = cumulative_rl_indicators(d, parts.ordering);
  for (int k = 0; k <= q; ++k) parts.rows_k.push_back(rows_where(parts.rbar.col(k)));
  const ArrayXi top = parts.rbar.col(q) * d.r_a;
  parts.rows_s = rows_where(exposure_stratum(d, top, a));

  const double nan = std::numeric_limits<double>::quiet_NaN();
  parts.cum_prl.assign(static_cast<std::size_t>(q) + 1, VectorXd::Constant(d.n(), nan));
  parts.cum_prl[0] = VectorXd::Ones(d.n());
  for (int k = 1; k <= q; ++k) {
    PositivityStat stat{"pi_rl" + std::to_string(k), 1.0, 0.0, 0, 0};
    const VectorXd pk = floor_probs(
        parts.ns.pi_rl[static_cast<std::size_t>(k - 1)].predict(d, parts.rows_k[k]), p_floor,
        stat);
    for (std::size_t idx = 0; idx < parts.rows_k[k].size(); ++idx) {
      const int i = parts.rows_k[k][idx];
      parts.cum_prl[k][i] = parts.cum_prl[k - 1][i] * pk[static_cast<Eigen::Index>(idx)];
    }
    parts.rl_stats.push_back(stat);
  }
  return parts;
}

}  // namespace

EstimateResult estimate_ice_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const GroupOrdering& ordering, const EstimatorOptions& opt) {
  BFamilyParts p = prepare_b_family(data, specs, a, ordering, opt.p_floor);
  const ObservedDataset& d = p.data;
  const int q = d.q();
  EstimateResult res;
  res.estimator_id = "ice_b";

  VectorXd t_level = p.ns.outcome.predict(d, p.rows_k[static_cast<std::size_t>(q)],
                                          static_cast<double>(a),
                                          &res.diagnostics.fallback_predictions);
  for (int k = q; k >= 1; --k) {
    auto selectable = lm_group_refs(d, {p.ordering.begin(), p.ordering.begin() + (k - 1)});
    const auto lo = all_lo_refs(d);
    selectable.insert(selectable.end(), lo.begin(), lo.end());
    const FittedModel model =
        FittedModel::fit(d, specs.outcome, {{}, selectable, false},
                         p.rows_k[static_cast<std::size_t>(k)], t_level, Link::Logit);
    t_level = model.predict(d, p.rows_k[static_cast<std::size_t>(k - 1)], std::nullopt,
                            &res.diagnostics.fallback_predictions);
  }
  res.psi_hat = t_level.mean();
  return res;
}

EstimateResult estimate_ipw_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const GroupOrdering& ordering, const EstimatorOptions& opt) {
  BFamilyParts p = prepare_b_family(data, specs, a, ordering, opt.p_floor);
  const ObservedDataset& d = p.data;
  const int q = d.q();
  if (p.rows_s.empty()) throw EmptyStratum("no units with A=a and everything observed");

  EstimateResult res;
  res.estimator_id = "ipw_b";
  res.diagnostics.stratum_counts["targeting"] = static_cast<int>(p.rows_s.size());
  note_small_stratum(res.diagnostics, "targeting", p.rows_s.size(), opt.small_stratum_warn);

  PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
  PositivityStat s_ra{"pi_ra", 1.0, 0.0, 0, 0};
  const VectorXd pa = floor_probs(p.ns.exposure_prob(d, p.rows_s), opt.p_floor, s_a);
  const VectorXd pra = floor_probs(p.ns.pi_ra.predict(d, p.rows_s), opt.p_floor, s_ra);

  double num = 0.0, den = 0.0;
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    const int i = p.rows_s[idx];
    const auto ii = static_cast<Eigen::Index>(idx);
    const double w = 1.0 / (pa[ii] * pra[ii] * p.cum_prl[static_cast<std::size_t>(q)][i]);
    res.diagnostics.positivity.max_combined_weight =
        std::max(res.diagnostics.positivity.max_combined_weight, w);
    num += w * d.y[i];
    den += w;
  }
  if (den <= 0.0) throw DegenerateWeights("ipw_b: weights sum to zero");
  res.psi_hat = num / den;
  res.diagnostics.positivity.models = {s_a, s_ra};
  for (const auto& s : p.rl_stats) res.diagnostics.positivity.models.push_back(s);
  flag_positivity(res.diagnostics);
  return res;
}

EstimateResult estimate_tmle_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                               const GroupOrdering& ordering, const EstimatorOptions& opt) {
  BFamilyParts p = prepare_b_family(data, specs, a, ordering, opt.p_floor);
  const ObservedDataset& d = p.data;
  const int q = d.q();
  const Eigen::Index n = d.n();
  if (p.rows_s.empty()) throw EmptyStratum("no units with A=a and everything observed");

  EstimateResult res;
  res.estimator_id = "tmle_b";
  for (int k = 0; k <= q; ++k) {
    res.diagnostics.stratum_counts["rbar_" + std::to_string(k)] =
        static_cast<int>(p.rows_k[static_cast<std::size_t>(k)].size());
  }
  res.diagnostics.stratum_counts["targeting"] = static_cast<int>(p.rows_s.size());
  note_small_stratum(res.diagnostics, "targeting", p.rows_s.size(), opt.small_stratum_warn);

  PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
  PositivityStat s_ra{"pi_ra", 1.0, 0.0, 0, 0};
  const VectorXd pa_s = floor_probs(p.ns.exposure_prob(d, p.rows_s), opt.p_floor, s_a);
  const VectorXd pra_s = floor_probs(p.ns.pi_ra.predict(d, p.rows_s), opt.p_floor, s_ra);
  VectorXd w_s(static_cast<Eigen::Index>(p.rows_s.size()));
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    const auto ii = static_cast<Eigen::Index>(idx);
    w_s[ii] = 1.0 / (pa_s[ii] * pra_s[ii] * p.cum_prl[static_cast<std::size_t>(q)][p.rows_s[idx]]);
    res.diagnostics.positivity.max_combined_weight =
        std::max(res.diagnostics.positivity.max_combined_weight, w_s[ii]);
  }

  // Initial outcome predictions at A = a among all covariates observed.
  const auto& rows_q = p.rows_k[static_cast<std::size_t>(q)];
  const std::vector<int> pos_q = position_map(n, rows_q);
  const VectorXd tq_0 = p.ns.outcome.predict(d, rows_q, static_cast<double>(a),
                                             &res.diagnostics.fallback_predictions);
  const VectorXd tq_0_logit = logit_vec(tq_0);

  VectorXd offs_s(static_cast<Eigen::Index>(p.rows_s.size()));
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    offs_s[static_cast<Eigen::Index>(idx)] = tq_0_logit[pos_q[p.rows_s[idx]]];
  }
  const FluctuationFit fl_top = fluctuate(subset(d.y, p.rows_s), offs_s, w_s);
  res.epsilons.push_back(fl_top.epsilon);
  if (!fl_top.converged) res.diagnostics.warnings.push_back("top fluctuation clamped");

  // t_star[k] is aligned with rows_k[k].
  std::vector<VectorXd> t_star(static_cast<std::size_t>(q) + 1);
  t_star[static_cast<std::size_t>(q)] = expit_shift(tq_0_logit, fl_top.epsilon);

  for (int k = q; k >= 1; --k) {
    const auto& rows_cur = p.rows_k[static_cast<std::size_t>(k)];
    const auto& rows_next = p.rows_k[static_cast<std::size_t>(k - 1)];
    auto selectable = lm_group_refs(d, {p.ordering.begin(), p.ordering.begin() + (k - 1)});
    const auto lo = all_lo_refs(d);
    selectable.insert(selectable.end(), lo.begin(), lo.end());

    const FittedModel model =
        FittedModel::fit(d, specs.outcome, {{}, selectable, false}, rows_cur,
                         t_star[static_cast<std::size_t>(k)], Link::Logit);
    const VectorXd t0_on_cur = model.predict(d, rows_cur, std::nullopt,
                                             &res.diagnostics.fallback_predictions);
    VectorXd w_k(static_cast<Eigen::Index>(rows_cur.size()));
    for (std::size_t idx = 0; idx < rows_cur.size(); ++idx) {
      w_k[static_cast<Eigen::Index>(idx)] =
          1.0 / p.cum_prl[static_cast<std::size_t>(k)][rows_cur[idx]];
    }
    const FluctuationFit fl = fluctuate(t_star[static_cast<std::size_t>(k)], logit_vec(t0_on_cur),
                                        w_k);
    res.epsilons.push_back(fl.epsilon);
    if (!fl.converged) {
      res.diagnostics.warnings.push_back("level-" + std::to_string(k) + " fluctuation clamped");
    }
    const VectorXd t0_on_next = model.predict(d, rows_next, std::nullopt,
                                              &res.diagnostics.fallback_predictions);
    t_star[static_cast<std::size_t>(k - 1)] = expit_shift(logit_vec(t0_on_next), fl.epsilon);
  }

  res.psi_hat = t_star[0].mean();

  // Influence values: plug-in of the MNAR-B influence function.
  VectorXd phi = t_star[0].array() - res.psi_hat;
  for (int k = 1; k <= q; ++k) {
    const auto& rows_cur = p.rows_k[static_cast<std::size_t>(k)];
    const std::vector<int> pos_next = position_map(n, p.rows_k[static_cast<std::size_t>(k - 1)]);
    for (std::size_t idx = 0; idx < rows_cur.size(); ++idx) {
      const int i = rows_cur[idx];
      phi[i] += (t_star[static_cast<std::size_t>(k)][static_cast<Eigen::Index>(idx)] -
                 t_star[static_cast<std::size_t>(k - 1)][pos_next[i]]) /
                p.cum_prl[static_cast<std::size_t>(k)][i];
    }
  }
  for (std::size_t idx = 0; idx < p.rows_s.size(); ++idx) {
    const int i = p.rows_s[idx];
    phi[i] += w_s[static_cast<Eigen::Index>(idx)] *
              (d.y[i] - t_star[static_cast<std::size_t>(q)][pos_q[i]]);
  }
  res.influence_values = phi;
  res.diagnostics.positivity.models = {s_a, s_ra};
  for (const auto& s : p.rl_stats) res.diagnostics.positivity.models.push_back(s);
  flag_positivity(res.diagnostics);
  return res;
}

CausalContrast contrast(const EstimateResult& r1, const EstimateResult& r0, ContrastKind kind) {
  CausalContrast out;
  out.kind = kind;
  out.component_1 = r1.psi_hat;
  out.component_0 = r0.psi_hat;
  out.value = r1.psi_hat - r0.psi_hat;
  if (r1.has_influence() && r0.has_influence()) {
    if (r1.influence_values.size() != r0.influence_values.size()) {
      throw MismatchedData("contrast: influence vectors have different lengths");
    }
    out.influence_values = r1.influence_values - r0.influence_values;
  }
  return out;
}

}  // namespace mcausal
