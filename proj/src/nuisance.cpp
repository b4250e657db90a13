#include "mcausal/nuisance.hpp"

#include <algorithm>

#include "mcausal/errors.hpp"

namespace mcausal {

ArrayXi block_rl_indicator(const ObservedDataset& data) {
  ArrayXi block = ArrayXi::Ones(data.n());
  for (int k = 0; k < data.q(); ++k) block *= data.r_l.col(k);
  return block;
}

Eigen::ArrayXXi cumulative_rl_indicators(const ObservedDataset& data,
                                         const GroupOrdering& ordering) {
  const int q = data.q();
  if (!is_valid_ordering(ordering, q)) throw DataError("invalid l_m ordering");
  Eigen::ArrayXXi rbar(data.n(), q + 1);
  rbar.col(0).setOnes();
  for (int k = 1; k <= q; ++k) {
    rbar.col(k) = rbar.col(k - 1) * data.r_l.col(ordering[static_cast<std::size_t>(k - 1)]);
  }
  return rbar;
}

std::vector<int> rows_where(const ArrayXi& mask) {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>((mask == 1).count()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask[i] == 1) rows.push_back(static_cast<int>(i));
  }
  return rows;
}

namespace {

VectorXd subset(const VectorXd& v, const std::vector<int>& rows) {
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

VectorXd to_double(const ArrayXi& v, const std::vector<int>& rows) {
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = static_cast<double>(v[rows[i]]);
  }
  return out;
}

std::vector<int> ordered_groups(const GroupOrdering& ordering, int upto) {
  return {ordering.begin(), ordering.begin() + upto};
}

}  // namespace

VectorXd NuisanceSet::exposure_prob(const ObservedDataset& data,
                                    const std::vector<int>& rows) const {
  VectorXd p = pi_a.predict(data, rows);
  if (a == 0) p = VectorXd::Ones(p.size()) - p;
  return p;
}

NuisanceSet fit_nuisances_mnar_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                                 double p_floor) {
  NuisanceSet ns;
  ns.a = a;
  ns.sequential = false;
  ns.p_floor = p_floor;

  const ArrayXi rl = block_rl_indicator(data);
  const ArrayXi r_full = rl * data.r_a;
  const std::vector<int> all = rows_where(ArrayXi::Ones(data.n()));
  const std::vector<int> rows_rl = rows_where(rl);
  const std::vector<int> rows_r = rows_where(r_full);
  if (rows_rl.empty()) throw EmptyStratum("no units with all covariates observed");
  if (rows_r.empty()) throw EmptyStratum("no units with exposure and covariates observed");

  const auto lo = all_lo_refs(data);
  const auto full_l = [&]() {
    auto refs = lm_group_refs(data, ordered_groups(identity_ordering(data.q()), data.q()));
    refs.insert(refs.end(), lo.begin(), lo.end());
    return refs;
  }();

  // pi_{R_L}(L_O) on all units
  ns.pi_rl.push_back(FittedModel::fit(data, specs.covariate_miss, {{}, lo, false}, all,
                                      to_double(rl, all), Link::Logit));
  // pi_{R_A}(L) among R_L = 1
  ns.pi_ra = FittedModel::fit(data, specs.exposure_miss, {{}, full_l, false}, rows_rl,
                              to_double(data.r_a, rows_rl), Link::Logit);
  // pi_A(L) among R = 1
  ns.pi_a = FittedModel::fit(data, specs.exposure, {{}, full_l, false}, rows_r,
                             subset(data.a, rows_r), Link::Logit);
  // T_1 initial fit: Y on A and L among R = 1, unstratified on A
  ns.outcome = FittedModel::fit(data, specs.outcome, {{}, full_l, true}, rows_r,
                                subset(data.y, rows_r), Link::Logit);
  return ns;
}

NuisanceSet fit_nuisances_mnar_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                                 const GroupOrdering& ordering, double p_floor) {
  const int q = data.q();
  NuisanceSet ns;
  ns.a = a;
  ns.sequential = true;
  ns.ordering = ordering;
  ns.p_floor = p_floor;

  const Eigen::ArrayXXi rbar = cumulative_rl_indicators(data, ordering);
  const auto lo = all_lo_refs(data);

  for (int k = 1; k <= q; ++k) {
    const std::vector<int> rows_prev = rows_where(rbar.col(k - 1));
    if (rows_prev.empty()) {
      throw EmptyStratum("no units with the first " + std::to_string(k - 1) +
                         " ordered covariates observed");
    }
    const auto always = lm_group_refs(data, ordered_groups(ordering, k - 1));
    const int group = ordering[static_cast<std::size_t>(k - 1)];
    VectorXd resp(static_cast<Eigen::Index>(rows_prev.size()));
    for (std::size_t i = 0; i < rows_prev.size(); ++i) {
      resp[static_cast<Eigen::Index>(i)] = static_cast<double>(data.r_l(rows_prev[i], group));
    }
    ns.pi_rl.push_back(
        FittedModel::fit(data, specs.covariate_miss, {always, lo, false}, rows_prev, resp,
                         Link::Logit));
  }

  const ArrayXi rbar_q = rbar.col(q);
  const ArrayXi top = rbar_q * data.r_a;
  const std::vector<int> rows_rbar_q = rows_where(rbar_q);
  const std::vector<int> rows_top = rows_where(top);
  if (rows_rbar_q.empty()) throw EmptyStratum("no units with all ordered covariates observed");
  if (rows_top.empty()) throw EmptyStratum("no units with exposure and covariates observed");

  auto full_l = lm_group_refs(data, ordered_groups(ordering, q));
  full_l.insert(full_l.end(), lo.begin(), lo.end());

  ns.pi_ra = FittedModel::fit(data, specs.exposure_miss, {{}, full_l, false}, rows_rbar_q,
                              to_double(data.r_a, rows_rbar_q), Link::Logit);
  ns.pi_a = FittedModel::fit(data, specs.exposure, {{}, full_l, false}, rows_top,
                             subset(data.a, rows_top), Link::Logit);
  ns.outcome = FittedModel::fit(data, specs.outcome, {{}, full_l, true}, rows_top,
                                subset(data.y, rows_top), Link::Logit);
  return ns;
}

namespace {

void track(PositivityStat& stat, double p, double p_floor) {
  stat.min_prob = std::min(stat.min_prob, std::max(p, p_floor));
  stat.max_prob = std::max(stat.max_prob, p);
  if (p < p_floor) ++stat.floored;
  ++stat.evaluated;
}

}  // namespace

PositivityReport check_positivity(const NuisanceSet& ns, const ObservedDataset& data) {
  PositivityReport report;
  const double pf = ns.p_floor;

  if (!ns.sequential) {
    const ArrayXi rl = block_rl_indicator(data);
    const ArrayXi r_full = rl * data.r_a;
    ArrayXi target = r_full;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      if (target[i] == 1 && data.a[i] != static_cast<double>(ns.a)) target[i] = 0;
    }
    const auto rows_rl = rows_where(rl);
    const auto rows_s = rows_where(target);

    PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
    PositivityStat s_ra{"pi_ra", 1.0, 0.0, 0, 0};
    PositivityStat s_rl{"pi_rl", 1.0, 0.0, 0, 0};
    const VectorXd pa = ns.exposure_prob(data, rows_s);
    const VectorXd pra = ns.pi_ra.predict(data, rows_s);
    const VectorXd prl_s = ns.pi_rl[0].predict(data, rows_s);
    for (Eigen::Index i = 0; i < pa.size(); ++i) {
      track(s_a, pa[i], pf);
      track(s_ra, pra[i], pf);
      const double w = 1.0 / (std::max(pa[i], pf) * std::max(pra[i], pf) * std::max(prl_s[i], pf));
      report.max_combined_weight = std::max(report.max_combined_weight, w);
    }
    const VectorXd prl = ns.pi_rl[0].predict(data, rows_rl);
    for (Eigen::Index i = 0; i < prl.size(); ++i) track(s_rl, prl[i], pf);
    report.models = {s_a, s_ra, s_rl};
    return report;
  }

  const int q = data.q();
  const Eigen::ArrayXXi rbar = cumulative_rl_indicators(data, ns.ordering);
  ArrayXi target = rbar.col(q) * data.r_a;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (target[i] == 1 && data.a[i] != static_cast<double>(ns.a)) target[i] = 0;
  }
  const auto rows_s = rows_where(target);

  PositivityStat s_a{"pi_a", 1.0, 0.0, 0, 0};
  PositivityStat s_ra{"pi_ra", 1.0, 0.0, 0, 0};
  const VectorXd pa = ns.exposure_prob(data, rows_s);
  const VectorXd pra = ns.pi_ra.predict(data, rows_s);
  VectorXd combined = VectorXd::Ones(pa.size());
  for (Eigen::Index i = 0; i < pa.size(); ++i) {
    track(s_a, pa[i], pf);
    track(s_ra, pra[i], pf);
    combined[i] = std::max(pa[i], pf) * std::max(pra[i], pf);
  }
  report.models = {s_a, s_ra};
  for (int k = 1; k <= q; ++k) {
    PositivityStat s_k{"pi_rl" + std::to_string(k), 1.0, 0.0, 0, 0};
    const auto rows_k = rows_where(rbar.col(k));
    const VectorXd p_k = ns.pi_rl[static_cast<std::size_t>(k - 1)].predict(data, rows_k);
    for (Eigen::Index i = 0; i < p_k.size(); ++i) track(s_k, p_k[i], pf);
    const VectorXd p_s = ns.pi_rl[static_cast<std::size_t>(k - 1)].predict(data, rows_s);
    for (Eigen::Index i = 0; i < p_s.size(); ++i) combined[i] *= std::max(p_s[i], pf);
    report.models.push_back(s_k);
  }
  for (Eigen::Index i = 0; i < combined.size(); ++i) {
    report.max_combined_weight = std::max(report.max_combined_weight, 1.0 / combined[i]);
  }
  return report;
}

}  // namespace mcausal
