#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcausal/model.hpp"

namespace mcausal {

// One ModelSpec per nuisance family. `outcome` governs the outcome
// regression and every downstream chain regression; `covariate_miss` governs
// the covariate-missingness model(s), whose conditioning on earlier-ordered
// covariates is fixed by the identifying formula and not selectable.
struct NuisanceSpecs {
  ModelSpec outcome;
  ModelSpec exposure;
  ModelSpec exposure_miss;
  ModelSpec covariate_miss;

  static NuisanceSpecs saturated() {
    return {ModelSpec::saturated_all(), ModelSpec::saturated_all(), ModelSpec::saturated_all(),
            ModelSpec::saturated_all()};
  }
};

struct PositivityStat {
  std::string model;
  double min_prob = 1.0;
  double max_prob = 0.0;
  int floored = 0;
  int evaluated = 0;
};

struct PositivityReport {
  std::vector<PositivityStat> models;
  double max_combined_weight = 0.0;
  int total_floored() const {
    int t = 0;
    for (const auto& m : models) t += m.floored;
    return t;
  }
};

// Exposure propensity, missingness models and the first outcome regression,
// fit on the strata the corresponding estimation algorithm prescribes.
// `sequential` distinguishes per-covariate missingness models (one per l_m
// group, in `ordering` order) from the single block model.
struct NuisanceSet {
  int a = 1;
  bool sequential = false;
  GroupOrdering ordering;
  double p_floor = 0.01;

  FittedModel pi_a;                  // P(A=a | R=1, L), stored as P(A=1 | .)
  FittedModel pi_ra;                 // P(R_A=1 | L, covariates observed)
  std::vector<FittedModel> pi_rl;    // block: one fit; sequential: q fits
  FittedModel outcome;               // E(Y | A, L) on the fully observed stratum

  // P(A=a | ...) on the given rows (transforms the stored P(A=1 | .)).
  VectorXd exposure_prob(const ObservedDataset& data, const std::vector<int>& rows) const;
};

struct EstimatorOptions {
  double p_floor = 0.01;
  int small_stratum_warn = 5;
};

// Block covariate indicator prod_k r_l[k] per unit.
ArrayXi block_rl_indicator(const ObservedDataset& data);

// Cumulative indicator prod_{j<=k} r_l[ordering[j-1]] for k = 0..q (k = 0 is
// all ones). Column k of the result corresponds to Rbar_k.
Eigen::ArrayXXi cumulative_rl_indicators(const ObservedDataset& data,
                                         const GroupOrdering& ordering);

std::vector<int> rows_where(const ArrayXi& mask);

// Table-1 step A (plus the initial outcome regression of step B): block
// covariate-missingness model on L_O over all units, exposure-missingness on
// full L among R_L = 1, exposure model and outcome regression among R = 1.
NuisanceSet fit_nuisances_mnar_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                                 double p_floor = 0.01);

// Table-2 step A/B: per-covariate missingness models fit recursively on the
// monotone strata, exposure models among the fully observed, outcome
// regression among R_A = 1 and all covariates observed.
NuisanceSet fit_nuisances_mnar_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                                 const GroupOrdering& ordering, double p_floor = 0.01);

// Diagnostics over the units where each fitted probability enters a weight:
// min/max, floored counts, and the largest combined inverse-probability
// weight.
PositivityReport check_positivity(const NuisanceSet& ns, const ObservedDataset& data);

}  // namespace mcausal
