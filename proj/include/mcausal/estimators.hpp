#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcausal/nuisance.hpp"

namespace mcausal {

struct Diagnostics {
  PositivityReport positivity;
  std::map<std::string, int> stratum_counts;
  std::vector<std::string> warnings;
  int fallback_predictions = 0;  // predictions served from never-fitted cells
};

struct EstimateResult {
  std::string estimator_id;
  double psi_hat = std::numeric_limits<double>::quiet_NaN();
  VectorXd influence_values;      // empty when the estimator has no implemented IF
  std::vector<double> epsilons;   // fluctuation parameters, in algorithm order
  Diagnostics diagnostics;

  bool has_influence() const { return influence_values.size() > 0; }
};

enum class ContrastKind { Difference, ObservedVsCounterfactual };

struct CausalContrast {
  ContrastKind kind;
  double value = 0.0;
  double component_1 = 0.0;  // E(Y^{a=1}) or observed mean
  double component_0 = 0.0;  // E(Y^{a=0}) / counterfactual component
  VectorXd influence_values;  // empty unless both components carry IFs
};

// Standard one-step TMLE of E(Y^a) for fully observed data: outcome
// regression, logit fluctuation weighted by the inverse propensity among
// A = a, then the mean of the targeted predictions.
EstimateResult tmle_complete_data(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                                  const EstimatorOptions& options = {});

// Drops every unit with any missing entry, then runs tmle_complete_data.
// Influence values are per retained unit.
EstimateResult estimate_complete_case(const ObservedDataset& data, const NuisanceSpecs& specs,
                                      int a, const EstimatorOptions& options = {});

// Plug-in (no targeting) evaluations of the identifying functionals:
// regression chain only, inference by bootstrap.
EstimateResult estimate_ice_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const EstimatorOptions& options = {});
EstimateResult estimate_ice_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const GroupOrdering& ordering, const EstimatorOptions& options = {});

// Hajek-normalized inverse-probability-weighted means.
EstimateResult estimate_ipw_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const EstimatorOptions& options = {});
EstimateResult estimate_ipw_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                              const GroupOrdering& ordering, const EstimatorOptions& options = {});

// Doubly robust targeted estimators with per-unit influence values.
EstimateResult estimate_tmle_a(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                               const EstimatorOptions& options = {});
EstimateResult estimate_tmle_b(const ObservedDataset& data, const NuisanceSpecs& specs, int a,
                               const GroupOrdering& ordering, const EstimatorOptions& options = {});

// Pseudo-result for the observed outcome mean; pairs with a counterfactual
// estimate in observed-vs-counterfactual contrasts.
EstimateResult observed_mean_result(const ObservedDataset& data);

CausalContrast contrast(const EstimateResult& r1, const EstimateResult& r0, ContrastKind kind);

}  // namespace mcausal
