#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcausal/dataset.hpp"
#include "mcausal/glm.hpp"

namespace mcausal {

// How to build one nuisance regression. `covariate_selector` restricts the
// selectable predictors by column name (nullopt = use everything available
// at the fitting point; an empty list = intercept only). `saturated` swaps
// the linear design for one indicator per observed predictor cell, which on
// discrete data makes the fit equal the empirical conditional frequencies.
struct ModelSpec {
  std::optional<std::vector<std::string>> covariate_selector;
  bool include_interactions = false;
  bool saturated = false;

  static ModelSpec all() { return {}; }
  static ModelSpec saturated_all() {
    ModelSpec s;
    s.saturated = true;
    return s;
  }
  static ModelSpec with(std::vector<std::string> names, bool saturated = false) {
    ModelSpec s;
    s.covariate_selector = std::move(names);
    s.saturated = saturated;
    return s;
  }
};

struct ColumnRef {
  enum class Src { LO, LM };
  Src src;
  int col;
};

// Predictors available to one regression. `always` is the conditioning set
// pinned by the identifying formula; `selectable` is what a ModelSpec may
// trim (misspecification arms drop columns here).
struct PredictorSet {
  std::vector<ColumnRef> always;
  std::vector<ColumnRef> selectable;
  bool include_exposure = false;
};

ColumnRef lo_ref(int col);
ColumnRef lm_ref(int col);
std::vector<ColumnRef> all_lo_refs(const ObservedDataset& data);
std::vector<ColumnRef> lm_group_refs(const ObservedDataset& data, const std::vector<int>& groups);
const std::string& column_name(const ObservedDataset& data, const ColumnRef& ref);

// Checks that every selector name exists in the dataset at all.
void validate_selector(const ObservedDataset& data, const ModelSpec& spec);

// A fitted regression together with the recipe for rebuilding its design,
// so predictions can be made on any rows of a structurally identical
// dataset (optionally with the exposure overridden).
class FittedModel {
 public:
  // `response` is aligned with `fit_rows`. All predictor values must be
  // observed on the fitting rows.
  static FittedModel fit(const ObservedDataset& data, const ModelSpec& spec,
                         const PredictorSet& predictors, const std::vector<int>& fit_rows,
                         const VectorXd& response, Link link);

  // Predicted mean for each row in `rows`; `a_override` substitutes the
  // exposure column. `fallback_rows` accumulates how many predictions came
  // from cells never seen at fit time.
  VectorXd predict(const ObservedDataset& data, const std::vector<int>& rows,
                   std::optional<double> a_override = std::nullopt,
                   int* fallback_rows = nullptr) const;

  const GlmFit& glm() const { return fit_; }
  const std::vector<int>& fit_rows() const { return fit_rows_; }
  bool saturated() const { return saturated_; }

 private:
  std::vector<ColumnRef> columns_;  // resolved predictors, in design order
  bool include_exposure_ = false;
  bool saturated_ = false;
  bool interactions_ = false;
  GlmFit fit_;
  std::vector<int> fit_rows_;

  // Saturated path: either bit-packed binary cells or first-seen hashed keys.
  bool binary_cells_ = false;
  int n_cells_ = 0;
  std::vector<std::vector<double>> cell_keys_;  // hashed path, id = index

  MatrixXd gather(const ObservedDataset& data, const std::vector<int>& rows,
                  std::optional<double> a_override) const;
  MatrixXd build_design(const MatrixXd& values) const;
  VectorXi assign_cells(const MatrixXd& values, bool building);
  VectorXi lookup_cells(const MatrixXd& values) const;
};

}  // namespace mcausal
