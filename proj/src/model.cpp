#include "mcausal/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

#include "mcausal/errors.hpp"

namespace mcausal {

ColumnRef lo_ref(int col) { return {ColumnRef::Src::LO, col}; }
ColumnRef lm_ref(int col) { return {ColumnRef::Src::LM, col}; }

std::vector<ColumnRef> all_lo_refs(const ObservedDataset& data) {
  std::vector<ColumnRef> refs;
  for (int c = 0; c < data.n_lo(); ++c) refs.push_back(lo_ref(c));
  return refs;
}

std::vector<ColumnRef> lm_group_refs(const ObservedDataset& data, const std::vector<int>& groups) {
  std::vector<ColumnRef> refs;
  for (int g : groups) {
    for (int c : data.l_m_groups[g]) refs.push_back(lm_ref(c));
  }
  return refs;
}

const std::string& column_name(const ObservedDataset& data, const ColumnRef& ref) {
  return ref.src == ColumnRef::Src::LO ? data.l_o_names[ref.col] : data.l_m_names[ref.col];
}

void validate_selector(const ObservedDataset& data, const ModelSpec& spec) {
  if (!spec.covariate_selector) return;
  std::unordered_set<std::string> known(data.l_o_names.begin(), data.l_o_names.end());
  known.insert(data.l_m_names.begin(), data.l_m_names.end());
  for (const auto& name : *spec.covariate_selector) {
    if (!known.count(name)) throw UnknownColumn("model selector references '" + name + "'");
  }
}

namespace {

double column_value(const ObservedDataset& data, int row, const ColumnRef& ref) {
  return ref.src == ColumnRef::Src::LO ? data.l_o(row, ref.col) : data.l_m(row, ref.col);
}

std::vector<ColumnRef> resolve_columns(const ObservedDataset& data, const ModelSpec& spec,
                                       const PredictorSet& predictors) {
  std::vector<ColumnRef> cols = predictors.always;
  if (!spec.covariate_selector) {
    cols.insert(cols.end(), predictors.selectable.begin(), predictors.selectable.end());
    return cols;
  }
  const auto& wanted = *spec.covariate_selector;
  for (const auto& ref : predictors.selectable) {
    const std::string& name = column_name(data, ref);
    if (std::find(wanted.begin(), wanted.end(), name) != wanted.end()) cols.push_back(ref);
  }
  return cols;
}

}  // namespace

MatrixXd FittedModel::gather(const ObservedDataset& data, const std::vector<int>& rows,
                             std::optional<double> a_override) const {
  const int p = static_cast<int>(columns_.size()) + (include_exposure_ ? 1 : 0);
  MatrixXd values(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    int j = 0;
    if (include_exposure_) values(i, j++) = a_override.value_or(data.a[r]);
    for (const auto& ref : columns_) values(i, j++) = column_value(data, r, ref);
  }
  return values;
}

MatrixXd FittedModel::build_design(const MatrixXd& values) const {
  const Eigen::Index n = values.rows();
  const Eigen::Index p = values.cols();
  Eigen::Index extra = 0;
  if (interactions_) extra = p * (p - 1) / 2;
  MatrixXd design(n, 1 + p + extra);
  design.col(0).setOnes();
  design.middleCols(1, p) = values;
  if (interactions_) {
    Eigen::Index j = 1 + p;
    for (Eigen::Index u = 0; u < p; ++u) {
      for (Eigen::Index v = u + 1; v < p; ++v) {
        design.col(j++) = values.col(u).cwiseProduct(values.col(v));
      }
    }
  }
  return design;
}

VectorXi FittedModel::assign_cells(const MatrixXd& values, bool building) {
  if (!building) return lookup_cells(values);
  const Eigen::Index n = values.rows();
  const Eigen::Index p = values.cols();
  VectorXi ids(n);
  if (binary_cells_) return lookup_cells(values);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> key(p);
    for (Eigen::Index j = 0; j < p; ++j) key[j] = values(i, j);
    auto it = std::find(cell_keys_.begin(), cell_keys_.end(), key);
    if (it != cell_keys_.end()) {
      ids[i] = static_cast<int>(it - cell_keys_.begin());
    } else {
      cell_keys_.push_back(key);
      ids[i] = static_cast<int>(cell_keys_.size()) - 1;
      if (cell_keys_.size() > 4096) {
        throw Error("saturated model has more than 4096 cells; predictors look continuous");
      }
    }
  }
  return ids;
}

VectorXi FittedModel::lookup_cells(const MatrixXd& values) const {
  const Eigen::Index n = values.rows();
  const Eigen::Index p = values.cols();
  VectorXi ids(n);
  if (binary_cells_) {
    for (Eigen::Index i = 0; i < n; ++i) {
      int id = 0;
      bool ok = true;
      for (Eigen::Index j = 0; j < p; ++j) {
        const double v = values(i, j);
        if (v == 1.0) {
          id |= 1 << j;
        } else if (v != 0.0) {
          ok = false;
          break;
        }
      }
      ids[i] = ok ? id : -1;
    }
    return ids;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> key(p);
    for (Eigen::Index j = 0; j < p; ++j) key[j] = values(i, j);
    const auto it = std::find(cell_keys_.begin(), cell_keys_.end(), key);
    ids[i] = it == cell_keys_.end() ? -1 : static_cast<int>(it - cell_keys_.begin());
  }
  return ids;
}

FittedModel FittedModel::fit(const ObservedDataset& data, const ModelSpec& spec,
                             const PredictorSet& predictors, const std::vector<int>& fit_rows,
                             const VectorXd& response, Link link) {
  if (static_cast<Eigen::Index>(fit_rows.size()) != response.size()) {
    throw DimensionMismatch("FittedModel::fit: rows/response sizes disagree");
  }
  if (fit_rows.empty()) throw EmptyStratum("FittedModel::fit: no rows to fit on");
  validate_selector(data, spec);

  FittedModel model;
  model.columns_ = resolve_columns(data, spec, predictors);
  model.include_exposure_ = predictors.include_exposure;
  model.saturated_ = spec.saturated;
  model.interactions_ = spec.include_interactions && !spec.saturated;
  model.fit_rows_ = fit_rows;

  const MatrixXd values = model.gather(data, fit_rows, std::nullopt);
  if (!values.allFinite()) {
    throw DataError("FittedModel::fit: predictor missing on a fitting row");
  }
  const VectorXd weights = VectorXd::Ones(values.rows());

  if (model.saturated_) {
    // Bit packing applies when every predictor value is 0/1 on the fitting
    // rows (and the cell space stays small).
    const int p = static_cast<int>(values.cols());
    bool binary = p <= 20;
    if (binary) {
      for (Eigen::Index i = 0; i < values.size() && binary; ++i) {
        const double v = values.data()[i];
        binary = v == 0.0 || v == 1.0;
      }
    }
    model.binary_cells_ = binary;
    const VectorXi ids = model.assign_cells(values, true);
    model.n_cells_ = binary ? (1 << p) : static_cast<int>(model.cell_keys_.size());
    model.fit_ = fit_glm_cells(ids, std::max(model.n_cells_, 1), response, weights, link);
  } else {
    const MatrixXd design = model.build_design(values);
    const VectorXd offset = VectorXd::Zero(design.rows());
    model.fit_ = fit_glm(design, response, weights, offset, link);
  }
  return model;
}

VectorXd FittedModel::predict(const ObservedDataset& data, const std::vector<int>& rows,
                              std::optional<double> a_override, int* fallback_rows) const {
  const MatrixXd values = gather(data, rows, a_override);
  if (!values.allFinite()) {
    throw DataError("FittedModel::predict: predictor missing on a prediction row");
  }
  if (saturated_) {
    return predict_cells(fit_, lookup_cells(values), fallback_rows);
  }
  const MatrixXd design = build_design(values);
  return mcausal::predict(fit_, design, VectorXd::Zero(design.rows()));
}

}  // namespace mcausal
