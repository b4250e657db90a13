#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcausal/common.hpp"

namespace mcausal {

// Observed data for one study:
//   y    outcome, binary, fully observed
//   a    exposure, binary, present iff r_a == 1 (NaN otherwise)
//   l_o  fully observed numeric covariates
//   l_m  partially observed numeric covariates, organized in q groups; a
//        group is one conceptual covariate (a categorical variable encoded
//        as several indicator columns shares one observation indicator)
//   r_a  exposure observation indicator
//   r_l  per-group observation indicators (n x q); cell values in a group
//        are NaN wherever the group indicator is 0
//
// Instances are immutable after construction; every transform returns a copy.
struct ObservedDataset {
  VectorXd y;
  VectorXd a;
  MatrixXd l_o;
  MatrixXd l_m;
  ArrayXi r_a;
  Eigen::ArrayXXi r_l;

  std::string y_name = "y";
  std::string a_name = "a";
  std::vector<std::string> l_o_names;
  std::vector<std::string> l_m_names;              // one per l_m column
  std::vector<std::vector<int>> l_m_groups;        // q groups of column indices
  std::vector<std::string> group_names;            // one per group

  Eigen::Index n() const { return y.size(); }
  int q() const { return static_cast<int>(l_m_groups.size()); }
  int n_lo() const { return static_cast<int>(l_o.cols()); }

  // Throws DataError (or NonBinary) when any structural invariant fails.
  void validate() const;

  // True when no unit has a missing exposure or covariate.
  bool fully_observed() const;
};

// Internally reorders nothing; `ordering[pos]` is the l_m group at position
// pos (0-based permutation of 0..q-1).
using GroupOrdering = std::vector<int>;

GroupOrdering identity_ordering(int q);
bool is_valid_ordering(const GroupOrdering& ordering, int q);

enum class SchemeVariant { SimultaneousBlock, SeparateBlock, SequentialCovariates };

struct MissingnessScheme {
  SchemeVariant variant = SchemeVariant::SeparateBlock;
  GroupOrdering ordering;  // SequentialCovariates only; empty = identity
};

// Marks group k missing whenever an earlier-ordered group is missing, and
// drops the corresponding values. Idempotent.
ObservedDataset coarsen_monotone(const ObservedDataset& data, const GroupOrdering& ordering);

// Collapses all indicators to a single R = r_a * prod_k r_l[k]; units with
// R = 0 lose the exposure and every l_m value.
ObservedDataset collapse_block(const ObservedDataset& data);

// Collapses only the covariate indicators to their product, leaving r_a
// untouched (the separate-indicator form with one covariate block).
ObservedDataset to_block_rl(const ObservedDataset& data);

// Applies the transform a scheme calls for; SeparateBlock maps to
// to_block_rl, SequentialCovariates to coarsen_monotone.
ObservedDataset apply_scheme(const ObservedDataset& data, const MissingnessScheme& scheme);

// Keeps only the given rows (bootstrap resampling, complete-case subsets).
ObservedDataset take_rows(const ObservedDataset& data, const std::vector<int>& rows);

// ---------------------------------------------------------------------------
// CSV ingestion (RFC-4180 style, header row required)
// ---------------------------------------------------------------------------

struct CsvConfig {
  std::string outcome;
  std::string exposure;
  std::vector<std::string> l_o;
  std::vector<std::vector<std::string>> l_m;  // one inner list per group
  std::string missing_sentinel;               // "" = empty cell
};

ObservedDataset load_csv(const std::string& path, const CsvConfig& config);
void write_csv(const ObservedDataset& data, const std::string& path,
               const std::string& missing_sentinel = "");

// Canonical cell formatting used by write_csv (integers print without a
// decimal point, everything else shortest round-trip).
std::string format_cell(double v);

}  // namespace mcausal
