#pragma once

#include "mcausal/common.hpp"

namespace mcausal {

enum class Link { Logit, Identity };

struct GlmOptions {
  double tol = 1e-8;          // max absolute coefficient change
  int max_iter = 100;
  double coef_clamp = 30.0;   // separation guard on the logit scale
  double ridge = 1e-8;        // added to the Gram diagonal when near-singular
  double rcond_min = 1e-12;   // LDLT diagonal ratio below which we ridge
};

struct GlmFit {
  Link link = Link::Logit;
  VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  bool ridged = false;
  bool clamped = false;

  // Cell-indicator fits only: linear-scale value used for cells never seen
  // during fitting, and how many such cells exist.
  double fallback_linear = 0.0;
  int empty_cells = 0;
};

struct FluctuationFit {
  double epsilon = 0.0;
  bool converged = false;
};

// Weighted (quasi-)likelihood GLM with fixed offset, fit by Newton/IRLS.
// Fractional responses in [0,1] are allowed with the logit link; the score
// equations match the Bernoulli case. Deterministic given inputs.
GlmFit fit_glm(const MatrixXd& design, const VectorXd& response, const VectorXd& weights,
               const VectorXd& offset, Link link, const GlmOptions& options = {});

// Exact maximizer for a design of mutually exclusive cell indicators: one
// coefficient per cell, equal to the link of the weighted cell mean. Rows
// with cell id -1 are ignored. Same contract as fit_glm on the equivalent
// one-hot design, at O(n) cost.
GlmFit fit_glm_cells(const VectorXi& cell_ids, int n_cells, const VectorXd& response,
                     const VectorXd& weights, Link link, const GlmOptions& options = {});

// Inverse link of design * coefficients + offset. Logit-link outputs are
// strictly inside (0,1).
VectorXd predict(const GlmFit& fit, const MatrixXd& design, const VectorXd& offset);

// Cell-fit prediction; rows with unknown cells (-1 or never fitted) receive
// the fallback value. `fallback_rows`, when given, counts them.
VectorXd predict_cells(const GlmFit& fit, const VectorXi& cell_ids, int* fallback_rows = nullptr);

// Solves sum_i w_i * (y_i - expit(offset_i + eps)) = 0 for the single
// fluctuation parameter. When the score has no root in [-delta_max,
// delta_max] (all-0 or all-1 responses), epsilon is clamped to the boundary
// and converged is false.
FluctuationFit fluctuate(const VectorXd& response, const VectorXd& offset_logits,
                         const VectorXd& weights, double delta_max = 10.0);

// Model-based covariance of the coefficients at the fit, (X' W X)^{-1} with
// W the IRLS information weights (identity link: scaled by the weighted
// residual mean square).
MatrixXd glm_covariance(const GlmFit& fit, const MatrixXd& design, const VectorXd& response,
                        const VectorXd& weights, const VectorXd& offset);

}  // namespace mcausal
