#include "mcausal/glm.hpp"

#include <cmath>

#include "mcausal/errors.hpp"

namespace mcausal {

namespace {

constexpr double kEtaClamp = 36.0;  // expit(+-36) is still strictly inside (0,1)

double safe_log(double x) { return std::log(std::max(x, 1e-300)); }

double deviance_of(Link link, const VectorXd& y, const VectorXd& mu, const VectorXd& w) {
  double dev = 0.0;
  if (link == Link::Logit) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      dev += -2.0 * w[i] * (y[i] * safe_log(mu[i]) + (1.0 - y[i]) * safe_log(1.0 - mu[i]));
    }
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double r = y[i] - mu[i];
      dev += w[i] * r * r;
    }
  }
  return dev;
}

void check_inputs(Eigen::Index n, Eigen::Index rows, const VectorXd& response,
                  const VectorXd& weights, const VectorXd& offset, Link link) {
  if (rows != n || weights.size() != n || offset.size() != n) {
    throw DimensionMismatch("fit_glm: design/response/weights/offset sizes disagree");
  }
  bool any_positive = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights[i] < 0.0) throw Error("fit_glm: negative weight");
    if (weights[i] > 0.0) any_positive = true;
    if (link == Link::Logit && (response[i] < 0.0 || response[i] > 1.0)) {
      throw Error("fit_glm: logit link requires responses in [0,1]");
    }
  }
  if (!any_positive) throw NoPositiveWeight("fit_glm: all weights are zero");
}

// Solves G x = b, ridging the diagonal when G is numerically rank deficient.
VectorXd solve_gram(MatrixXd G, const VectorXd& b, const GlmOptions& opt, bool* ridged) {
  Eigen::LDLT<MatrixXd> ldlt(G);
  const VectorXd d = ldlt.vectorD().cwiseAbs();
  const double dmax = d.maxCoeff();
  const bool singular = ldlt.info() != Eigen::Success || dmax <= 0.0 ||
                        d.minCoeff() < opt.rcond_min * dmax;
  if (singular) {
    *ridged = true;
    const double scale = std::max(dmax, 1.0);
    G.diagonal().array() += opt.ridge * scale;
    ldlt.compute(G);
    if (ldlt.info() != Eigen::Success) {
      throw SingularDesign("fit_glm: Gram matrix not factorizable after ridge fallback");
    }
  }
  VectorXd x = ldlt.solve(b);
  if (!x.allFinite()) {
    throw SingularDesign("fit_glm: non-finite solve; design is rank deficient beyond repair");
  }
  return x;
}

}  // namespace

GlmFit fit_glm(const MatrixXd& design, const VectorXd& response, const VectorXd& weights,
               const VectorXd& offset, Link link, const GlmOptions& opt) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  check_inputs(n, response.size(), response, weights, offset, link);

  GlmFit fit;
  fit.link = link;
  fit.coefficients = VectorXd::Zero(p);

  if (link == Link::Identity) {
    const MatrixXd wx = weights.asDiagonal() * design;
    const MatrixXd gram = design.transpose() * wx;
    const VectorXd rhs = wx.transpose() * (response - offset);
    fit.coefficients = solve_gram(gram, rhs, opt, &fit.ridged);
    fit.converged = true;
    fit.iterations = 1;
    fit.deviance = deviance_of(link, response, design * fit.coefficients + offset, weights);
    return fit;
  }

  VectorXd beta = VectorXd::Zero(p);
  VectorXd eta(n), mu(n), irls_w(n), score_resid(n);
  bool clamped = false;
  int iter = 0;
  for (; iter < opt.max_iter; ++iter) {
    eta = design * beta + offset;
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(std::clamp(eta[i], -kEtaClamp, kEtaClamp));
      irls_w[i] = weights[i] * mu[i] * (1.0 - mu[i]);
      score_resid[i] = weights[i] * (response[i] - mu[i]);
    }
    const MatrixXd gram = design.transpose() * irls_w.asDiagonal() * design;
    const VectorXd score = design.transpose() * score_resid;
    const VectorXd step = solve_gram(gram, score, opt, &fit.ridged);

    VectorXd next = beta + step;
    bool clamped_now = false;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (std::abs(next[j]) > opt.coef_clamp) {
        next[j] = std::clamp(next[j], -opt.coef_clamp, opt.coef_clamp);
        clamped_now = true;
      }
    }
    const double delta = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    clamped = clamped_now;
    if (delta < opt.tol) {
      ++iter;
      break;
    }
  }

  fit.coefficients = beta;
  fit.iterations = iter;
  fit.clamped = clamped;
  fit.converged = !clamped && iter < opt.max_iter;
  if (iter == opt.max_iter) fit.converged = false;
  eta = design * beta + offset;
  for (Eigen::Index i = 0; i < n; ++i) mu[i] = expit(std::clamp(eta[i], -kEtaClamp, kEtaClamp));
  fit.deviance = deviance_of(link, response, mu, weights);
  return fit;
}

GlmFit fit_glm_cells(const VectorXi& cell_ids, int n_cells, const VectorXd& response,
                     const VectorXd& weights, Link link, const GlmOptions& opt) {
  const Eigen::Index n = cell_ids.size();
  if (response.size() != n || weights.size() != n) {
    throw DimensionMismatch("fit_glm_cells: sizes disagree");
  }
  if (n_cells <= 0) throw DimensionMismatch("fit_glm_cells: no cells");

  VectorXd sw = VectorXd::Zero(n_cells);
  VectorXd swy = VectorXd::Zero(n_cells);
  double total_w = 0.0, total_wy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = cell_ids[i];
    if (c < 0) continue;
    if (c >= n_cells) throw DimensionMismatch("fit_glm_cells: cell id out of range");
    if (weights[i] < 0.0) throw Error("fit_glm_cells: negative weight");
    if (link == Link::Logit && (response[i] < 0.0 || response[i] > 1.0)) {
      throw Error("fit_glm_cells: logit link requires responses in [0,1]");
    }
    sw[c] += weights[i];
    swy[c] += weights[i] * response[i];
    total_w += weights[i];
    total_wy += weights[i] * response[i];
  }
  if (total_w <= 0.0) throw NoPositiveWeight("fit_glm_cells: all weights are zero");

  GlmFit fit;
  fit.link = link;
  fit.coefficients = VectorXd::Zero(n_cells);
  const double global_mean = total_wy / total_w;
  fit.fallback_linear =
      link == Link::Logit
          ? std::clamp(logit(std::clamp(global_mean, 1e-12, 1.0 - 1e-12)), -opt.coef_clamp,
                       opt.coef_clamp)
          : global_mean;

  for (int c = 0; c < n_cells; ++c) {
    if (sw[c] <= 0.0) {
      fit.coefficients[c] = fit.fallback_linear;
      ++fit.empty_cells;
      continue;
    }
    const double mean = swy[c] / sw[c];
    if (link == Link::Identity) {
      fit.coefficients[c] = mean;
    } else {
      const double lo = expit(-opt.coef_clamp);
      const double hi = expit(opt.coef_clamp);
      if (mean < lo || mean > hi) {
        fit.coefficients[c] = mean < lo ? -opt.coef_clamp : opt.coef_clamp;
        fit.clamped = true;
      } else {
        fit.coefficients[c] = logit(mean);
      }
    }
  }
  fit.converged = !fit.clamped;
  fit.iterations = 1;

  VectorXd mu(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = cell_ids[i];
    const double lin = c < 0 ? fit.fallback_linear : fit.coefficients[c];
    mu[i] = link == Link::Logit ? expit(lin) : lin;
  }
  fit.deviance = deviance_of(link, response, mu, weights);
  return fit;
}

VectorXd predict(const GlmFit& fit, const MatrixXd& design, const VectorXd& offset) {
  if (design.cols() != fit.coefficients.size()) {
    throw DimensionMismatch("predict: design width does not match coefficients");
  }
  if (offset.size() != design.rows()) {
    throw DimensionMismatch("predict: offset length does not match design");
  }
  VectorXd eta = design * fit.coefficients + offset;
  if (fit.link == Link::Identity) return eta;
  VectorXd out(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    out[i] = expit(std::clamp(eta[i], -kEtaClamp, kEtaClamp));
  }
  return out;
}

VectorXd predict_cells(const GlmFit& fit, const VectorXi& cell_ids, int* fallback_rows) {
  VectorXd out(cell_ids.size());
  int fb = 0;
  for (Eigen::Index i = 0; i < cell_ids.size(); ++i) {
    const int c = cell_ids[i];
    double lin;
    if (c < 0 || c >= fit.coefficients.size()) {
      lin = fit.fallback_linear;
      ++fb;
    } else {
      lin = fit.coefficients[c];
    }
    out[i] = fit.link == Link::Logit ? expit(lin) : lin;
  }
  if (fallback_rows != nullptr) *fallback_rows += fb;
  return out;
}

FluctuationFit fluctuate(const VectorXd& response, const VectorXd& offset_logits,
                         const VectorXd& weights, double delta_max) {
  const Eigen::Index n = response.size();
  if (offset_logits.size() != n || weights.size() != n) {
    throw DimensionMismatch("fluctuate: sizes disagree");
  }
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights[i] < 0.0) throw Error("fluctuate: negative weight");
    wsum += weights[i];
  }
  if (wsum <= 0.0) throw NoPositiveWeight("fluctuate: all weights are zero");

  auto score = [&](double eps) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights[i] == 0.0) continue;
      s += weights[i] * (response[i] - expit(std::clamp(offset_logits[i] + eps, -kEtaClamp, kEtaClamp)));
    }
    return s;
  };

  FluctuationFit out;
  // The score is strictly decreasing in eps; no sign change on the interval
  // means the root is outside and we clamp.
  double lo = -delta_max, hi = delta_max;
  const double s_lo = score(lo), s_hi = score(hi);
  if (s_lo <= 0.0) {
    out.epsilon = lo;
    out.converged = s_lo == 0.0;
    return out;
  }
  if (s_hi >= 0.0) {
    out.epsilon = hi;
    out.converged = s_hi == 0.0;
    return out;
  }

  // Newton with bisection safeguard.
  double eps = 0.0;
  if (eps <= lo || eps >= hi) eps = 0.5 * (lo + hi);
  for (int iter = 0; iter < 100; ++iter) {
    double s = 0.0, d = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights[i] == 0.0) continue;
      const double mu = expit(std::clamp(offset_logits[i] + eps, -kEtaClamp, kEtaClamp));
      s += weights[i] * (response[i] - mu);
      d += weights[i] * mu * (1.0 - mu);
    }
    if (s > 0.0) {
      lo = eps;
    } else {
      hi = eps;
    }
    if (std::abs(s) <= 1e-14 * std::max(1.0, wsum)) {
      out.epsilon = eps;
      out.converged = true;
      return out;
    }
    double next = d > 0.0 ? eps + s / d : 0.5 * (lo + hi);
    if (next <= lo || next >= hi) next = 0.5 * (lo + hi);
    if (std::abs(next - eps) < 1e-16 * std::max(1.0, std::abs(eps))) {
      eps = next;
      break;
    }
    eps = next;
  }
  out.epsilon = eps;
  out.converged = std::abs(score(eps)) <= 1e-10 * std::max(1.0, wsum);
  return out;
}

MatrixXd glm_covariance(const GlmFit& fit, const MatrixXd& design, const VectorXd& response,
                        const VectorXd& weights, const VectorXd& offset) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  VectorXd eta = design * fit.coefficients + offset;
  VectorXd info_w(n);
  if (fit.link == Link::Logit) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = expit(std::clamp(eta[i], -kEtaClamp, kEtaClamp));
      info_w[i] = weights[i] * mu * (1.0 - mu);
    }
  } else {
    info_w = weights;
  }
  MatrixXd gram = design.transpose() * info_w.asDiagonal() * design;
  Eigen::LDLT<MatrixXd> ldlt(gram);
  MatrixXd cov = ldlt.solve(MatrixXd::Identity(p, p));
  if (fit.link == Link::Identity) {
    double rss = 0.0, wtot = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = response[i] - eta[i];
      rss += weights[i] * r * r;
      wtot += weights[i];
    }
    const double dof = std::max(1.0, wtot - static_cast<double>(p));
    cov *= rss / dof;
  }
  return cov;
}

}  // namespace mcausal
