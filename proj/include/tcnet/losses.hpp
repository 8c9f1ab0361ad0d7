#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tcnet/matrix.hpp"
#include "tcnet/tape.hpp"

namespace tcnet {

enum class LambdaMode { Fixed, EpochVarying };

struct LossConfig {
  double minority_weight = 0.75;
  LambdaMode lambda_mode = LambdaMode::EpochVarying;
  double lambda_value = 1.0;  // used in fixed mode
  double prob_clamp = 1e-12;

  void validate() const {
    if (!(minority_weight > 0.0 && minority_weight < 1.0))
      fail(ErrorKind::InvalidArgument, "minority_weight must lie in (0,1)");
    if (lambda_mode == LambdaMode::Fixed && !(lambda_value >= 0.0 && lambda_value <= 1.0))
      fail(ErrorKind::InvalidArgument, "fixed lambda must lie in [0,1]");
    if (!(prob_clamp > 0.0)) fail(ErrorKind::InvalidArgument, "prob_clamp must be positive");
  }
};

struct LossBreakdown {
  double weighted = 0.0;
  double coral = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

namespace ad {

/// Batch mean of -w y log p - (1-w)(1-y) log(1-p) over an n x 1 probability column.
inline Var weighted_bce(Var probs, std::span<const double> labels, double w, double clamp = 1e-12) {
  const Matrix& p = probs.value();
  if (p.size() != labels.size()) {
    fail(ErrorKind::LengthMismatch, "weighted_bce: " + std::to_string(p.size()) + " predictions vs " +
                                        std::to_string(labels.size()) + " labels");
  }
  if (p.empty()) fail(ErrorKind::LengthMismatch, "weighted_bce: empty batch");
  const double n = static_cast<double>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], clamp, 1.0 - clamp);
    sum += -w * labels[i] * std::log(q) - (1.0 - w) * (1.0 - labels[i]) * std::log(1.0 - q);
  }
  std::vector<double> y(labels.begin(), labels.end());
  return detail::tape_of(probs).record(
      Matrix(1, 1, sum / n), {probs},
      [y = std::move(y), w, clamp, n](const Matrix& g, const Matrix&,
                                      std::span<const Matrix* const> in,
                                      std::span<Matrix* const> dg) {
        const Matrix& p = *in[0];
        double* d = dg[0]->data();
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (p[i] <= clamp || p[i] >= 1.0 - clamp) continue;
          d[i] += g[0] * (-w * y[i] / p[i] + (1.0 - w) * (1.0 - y[i]) / (1.0 - p[i])) / n;
        }
      });
}

/// Covariance with 1/(M-1) scaling and mean outer-product correction.
inline Var covariance(Var x) {
  const double m = static_cast<double>(x.value().rows());
  Var gram = matmul(transpose(x), x);
  Var s = col_sum(x);
  Var correction = scale(matmul(transpose(s), s), 1.0 / m);
  return scale(sub(gram, correction), 1.0 / (m - 1.0));
}

/// ||C_s - C_t||_F^2 / (4 d^2) where d is the feature width.
inline Var coral_loss(Var source, Var target) {
  const Matrix& s = source.value();
  const Matrix& t = target.value();
  if (s.rows() != t.rows()) {
    fail(ErrorKind::RowCountMismatch,
         "coral_loss: " + std::to_string(s.rows()) + " vs " + std::to_string(t.rows()) + " rows");
  }
  if (s.cols() != t.cols() || s.cols() == 0) {
    fail(ErrorKind::DimensionMismatch,
         "coral_loss: widths " + s.shape_string() + " and " + t.shape_string());
  }
  if (s.rows() < 2) fail(ErrorKind::InvalidArgument, "coral_loss: need at least 2 rows");
  const double d = static_cast<double>(s.cols());
  return scale(sum_squares(sub(covariance(source), covariance(target))), 1.0 / (4.0 * d * d));
}

}  // namespace ad

inline double weighted_bce(std::span<const double> probs, std::span<const double> labels, double w,
                           double clamp = 1e-12) {
  ad::Tape tape;
  return ad::weighted_bce(tape.constant(Matrix::row_vector(probs).reshaped(probs.size(), 1)), labels,
                          w, clamp)
      .scalar();
}

inline double coral_loss(const Matrix& source, const Matrix& target) {
  ad::Tape tape;
  return ad::coral_loss(tape.constant(source), tape.constant(target)).scalar();
}

/// (epoch + 1) / total_epochs in epoch-varying mode, the configured constant otherwise.
inline double lambda_schedule(std::size_t epoch, std::size_t total_epochs, const LossConfig& cfg) {
  if (total_epochs == 0 || epoch >= total_epochs) {
    fail(ErrorKind::OutOfRange,
         "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + ")");
  }
  if (cfg.lambda_mode == LambdaMode::Fixed) return cfg.lambda_value;
  return static_cast<double>(epoch + 1) / static_cast<double>(total_epochs);
}

struct TotalLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

/// l_total = l_weighted + lambda * l_coral, recorded on the probabilities' tape.
inline TotalLoss total_loss(ad::Var probs, std::span<const double> labels, ad::Var feat_source,
                            ad::Var feat_target, std::size_t epoch, std::size_t total_epochs,
                            const LossConfig& cfg) {
  const double lambda = lambda_schedule(epoch, total_epochs, cfg);
  ad::Var weighted = ad::weighted_bce(probs, labels, cfg.minority_weight, cfg.prob_clamp);
  ad::Var coral = ad::coral_loss(feat_source, feat_target);
  ad::Var total = ad::add(weighted, ad::scale(coral, lambda));
  return {total, LossBreakdown{weighted.scalar(), coral.scalar(), lambda, total.scalar()}};
}

}  // namespace tcnet
