#include "dff/nmf.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/SVD>

#include "dff/error.hpp"

namespace dff {
namespace {

void check_rank(const FeatureMatrix& a, int k) {
  const auto limit = std::min(a.rows(), a.cols());
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "rank k must be >= 1");
  if (k > limit)
    throw Error(ErrorCode::RankTooLarge, "k=" + std::to_string(k) + " exceeds min(rows, cols)=" +
                                             std::to_string(limit));
}

void check_shapes(const Matrix& a, const Matrix& h, const Matrix& w) {
  if (h.rows() != a.rows() || w.cols() != a.cols() || h.cols() != w.rows())
    throw Error(ErrorCode::ShapeMismatch,
                "A is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + ", H is " +
                    std::to_string(h.rows()) + "x" + std::to_string(h.cols()) + ", W is " +
                    std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
}

double mean_of(const Matrix& a) { return a.cast<double>().mean(); }

// 53 random bits mapped to [0, 1); independent of the standard library's
// distribution implementations so draws are identical across toolchains.
double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::pair<Matrix, Matrix> seeded_uniform(const FeatureMatrix& a, int k, std::uint64_t seed) {
  const auto scale = static_cast<float>(seeded_uniform_scale(a, k));
  std::mt19937_64 rng(seed);
  Matrix h(a.rows(), k);
  Matrix w(k, a.cols());
  for (Eigen::Index i = 0; i < h.size(); ++i)
    h.data()[i] = static_cast<float>(scale * (1.0 - unit_draw(rng)));
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<float>(scale * (1.0 - unit_draw(rng)));
  return {std::move(h), std::move(w)};
}

std::pair<Matrix, Matrix> nndsvd(const FeatureMatrix& a, int k) {
  const Eigen::MatrixXd ad = a.matrix().cast<double>();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(ad, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& u = svd.matrixU();
  const auto& v = svd.matrixV();
  const auto& s = svd.singularValues();

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(a.rows(), k);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, a.cols());

  // The leading singular pair of a non-negative matrix can be chosen non-negative.
  h.col(0) = std::sqrt(s(0)) * u.col(0).cwiseAbs();
  w.row(0) = std::sqrt(s(0)) * v.col(0).cwiseAbs().transpose();

  for (int j = 1; j < k; ++j) {
    const Eigen::VectorXd x = u.col(j);
    const Eigen::VectorXd y = v.col(j);
    const Eigen::VectorXd xp = x.cwiseMax(0.0), xn = (-x).cwiseMax(0.0);
    const Eigen::VectorXd yp = y.cwiseMax(0.0), yn = (-y).cwiseMax(0.0);
    const double xpn = xp.norm(), ypn = yp.norm(), xnn = xn.norm(), ynn = yn.norm();
    const double mp = xpn * ypn, mn = xnn * ynn;
    if (mp >= mn) {
      if (mp <= 0.0) continue;
      const double scale = std::sqrt(s(j) * mp);
      h.col(j) = scale / xpn * xp;
      w.row(j) = (scale / ypn * yp).transpose();
    } else {
      const double scale = std::sqrt(s(j) * mn);
      h.col(j) = scale / xnn * xn;
      w.row(j) = (scale / ynn * yn).transpose();
    }
  }

  const double fill = mean_of(a.matrix()) / 100.0;
  Matrix hf = h.cast<float>();
  Matrix wf = w.cast<float>();
  hf = (hf.array() > 0.0f).select(hf, static_cast<float>(fill));
  wf = (wf.array() > 0.0f).select(wf, static_cast<float>(fill));
  return {std::move(hf), std::move(wf)};
}

}  // namespace

void NmfConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be >= 1");
  if (!(rel_tol >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rel_tol must be >= 0");
}

bool operator==(const Factorization& a, const Factorization& b) {
  return a.iterations_run == b.iterations_run && a.loss_trace == b.loss_trace &&
         a.h.rows() == b.h.rows() && a.h.cols() == b.h.cols() && a.h == b.h &&
         a.w.rows() == b.w.rows() && a.w.cols() == b.w.cols() && a.w == b.w;
}

double frobenius_loss(const Matrix& a, const Matrix& h, const Matrix& w) {
  check_shapes(a, h, w);
  const Eigen::MatrixXd approx = h.cast<double>() * w.cast<double>();
  return (a.cast<double>() - approx).squaredNorm();
}

void multiplicative_update_inplace(const Matrix& a, Matrix& h, Matrix& w) {
  check_shapes(a, h, w);
  {
    const Matrix numer = a * w.transpose();
    const Matrix wwt = w * w.transpose();
    const Matrix denom = h * wwt;
    h.array() *= numer.array() / (denom.array() + kMuEpsilon);
  }
  {
    const Matrix numer = h.transpose() * a;
    const Matrix hth = h.transpose() * h;
    const Matrix denom = hth * w;
    w.array() *= numer.array() / (denom.array() + kMuEpsilon);
  }
}

std::pair<Matrix, Matrix> multiplicative_update_step(const Matrix& a, const Matrix& h, const Matrix& w) {
  Matrix h2 = h;
  Matrix w2 = w;
  if ((h2.array() < 0.0f).any() || (w2.array() < 0.0f).any() || (a.array() < 0.0f).any())
    throw Error(ErrorCode::NonNegativityViolated, "multiplicative updates need non-negative inputs");
  multiplicative_update_inplace(a, h2, w2);
  return {std::move(h2), std::move(w2)};
}

double seeded_uniform_scale(const FeatureMatrix& a, int k) {
  return std::sqrt(mean_of(a.matrix()) / static_cast<double>(k));
}

std::pair<Matrix, Matrix> init_factors(const NmfConfig& cfg, const FeatureMatrix& a) {
  cfg.validate();
  check_rank(a, cfg.k);
  switch (cfg.init) {
    case NmfInit::Nndsvd: return nndsvd(a, cfg.k);
    case NmfInit::SeededUniform: break;
  }
  return seeded_uniform(a, cfg.k, cfg.seed);
}

Factorization nmf_factorize(const FeatureMatrix& a, const NmfConfig& cfg) {
  cfg.validate();
  check_rank(a, cfg.k);
  if (!(a.matrix().array() > 0.0f).any())
    throw Error(ErrorCode::DegenerateInput, "feature matrix is all zeros");

  auto [h, w] = init_factors(cfg, a);
  Factorization out;
  out.loss_trace.reserve(static_cast<std::size_t>(cfg.max_iters) + 1);
  double prev = frobenius_loss(a.matrix(), h, w);
  out.loss_trace.push_back(prev);

  for (int it = 0; it < cfg.max_iters && prev > 0.0; ++it) {
    multiplicative_update_inplace(a.matrix(), h, w);
    const double loss = frobenius_loss(a.matrix(), h, w);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "loss diverged");
    out.loss_trace.push_back(loss);
    ++out.iterations_run;
    if (loss == 0.0 || (prev - loss) / prev < cfg.rel_tol) break;
    prev = loss;
  }
  out.h = std::move(h);
  out.w = std::move(w);
  return out;
}

PcaResult pca_baseline(const FeatureMatrix& a, int k) {
  check_rank(a, k);
  const Eigen::MatrixXd ad = a.matrix().cast<double>();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(ad, Eigen::ComputeThinV);
  PcaResult out;
  out.projection = svd.matrixV().leftCols(k);
  const Eigen::MatrixXd residual = ad - (ad * out.projection) * out.projection.transpose();
  out.approximation_error = residual.squaredNorm();
  return out;
}

}  // namespace dff
