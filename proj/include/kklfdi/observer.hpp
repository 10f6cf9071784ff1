#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/dynamics.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kklfdi {

/// Linear part (A, B) of the KKL observer z' = A z + B y together with the
/// decay rate c = min |Re eig(A)| and the eigenvector condition number kappa(V).
struct ObserverMatrices {
  Mat A;
  Mat B;
  std::size_t n_x = 0;
  std::size_t n_y = 0;
  std::size_t n_z = 0;
  double c = 0.0;
  double kappa_V = 1.0;
  Interval eig_range;
  Vec lambda;                // diagonal of Lambda for the Kronecker structure
  bool controllable = false;
};

/// Ratio of extreme singular values. Throws on a (numerically) singular matrix.
template <class Derived>
double condition_number(const Eigen::MatrixBase<Derived>& V) {
  require(V.rows() == V.cols() && V.rows() > 0, "condition_number: matrix must be square");
  using Plain = typename Derived::PlainObject;
  Eigen::JacobiSVD<Plain> svd(V.eval());
  const auto& s = svd.singularValues();
  const double smax = static_cast<double>(s(0));
  const double smin = static_cast<double>(s(s.size() - 1));
  if (!(smin > smax * std::numeric_limits<double>::epsilon() * static_cast<double>(V.rows())))
    throw InvalidArgument("condition_number: matrix is singular");
  return smax / smin;
}

/// c = min over eig(A) of |Re(lambda)|; A must be Hurwitz.
inline double min_decay_rate(const Mat& A) {
  require(A.rows() == A.cols() && A.rows() > 0, "min_decay_rate: A must be square");
  Eigen::EigenSolver<Mat> es(A, false);
  require(es.info() == Eigen::Success, "min_decay_rate: eigen-decomposition failed");
  const auto re = es.eigenvalues().real();
  if (re.maxCoeff() >= 0.0)
    throw InvalidArgument("min_decay_rate: A is not Hurwitz (max Re eig = " +
                          format_double(re.maxCoeff()) + ")");
  return re.cwiseAbs().minCoeff();
}

/// kappa(V) for the eigenvector matrix of A (columns unit-normalised).
inline double eigenvector_condition(const Mat& A) {
  Eigen::EigenSolver<Mat> es(A, true);
  require(es.info() == Eigen::Success, "eigenvector_condition: eigen-decomposition failed");
  return condition_number(es.eigenvectors());
}

/// Rank test on [B, AB, ..., A^{n-1} B]. Meant for small n_z only.
inline bool is_controllable(const Mat& A, const Mat& B, double tol = 1e-9) {
  require(A.rows() == A.cols() && B.rows() == A.rows(), "is_controllable: shape mismatch");
  const Eigen::Index n = A.rows();
  Mat ctrb(n, n * B.cols());
  Mat block = B;
  for (Eigen::Index i = 0; i < n; ++i) {
    ctrb.middleCols(i * B.cols(), B.cols()) = block;
    block = A * block;
  }
  // column scaling keeps powers of A from swamping the rank decision
  for (Eigen::Index j = 0; j < ctrb.cols(); ++j) {
    const double nrm = ctrb.col(j).norm();
    if (nrm > 0.0) ctrb.col(j) /= nrm;
  }
  Eigen::ColPivHouseholderQR<Mat> qr(ctrb);
  qr.setThreshold(tol);
  return qr.rank() == n;
}

/// A = Lambda (x) I_ny, B = Gamma (x) I_ny with Lambda = diag(linspace(eig_lo,
/// eig_hi, 2 n_x + 1)) and Gamma a column of ones.
inline ObserverMatrices build_matrices(std::size_t n_x, std::size_t n_y, double eig_lo,
                                       double eig_hi) {
  require(n_x >= 1 && n_y >= 1, "build_matrices: dimensions must be positive");
  if (!(eig_lo < 0.0 && eig_hi < 0.0))
    throw InvalidArgument("build_matrices: eigenvalues must be negative for a Hurwitz A (got [" +
                          format_double(eig_lo) + ", " + format_double(eig_hi) + "])");
  const std::size_t m = 2 * n_x + 1;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto nyi = static_cast<Eigen::Index>(n_y);

  ObserverMatrices obs;
  obs.n_x = n_x;
  obs.n_y = n_y;
  obs.n_z = n_y * m;
  obs.eig_range = {eig_lo, eig_hi};
  obs.lambda.resize(mi);
  for (Eigen::Index i = 0; i < mi; ++i)
    obs.lambda[i] = (m == 1) ? eig_lo
                             : eig_lo + (eig_hi - eig_lo) * static_cast<double>(i) /
                                            static_cast<double>(m - 1);
  const Mat Lambda = obs.lambda.asDiagonal();
  const Mat Gamma = Mat::Ones(mi, 1);
  const Mat I = Mat::Identity(nyi, nyi);
  obs.A = Eigen::kroneckerProduct(Lambda, I).eval();
  obs.B = Eigen::kroneckerProduct(Gamma, I).eval();
  obs.c = obs.lambda.cwiseAbs().minCoeff();
  obs.kappa_V = 1.0;  // A is diagonal, V = I
  // Diagonal Lambda with distinct entries and a ones vector Gamma is
  // controllable; Kronecker with I_ny preserves it per output channel.
  std::vector<double> sorted(obs.lambda.data(), obs.lambda.data() + mi);
  std::sort(sorted.begin(), sorted.end());
  obs.controllable = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
  return obs;
}

/// Observer from user-supplied matrices; c and kappa(V) from an eigen-solve,
/// controllability from a rank test when n_z <= 40.
inline ObserverMatrices observer_from_matrices(const Mat& A, const Mat& B, std::size_t n_x) {
  require(A.rows() == A.cols(), "observer_from_matrices: A must be square");
  require(B.rows() == A.rows() && B.cols() >= 1, "observer_from_matrices: B shape");
  ObserverMatrices obs;
  obs.A = A;
  obs.B = B;
  obs.n_x = n_x;
  obs.n_y = static_cast<std::size_t>(B.cols());
  obs.n_z = static_cast<std::size_t>(A.rows());
  obs.c = min_decay_rate(A);
  obs.kappa_V = eigenvector_condition(A);
  Eigen::EigenSolver<Mat> es(A, false);
  obs.eig_range = {es.eigenvalues().real().maxCoeff(), es.eigenvalues().real().minCoeff()};
  obs.controllable = obs.n_z <= 40 ? is_controllable(A, B) : false;
  return obs;
}

struct LatentState {
  Vec z;
  double t = 0.0;
};

/// RK4 step of z' = A z + B y(t) with y linearly interpolated between y_k and
/// y_k1 over [t, t + delta].
inline Vec latent_step(const ObserverMatrices& obs, const Vec& z, const Vec& y_k, const Vec& y_k1,
                       double delta) {
  require(delta > 0.0, "latent_step: delta must be positive");
  require(static_cast<std::size_t>(z.size()) == obs.n_z, "latent_step: latent dimension");
  require(y_k.size() == obs.B.cols() && y_k1.size() == obs.B.cols(),
          "latent_step: output dimension");
  const Vec by0 = obs.B * y_k;
  const Vec by1 = obs.B * y_k1;
  const Vec byh = 0.5 * (by0 + by1);
  const Vec k1 = obs.A * z + by0;
  const Vec k2 = obs.A * (z + 0.5 * delta * k1) + byh;
  const Vec k3 = obs.A * (z + 0.5 * delta * k2) + byh;
  const Vec k4 = obs.A * (z + delta * k3) + by1;
  return z + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline LatentState latent_step(const ObserverMatrices& obs, const LatentState& s, const Vec& y_k,
                               const Vec& y_k1, double delta) {
  return {latent_step(obs, s.z, y_k, y_k1, delta), s.t + delta};
}

/// Runs the latent filter over an output sequence (one column per sample).
/// Column k of the result is z(t_k); column 0 is z0.
inline Mat run_latent_filter(const ObserverMatrices& obs, const Mat& outputs, const Vec& z0,
                             double delta) {
  require(outputs.rows() == obs.B.cols(), "run_latent_filter: output dimension");
  require(static_cast<std::size_t>(z0.size()) == obs.n_z, "run_latent_filter: z0 dimension");
  Mat Z(z0.size(), outputs.cols());
  if (outputs.cols() == 0) return Z;
  Z.col(0) = z0;
  Vec z = z0;
  for (Eigen::Index k = 1; k < outputs.cols(); ++k) {
    z = latent_step(obs, z, outputs.col(k - 1), outputs.col(k), delta);
    Z.col(k) = z;
  }
  return Z;
}

/// Number of whole sample steps covering the burn-in horizon.
inline std::size_t burn_in_steps(double t_pre, double delta) {
  require(t_pre >= 0.0 && delta > 0.0, "burn_in_steps: bad horizon");
  return static_cast<std::size_t>(std::ceil(t_pre / delta - 1e-9));
}

/// Truncation-method estimate of T(x0): integrate the plant backward over
/// [-t_pre, 0], then run the latent filter forward from z = 0 along that
/// history. Returns nullopt if the backward integration leaves the finite
/// range.
inline std::optional<Vec> latent_at_origin(const System& sys, const ObserverMatrices& obs,
                                           const Vec& x0, double t_pre, double delta) {
  const std::size_t n_pre = burn_in_steps(t_pre, delta);
  const VectorField backward = [&sys](const Vec& x) -> Vec { return -sys.vector_field(x); };
  std::vector<Vec> history{x0};
  history.reserve(n_pre + 1);
  for (std::size_t j = 1; j <= n_pre; ++j) {
    history.push_back(rk4_step(backward, history.back(), delta));
    if (!history.back().allFinite()) return std::nullopt;
  }
  Vec z = Vec::Zero(static_cast<Eigen::Index>(obs.n_z));
  for (std::size_t j = n_pre; j >= 1; --j)
    z = latent_step(obs, z, sys.output_map(history[j]), sys.output_map(history[j - 1]), delta);
  return z;
}

/// Paired (x, z) samples of one trajectory; column k is sample t_k.
struct TrajectoryPairs {
  std::size_t id = 0;
  Mat x;
  Mat z;
};

struct Dataset {
  std::size_t n_x = 0;
  std::size_t n_z = 0;
  double t0 = 0.0;
  double delta = 1.0;
  std::vector<TrajectoryPairs> trajectories;

  std::size_t samples_per_trajectory() const {
    return trajectories.empty() ? 0 : static_cast<std::size_t>(trajectories.front().x.cols());
  }
  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& tr : trajectories) n += static_cast<std::size_t>(tr.x.cols());
    return n;
  }
};

enum class Split { Regression, Physics, All };

/// Stacks the samples of a split: even sample indices are the regression
/// set, odd ones the physics set. Returns (x, z) with one column per sample.
inline std::pair<Mat, Mat> stack_split(const Dataset& ds, Split split) {
  std::size_t count = 0;
  auto keep = [split](Eigen::Index k) {
    return split == Split::All || (split == Split::Regression) == (k % 2 == 0);
  };
  for (const auto& tr : ds.trajectories)
    for (Eigen::Index k = 0; k < tr.x.cols(); ++k) count += keep(k) ? 1 : 0;
  Mat X(static_cast<Eigen::Index>(ds.n_x), static_cast<Eigen::Index>(count));
  Mat Z(static_cast<Eigen::Index>(ds.n_z), static_cast<Eigen::Index>(count));
  Eigen::Index c = 0;
  for (const auto& tr : ds.trajectories)
    for (Eigen::Index k = 0; k < tr.x.cols(); ++k)
      if (keep(k)) {
        X.col(c) = tr.x.col(k);
        Z.col(c) = tr.z.col(k);
        ++c;
      }
  return {std::move(X), std::move(Z)};
}

struct GenerationReport {
  std::size_t requested = 0;
  std::size_t kept = 0;
  std::vector<std::size_t> discarded;  // ids of trajectories dropped
  std::vector<std::string> reasons;

  double discard_fraction() const {
    return requested == 0 ? 0.0
                          : static_cast<double>(discarded.size()) / static_cast<double>(requested);
  }
};

/// Truncation-method training data: for each x0, z(0) from latent_at_origin,
/// then the noise-free plant and the latent filter (driven by h(x)) jointly
/// over the span. Trajectories whose integration blows up are dropped and
/// listed in the report.
inline Dataset generate_training_data(const System& sys, const ObserverMatrices& obs,
                                      std::span<const Vec> x0_set, double t_pre, Interval span,
                                      std::size_t n_samples, GenerationReport* report = nullptr) {
  require(sys.output_dim == obs.n_y && sys.state_dim == obs.n_x,
          "generate_training_data: plant and observer dimensions differ");
  require(t_pre * obs.c >= 5.0 - 1e-12,
          "generate_training_data: burn-in must satisfy t_pre >= 5/c");
  const double delta = sample_spacing(span, n_samples);
  Dataset ds;
  ds.n_x = obs.n_x;
  ds.n_z = obs.n_z;
  ds.t0 = span.lo;
  ds.delta = delta;
  GenerationReport local;
  local.requested = x0_set.size();
  for (std::size_t id = 0; id < x0_set.size(); ++id) {
    const auto z0 = latent_at_origin(sys, obs, x0_set[id], t_pre, delta);
    if (!z0) {
      local.discarded.push_back(id);
      local.reasons.push_back("backward integration left the finite range");
      continue;
    }
    Trajectory traj = simulate(sys.vector_field, x0_set[id], span, n_samples, NoiseSpec{}, 0);
    if (!traj.states.allFinite()) {
      local.discarded.push_back(id);
      local.reasons.push_back("forward integration left the finite range");
      continue;
    }
    TrajectoryPairs tp;
    tp.id = id;
    tp.z = run_latent_filter(obs, sys.outputs(traj.states), *z0, delta);
    tp.x = std::move(traj.states);
    ds.trajectories.push_back(std::move(tp));
  }
  local.kept = ds.trajectories.size();
  if (report) *report = std::move(local);
  return ds;
}

}  // namespace kklfdi
