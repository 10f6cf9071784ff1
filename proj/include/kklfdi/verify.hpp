#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/dynamics.hpp"
#include "kklfdi/fdi.hpp"
#include "kklfdi/mlp.hpp"
#include "kklfdi/observer.hpp"
#include "kklfdi/training.hpp"

#include "json.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace kklfdi::verify {

using json = nlohmann::json;

struct SuiteResult {
  std::string name;
  bool passed = false;
  json detail = json::object();
};

struct Report {
  std::vector<SuiteResult> suites;

  bool passed() const {
    for (const auto& s : suites)
      if (!s.passed) return false;
    return !suites.empty();
  }
  json to_json() const {
    json j;
    j["passed"] = passed();
    j["suites"] = json::array();
    for (const auto& s : suites)
      j["suites"].push_back({{"name", s.name}, {"passed", s.passed}, {"detail", s.detail}});
    return j;
  }
};

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

/// Empirical convergence order of rk4_step on x' = lambda x over [0, 1].
inline SuiteResult rk4_order(double lambda = -1.0) {
  SuiteResult res{"rk4_order"};
  const VectorField f = [lambda](const Vec& x) -> Vec { return lambda * x; };
  std::vector<double> errors;
  for (int steps : {10, 20, 40, 80}) {
    Vec x = Vec::Ones(1);
    const double h = 1.0 / steps;
    for (int k = 0; k < steps; ++k) x = rk4_step(f, x, h);
    errors.push_back(std::abs(x[0] - std::exp(lambda)));
  }
  std::vector<double> orders;
  res.passed = true;
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    orders.push_back(std::log2(errors[i] / errors[i + 1]));
    if (!(std::abs(orders.back() - 4.0) <= 0.2)) res.passed = false;
  }
  res.detail = {{"errors", errors}, {"orders", orders}, {"tolerance", 0.2}};
  return res;
}

namespace detail {

inline Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& eng, double lo = -1.0,
                         double hi = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = lo + (hi - lo) * uniform01(eng);
  return m;
}

inline Mlp random_net(const std::vector<std::size_t>& sizes, std::mt19937_64& eng) {
  Mlp net(sizes, eng());
  const auto in = static_cast<Eigen::Index>(sizes.front());
  const auto out = static_cast<Eigen::Index>(sizes.back());
  net.input_norm().mean = random_matrix(in, 1, eng);
  net.input_norm().scale = random_matrix(in, 1, eng, 0.5, 2.0);
  net.output_norm().mean = random_matrix(out, 1, eng);
  net.output_norm().scale = random_matrix(out, 1, eng, 0.5, 2.0);
  return net;
}

/// Smallest |pre-activation| over the hidden layers: a margin keeps finite
/// differences away from the rectifier's kink.
inline double kink_margin(const Mlp& net, const Mat& X) {
  ForwardCache cache;
  net.forward(X, cache);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l) m = std::min(m, cache.pre[l].cwiseAbs().minCoeff());
  return m;
}

/// Norm-wise relative error per parameter block (layer weight, layer bias)
/// of an analytic gradient against central differences of `loss`.
inline double gradient_error(Mlp& net, const Gradients& analytic, const std::function<double()>& loss,
                             double h, json& blocks) {
  double worst = 0.0;
  auto& layers = net.layers();
  auto check = [&](auto& param, const auto& grad, const std::string& label) {
    Mat numeric(param.rows(), param.cols());
    for (Eigen::Index j = 0; j < param.cols(); ++j)
      for (Eigen::Index i = 0; i < param.rows(); ++i) {
        const double saved = param(i, j);
        param(i, j) = saved + h;
        const double up = loss();
        param(i, j) = saved - h;
        const double down = loss();
        param(i, j) = saved;
        numeric(i, j) = (up - down) / (2.0 * h);
      }
    const Mat a = grad;
    const double denom = std::max({a.norm(), numeric.norm(), 1e-300});
    const double err = (a - numeric).norm() / denom;
    worst = std::max(worst, err);
    blocks.push_back({{"block", label}, {"relative_error", err}});
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    check(layers[l].weight, analytic.dW[l], "W" + std::to_string(l));
    check(layers[l].bias, analytic.db[l], "b" + std::to_string(l));
  }
  return worst;
}

}  // namespace detail

/// Backpropagated gradients of the three training losses against central
/// finite differences, per layer.
inline SuiteResult gradient_check(std::uint64_t seed, double tol = 1e-4) {
  SuiteResult res{"gradient_check"};
  std::mt19937_64 eng(seed);
  const std::vector<std::size_t> enc_sizes{4, 7, 6, 3}, dec_sizes{3, 6, 5, 4};
  Mlp enc = detail::random_net(enc_sizes, eng);
  Mlp dec = detail::random_net(dec_sizes, eng);
  Mat X, Z;
  for (int attempt = 0; attempt < 100; ++attempt) {
    X = detail::random_matrix(4, 9, eng, -2.0, 2.0);
    Z = detail::random_matrix(3, 9, eng, -2.0, 2.0);
    if (detail::kink_margin(enc, X) > 1e-3 && detail::kink_margin(dec, Z) > 1e-3 &&
        detail::kink_margin(dec, enc.forward(X)) > 1e-3)
      break;
  }
  const double h = 1e-6;
  const double chi = 0.7;
  const PhysicsTerms terms{detail::random_matrix(4, 9, eng), detail::random_matrix(3, 9, eng)};
  const Mat A = detail::random_matrix(3, 3, eng) - 3.0 * Mat::Identity(3, 3);
  double worst = 0.0;
  json losses = json::array();

  {
    Gradients g = dec.zero_gradients();
    decoder_loss(dec, X, Z, &g);
    json blocks = json::array();
    const double e = detail::gradient_error(dec, g, [&] { return decoder_loss(dec, X, Z); }, h, blocks);
    worst = std::max(worst, e);
    losses.push_back({{"loss", "decoder_regression"}, {"blocks", blocks}});
  }
  {
    Gradients ge = enc.zero_gradients(), gd = dec.zero_gradients();
    encoder_decoder_loss(enc, dec, X, Z, chi, &ge, &gd);
    auto f = [&] { return encoder_decoder_loss(enc, dec, X, Z, chi); };
    json be = json::array(), bd = json::array();
    worst = std::max(worst, detail::gradient_error(enc, ge, f, h, be));
    worst = std::max(worst, detail::gradient_error(dec, gd, f, h, bd));
    losses.push_back({{"loss", "encoder_decoder_regression/encoder"}, {"blocks", be}});
    losses.push_back({{"loss", "encoder_decoder_regression/decoder"}, {"blocks", bd}});
  }
  {
    Gradients g = enc.zero_gradients();
    physics_loss(enc, X, terms, A, &g);
    json blocks = json::array();
    worst = std::max(worst, detail::gradient_error(enc, g, [&] { return physics_loss(enc, X, terms, A); }, h, blocks));
    losses.push_back({{"loss", "physics"}, {"blocks", blocks}});
  }
  res.passed = worst < tol;
  res.detail = {{"worst_relative_error", worst}, {"tolerance", tol}, {"losses", losses}};
  return res;
}

/// Exact network Jacobian (and the forward-mode tangent used by the physics
/// loss) against central finite differences.
inline SuiteResult jacobian_check(std::uint64_t seed, double tol = 1e-5) {
  SuiteResult res{"jacobian_check"};
  std::mt19937_64 eng(seed);
  Mlp net = detail::random_net({6, 8, 8, 4}, eng);
  const double h = 1e-6;
  double worst = 0.0, worst_tangent = 0.0;
  int points = 0;
  for (int attempt = 0; attempt < 1000 && points < 10; ++attempt) {
    const Vec x = detail::random_matrix(6, 1, eng, -2.0, 2.0);
    if (detail::kink_margin(net, Mat(x)) < 1e-3) continue;
    ++points;
    const Mat J = net.jacobian(x);
    Mat N(4, 6);
    for (Eigen::Index j = 0; j < 6; ++j) {
      Vec xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      N.col(j) = (net.eval(xp) - net.eval(xm)) / (2.0 * h);
    }
    worst = std::max(worst, (J - N).norm() / std::max(N.norm(), 1e-300));
    const Mat dx = detail::random_matrix(6, 1, eng);
    ForwardCache cache;
    Mat jdx;
    net.forward(Mat(x), cache, &dx, &jdx);
    const Mat ref = J * dx;
    worst_tangent = std::max(worst_tangent, (jdx - ref).norm() / std::max(ref.norm(), 1e-300));
  }
  res.passed = points == 10 && worst < tol && worst_tangent < 1e-12;
  res.detail = {{"points", points},
                {"worst_relative_error", worst},
                {"tolerance", tol},
                {"tangent_vs_jacobian", worst_tangent}};
  return res;
}

/// Stable, diagonalizable n x n matrix with some complex-conjugate pairs:
/// A = S blockdiag(...) S^-1.
inline Mat random_stable_matrix(std::size_t n, std::mt19937_64& eng) {
  const auto ni = static_cast<Eigen::Index>(n);
  Mat D = Mat::Zero(ni, ni);
  Eigen::Index i = 0;
  while (i < ni) {
    const double re = -(0.5 + 4.5 * uniform01(eng));
    if (i + 1 < ni && uniform01(eng) < 0.5) {
      const double im = 0.2 + 3.0 * uniform01(eng);
      D(i, i) = re;
      D(i + 1, i + 1) = re;
      D(i, i + 1) = im;
      D(i + 1, i) = -im;
      i += 2;
    } else {
      D(i, i) = re;
      i += 1;
    }
  }
  Mat S;
  do {
    S = detail::random_matrix(ni, ni, eng) + 1.5 * Mat::Identity(ni, ni);
  } while (condition_number(S) > 50.0);
  return S * D * S.inverse();
}

/// Both exponential inequalities on a time grid, for the configured A and a
/// set of random stable diagonalizable matrices.
inline SuiteResult exp_inequalities(const ObserverMatrices& obs, std::size_t random_count,
                                    std::size_t grid_points, std::size_t quad_intervals,
                                    std::uint64_t seed) {
  SuiteResult res{"exp_inequalities"};
  res.passed = true;
  json cases = json::array();
  auto run = [&](const std::string& label, const Mat& A, const Mat& B) {
    Eigen::EigenSolver<Mat> es(A, false);
    const double c = es.eigenvalues().real().cwiseAbs().minCoeff();
    const auto grid = linspace(0.0, 10.0 / c, grid_points);
    const auto rep = verify_exp_inequalities(A, B, grid, quad_intervals);
    const bool ok = rep.applicable && rep.holds && rep.points.size() == grid_points;
    if (!ok) res.passed = false;
    cases.push_back({{"case", label},
                     {"passed", ok},
                     {"kappa_V", rep.kappa_V},
                     {"c", rep.c},
                     {"worst_ratio", rep.worst_ratio},
                     {"grid_points", rep.points.size()},
                     {"message", rep.message}});
  };
  run("configured_A", obs.A, obs.B);
  std::mt19937_64 eng(seed);
  for (std::size_t k = 0; k < random_count; ++k) {
    const Mat A = random_stable_matrix(6, eng);
    const Mat B = detail::random_matrix(6, 2, eng);
    run("random_" + std::to_string(k), A, B);
  }
  res.detail = {{"cases", cases}};
  return res;
}

/// Monte-Carlo check of the latent error bound: z is driven by the
/// noise-free outputs from T(x0), zhat by the noisy outputs from zero.
inline SuiteResult ztilde_bound(const System& sys, const ObserverMatrices& obs, Interval x0_box,
                                Interval span, std::size_t n_samples, const NoiseSpec& noise,
                                double t_pre, std::size_t runs, std::uint64_t seed) {
  SuiteResult res{"ztilde_bound"};
  res.passed = true;
  const std::vector<Interval> box(sys.state_dim, x0_box);
  const auto x0s = latin_hypercube(runs, box, derive_seed(seed, streams::kVerify, 1));
  const double delta = sample_spacing(span, n_samples);
  const NoiseSpec process_only{noise.process_var, 0.0, noise.w_bar, 0.0};
  double worst_ratio = 0.0;
  std::size_t checked = 0, violations = 0;
  ThresholdParams p;
  p.l_h = sys.output_lipschitz;
  p.kappa_V = obs.kappa_V;
  p.c = obs.c;
  p.norm_B = spectral_norm2(obs.B);
  for (std::size_t j = 0; j < runs; ++j) {
    const std::uint64_t s = derive_seed(seed, streams::kVerify, 100 + j);
    const Trajectory noisy = simulate(sys.vector_field, x0s[j], span, n_samples, process_only, s);
    const Trajectory clean = simulate(sys.vector_field, x0s[j], span, n_samples, NoiseSpec{}, 0);
    const Mat v = measurement_noise(sys.output_dim, n_samples, noise.meas_var, s);
    const auto z0 = latent_at_origin(sys, obs, x0s[j], t_pre, delta);
    if (!z0) {
      res.passed = false;
      continue;
    }
    const Mat z = run_latent_filter(obs, sys.outputs(clean.states), *z0, delta);
    const Mat zhat = run_latent_filter(obs, sys.outputs(noisy.states) + v, Vec::Zero(z0->size()), delta);
    p.psi_wbar = (noisy.states - clean.states).colwise().norm().maxCoeff();
    p.v_bar = std::max(noise.v_bar, v.size() ? v.cwiseAbs().maxCoeff() : 0.0);
    const double e0 = (z.col(0) - zhat.col(0)).norm();
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      const double lhs = (z.col(k) - zhat.col(k)).norm();
      const double rhs = bound_ztilde(p, e0, static_cast<double>(k) * delta, sys.output_dim);
      ++checked;
      if (lhs > rhs) ++violations;
      if (rhs > 0.0) worst_ratio = std::max(worst_ratio, lhs / rhs);
    }
  }
  if (violations > 0) res.passed = false;
  res.detail = {{"runs", runs}, {"samples_checked", checked}, {"violations", violations},
                {"worst_ratio", worst_ratio}};
  return res;
}

/// The steady-state threshold equals the general bound as t grows large.
inline SuiteResult threshold_limit(const ThresholdParams& base, std::size_t n_y, std::uint64_t seed,
                                   double tol = 1e-9) {
  SuiteResult res{"threshold_limit"};
  std::mt19937_64 eng(seed);
  std::vector<ThresholdParams> cases{base};
  for (int k = 0; k < 20; ++k) {
    ThresholdParams p;
    p.v_bar = uniform01(eng);
    p.w_bar = uniform01(eng);
    p.psi_wbar = 2.0 * uniform01(eng);
    p.l_h = 0.5 + uniform01(eng);
    p.l_hi = detail::random_matrix(static_cast<Eigen::Index>(n_y), 1, eng, 0.1, 1.5);
    p.kappa_V = 1.0 + 5.0 * uniform01(eng);
    p.c = 0.1 + 20.0 * uniform01(eng);
    p.norm_B = 0.1 + 5.0 * uniform01(eng);
    p.eps_star_hat = uniform01(eng);
    p.l_eta = 3.0 * uniform01(eng);
    cases.push_back(p);
  }
  double worst = 0.0;
  for (const auto& p : cases) {
    const Vec tau = theoretical_thresholds(p, n_y);
    const double t = 100.0 / p.c;
    for (std::size_t i = 0; i < n_y; ++i) {
      const double lim = bound_general(p, p.eps_star_hat, 10.0, t, i, n_y);
      worst = std::max(worst, std::abs(lim - tau[static_cast<Eigen::Index>(i)]) /
                                  std::abs(tau[static_cast<Eigen::Index>(i)]));
    }
  }
  res.passed = worst <= tol;
  res.detail = {{"cases", cases.size()}, {"worst_relative_difference", worst}, {"tolerance", tol}};
  return res;
}

/// ||B||_2 = sqrt(2 n_x + 1) for the Kronecker input matrix, and the decay
/// rate / eigenvector conditioning of A from an independent eigen-solve.
inline SuiteResult observer_constants(const ObserverMatrices& obs, double expected_c) {
  SuiteResult res{"observer_constants"};
  Eigen::JacobiSVD<Mat> svd(obs.B);
  const double normB = svd.singularValues()(0);
  const double expected_normB = std::sqrt(static_cast<double>(2 * obs.n_x + 1));
  Eigen::EigenSolver<Mat> es(obs.A, true);
  const double c = es.eigenvalues().real().cwiseAbs().minCoeff();
  const double max_re = es.eigenvalues().real().maxCoeff();
  Eigen::JacobiSVD<Eigen::MatrixXcd> vs(es.eigenvectors());
  const auto sv = vs.singularValues();
  const double kappa = sv(0) / sv(sv.size() - 1);
  const bool norm_ok = std::abs(normB - expected_normB) <= 1e-10;
  const bool c_ok = std::abs(c - expected_c) <= 1e-10 * expected_c && max_re < 0.0;
  const bool kappa_ok = std::abs(kappa - 1.0) <= 1e-10;
  res.passed = norm_ok && c_ok && kappa_ok;
  res.detail = {{"norm_B", normB},     {"expected_norm_B", expected_normB}, {"c", c},
                {"expected_c", expected_c}, {"kappa_V", kappa},            {"max_real_eigenvalue", max_re}};
  return res;
}

}  // namespace kklfdi::verify
