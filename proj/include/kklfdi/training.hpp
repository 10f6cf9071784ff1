#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/dynamics.hpp"
#include "kklfdi/mlp.hpp"
#include "kklfdi/observer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace kklfdi {

struct TrainConfig {
  std::vector<std::size_t> hidden{250, 250, 250};
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double lr_decay = 0.5;          // multiplied into the step every decay_interval epochs
  std::size_t decay_interval = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double chi = 1.0;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  bool enable_physics_loss = false;
  bool train_encoder = false;

  void validate() const {
    require(epochs > 0, "train config: epochs must be positive");
    require(batch_size > 0, "train config: batch size must be positive");
    require(learning_rate > 0.0, "train config: learning rate must be positive");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "train config: decay factor must be in (0, 1]");
    require(decay_interval > 0, "train config: decay interval must be positive");
    require(chi >= 0.0 && lambda >= 0.0, "train config: chi and lambda must be nonnegative");
    require(!enable_physics_loss || train_encoder,
            "train config: the physics loss needs the encoder to be trained");
    require(!hidden.empty(), "train config: need at least one hidden layer");
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << "hidden=";
    for (auto h : hidden) os << h << ',';
    os << ";epochs=" << epochs << ";batch=" << batch_size << ";lr=" << format_double(learning_rate)
       << ";decay=" << format_double(lr_decay) << '/' << decay_interval
       << ";betas=" << format_double(beta1) << ',' << format_double(beta2)
       << ";eps=" << format_double(adam_eps) << ";chi=" << format_double(chi)
       << ";lambda=" << format_double(lambda) << ";seed=" << seed
       << ";physics=" << enable_physics_loss << ";encoder=" << train_encoder;
    return hex64(fnv1a(os.str()));
  }
};

/// Everything the physics loss needs about the plant and the observer.
struct PhysicsTerms {
  Mat F;   // f(x) per column
  Mat BH;  // B h(x) per column
};

inline PhysicsTerms physics_terms(const System& sys, const ObserverMatrices& obs, const Mat& X) {
  PhysicsTerms t{Mat(X.rows(), X.cols()), Mat(static_cast<Eigen::Index>(obs.n_z), X.cols())};
  for (Eigen::Index k = 0; k < X.cols(); ++k) {
    t.F.col(k) = sys.vector_field(X.col(k));
    t.BH.col(k) = obs.B * sys.output_map(X.col(k));
  }
  return t;
}

/// Decoder-only regression: mean ||x - D(z)||^2. Adds gradients when asked.
inline double decoder_loss(const Mlp& dec, const Mat& X, const Mat& Z, Gradients* g = nullptr) {
  require(X.cols() > 0 && X.cols() == Z.cols(), "loss_regression: empty or ragged batch");
  const double inv_n = 1.0 / static_cast<double>(X.cols());
  if (!g) return (dec.forward(Z) - X).colwise().squaredNorm().sum() * inv_n;
  ForwardCache cache;
  const Mat err = dec.forward(Z, cache) - X;
  dec.backward(cache, 2.0 * inv_n * err, *g);
  return err.colwise().squaredNorm().sum() * inv_n;
}

/// Encoder-decoder regression: mean ||z - E(x)||^2 + chi ||x - D(E(x))||^2.
inline double encoder_decoder_loss(const Mlp& enc, const Mlp& dec, const Mat& X, const Mat& Z,
                                   double chi, Gradients* gEnc = nullptr,
                                   Gradients* gDec = nullptr) {
  require(X.cols() > 0 && X.cols() == Z.cols(), "loss_regression: empty or ragged batch");
  const double inv_n = 1.0 / static_cast<double>(X.cols());
  ForwardCache ce, cd;
  const Mat zhat = enc.forward(X, ce);
  const Mat ez = zhat - Z;
  double loss = ez.colwise().squaredNorm().sum() * inv_n;
  Mat gz = 2.0 * inv_n * ez;
  if (chi > 0.0) {
    const Mat ex = dec.forward(zhat, cd) - X;
    loss += chi * ex.colwise().squaredNorm().sum() * inv_n;
    if (gEnc || gDec) {
      Gradients scratch;
      if (!gDec) scratch = dec.zero_gradients();
      gz += dec.backward(cd, 2.0 * chi * inv_n * ex, gDec ? *gDec : scratch);
    }
  }
  if (gEnc) enc.backward(ce, gz, *gEnc);
  return loss;
}

/// Regression loss. With an encoder: mean ||z - E(x)||^2 + chi ||x - D(E(x))||^2;
/// without one (decoder-only mode): mean ||x - D(z)||^2.
inline double loss_regression(const Mlp* encoder, const Mlp& decoder, const Mat& X, const Mat& Z,
                              double chi) {
  return encoder ? encoder_decoder_loss(*encoder, decoder, X, Z, chi)
                 : decoder_loss(decoder, X, Z);
}

/// Physics loss: mean ||J_E(x) f(x) - A E(x) - B h(x)||^2.
inline double physics_loss(const Mlp& enc, const Mat& X, const PhysicsTerms& terms, const Mat& A,
                           Gradients* g = nullptr) {
  require(X.cols() > 0, "loss_physics: empty batch");
  const double inv_n = 1.0 / static_cast<double>(X.cols());
  ForwardCache cache;
  Mat jf;
  const Mat T = enc.forward(X, cache, &terms.F, &jf);
  const Mat R = jf - A * T - terms.BH;
  if (g) {
    const Mat gR = 2.0 * inv_n * R;
    const Mat gT = -A.transpose() * gR;
    enc.backward(cache, gT, *g, &gR);
  }
  return R.colwise().squaredNorm().sum() * inv_n;
}

inline double loss_physics(const Mlp& encoder, const Mat& X, const System& sys,
                           const ObserverMatrices& obs) {
  return physics_loss(encoder, X, physics_terms(sys, obs, X), obs.A);
}

/// Adaptive-moment optimizer state for one network.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, double beta1, double beta2, double eps)
      : m_(net.zero_gradients()), v_(net.zero_gradients()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Mlp& net, const Gradients& g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].weight, m_.dW[l], v_.dW[l], g.dW[l], lr, c1, c2);
      update(layers[l].bias, m_.db[l], v_.db[l], g.db[l], lr, c1, c2);
    }
  }

 private:
  template <class P, class G>
  void update(P& p, G& m, G& v, const G& g, double lr, double c1, double c2) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }

  Gradients m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean of minibatch total losses
  std::vector<double> epoch_lr;
  double initial_loss = 0.0;       // full-split total loss before the first update
  double final_loss = 0.0;         // full-split total loss after the last update
  double heldout_rmse = 0.0;       // decoder error on the physics (odd-index) split
  double heldout_max = 0.0;
  double train_rmse = 0.0;
  double train_max = 0.0;
  bool diverged = false;
  std::string message;
};

struct TrainResult {
  Mlp decoder;
  std::optional<Mlp> encoder;
  TrainReport report;
};

namespace detail {

inline std::vector<Eigen::Index> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<Eigen::Index> p(n);
  std::iota(p.begin(), p.end(), Eigen::Index{0});
  std::mt19937_64 eng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(static_cast<std::size_t>(uniform01(eng) * static_cast<double>(i)), i - 1);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

inline std::pair<double, double> decoder_error_stats(const Mlp& dec, const Mat& X, const Mat& Z) {
  if (X.cols() == 0) return {0.0, 0.0};
  double sq = 0.0, mx = 0.0;
  constexpr Eigen::Index chunk = 4096;
  for (Eigen::Index s = 0; s < X.cols(); s += chunk) {
    const Eigen::Index n = std::min(chunk, X.cols() - s);
    const Vec e = (dec.forward(Z.middleCols(s, n)) - X.middleCols(s, n)).colwise().norm().transpose();
    sq += e.squaredNorm();
    mx = std::max(mx, e.maxCoeff());
  }
  return {std::sqrt(sq / static_cast<double>(X.cols())), mx};
}

}  // namespace detail

/// Minimizes L = L_reg + lambda L_phy with Adam over shuffled minibatches.
/// Regression uses the even-index samples, the physics term the odd-index
/// ones. The step size is multiplied by lr_decay every decay_interval epochs.
/// `sys`/`obs` are required only when the physics loss is enabled.
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg, const System* sys = nullptr,
                         const ObserverMatrices* obs = nullptr) {
  cfg.validate();
  require(ds.total_samples() > 0, "train: empty dataset");
  require(!cfg.enable_physics_loss || (sys && obs), "train: physics loss needs plant and observer");

  const auto [Xr, Zr] = stack_split(ds, Split::Regression);
  const auto [Xp, Zp] = stack_split(ds, Split::Physics);
  require(Xr.cols() > 0, "train: regression split is empty");

  TrainResult result;
  std::vector<std::size_t> dec_sizes{ds.n_z};
  dec_sizes.insert(dec_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  dec_sizes.push_back(ds.n_x);
  result.decoder = Mlp(dec_sizes, derive_seed(cfg.seed, streams::kTraining, 1));
  result.decoder.input_norm() = Standardization::fit(Zr);
  result.decoder.output_norm() = Standardization::fit(Xr);
  Adam dec_opt(result.decoder, cfg.beta1, cfg.beta2, cfg.adam_eps);

  Adam enc_opt;
  if (cfg.train_encoder) {
    std::vector<std::size_t> enc_sizes{ds.n_x};
    enc_sizes.insert(enc_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    enc_sizes.push_back(ds.n_z);
    result.encoder = Mlp(enc_sizes, derive_seed(cfg.seed, streams::kTraining, 2));
    result.encoder->input_norm() = Standardization::fit(Xr);
    result.encoder->output_norm() = Standardization::fit(Zr);
    enc_opt = Adam(*result.encoder, cfg.beta1, cfg.beta2, cfg.adam_eps);
  }

  const bool physics = cfg.enable_physics_loss && Xp.cols() > 0;
  PhysicsTerms phys;
  if (physics) phys = physics_terms(*sys, *obs, Xp);

  auto total_loss = [&](const Mat& X, const Mat& Z) {
    double l = loss_regression(result.encoder ? &*result.encoder : nullptr, result.decoder, X, Z,
                               cfg.chi);
    if (physics) l += cfg.lambda * physics_loss(*result.encoder, Xp, phys, obs->A);
    return l;
  };

  auto& rep = result.report;
  rep.initial_loss = total_loss(Xr, Zr);
  const std::size_t n = static_cast<std::size_t>(Xr.cols());
  const std::size_t np = static_cast<std::size_t>(Xp.cols());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.learning_rate *
        std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.decay_interval));
    const auto perm = detail::permutation(n, derive_seed(cfg.seed, streams::kTraining, 100 + epoch));
    std::vector<Eigen::Index> pperm;
    if (physics) pperm = detail::permutation(np, derive_seed(cfg.seed, streams::kTraining, 1u << 20 | epoch));
    double acc = 0.0;
    std::size_t pcursor = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      const std::vector<Eigen::Index> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                          perm.begin() + static_cast<std::ptrdiff_t>(start + bs));
      const Mat Xb = Xr(Eigen::all, idx);
      const Mat Zb = Zr(Eigen::all, idx);
      Gradients gd = result.decoder.zero_gradients();
      double loss = 0.0;
      if (result.encoder) {
        Gradients ge = result.encoder->zero_gradients();
        loss = encoder_decoder_loss(*result.encoder, result.decoder, Xb, Zb, cfg.chi, &ge, &gd);
        if (physics) {
          std::vector<Eigen::Index> pidx(bs);
          for (auto& p : pidx) p = pperm[pcursor++ % np];
          const PhysicsTerms pb{phys.F(Eigen::all, pidx), phys.BH(Eigen::all, pidx)};
          Gradients gp = result.encoder->zero_gradients();
          loss += cfg.lambda * physics_loss(*result.encoder, Xp(Eigen::all, pidx), pb, obs->A, &gp);
          ge.add(gp, cfg.lambda);
        }
        enc_opt.step(*result.encoder, ge, lr);
      } else {
        loss = decoder_loss(result.decoder, Xb, Zb, &gd);
      }
      if (!std::isfinite(loss)) {
        rep.diverged = true;
        rep.message = "non-finite loss in epoch " + std::to_string(epoch + 1);
        return result;
      }
      if (cfg.chi > 0.0 || !result.encoder) dec_opt.step(result.decoder, gd, lr);
      acc += loss * static_cast<double>(bs);
    }
    rep.epoch_loss.push_back(acc / static_cast<double>(n));
    rep.epoch_lr.push_back(lr);
  }
  rep.final_loss = total_loss(Xr, Zr);
  if (!std::isfinite(rep.final_loss)) {
    rep.diverged = true;
    rep.message = "non-finite final loss";
    return result;
  }
  std::tie(rep.train_rmse, rep.train_max) = detail::decoder_error_stats(result.decoder, Xr, Zr);
  std::tie(rep.heldout_rmse, rep.heldout_max) = detail::decoder_error_stats(result.decoder, Xp, Zp);
  return result;
}

struct ApproxErrors {
  double eps_star_hat = 0.0;            // max ||x - D(z)||
  std::optional<double> eps_hat;        // max ||z - E(x)||, encoder only
};

/// Exact maxima of the approximation errors over a (noise-free, fault-free)
/// test set.
inline ApproxErrors estimate_errors(const Mlp* encoder, const Mlp& decoder, const Dataset& test) {
  require(test.total_samples() > 0, "estimate_errors: empty test set");
  ApproxErrors e;
  double eh = 0.0;
  for (const auto& tr : test.trajectories) {
    if (tr.x.cols() == 0) continue;
    e.eps_star_hat =
        std::max(e.eps_star_hat, (decoder.forward(tr.z) - tr.x).colwise().norm().maxCoeff());
    if (encoder) eh = std::max(eh, (encoder->forward(tr.x) - tr.z).colwise().norm().maxCoeff());
  }
  if (encoder) e.eps_hat = eh;
  return e;
}

}  // namespace kklfdi
