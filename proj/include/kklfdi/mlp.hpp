#pragma once

#include "kklfdi/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace kklfdi {

/// Per-component affine map u = (v - mean) / scale.
struct Standardization {
  Vec mean;
  Vec scale;

  static Standardization identity(std::size_t n) {
    const auto ni = static_cast<Eigen::Index>(n);
    return {Vec::Zero(ni), Vec::Ones(ni)};
  }

  /// Mean and population standard deviation of the columns' components.
  /// Components with (near) zero spread keep scale 1.
  static Standardization fit(const Mat& samples) {
    require(samples.cols() > 0, "Standardization::fit: no samples");
    Standardization s;
    s.mean = samples.rowwise().mean();
    s.scale = ((samples.colwise() - s.mean).array().square().rowwise().mean()).sqrt().matrix();
    for (Eigen::Index i = 0; i < s.scale.size(); ++i)
      if (!(s.scale[i] > 1e-12)) s.scale[i] = 1.0;
    return s;
  }

  Mat apply(const Mat& v) const {
    return ((v.colwise() - mean).array().colwise() / scale.array()).matrix();
  }
  Mat invert(const Mat& u) const {
    return ((u.array().colwise() * scale.array()).matrix().colwise() + mean);
  }
};

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;
};

/// Parameter-shaped container for gradients and optimizer moments.
struct Gradients {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  void scale(double s) {
    for (auto& w : dW) w *= s;
    for (auto& b : db) b *= s;
  }
  void add(const Gradients& o, double s = 1.0) {
    for (std::size_t l = 0; l < dW.size(); ++l) {
      dW[l] += s * o.dW[l];
      db[l] += s * o.db[l];
    }
  }
  double squared_norm() const {
    double n = 0.0;
    for (std::size_t l = 0; l < dW.size(); ++l) n += dW[l].squaredNorm() + db[l].squaredNorm();
    return n;
  }
};

/// Activations kept for the backward pass. `tangent` fields are filled only
/// when a forward-mode direction is propagated as well.
struct ForwardCache {
  std::vector<Mat> act;    // act[l] is the (standardized) input to layer l
  std::vector<Mat> pre;    // pre-activations of layer l
  std::vector<Mat> dact;   // tangent of act
  bool has_tangent = false;
};

/// Fully connected network, rectified-linear hidden layers and identity
/// output, wrapped in input/output standardization.
class Mlp {
 public:
  Mlp() = default;

  /// `sizes` = {in, hidden..., out}. Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    require(sizes.size() >= 2, "Mlp: need at least input and output sizes");
    for (auto s : sizes) require(s >= 1, "Mlp: layer sizes must be positive");
    std::mt19937_64 eng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes[l]);
      const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      DenseLayer layer{Mat(out, in), Vec(out)};
      for (Eigen::Index j = 0; j < in; ++j)
        for (Eigen::Index i = 0; i < out; ++i)
          layer.weight(i, j) = bound * (2.0 * uniform01(eng) - 1.0);
      for (Eigen::Index i = 0; i < out; ++i) layer.bias[i] = bound * (2.0 * uniform01(eng) - 1.0);
      layers_.push_back(std::move(layer));
    }
    in_norm_ = Standardization::identity(sizes.front());
    out_norm_ = Standardization::identity(sizes.back());
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }
  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s{input_dim()};
    for (const auto& l : layers_) s.push_back(static_cast<std::size_t>(l.weight.rows()));
    return s;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  Standardization& input_norm() { return in_norm_; }
  const Standardization& input_norm() const { return in_norm_; }
  Standardization& output_norm() { return out_norm_; }
  const Standardization& output_norm() const { return out_norm_; }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& l : layers_) {
      g.dW.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
      g.db.push_back(Vec::Zero(l.bias.size()));
    }
    return g;
  }

  /// Batched forward pass; one column per sample.
  Mat forward(const Mat& X) const {
    check_input(X.rows());
    Mat a = in_norm_.apply(X);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat s = layers_[l].weight * a;
      s.colwise() += layers_[l].bias;
      if (l + 1 < layers_.size())
        a = s.cwiseMax(0.0);
      else
        a = std::move(s);
    }
    return out_norm_.invert(a);
  }

  Vec eval(const Vec& x) const { return forward(Mat(x)).col(0); }

  /// Forward pass keeping what the backward pass needs. If `dX` is non-null
  /// the directional derivative J(x) dX is propagated alongside and returned
  /// through `dOut`.
  Mat forward(const Mat& X, ForwardCache& cache, const Mat* dX = nullptr,
              Mat* dOut = nullptr) const {
    check_input(X.rows());
    const std::size_t L = layers_.size();
    cache.act.assign(L, Mat());
    cache.pre.assign(L, Mat());
    cache.has_tangent = dX != nullptr;
    cache.dact.assign(cache.has_tangent ? L : 0, Mat());
    cache.act[0] = in_norm_.apply(X);
    if (dX) cache.dact[0] = (dX->array().colwise() / in_norm_.scale.array()).matrix();
    for (std::size_t l = 0; l < L; ++l) {
      Mat s = layers_[l].weight * cache.act[l];
      s.colwise() += layers_[l].bias;
      Mat ds;
      if (dX) ds = layers_[l].weight * cache.dact[l];
      if (l + 1 < L) {
        cache.act[l + 1] = s.cwiseMax(0.0);
        if (dX) cache.dact[l + 1] = (s.array() > 0.0).select(ds.array(), 0.0).matrix();
      } else if (dX && dOut) {
        *dOut = (ds.array().colwise() * out_norm_.scale.array()).matrix();
      }
      cache.pre[l] = std::move(s);
    }
    return out_norm_.invert(cache.pre[L - 1]);
  }

  /// Reverse pass. `gOut` is dLoss/dOutput (original units); `gDOut`, when
  /// the cache carries a tangent, is dLoss/d(J dX). Gradients are added into
  /// `grads`; the return value is dLoss/dX (primal input, original units).
  Mat backward(const ForwardCache& cache, const Mat& gOut, Gradients& grads,
               const Mat* gDOut = nullptr) const {
    const std::size_t L = layers_.size();
    const bool tangent = gDOut != nullptr && cache.has_tangent;
    Mat gs = (gOut.array().colwise() * out_norm_.scale.array()).matrix();
    Mat gds;
    if (tangent) gds = (gDOut->array().colwise() * out_norm_.scale.array()).matrix();
    for (std::size_t li = L; li-- > 0;) {
      grads.dW[li].noalias() += gs * cache.act[li].transpose();
      grads.db[li] += gs.rowwise().sum();
      if (tangent) grads.dW[li].noalias() += gds * cache.dact[li].transpose();
      Mat ga = layers_[li].weight.transpose() * gs;
      Mat gda;
      if (tangent) gda = layers_[li].weight.transpose() * gds;
      if (li == 0) {
        return (ga.array().colwise() / in_norm_.scale.array()).matrix();
      }
      const auto mask = (cache.pre[li - 1].array() > 0.0);
      gs = mask.select(ga.array(), 0.0).matrix();
      if (tangent) gds = mask.select(gda.array(), 0.0).matrix();
    }
    return {};
  }

  /// Exact Jacobian d output / d input, rectifier'(0) = 0.
  Mat jacobian(const Vec& x) const {
    check_input(x.size());
    Vec a = in_norm_.apply(Mat(x)).col(0);
    Mat J = Mat(in_norm_.scale.cwiseInverse().asDiagonal());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Vec s = layers_[l].weight * a + layers_[l].bias;
      J = layers_[l].weight * J;
      if (l + 1 < layers_.size()) {
        for (Eigen::Index i = 0; i < s.size(); ++i)
          if (!(s[i] > 0.0)) J.row(i).setZero();
        a = s.cwiseMax(0.0);
      }
    }
    return out_norm_.scale.asDiagonal() * J;
  }

  /// Upper bound on the Lipschitz constant: product of layer spectral norms
  /// (power iteration) times the standardization gains.
  double lipschitz_bound(int max_iter = 500, double tol = 1e-12) const {
    double bound = out_norm_.scale.maxCoeff() / in_norm_.scale.minCoeff();
    for (const auto& l : layers_) bound *= spectral_norm(l.weight, max_iter, tol);
    return bound;
  }

  static double spectral_norm(const Mat& W, int max_iter = 500, double tol = 1e-12) {
    Vec v = Vec::Ones(W.cols()).normalized();
    double sigma = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      Vec u = W.transpose() * (W * v);
      const double n = u.norm();
      if (n == 0.0) return 0.0;
      v = u / n;
      const double next = std::sqrt(n);
      if (std::abs(next - sigma) <= tol * next) {
        sigma = next;
        break;
      }
      sigma = next;
    }
    return sigma;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l)
      if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias)
        return false;
    return a.in_norm_.mean == b.in_norm_.mean && a.in_norm_.scale == b.in_norm_.scale &&
           a.out_norm_.mean == b.out_norm_.mean && a.out_norm_.scale == b.out_norm_.scale;
  }

 private:
  void check_input(Eigen::Index rows) const {
    require(!layers_.empty(), "Mlp: network has no layers");
    require(rows == layers_.front().weight.cols(), "Mlp: input dimension mismatch");
  }

  std::vector<DenseLayer> layers_;
  Standardization in_norm_;
  Standardization out_norm_;
};

}  // namespace kklfdi
