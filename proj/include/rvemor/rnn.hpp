#pragma once

// FFN_I -> GRU -> FFN_O sequence model mapping (U11, U12) histories to POD
// coefficient histories, with full backpropagation through time and Adam.
//
// Per step, with normalized input x and hidden state h (h_0 = -1):
//   e  = leaky(W_i x + b_i)
//   z  = sigm(W_z e + R_z h + b_z),  r = sigm(W_r e + R_r h + b_r)
//   c  = tanh(W_c e + R_c (r . h) + b_c)
//   h' = (1 - z) . h + z . c
//   y  = W_2 leaky(W_1 h' + b_1) + b_2,   alpha = out_mean + out_scale . y
//
// All parameters live in one flat vector; the order of the blocks below is
// also the order in the model file.

#include "rvemor/errors.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace rvemor {

struct RnnDims {
  int n_in = 2;
  int d_in = 32;
  int d_h = 128;
  int d_out = 128;
  int n_b = 20;

  bool operator==(const RnnDims&) const = default;
  void validate() const {
    if (n_in < 1 || d_in < 1 || d_h < 1 || d_out < 1 || n_b < 1)
      throw ConfigError("rnn dimensions must be positive");
  }
};

/// Offsets of the parameter blocks in the flat vector.
struct RnnLayout {
  RnnDims dims;
  Eigen::Index W_i, b_i, W_g, R_zr, R_c, b_g, W_1, b_1, W_2, b_2, size;

  explicit RnnLayout(const RnnDims& d) : dims(d) {
    Eigen::Index o = 0;
    auto take = [&o](Eigen::Index n) {
      const Eigen::Index at = o;
      o += n;
      return at;
    };
    W_i = take(Eigen::Index(d.d_in) * d.n_in);
    b_i = take(d.d_in);
    W_g = take(Eigen::Index(3) * d.d_h * d.d_in);
    R_zr = take(Eigen::Index(2) * d.d_h * d.d_h);
    R_c = take(Eigen::Index(d.d_h) * d.d_h);
    b_g = take(Eigen::Index(3) * d.d_h);
    W_1 = take(Eigen::Index(d.d_out) * d.d_h);
    b_1 = take(d.d_out);
    W_2 = take(Eigen::Index(d.n_b) * d.d_out);
    b_2 = take(d.n_b);
    size = o;
  }
};

/// Matrix views into a flat parameter (or gradient) vector.
template <class Scalar>
struct RnnView {
  using Mat = Eigen::Map<std::conditional_t<std::is_const_v<Scalar>, const Eigen::MatrixXd, Eigen::MatrixXd>>;
  using Vec = Eigen::Map<std::conditional_t<std::is_const_v<Scalar>, const Eigen::VectorXd, Eigen::VectorXd>>;
  Mat W_i;
  Vec b_i;
  /// Rows [z; r; c].
  Mat W_g;
  /// Rows [z; r].
  Mat R_zr;
  Mat R_c;
  Vec b_g;
  Mat W_1;
  Vec b_1;
  Mat W_2;
  Vec b_2;

  RnnView(Scalar* p, const RnnLayout& L)
      : W_i(p + L.W_i, L.dims.d_in, L.dims.n_in), b_i(p + L.b_i, L.dims.d_in),
        W_g(p + L.W_g, 3 * L.dims.d_h, L.dims.d_in), R_zr(p + L.R_zr, 2 * L.dims.d_h, L.dims.d_h),
        R_c(p + L.R_c, L.dims.d_h, L.dims.d_h), b_g(p + L.b_g, 3 * L.dims.d_h),
        W_1(p + L.W_1, L.dims.d_out, L.dims.d_h), b_1(p + L.b_1, L.dims.d_out),
        W_2(p + L.W_2, L.dims.n_b, L.dims.d_out), b_2(p + L.b_2, L.dims.n_b) {}
};

struct Normalization {
  Eigen::VectorXd in_mean, in_scale, out_mean, out_scale;

  Eigen::VectorXd normalize_input(const Eigen::VectorXd& x) const {
    return (x - in_mean).cwiseQuotient(in_scale);
  }
  Eigen::VectorXd denormalize_input(const Eigen::VectorXd& x) const {
    return x.cwiseProduct(in_scale) + in_mean;
  }
  Eigen::VectorXd normalize_output(const Eigen::VectorXd& a) const {
    return (a - out_mean).cwiseQuotient(out_scale);
  }
  Eigen::VectorXd denormalize_output(const Eigen::VectorXd& y) const {
    return y.cwiseProduct(out_scale) + out_mean;
  }
};

struct RnnModel {
  RnnDims dims;
  Eigen::VectorXd theta;
  Normalization norm;
  double leaky_slope = 0.01;
  double hidden_init = -1.0;
  /// Fingerprint of the basis the targets were projected on (0 if unknown).
  std::uint64_t basis_fingerprint = 0;

  RnnLayout layout() const { return RnnLayout(dims); }
  RnnView<const double> view() const { return {theta.data(), layout()}; }
  RnnView<double> view() { return {theta.data(), layout()}; }

  void validate() const {
    dims.validate();
    if (theta.size() != layout().size) throw DataMismatchError("rnn parameter count does not match dims");
    if (norm.in_mean.size() != dims.n_in || norm.in_scale.size() != dims.n_in ||
        norm.out_mean.size() != dims.n_b || norm.out_scale.size() != dims.n_b)
      throw DataMismatchError("rnn normalization statistics have wrong size");
    if ((norm.in_scale.array() <= 0.0).any() || (norm.out_scale.array() <= 0.0).any())
      throw DataMismatchError("rnn normalization scales must be positive");
  }
};

/// Sequence of (U11, U12) inputs (n_in x T) and coefficient targets (n_b x T).
struct SequenceSample {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;

  int length() const { return static_cast<int>(inputs.cols()); }
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

/// Glorot-uniform weights, zero biases, identity normalization.
inline RnnModel init_model(const RnnDims& dims, std::uint64_t seed) {
  dims.validate();
  RnnModel m;
  m.dims = dims;
  const RnnLayout L(dims);
  m.theta = Eigen::VectorXd::Zero(L.size);
  std::mt19937_64 rng(seed);
  auto fill = [&](Eigen::Index off, Eigen::Index rows, Eigen::Index cols, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < rows * cols; ++i)
      m.theta(off + i) = a * (2.0 * detail::unit_uniform(rng) - 1.0);
  };
  fill(L.W_i, dims.d_in, dims.n_in, dims.n_in, dims.d_in);
  // per gate: input and recurrent matrices initialized separately
  {
    auto v = m.view();
    for (int g = 0; g < 3; ++g) {
      const double a = std::sqrt(6.0 / (dims.d_in + dims.d_h));
      for (Eigen::Index j = 0; j < dims.d_in; ++j)
        for (Eigen::Index i = 0; i < dims.d_h; ++i)
          v.W_g(g * dims.d_h + i, j) = a * (2.0 * detail::unit_uniform(rng) - 1.0);
    }
    const double a = std::sqrt(6.0 / (2.0 * dims.d_h));
    for (Eigen::Index j = 0; j < dims.d_h; ++j)
      for (Eigen::Index i = 0; i < 2 * dims.d_h; ++i) v.R_zr(i, j) = a * (2.0 * detail::unit_uniform(rng) - 1.0);
    for (Eigen::Index j = 0; j < dims.d_h; ++j)
      for (Eigen::Index i = 0; i < dims.d_h; ++i) v.R_c(i, j) = a * (2.0 * detail::unit_uniform(rng) - 1.0);
  }
  fill(L.W_1, dims.d_out, dims.d_h, dims.d_h, dims.d_out);
  fill(L.W_2, dims.n_b, dims.d_out, dims.d_out, dims.n_b);
  m.norm.in_mean = Eigen::VectorXd::Zero(dims.n_in);
  m.norm.in_scale = Eigen::VectorXd::Ones(dims.n_in);
  m.norm.out_mean = Eigen::VectorXd::Zero(dims.n_b);
  m.norm.out_scale = Eigen::VectorXd::Ones(dims.n_b);
  return m;
}

/// Inputs standardized over all samples and steps; outputs scaled by their
/// max-abs per coefficient (mean kept at zero so alpha = 0 maps to y = 0).
inline Normalization fit_normalization(const std::vector<SequenceSample>& data, int n_in, int n_b) {
  Normalization n;
  n.in_mean = Eigen::VectorXd::Zero(n_in);
  n.in_scale = Eigen::VectorXd::Ones(n_in);
  n.out_mean = Eigen::VectorXd::Zero(n_b);
  n.out_scale = Eigen::VectorXd::Ones(n_b);
  double count = 0.0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_in), sq = Eigen::VectorXd::Zero(n_in);
  Eigen::VectorXd amax = Eigen::VectorXd::Zero(n_b);
  for (const auto& s : data) {
    if (s.inputs.rows() != n_in || s.targets.rows() != n_b || s.inputs.cols() != s.targets.cols())
      throw DataMismatchError("sequence sample shapes are inconsistent");
    count += s.length();
    sum += s.inputs.rowwise().sum();
    if (s.length() > 0) amax = amax.cwiseMax(s.targets.cwiseAbs().rowwise().maxCoeff());
  }
  if (count == 0.0) return n;
  n.in_mean = sum / count;
  for (const auto& s : data)
    sq += (s.inputs.colwise() - n.in_mean).array().square().matrix().rowwise().sum();
  for (int i = 0; i < n_in; ++i) {
    const double sd = std::sqrt(sq(i) / count);
    n.in_scale(i) = sd > 1e-12 ? sd : 1.0;
  }
  for (int j = 0; j < n_b; ++j) n.out_scale(j) = amax(j) > 0.0 ? amax(j) : 1.0;
  return n;
}

inline double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

/// One GRU recurrence on a feature column.
inline Eigen::VectorXd gru_cell(const Eigen::VectorXd& e, const Eigen::VectorXd& h_prev, const RnnModel& m) {
  const auto v = m.view();
  const int H = m.dims.d_h;
  const Eigen::VectorXd gx = v.W_g * e + v.b_g;
  const Eigen::VectorXd gh = v.R_zr * h_prev;
  Eigen::VectorXd z(H), r(H);
  for (int i = 0; i < H; ++i) {
    z(i) = detail::sigmoid(gx(i) + gh(i));
    r(i) = detail::sigmoid(gx(H + i) + gh(H + i));
  }
  const Eigen::VectorXd rh = r.cwiseProduct(h_prev);
  const Eigen::VectorXd pc = gx.tail(H) + v.R_c * rh;
  Eigen::VectorXd h(H);
  for (int i = 0; i < H; ++i) h(i) = (1.0 - z(i)) * h_prev(i) + z(i) * std::tanh(pc(i));
  return h;
}

/// Forward activations kept for backpropagation.
struct ForwardTrace {
  Eigen::MatrixXd X;      // normalized inputs, n_in x T
  Eigen::MatrixXd A, E;   // input layer pre/post activation, d_in x T
  Eigen::MatrixXd Z, R, C; // gates, d_h x T
  Eigen::MatrixXd H;      // hidden states h_0 .. h_T, d_h x (T + 1)
  Eigen::MatrixXd O, Q;   // output hidden layer pre/post, d_out x T
  Eigen::MatrixXd Y;      // normalized outputs, n_b x T
  Eigen::MatrixXd alpha;  // de-normalized outputs, n_b x T
};

inline ForwardTrace forward_sequence(const Eigen::MatrixXd& inputs, const RnnModel& m) {
  const RnnDims& d = m.dims;
  if (inputs.rows() != d.n_in) throw DataMismatchError("input width does not match the model");
  const auto v = m.view();
  const Eigen::Index T = inputs.cols();
  const int Hd = d.d_h;
  ForwardTrace t;
  t.X = (inputs.colwise() - m.norm.in_mean).array().colwise() / m.norm.in_scale.array();
  t.A = (v.W_i * t.X).colwise() + v.b_i;
  t.E = t.A.unaryExpr([&](double x) { return leaky(x, m.leaky_slope); });
  const Eigen::MatrixXd GX = (v.W_g * t.E).colwise() + v.b_g;
  t.Z.resize(Hd, T);
  t.R.resize(Hd, T);
  t.C.resize(Hd, T);
  t.H.resize(Hd, T + 1);
  t.H.col(0).setConstant(m.hidden_init);
  Eigen::VectorXd gh(2 * Hd), rh(Hd), pc(Hd);
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto hp = t.H.col(k);
    gh.noalias() = v.R_zr * hp;
    for (int i = 0; i < Hd; ++i) {
      t.Z(i, k) = detail::sigmoid(GX(i, k) + gh(i));
      t.R(i, k) = detail::sigmoid(GX(Hd + i, k) + gh(Hd + i));
      rh(i) = t.R(i, k) * hp(i);
    }
    pc.noalias() = v.R_c * rh;
    for (int i = 0; i < Hd; ++i) {
      t.C(i, k) = std::tanh(GX(2 * Hd + i, k) + pc(i));
      t.H(i, k + 1) = (1.0 - t.Z(i, k)) * hp(i) + t.Z(i, k) * t.C(i, k);
    }
  }
  t.O = (v.W_1 * t.H.rightCols(T)).colwise() + v.b_1;
  t.Q = t.O.unaryExpr([&](double x) { return leaky(x, m.leaky_slope); });
  t.Y = (v.W_2 * t.Q).colwise() + v.b_2;
  t.alpha = (t.Y.array().colwise() * m.norm.out_scale.array()).colwise() + m.norm.out_mean.array();
  return t;
}

/// (1/n) sum_i ||pred_i - target_i||^2 over the n columns.
inline double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DataMismatchError("prediction and target shapes differ");
  if (pred.cols() == 0) return 0.0;
  return (pred - target).squaredNorm() / double(pred.cols());
}

/// Space in which the squared error is measured: raw coefficients or the
/// normalized network outputs.
enum class LossSpace { raw, normalized };

inline double sequence_loss(const ForwardTrace& t, const SequenceSample& s, const RnnModel& m, LossSpace space) {
  if (space == LossSpace::raw) return mse_loss(t.alpha, s.targets);
  const Eigen::MatrixXd yt =
      (s.targets.colwise() - m.norm.out_mean).array().colwise() / m.norm.out_scale.array();
  return mse_loss(t.Y, yt);
}

/// Gradient of sequence_loss with respect to theta by full BPTT.
inline Eigen::VectorXd backward_sequence(const SequenceSample& s, const RnnModel& m, const ForwardTrace& t,
                                         LossSpace space = LossSpace::normalized) {
  const RnnDims& d = m.dims;
  const RnnLayout L(d);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(L.size);
  const Eigen::Index T = s.length();
  if (T == 0) return grad;
  if (s.targets.rows() != d.n_b || t.Y.cols() != T) throw DataMismatchError("trace does not match the sample");
  const auto v = m.view();
  RnnView<double> g(grad.data(), L);
  const int Hd = d.d_h;

  // dL/dY
  Eigen::MatrixXd dY;
  if (space == LossSpace::raw) {
    dY = (2.0 / double(T)) * (t.alpha - s.targets);
    dY = dY.array().colwise() * m.norm.out_scale.array();
  } else {
    const Eigen::MatrixXd yt =
        (s.targets.colwise() - m.norm.out_mean).array().colwise() / m.norm.out_scale.array();
    dY = (2.0 / double(T)) * (t.Y - yt);
  }
  g.W_2.noalias() = dY * t.Q.transpose();
  g.b_2 = dY.rowwise().sum();
  Eigen::MatrixXd dO = v.W_2.transpose() * dY;
  dO.array() *= t.O.unaryExpr([&](double x) { return x > 0.0 ? 1.0 : m.leaky_slope; }).array();
  g.W_1.noalias() = dO * t.H.rightCols(T).transpose();
  g.b_1 = dO.rowwise().sum();
  const Eigen::MatrixXd dH_out = v.W_1.transpose() * dO;

  // recurrence, backwards in time
  Eigen::MatrixXd dG(3 * Hd, T); // pre-activation gradients [z; r; c]
  Eigen::MatrixXd RH(Hd, T);     // r . h_prev
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(Hd), dh_prev(Hd), drh(Hd), dzr(2 * Hd);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    dh += dH_out.col(k);
    const auto hp = t.H.col(k);
    for (int i = 0; i < Hd; ++i) {
      const double z = t.Z(i, k), c = t.C(i, k);
      dG(i, k) = dh(i) * (c - hp(i)) * z * (1.0 - z);
      dG(2 * Hd + i, k) = dh(i) * z * (1.0 - c * c);
      dh_prev(i) = dh(i) * (1.0 - z);
      RH(i, k) = t.R(i, k) * hp(i);
    }
    drh.noalias() = v.R_c.transpose() * dG.col(k).tail(Hd);
    for (int i = 0; i < Hd; ++i) {
      const double r = t.R(i, k);
      dG(Hd + i, k) = drh(i) * hp(i) * r * (1.0 - r);
      dh_prev(i) += drh(i) * r;
    }
    dh_prev.noalias() += v.R_zr.transpose() * dG.col(k).head(2 * Hd);
    dh = dh_prev;
  }
  g.W_g.noalias() = dG * t.E.transpose();
  g.b_g = dG.rowwise().sum();
  g.R_zr.noalias() = dG.topRows(2 * Hd) * t.H.leftCols(T).transpose();
  g.R_c.noalias() = dG.bottomRows(Hd) * RH.transpose();
  Eigen::MatrixXd dA = v.W_g.transpose() * dG;
  dA.array() *= t.A.unaryExpr([&](double x) { return x > 0.0 ? 1.0 : m.leaky_slope; }).array();
  g.W_i.noalias() = dA * t.X.transpose();
  g.b_i = dA.rowwise().sum();
  return grad;
}

inline Eigen::VectorXd backward_sequence(const SequenceSample& s, const RnnModel& m,
                                         LossSpace space = LossSpace::normalized) {
  return backward_sequence(s, m, forward_sequence(s.inputs, m), space);
}

struct TrainConfig {
  /// Initial step size; decays along a half cosine to lr_final at the last
  /// epoch (lr_final = learning_rate gives a constant rate).
  double learning_rate = 1e-3;
  double lr_final = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 20000;
  /// Epochs spent on one sequence before moving to the next (round robin).
  int switch_every = 1;
  double hidden_init = -1.0;
  double leaky_slope = 0.01;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  LossSpace loss_space = LossSpace::raw;
  /// History rows are written every log_every epochs (and at the last one).
  int log_every = 10;
  /// Stop once the epoch's batch loss falls below this (0 disables).
  double stop_below = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(lr_final > 0.0) || lr_final > learning_rate)
      throw ConfigError("train.lr_final must be positive and at most train.learning_rate");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
    if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
    if (switch_every < 1) throw ConfigError("train.switch_every must be at least 1");
    if (log_every < 1) throw ConfigError("train.log_every must be at least 1");
    if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  }
};

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;
};

/// Step size at a 1-based epoch of the cosine schedule.
inline double learning_rate_at(const TrainConfig& c, int epoch) {
  if (c.epochs <= 1) return c.learning_rate;
  const double t = double(epoch - 1) / double(c.epochs - 1);
  return c.lr_final + 0.5 * (c.learning_rate - c.lr_final) * (1.0 + std::cos(std::acos(-1.0) * t));
}

/// theta -= lr * mhat / (sqrt(vhat) + eps), bias-corrected.
inline void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& st, const TrainConfig& c) {
  if (st.m.size() != theta.size()) {
    st.m = Eigen::VectorXd::Zero(theta.size());
    st.v = Eigen::VectorXd::Zero(theta.size());
    st.step = 0;
  }
  if (grad.size() != theta.size()) throw DataMismatchError("gradient size does not match parameters");
  ++st.step;
  st.m = c.beta1 * st.m + (1.0 - c.beta1) * grad;
  st.v = c.beta2 * st.v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double b1 = 1.0 - std::pow(c.beta1, double(st.step));
  const double b2 = 1.0 - std::pow(c.beta2, double(st.step));
  theta.array() -= c.learning_rate * (st.m.array() / b1) / ((st.v.array() / b2).sqrt() + c.eps);
}

struct LossRecord {
  int epoch = 0;
  double train = 0.0;
  /// NaN when there is no validation data.
  double validation = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  RnnModel model;
  std::vector<LossRecord> history;
  int epochs_run = 0;
  double seconds = 0.0;
};

/// Mean of sequence_loss over a dataset.
inline double dataset_loss(const std::vector<SequenceSample>& data, const RnnModel& m, LossSpace space) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& s : data) sum += sequence_loss(forward_sequence(s.inputs, m), s, m, space);
  return sum / double(data.size());
}

/// Epoch loop: one sequence per batch, round robin, BPTT + clipped Adam.
/// The model is initialized from `dims` and cfg.seed unless `init` is given;
/// normalization is always refit on `train_data`.
inline TrainResult train(const std::vector<SequenceSample>& train_data, const std::vector<SequenceSample>& val_data,
                         const RnnDims& dims, const TrainConfig& cfg,
                         const std::optional<RnnModel>& init = std::nullopt) {
  cfg.validate();
  if (train_data.empty()) throw ConfigError("training needs at least one sequence");
  const int T = train_data.front().length();
  for (const auto& s : train_data)
    if (s.length() != T) throw DataMismatchError("training sequences must share one length");
  TrainResult out;
  out.model = init ? *init : init_model(dims, cfg.seed);
  out.model.validate();
  out.model.hidden_init = cfg.hidden_init;
  out.model.leaky_slope = cfg.leaky_slope;
  out.model.norm = fit_normalization(train_data, out.model.dims.n_in, out.model.dims.n_b);
  for (const auto& s : val_data)
    if (s.inputs.rows() != out.model.dims.n_in || s.targets.rows() != out.model.dims.n_b)
      throw DataMismatchError("validation sample shapes do not match the model");

  const auto t0 = std::chrono::steady_clock::now();
  AdamState adam;
  TrainConfig step_cfg = cfg;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const SequenceSample& s = train_data[((epoch - 1) / cfg.switch_every) % train_data.size()];
    const ForwardTrace trace = forward_sequence(s.inputs, out.model);
    const double loss = sequence_loss(trace, s, out.model, cfg.loss_space);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "non-finite training loss at epoch " << epoch << " (parameter norm " << out.model.theta.norm() << ")";
      throw NonConvergenceError(os.str());
    }
    Eigen::VectorXd grad = backward_sequence(s, out.model, trace, cfg.loss_space);
    const double gn = grad.norm();
    if (gn > cfg.clip_norm) grad *= cfg.clip_norm / gn;
    step_cfg.learning_rate = learning_rate_at(cfg, epoch);
    adam_step(out.model.theta, grad, adam, step_cfg);
    out.epochs_run = epoch;
    const bool stop = cfg.stop_below > 0.0 && loss < cfg.stop_below;
    if (epoch % cfg.log_every == 0 || epoch == cfg.epochs || stop) {
      LossRecord rec;
      rec.epoch = epoch;
      rec.train = loss;
      if (!val_data.empty()) rec.validation = dataset_loss(val_data, out.model, cfg.loss_space);
      out.history.push_back(rec);
    }
    if (stop) break;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Online use: one step at a time with a carried hidden state.
class RnnStepper {
public:
  explicit RnnStepper(const RnnModel& m) : m_(m), h_(Eigen::VectorXd::Constant(m.dims.d_h, m.hidden_init)) {
    m_.validate();
  }

  Eigen::VectorXd step(const Eigen::VectorXd& input) {
    if (input.size() != m_.dims.n_in) throw DataMismatchError("input width does not match the model");
    const auto v = m_.view();
    const Eigen::VectorXd x = m_.norm.normalize_input(input);
    const Eigen::VectorXd e =
        (v.W_i * x + v.b_i).unaryExpr([&](double a) { return leaky(a, m_.leaky_slope); });
    h_ = gru_cell(e, h_, m_);
    const Eigen::VectorXd q =
        (v.W_1 * h_ + v.b_1).unaryExpr([&](double a) { return leaky(a, m_.leaky_slope); });
    return m_.norm.denormalize_output(v.W_2 * q + v.b_2);
  }
  const Eigen::VectorXd& hidden() const { return h_; }
  void reset() { h_.setConstant(m_.hidden_init); }

private:
  RnnModel m_;
  Eigen::VectorXd h_;
};

struct SweepRow {
  int d_in = 0, d_h = 0, d_out = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  /// Empty on success.
  std::string error;
};

/// One training run per grid point (same seed and budget); terminal losses
/// are dataset means in cfg.loss_space. Failures are recorded per row.
inline std::vector<SweepRow> hyper_sweep(const std::vector<int>& d_in, const std::vector<int>& d_h,
                                         const std::vector<int>& d_out, const std::vector<SequenceSample>& train_data,
                                         const std::vector<SequenceSample>& val_data, int n_b,
                                         const TrainConfig& cfg) {
  std::vector<SweepRow> rows;
  for (int a : d_in)
    for (int b : d_h)
      for (int c : d_out) {
        SweepRow row;
        row.d_in = a;
        row.d_h = b;
        row.d_out = c;
        try {
          RnnDims dims;
          dims.n_in = train_data.empty() ? 2 : static_cast<int>(train_data.front().inputs.rows());
          dims.d_in = a;
          dims.d_h = b;
          dims.d_out = c;
          dims.n_b = n_b;
          const TrainResult r = train(train_data, val_data, dims, cfg);
          row.train_loss = dataset_loss(train_data, r.model, cfg.loss_space);
          row.validation_loss = dataset_loss(val_data, r.model, cfg.loss_space);
          row.seconds = r.seconds;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        rows.push_back(row);
      }
  return rows;
}

} // namespace rvemor
