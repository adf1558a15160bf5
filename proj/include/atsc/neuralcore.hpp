#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "atsc/rng.hpp"

namespace atsc {

using Scalar = double;  // 64-bit throughout; gradient checks depend on it
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// layers

struct DenseParams {
  Matrix weight;  // out x in
  Vector bias;    // out
};

enum class Activation { Relu, Linear, Softmax };

/// Numerically stable softmax; strictly positive, sums to 1.
Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);
/// Policy entropy -sum p log p with the 0 log 0 = 0 convention.
Scalar entropy(const Vector& probs);

Vector dense_forward(const DenseParams& p, const Vector& x, Activation act);

/// Packed LSTM parameters; rows of wx/wh hold the four gates in order
/// [input, forget, output, candidate], hidden_size rows each.
struct LstmParams {
  Matrix wx;  // 4H x in
  Matrix wh;  // 4H x H
  Vector bias;
  int hidden_size = 0;
};

struct LstmCarry {
  Vector h, c;

  static LstmCarry zero(int hidden) {
    return {Vector::Zero(hidden), Vector::Zero(hidden)};
  }
};

/// One LSTM cell step (sigmoid gates, tanh candidate, tanh on the cell for
/// the output). The input carry is left untouched.
std::pair<Vector, LstmCarry> lstm_step(const LstmParams& p, const Vector& x,
                                       const LstmCarry& carry);

/// Random matrix with orthonormal columns (rows >= cols) or rows (rows < cols),
/// scaled by gain. Deterministic given the rng state.
Matrix orthogonal_init(int rows, int cols, Scalar gain, Rng& rng);

// ---------------------------------------------------------------------------
// optimizer and clipping

struct RmsPropState {
  Vector acc;  // running mean square, elementwise >= 0
  Scalar decay = 0.99;
  Scalar epsilon = 1e-5;
  Scalar learning_rate = 5e-4;

  static RmsPropState make(int n, Scalar learning_rate, Scalar decay = 0.99,
                           Scalar epsilon = 1e-5) {
    return {Vector::Zero(n), decay, epsilon, learning_rate};
  }
};

/// acc <- rho acc + (1-rho) g^2;  p <- p - eta g / sqrt(acc + eps)
void rmsprop_update(RmsPropState& state, Vector& params, const Vector& grad);

/// Elementwise clamp of normalized states into [0, 2].
Vector clip_states(Vector x);
/// Reward clamp into [-2, 2].
Scalar clip_reward(Scalar r);
/// Scales grad so its global L2 norm is at most cap; returns the norm after
/// scaling.
Scalar cap_gradients(Vector& grad, Scalar cap = 40.0);

// ---------------------------------------------------------------------------
// recurrent policy/value network: FC(128, relu) -> LSTM(64) -> head, with an
// optional fingerprint branch FC(64, relu) feeding the LSTM alongside

struct RecurrentNetSpec {
  int wave_dim = 0;
  int fp_dim = 0;  // 0 disables the fingerprint branch
  int fc_size = 128;
  int fp_fc_size = 64;
  int lstm_size = 64;
  int out_dim = 0;
  bool softmax_head = true;  // actor; false gives the critic's linear head

  int lstm_input() const { return fc_size + (fp_dim > 0 ? fp_fc_size : 0); }
};

/// Per-step forward record, kept so the exact reverse pass can run later.
struct StepTape {
  Vector wave, fp;
  Vector a1, a2;              // post-relu branch activations
  Vector z;                   // lstm input
  Vector gi, gf, go, gc;      // gate activations
  Vector c_prev, c, tanh_c, h_prev, h;
  Vector logits;
  Vector out;                 // softmax probs, or the linear head output
};

class RecurrentNet {
 public:
  RecurrentNet() = default;
  explicit RecurrentNet(const RecurrentNetSpec& spec);

  /// Orthogonal weights (gain 1), zero biases; one rng draw sequence per layer
  /// in a fixed order.
  void init(Rng& rng, Scalar gain = 1.0);

  const RecurrentNetSpec& spec() const { return spec_; }
  int param_count() const { return static_cast<int>(params.size()); }

  /// Single step without recording; carry is advanced into *out_carry when
  /// given, so bootstrap evaluations can leave the stored carry alone.
  Vector step(const Vector& wave, const Vector& fp, const LstmCarry& carry,
              LstmCarry* out_carry) const;

  /// Records a whole batch pass starting at `carry`.
  std::vector<StepTape> forward_sequence(const std::vector<Vector>& waves,
                                         const std::vector<Vector>& fps,
                                         const LstmCarry& carry) const;

  /// Exact reverse-mode gradient of sum_t <dlogits[t], logits_t> through head,
  /// LSTM (through time) and the FC branches. dlogits is the loss gradient at
  /// the head pre-activation.
  Vector backward(const std::vector<StepTape>& tape,
                  const std::vector<Vector>& dlogits) const;

  LstmCarry carry_after(const std::vector<StepTape>& tape) const;

  Vector params;  // flat; optimizer, clipping and checkpoints see only this

 private:
  struct Offsets {
    int w1, b1, w2, b2, wx, wh, bl, w3, b3, total;
  };
  RecurrentNetSpec spec_;
  Offsets off_{};

  template <typename Vec>
  auto view(Vec& v, int offset, int rows, int cols) const {
    return Eigen::Map<std::conditional_t<std::is_const_v<Vec>, const Matrix, Matrix>>(
        v.data() + offset, rows, cols);
  }
};

// ---------------------------------------------------------------------------
// plain MLP (the IQL-DNN regressor)

struct MlpTape {
  Vector input;
  std::vector<Vector> activations;  // post-relu per hidden layer
  Vector out;
};

class MlpNet {
 public:
  MlpNet() = default;
  MlpNet(int in_dim, std::vector<int> hidden, int out_dim);

  void init(Rng& rng, Scalar gain = 1.0);
  Vector forward(const Vector& x) const;
  MlpTape forward_tape(const Vector& x) const;
  Vector backward(const MlpTape& tape, const Vector& dout) const;
  int param_count() const { return static_cast<int>(params.size()); }

  Vector params;

 private:
  std::vector<int> dims_;          // in, hidden..., out
  std::vector<std::pair<int, int>> layer_off_;  // (w, b) offsets

  template <typename Vec>
  auto view(Vec& v, int offset, int rows, int cols) const {
    return Eigen::Map<std::conditional_t<std::is_const_v<Vec>, const Matrix, Matrix>>(
        v.data() + offset, rows, cols);
  }
};

}  // namespace atsc
