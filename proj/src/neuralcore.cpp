#include "atsc/neuralcore.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace atsc {

namespace {

inline Scalar sigmoid_s(Scalar x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector sigmoid(const Vector& x) { return x.unaryExpr([](Scalar v) { return sigmoid_s(v); }); }

inline Vector relu(const Vector& x) { return x.cwiseMax(0.0); }

#ifndef NDEBUG
inline void dcheck_finite(const Vector& v) { assert(v.allFinite()); }
#else
inline void dcheck_finite(const Vector&) {}
#endif

// shared cell math for the packed-parameter struct and the flat-net views
template <class MX, class MH, class VB>
void lstm_forward(const MX& wx, const MH& wh, const VB& bias, int H, const Vector& x,
                  const LstmCarry& carry, Vector& gi, Vector& gf, Vector& go, Vector& gc,
                  Vector& c_new, Vector& tanh_c, Vector& h_new) {
  Vector pre = wx * x + wh * carry.h + bias;
  gi = sigmoid(pre.segment(0, H));
  gf = sigmoid(pre.segment(H, H));
  go = sigmoid(pre.segment(2 * H, H));
  gc = pre.segment(3 * H, H).array().tanh();
  c_new = gf.cwiseProduct(carry.c) + gi.cwiseProduct(gc);
  tanh_c = c_new.array().tanh();
  h_new = go.cwiseProduct(tanh_c);
}

}  // namespace

Vector softmax(const Vector& logits) {
  const Scalar m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Vector log_softmax(const Vector& logits) {
  const Scalar m = logits.maxCoeff();
  const Scalar lse = std::log((logits.array() - m).exp().sum());
  return (logits.array() - m - lse).matrix();
}

Scalar entropy(const Vector& probs) {
  Scalar h = 0.0;
  for (int i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

Vector dense_forward(const DenseParams& p, const Vector& x, Activation act) {
  if (x.size() != p.weight.cols() || p.bias.size() != p.weight.rows())
    throw std::invalid_argument("dense_forward: shape mismatch");
  Vector y = p.weight * x + p.bias;
  switch (act) {
    case Activation::Relu: y = relu(y); break;
    case Activation::Linear: break;
    case Activation::Softmax: y = softmax(y); break;
  }
  dcheck_finite(y);
  return y;
}

std::pair<Vector, LstmCarry> lstm_step(const LstmParams& p, const Vector& x,
                                       const LstmCarry& carry) {
  const int H = p.hidden_size;
  if (p.wx.rows() != 4 * H || p.wh.rows() != 4 * H || p.wh.cols() != H ||
      p.bias.size() != 4 * H || x.size() != p.wx.cols() || carry.h.size() != H ||
      carry.c.size() != H)
    throw std::invalid_argument("lstm_step: shape mismatch");
  Vector gi, gf, go, gc, c_new, tanh_c, h_new;
  lstm_forward(p.wx, p.wh, p.bias, H, x, carry, gi, gf, go, gc, c_new, tanh_c, h_new);
  dcheck_finite(h_new);
  return {h_new, LstmCarry{h_new, c_new}};
}

Matrix orthogonal_init(int rows, int cols, Scalar gain, Rng& rng) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("orthogonal_init: empty shape");
  const bool tall = rows >= cols;
  const int r = tall ? rows : cols;
  const int c = tall ? cols : rows;
  Matrix a(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(r, c);
  // fix the sign ambiguity so the distribution (and the result) is unique
  Matrix rmat = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rmat(j, j) < 0) q.col(j) = -q.col(j);
  Matrix out = tall ? q : Matrix(q.transpose());
  return gain * out;
}

void rmsprop_update(RmsPropState& state, Vector& params, const Vector& grad) {
  if (state.acc.size() != params.size() || grad.size() != params.size())
    throw std::invalid_argument("rmsprop_update: shape mismatch");
  state.acc.array() =
      state.decay * state.acc.array() + (1.0 - state.decay) * grad.array().square();
  params.array() -=
      state.learning_rate * grad.array() / (state.acc.array() + state.epsilon).sqrt();
  dcheck_finite(params);
}

Vector clip_states(Vector x) { return x.cwiseMax(0.0).cwiseMin(2.0); }

Scalar clip_reward(Scalar r) { return std::clamp(r, -2.0, 2.0); }

Scalar cap_gradients(Vector& grad, Scalar cap) {
  const Scalar norm = grad.norm();
  if (norm > cap) grad *= cap / norm;
  return std::min(norm, cap);
}

// ---------------------------------------------------------------------------

RecurrentNet::RecurrentNet(const RecurrentNetSpec& spec) : spec_(spec) {
  const int W = spec.wave_dim, F = spec.fp_dim, C = spec.fc_size, D = spec.fp_fc_size,
            H = spec.lstm_size, O = spec.out_dim, Z = spec.lstm_input();
  if (W < 1 || O < 1 || H < 1 || C < 1) throw std::invalid_argument("RecurrentNet: bad spec");
  int at = 0;
  off_.w1 = at; at += C * W;
  off_.b1 = at; at += C;
  off_.w2 = at; at += (F > 0 ? D * F : 0);
  off_.b2 = at; at += (F > 0 ? D : 0);
  off_.wx = at; at += 4 * H * Z;
  off_.wh = at; at += 4 * H * H;
  off_.bl = at; at += 4 * H;
  off_.w3 = at; at += O * H;
  off_.b3 = at; at += O;
  off_.total = at;
  params = Vector::Zero(at);
}

void RecurrentNet::init(Rng& rng, Scalar gain) {
  const int W = spec_.wave_dim, F = spec_.fp_dim, C = spec_.fc_size, D = spec_.fp_fc_size,
            H = spec_.lstm_size, O = spec_.out_dim, Z = spec_.lstm_input();
  params.setZero();
  view(params, off_.w1, C, W) = orthogonal_init(C, W, gain, rng);
  if (F > 0) view(params, off_.w2, D, F) = orthogonal_init(D, F, gain, rng);
  auto wx = view(params, off_.wx, 4 * H, Z);
  for (int g = 0; g < 4; ++g) wx.middleRows(g * H, H) = orthogonal_init(H, Z, gain, rng);
  auto wh = view(params, off_.wh, 4 * H, H);
  for (int g = 0; g < 4; ++g) wh.middleRows(g * H, H) = orthogonal_init(H, H, gain, rng);
  view(params, off_.w3, O, H) = orthogonal_init(O, H, gain, rng);
}

Vector RecurrentNet::step(const Vector& wave, const Vector& fp, const LstmCarry& carry,
                          LstmCarry* out_carry) const {
  const int F = spec_.fp_dim, C = spec_.fc_size, D = spec_.fp_fc_size, H = spec_.lstm_size,
            O = spec_.out_dim;
  if (wave.size() != spec_.wave_dim || fp.size() != F)
    throw std::invalid_argument("RecurrentNet::step: input shape mismatch");
  Vector a1 = relu(view(params, off_.w1, C, spec_.wave_dim) * wave +
                   params.segment(off_.b1, C));
  Vector z;
  if (F > 0) {
    Vector a2 = relu(view(params, off_.w2, D, F) * fp + params.segment(off_.b2, D));
    z.resize(C + D);
    z << a1, a2;
  } else {
    z = std::move(a1);
  }
  Vector gi, gf, go, gc, c_new, tanh_c, h_new;
  lstm_forward(view(params, off_.wx, 4 * H, spec_.lstm_input()),
               view(params, off_.wh, 4 * H, H), params.segment(off_.bl, 4 * H), H, z, carry,
               gi, gf, go, gc, c_new, tanh_c, h_new);
  Vector logits = view(params, off_.w3, O, H) * h_new + params.segment(off_.b3, O);
  if (out_carry) *out_carry = LstmCarry{h_new, c_new};
  dcheck_finite(logits);
  return spec_.softmax_head ? softmax(logits) : logits;
}

std::vector<StepTape> RecurrentNet::forward_sequence(const std::vector<Vector>& waves,
                                                     const std::vector<Vector>& fps,
                                                     const LstmCarry& carry) const {
  const int F = spec_.fp_dim, C = spec_.fc_size, D = spec_.fp_fc_size, H = spec_.lstm_size,
            O = spec_.out_dim;
  std::vector<StepTape> tape(waves.size());
  LstmCarry cur = carry;
  for (size_t t = 0; t < waves.size(); ++t) {
    StepTape& s = tape[t];
    s.wave = waves[t];
    s.fp = F > 0 ? fps[t] : Vector();
    s.a1 = relu(view(params, off_.w1, C, spec_.wave_dim) * s.wave +
                params.segment(off_.b1, C));
    if (F > 0) {
      s.a2 = relu(view(params, off_.w2, D, F) * s.fp + params.segment(off_.b2, D));
      s.z.resize(C + D);
      s.z << s.a1, s.a2;
    } else {
      s.z = s.a1;
    }
    s.h_prev = cur.h;
    s.c_prev = cur.c;
    lstm_forward(view(params, off_.wx, 4 * H, spec_.lstm_input()),
                 view(params, off_.wh, 4 * H, H), params.segment(off_.bl, 4 * H), H, s.z, cur,
                 s.gi, s.gf, s.go, s.gc, s.c, s.tanh_c, s.h);
    cur = LstmCarry{s.h, s.c};
    s.logits = view(params, off_.w3, O, H) * s.h + params.segment(off_.b3, O);
    s.out = spec_.softmax_head ? softmax(s.logits) : s.logits;
    dcheck_finite(s.out);
  }
  return tape;
}

LstmCarry RecurrentNet::carry_after(const std::vector<StepTape>& tape) const {
  if (tape.empty()) return LstmCarry::zero(spec_.lstm_size);
  return LstmCarry{tape.back().h, tape.back().c};
}

Vector RecurrentNet::backward(const std::vector<StepTape>& tape,
                              const std::vector<Vector>& dlogits) const {
  if (tape.size() != dlogits.size())
    throw std::invalid_argument("RecurrentNet::backward: needs one gradient per recorded step");
  const int F = spec_.fp_dim, C = spec_.fc_size, D = spec_.fp_fc_size, H = spec_.lstm_size,
            O = spec_.out_dim, Z = spec_.lstm_input();
  Vector grad = Vector::Zero(off_.total);
  auto g_w1 = view(grad, off_.w1, C, spec_.wave_dim);
  auto g_wx = view(grad, off_.wx, 4 * H, Z);
  auto g_wh = view(grad, off_.wh, 4 * H, H);
  auto g_w3 = view(grad, off_.w3, O, H);
  const auto w3 = view(params, off_.w3, O, H);
  const auto wx = view(params, off_.wx, 4 * H, Z);
  const auto wh = view(params, off_.wh, 4 * H, H);

  Vector dh_next = Vector::Zero(H);
  Vector dc_next = Vector::Zero(H);
  for (int t = static_cast<int>(tape.size()) - 1; t >= 0; --t) {
    const StepTape& s = tape[t];
    // head
    g_w3 += dlogits[t] * s.h.transpose();
    grad.segment(off_.b3, O) += dlogits[t];
    Vector dh = w3.transpose() * dlogits[t] + dh_next;
    // lstm cell
    Vector d_go = dh.cwiseProduct(s.tanh_c);
    Vector dc = dh.cwiseProduct(s.go).cwiseProduct(
                    (1.0 - s.tanh_c.array().square()).matrix()) + dc_next;
    Vector d_gi = dc.cwiseProduct(s.gc);
    Vector d_gf = dc.cwiseProduct(s.c_prev);
    Vector d_gc = dc.cwiseProduct(s.gi);
    dc_next = dc.cwiseProduct(s.gf);
    Vector dz4(4 * H);
    dz4.segment(0, H).array() = d_gi.array() * s.gi.array() * (1.0 - s.gi.array());
    dz4.segment(H, H).array() = d_gf.array() * s.gf.array() * (1.0 - s.gf.array());
    dz4.segment(2 * H, H).array() = d_go.array() * s.go.array() * (1.0 - s.go.array());
    dz4.segment(3 * H, H).array() = d_gc.array() * (1.0 - s.gc.array().square());
    g_wx += dz4 * s.z.transpose();
    g_wh += dz4 * s.h_prev.transpose();
    grad.segment(off_.bl, 4 * H) += dz4;
    Vector dz = wx.transpose() * dz4;
    dh_next = wh.transpose() * dz4;
    // fc branches (relu subgradient 0 at the kink)
    Vector da1 = dz.head(C);
    Vector dz1 = (s.a1.array() > 0.0).select(da1.array(), 0.0).matrix();
    g_w1 += dz1 * s.wave.transpose();
    grad.segment(off_.b1, C) += dz1;
    if (F > 0) {
      Vector da2 = dz.tail(D);
      Vector dz2 = (s.a2.array() > 0.0).select(da2.array(), 0.0).matrix();
      view(grad, off_.w2, D, F) += dz2 * s.fp.transpose();
      grad.segment(off_.b2, D) += dz2;
    }
  }
  dcheck_finite(grad);
  return grad;
}

// ---------------------------------------------------------------------------

MlpNet::MlpNet(int in_dim, std::vector<int> hidden, int out_dim) {
  dims_.push_back(in_dim);
  for (int h : hidden) dims_.push_back(h);
  dims_.push_back(out_dim);
  int at = 0;
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    layer_off_.emplace_back(at, at + dims_[l + 1] * dims_[l]);
    at += dims_[l + 1] * dims_[l] + dims_[l + 1];
  }
  params = Vector::Zero(at);
}

void MlpNet::init(Rng& rng, Scalar gain) {
  params.setZero();
  for (size_t l = 0; l + 1 < dims_.size(); ++l)
    view(params, layer_off_[l].first, dims_[l + 1], dims_[l]) =
        orthogonal_init(dims_[l + 1], dims_[l], gain, rng);
}

Vector MlpNet::forward(const Vector& x) const {
  Vector a = x;
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    a = view(params, layer_off_[l].first, dims_[l + 1], dims_[l]) * a +
        params.segment(layer_off_[l].second, dims_[l + 1]);
    if (l + 2 < dims_.size()) a = relu(a);
  }
  return a;
}

MlpTape MlpNet::forward_tape(const Vector& x) const {
  MlpTape tape;
  tape.input = x;
  Vector a = x;
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    a = view(params, layer_off_[l].first, dims_[l + 1], dims_[l]) * a +
        params.segment(layer_off_[l].second, dims_[l + 1]);
    if (l + 2 < dims_.size()) {
      a = relu(a);
      tape.activations.push_back(a);
    }
  }
  tape.out = a;
  return tape;
}

Vector MlpNet::backward(const MlpTape& tape, const Vector& dout) const {
  Vector grad = Vector::Zero(params.size());
  Vector d = dout;
  for (int l = static_cast<int>(dims_.size()) - 2; l >= 0; --l) {
    const Vector& in = l == 0 ? tape.input : tape.activations[l - 1];
    view(grad, layer_off_[l].first, dims_[l + 1], dims_[l]) += d * in.transpose();
    grad.segment(layer_off_[l].second, dims_[l + 1]) += d;
    if (l > 0) {
      d = view(params, layer_off_[l].first, dims_[l + 1], dims_[l]).transpose() * d;
      d = (tape.activations[l - 1].array() > 0.0).select(d.array(), 0.0).matrix();
    }
  }
  return grad;
}

}  // namespace atsc
