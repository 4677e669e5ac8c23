#include "arti/nets.hpp"

#include <cmath>

#include "arti/rng.hpp"

namespace arti {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBeta = 100.0;  // softplus sharpness

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-kBeta * std::abs(z))) / kBeta;
}
inline double dsoftplus(double z) { return sigmoid(kBeta * z); }
inline double ddsoftplus(double z) {
  const double s = sigmoid(kBeta * z);
  return kBeta * s * (1.0 - s);
}

inline MatX softplus_batch(const MatX& z) {
  return (z.array().max(0.0) + ((-kBeta) * z.array().abs()).exp().log1p() / kBeta).matrix();
}
inline MatX dsoftplus_batch(const MatX& z) {
  return (1.0 / (1.0 + (-kBeta * z.array()).exp())).matrix();
}

inline VecX apply_softplus(const VecX& z) {
  VecX out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = softplus(z[i]);
  return out;
}

}  // namespace

// ---------- Encoding ----------

void Encoding::encode(const double* x, int d, double* out) const {
  int o = 0;
  for (int c = 0; c < d; ++c) {
    if (include_raw) out[o++] = x[c];
    double f = kPi;
    for (int k = 0; k < octaves; ++k, f *= 2.0) {
      out[o++] = std::sin(f * x[c]);
      out[o++] = std::cos(f * x[c]);
    }
  }
}

void Encoding::tangent(const double* x, const double* v, int d, double* out) const {
  int o = 0;
  for (int c = 0; c < d; ++c) {
    if (include_raw) out[o++] = v[c];
    double f = kPi;
    for (int k = 0; k < octaves; ++k, f *= 2.0) {
      out[o++] = f * std::cos(f * x[c]) * v[c];
      out[o++] = -f * std::sin(f * x[c]) * v[c];
    }
  }
}

void Encoding::add_grad(const double* x, int d, const double* g_enc, double* g_raw) const {
  int o = 0;
  for (int c = 0; c < d; ++c) {
    double acc = 0.0;
    if (include_raw) acc += g_enc[o++];
    double f = kPi;
    for (int k = 0; k < octaves; ++k, f *= 2.0) {
      acc += f * std::cos(f * x[c]) * g_enc[o++];
      acc += -f * std::sin(f * x[c]) * g_enc[o++];
    }
    g_raw[c] += acc;
  }
}

void Encoding::add_grad_tangent(const double* x, const double* v, int d, const double* g_enc,
                                const double* g_enc_dot, double* g_raw_dot) const {
  int o = 0;
  for (int c = 0; c < d; ++c) {
    double acc = 0.0;
    if (include_raw) {
      acc += g_enc_dot[o];
      ++o;
    }
    double f = kPi;
    for (int k = 0; k < octaves; ++k, f *= 2.0) {
      const double s = std::sin(f * x[c]), co = std::cos(f * x[c]);
      // entry derivatives: d/dx sin-slot = f cos, second derivative -f^2 sin
      acc += (-f * f * s * v[c]) * g_enc[o] + f * co * g_enc_dot[o];
      ++o;
      acc += (-f * f * co * v[c]) * g_enc[o] + (-f * s) * g_enc_dot[o];
      ++o;
    }
    g_raw_dot[c] += acc;
  }
}

VecX encode_vec(const Encoding& e, const VecX& x) {
  VecX out(e.out_dim(static_cast<int>(x.size())));
  e.encode(x.data(), static_cast<int>(x.size()), out.data());
  return out;
}

// ---------- MlpGrads ----------

void MlpGrads::init_like(const Mlp& net) {
  dW.clear();
  db.clear();
  for (int k = 0; k < net.layer_count(); ++k) {
    dW.push_back(MatX::Zero(net.Wd(k).rows(), net.Wd(k).cols()));
    db.push_back(VecX::Zero(net.bd(k).size()));
  }
}

void MlpGrads::zero() {
  for (auto& m : dW) m.setZero();
  for (auto& v : db) v.setZero();
}

void MlpGrads::add_scaled(const MlpGrads& other, double s) {
  for (std::size_t k = 0; k < dW.size(); ++k) {
    dW[k] += s * other.dW[k];
    db[k] += s * other.db[k];
  }
}

bool MlpGrads::finite() const {
  for (const auto& m : dW)
    if (!m.allFinite()) return false;
  for (const auto& v : db)
    if (!v.allFinite()) return false;
  return true;
}

std::size_t MlpGrads::count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < dW.size(); ++k)
    n += static_cast<std::size_t>(dW[k].size()) + db[k].size();
  return n;
}

double MlpGrads::flat(std::size_t i) const {
  for (std::size_t k = 0; k < dW.size(); ++k) {
    const std::size_t nw = static_cast<std::size_t>(dW[k].size());
    if (i < nw) {
      const auto cols = static_cast<std::size_t>(dW[k].cols());
      return dW[k](static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols));
    }
    i -= nw;
    const std::size_t nb = static_cast<std::size_t>(db[k].size());
    if (i < nb) return db[k](static_cast<Eigen::Index>(i));
    i -= nb;
  }
  return 0.0;
}

// ---------- Mlp ----------

Mlp::Mlp(std::vector<int> widths, std::uint64_t seed) : widths_(std::move(widths)) {
  if (widths_.size() < 3) throw std::invalid_argument("mlp needs at least one hidden layer");
  auto g = rng_stream(seed, RngUse::NetInit);
  NormalSampler normal;
  for (std::size_t k = 0; k + 1 < widths_.size(); ++k) {
    const int rows = widths_[k + 1], cols = widths_[k];
    Eigen::MatrixXf W(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) W(r, c) = static_cast<float>(scale * normal(g));
    w32_.push_back(std::move(W));
    b32_.push_back(Eigen::VectorXf::Zero(rows));
  }
  sync();
}

void Mlp::sync() {
  wd_.resize(w32_.size());
  bd_.resize(b32_.size());
  for (std::size_t k = 0; k < w32_.size(); ++k) {
    wd_[k] = w32_[k].cast<double>();
    bd_[k] = b32_[k].cast<double>();
  }
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < w32_.size(); ++k)
    n += static_cast<std::size_t>(w32_[k].size()) + b32_[k].size();
  return n;
}

double Mlp::param(std::size_t i) const {
  for (std::size_t k = 0; k < w32_.size(); ++k) {
    const std::size_t nw = static_cast<std::size_t>(w32_[k].size());
    if (i < nw) {
      const auto cols = static_cast<std::size_t>(w32_[k].cols());
      return w32_[k](static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols));
    }
    i -= nw;
    const std::size_t nb = static_cast<std::size_t>(b32_[k].size());
    if (i < nb) return b32_[k](static_cast<Eigen::Index>(i));
    i -= nb;
  }
  throw std::out_of_range("mlp param index");
}

void Mlp::set_param(std::size_t i, double v) {
  for (std::size_t k = 0; k < w32_.size(); ++k) {
    const std::size_t nw = static_cast<std::size_t>(w32_[k].size());
    if (i < nw) {
      const auto cols = static_cast<std::size_t>(w32_[k].cols());
      w32_[k](static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols)) =
          static_cast<float>(v);
      sync();
      return;
    }
    i -= nw;
    const std::size_t nb = static_cast<std::size_t>(b32_[k].size());
    if (i < nb) {
      b32_[k](static_cast<Eigen::Index>(i)) = static_cast<float>(v);
      sync();
      return;
    }
    i -= nb;
  }
  throw std::out_of_range("mlp param index");
}

VecX Mlp::forward(const VecX& in, Tape* tape) const {
  const int L = layer_count();
  if (tape) {
    tape->a.assign(static_cast<std::size_t>(L), VecX());
    tape->z.assign(static_cast<std::size_t>(L), VecX());
    tape->a[0] = in;
  }
  VecX a = in;
  VecX z;
  for (int k = 0; k < L; ++k) {
    z.noalias() = wd_[k] * a;
    z += bd_[k];
    if (tape) tape->z[k] = z;
    if (k == L - 1) break;
    a = apply_softplus(z);
    if (tape) tape->a[k + 1] = a;
  }
  return z;
}

void Mlp::backward(const Tape& tape, const VecX& gout, const VecX* g_feat, MlpGrads* acc,
                   VecX* gin) const {
  const int L = layer_count();
  VecX delta = gout;
  if (acc) {
    acc->dW[L - 1].noalias() += delta * tape.a[L - 1].transpose();
    acc->db[L - 1] += delta;
  }
  VecX u = wd_[L - 1].transpose() * delta;
  if (g_feat) u += *g_feat;
  for (int k = L - 2; k >= 0; --k) {
    delta.resize(tape.z[k].size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = u[i] * dsoftplus(tape.z[k][i]);
    if (acc) {
      acc->dW[k].noalias() += delta * tape.a[k].transpose();
      acc->db[k] += delta;
    }
    u.noalias() = wd_[k].transpose() * delta;
  }
  if (gin) *gin = u;
}

VecX Mlp::jvp(const Tape& tape, const VecX& vin, VecX* feat_dot) const {
  const int L = layer_count();
  VecX adot = vin;
  VecX zdot;
  for (int k = 0; k < L; ++k) {
    zdot.noalias() = wd_[k] * adot;
    if (k == L - 1) break;
    adot.resize(zdot.size());
    for (Eigen::Index i = 0; i < zdot.size(); ++i) adot[i] = dsoftplus(tape.z[k][i]) * zdot[i];
    if (k == L - 2 && feat_dot) *feat_dot = adot;
  }
  return zdot;
}

void Mlp::backward_fwd(const Tape& tape, const VecX& gout, const VecX* g_feat, const VecX& vin,
                       const VecX& gout_dot, const VecX* g_feat_dot, MlpGrads* acc, VecX* gin,
                       MlpGrads* acc_dot, VecX* gin_dot) const {
  const int L = layer_count();
  // forward sweep for activation tangents
  std::vector<VecX> adot(static_cast<std::size_t>(L));
  std::vector<VecX> zdot(static_cast<std::size_t>(L));
  adot[0] = vin;
  for (int k = 0; k < L; ++k) {
    zdot[k].noalias() = wd_[k] * adot[k];
    if (k == L - 1) break;
    adot[k + 1].resize(zdot[k].size());
    for (Eigen::Index i = 0; i < zdot[k].size(); ++i)
      adot[k + 1][i] = dsoftplus(tape.z[k][i]) * zdot[k][i];
  }
  // reverse sweep carrying tangents of every adjoint
  VecX delta = gout;
  VecX delta_dot = gout_dot;
  if (acc) {
    acc->dW[L - 1].noalias() += delta * tape.a[L - 1].transpose();
    acc->db[L - 1] += delta;
  }
  if (acc_dot) {
    acc_dot->dW[L - 1].noalias() += delta_dot * tape.a[L - 1].transpose();
    acc_dot->dW[L - 1].noalias() += delta * adot[L - 1].transpose();
    acc_dot->db[L - 1] += delta_dot;
  }
  VecX u = wd_[L - 1].transpose() * delta;
  VecX u_dot = wd_[L - 1].transpose() * delta_dot;
  if (g_feat) u += *g_feat;
  if (g_feat_dot) u_dot += *g_feat_dot;
  for (int k = L - 2; k >= 0; --k) {
    const Eigen::Index n = tape.z[k].size();
    delta.resize(n);
    delta_dot.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s1 = dsoftplus(tape.z[k][i]);
      const double s2 = ddsoftplus(tape.z[k][i]);
      delta[i] = u[i] * s1;
      delta_dot[i] = u_dot[i] * s1 + u[i] * s2 * zdot[k][i];
    }
    if (acc) {
      acc->dW[k].noalias() += delta * tape.a[k].transpose();
      acc->db[k] += delta;
    }
    if (acc_dot) {
      acc_dot->dW[k].noalias() += delta_dot * tape.a[k].transpose();
      acc_dot->dW[k].noalias() += delta * adot[k].transpose();
      acc_dot->db[k] += delta_dot;
    }
    u.noalias() = wd_[k].transpose() * delta;
    u_dot.noalias() = wd_[k].transpose() * delta_dot;
  }
  if (gin) *gin = u;
  if (gin_dot) *gin_dot = u_dot;
}

MatX Mlp::forward_batch(const MatX& in, BatchTape* tape, MatX* feat) const {
  MatX z0 = wd_[0] * in;
  z0.colwise() += bd_[0];
  return forward_batch_pre(std::move(z0), tape, feat);
}

MatX Mlp::forward_batch_pre(MatX z0, BatchTape* tape, MatX* feat) const {
  const int L = layer_count();
  if (tape) tape->z.clear();
  MatX z = std::move(z0);
  MatX a;
  for (int k = 0; k < L; ++k) {
    if (k > 0) {
      z.noalias() = wd_[k] * a;
      z.colwise() += bd_[k];
    }
    if (tape) tape->z.push_back(z);
    if (k == L - 1) break;
    a = softplus_batch(z);
    if (k == L - 2 && feat) *feat = a;
  }
  return z;
}

MatX Mlp::delta0_batch(const BatchTape& tape, const MatX& gout, const MatX* g_feat) const {
  const int L = layer_count();
  MatX delta = gout;
  MatX u = wd_[L - 1].transpose() * delta;
  if (g_feat) u += *g_feat;
  for (int k = L - 2; k >= 0; --k) {
    delta = (u.array() * dsoftplus_batch(tape.z[k]).array()).matrix();
    if (k > 0) u.noalias() = wd_[k].transpose() * delta;
  }
  return delta;
}

MatX Mlp::input_grad_batch(const BatchTape& tape, const MatX& gout, const MatX* g_feat) const {
  return wd_[0].transpose() * delta0_batch(tape, gout, g_feat);
}

void Mlp::tangents_pre(const BatchTape& tape, std::span<const MatX> zdot0,
                       std::vector<MatX>* out) const {
  const int L = layer_count();
  out->clear();
  for (const MatX& z0 : zdot0) {
    MatX zd = z0;
    for (int k = 0; k + 1 < L; ++k) {
      MatX ad = (dsoftplus_batch(tape.z[k]).array() * zd.array()).matrix();
      zd.noalias() = wd_[k + 1] * ad;
    }
    out->push_back(std::move(zd));
  }
}

void Mlp::forward_batch_tangents(const MatX& in, std::span<const MatX> tin, MatX* out,
                                 std::vector<MatX>* tout) const {
  BatchTape tape;
  *out = forward_batch(in, &tape, nullptr);
  std::vector<MatX> zdot0(tin.size());
  for (std::size_t j = 0; j < tin.size(); ++j) zdot0[j] = wd_[0] * tin[j];
  tangents_pre(tape, zdot0, tout);
}

// ---------- OccNet ----------

OccNet::OccNet(int theta_dim, int psi_dim, const NetConfig& cfg, std::uint64_t seed)
    : theta_dim_(theta_dim), psi_dim_(psi_dim) {
  enc_x = Encoding{cfg.pos_octaves, true};
  enc_c = Encoding{cfg.cond_octaves, true};
  cond_gain = cfg.cond_gain;
  std::vector<int> widths;
  widths.push_back(enc_x.out_dim(3) + enc_c.out_dim(theta_dim) + enc_c.out_dim(psi_dim));
  for (int k = 0; k < cfg.layers; ++k) widths.push_back(cfg.hidden);
  widths.push_back(1);
  mlp = Mlp(widths, seed);
}

PoseCond OccNet::condition(const VecX& theta_b, const VecX& psi) const {
  PoseCond c;
  c.enc.resize(enc_c.out_dim(theta_dim_) + enc_c.out_dim(psi_dim_));
  enc_c.encode(theta_b.data(), theta_dim_, c.enc.data());
  enc_c.encode(psi.data(), psi_dim_, c.enc.data() + enc_c.out_dim(theta_dim_));
  c.enc *= cond_gain;
  return c;
}

VecX OccNet::assemble(const Vec3& x, const PoseCond& cond) const {
  const int ex = enc_x.out_dim(3);
  VecX in(ex + cond.enc.size());
  enc_x.encode(x.data(), 3, in.data());
  in.tail(cond.enc.size()) = cond.enc;
  return in;
}

double OccNet::forward(const Vec3& x, const PoseCond& cond, Tape* tape, VecX* feat) const {
  Tape local;
  Tape* t = tape ? tape : (feat ? &local : nullptr);
  const VecX in = assemble(x, cond);
  double z;
  if (t) {
    t->x = x;
    z = mlp.forward(in, &t->t)[0];
    t->z = z;
    t->occ = sigmoid(z);
    if (feat) *feat = t->t.a.back();
    return t->occ;
  }
  z = mlp.forward(in, nullptr)[0];
  return sigmoid(z);
}

void OccNet::forward_batch(std::span<const Vec3> xs, const PoseCond& cond, VecX* occ,
                           MatX* feat) const {
  const int ex = enc_x.out_dim(3);
  const auto n = static_cast<Eigen::Index>(xs.size());
  MatX encx(ex, n);
  for (Eigen::Index i = 0; i < n; ++i) enc_x.encode(xs[i].data(), 3, encx.col(i).data());
  const VecX beff = mlp.Wd(0).rightCols(cond.enc.size()) * cond.enc + mlp.bd(0);
  MatX z0 = mlp.Wd(0).leftCols(ex) * encx;
  z0.colwise() += beff;
  const MatX out = mlp.forward_batch_pre(std::move(z0), nullptr, feat);
  occ->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) (*occ)[i] = sigmoid(out(0, i));
}

void OccNet::backward(const Tape& tape, double g_occ, const VecX* g_feat, MlpGrads* acc,
                      Vec3* g_x) const {
  const double sp = tape.occ * (1.0 - tape.occ);
  VecX gout(1);
  gout[0] = g_occ * sp;
  VecX gin;
  mlp.backward(tape.t, gout, g_feat, acc, g_x ? &gin : nullptr);
  if (g_x) {
    g_x->setZero();
    enc_x.add_grad(tape.x.data(), 3, gin.data(), g_x->data());
  }
}

void OccNet::grad_x_batch(std::span<const Vec3> xs, const PoseCond& cond, std::vector<Vec3>* g,
                          VecX* occ, MatX* feat) const {
  const int ex = enc_x.out_dim(3);
  const auto n = static_cast<Eigen::Index>(xs.size());
  MatX encx(ex, n);
  for (Eigen::Index i = 0; i < n; ++i) enc_x.encode(xs[i].data(), 3, encx.col(i).data());
  const VecX beff = mlp.Wd(0).rightCols(cond.enc.size()) * cond.enc + mlp.bd(0);
  MatX z0 = mlp.Wd(0).leftCols(ex) * encx;
  z0.colwise() += beff;
  Mlp::BatchTape tape;
  const MatX out = mlp.forward_batch_pre(std::move(z0), &tape, feat);
  MatX gout(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double o = sigmoid(out(0, i));
    gout(0, i) = o * (1.0 - o);
    if (occ) {
      if (occ->size() != n) occ->resize(n);
      (*occ)[i] = o;
    }
  }
  const MatX delta0 = mlp.delta0_batch(tape, gout, nullptr);
  const MatX gin = mlp.Wd(0).leftCols(ex).transpose() * delta0;
  g->assign(static_cast<std::size_t>(n), Vec3::Zero());
  for (Eigen::Index i = 0; i < n; ++i)
    enc_x.add_grad(xs[i].data(), 3, gin.col(i).data(), (*g)[static_cast<std::size_t>(i)].data());
}

void OccNet::backward_fwd(const Tape& tape, double g_occ, const VecX* g_feat, const Vec3& vin,
                          double g_occ_dot, const VecX* g_feat_dot, MlpGrads* acc, Vec3* g_x,
                          MlpGrads* acc_dot, Vec3* g_x_dot) const {
  const int ex = enc_x.out_dim(3);
  VecX vin_enc = VecX::Zero(mlp.input_dim());
  enc_x.tangent(tape.x.data(), vin.data(), 3, vin_enc.data());
  const double zdot = mlp.jvp(tape.t, vin_enc)[0];
  const double o = tape.occ;
  const double s1 = o * (1.0 - o);
  const double s2 = s1 * (1.0 - 2.0 * o);
  VecX gout(1), gout_dot(1);
  gout[0] = g_occ * s1;
  gout_dot[0] = g_occ_dot * s1 + g_occ * s2 * zdot;
  VecX gin, gin_dot;
  mlp.backward_fwd(tape.t, gout, g_feat, vin_enc, gout_dot, g_feat_dot, acc,
                   (g_x || g_x_dot) ? &gin : nullptr, acc_dot, g_x_dot ? &gin_dot : nullptr);
  if (g_x) {
    g_x->setZero();
    enc_x.add_grad(tape.x.data(), 3, gin.data(), g_x->data());
  }
  if (g_x_dot) {
    g_x_dot->setZero();
    enc_x.add_grad_tangent(tape.x.data(), vin.data(), 3, gin.data(), gin_dot.data(),
                           g_x_dot->data());
  }
  (void)ex;
}

// ---------- SkinNet ----------

SkinNet::SkinNet(int bones, const NetConfig& cfg, std::uint64_t seed) {
  enc_x = Encoding{cfg.pos_octaves, true};
  std::vector<int> widths;
  widths.push_back(enc_x.out_dim(3));
  for (int k = 0; k < cfg.layers; ++k) widths.push_back(cfg.hidden);
  widths.push_back(bones);
  mlp = Mlp(widths, seed);
}

namespace {
VecX softmax(const VecX& z) {
  const double m = z.maxCoeff();
  VecX e = (z.array() - m).exp();
  return e / e.sum();
}
}  // namespace

VecX SkinNet::forward(const Vec3& x, Tape* tape) const {
  VecX in(mlp.input_dim());
  enc_x.encode(x.data(), 3, in.data());
  if (tape) {
    tape->x = x;
    tape->w = softmax(mlp.forward(in, &tape->t));
    return tape->w;
  }
  return softmax(mlp.forward(in, nullptr));
}

void SkinNet::forward_batch(std::span<const Vec3> xs, MatX* W) const {
  const auto n = static_cast<Eigen::Index>(xs.size());
  MatX encx(mlp.input_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) enc_x.encode(xs[i].data(), 3, encx.col(i).data());
  MatX z = mlp.forward_batch(encx, nullptr, nullptr);
  W->resize(z.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) W->col(i) = softmax(z.col(i));
}

void SkinNet::forward_batch_jacobian(std::span<const Vec3> xs, MatX* W,
                                     std::vector<MatX3>* jac) const {
  const auto n = static_cast<Eigen::Index>(xs.size());
  const int in_dim = mlp.input_dim();
  MatX encx(in_dim, n);
  std::array<MatX, 3> tin;
  for (auto& t : tin) t.resize(in_dim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    enc_x.encode(xs[i].data(), 3, encx.col(i).data());
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = 1.0;
      enc_x.tangent(xs[i].data(), e.data(), 3, tin[k].col(i).data());
    }
  }
  Mlp::BatchTape tape;
  MatX z0 = mlp.Wd(0) * encx;
  z0.colwise() += mlp.bd(0);
  MatX z = mlp.forward_batch_pre(std::move(z0), &tape, nullptr);
  W->resize(z.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) W->col(i) = softmax(z.col(i));
  std::vector<MatX> zdot0(3);
  for (int k = 0; k < 3; ++k) zdot0[k] = mlp.Wd(0) * tin[k];
  std::vector<MatX> zdot;
  mlp.tangents_pre(tape, zdot0, &zdot);
  jac->assign(static_cast<std::size_t>(n), MatX3());
  for (Eigen::Index i = 0; i < n; ++i) {
    MatX3& J = (*jac)[static_cast<std::size_t>(i)];
    J.resize(z.rows(), 3);
    const VecX w = W->col(i);
    for (int k = 0; k < 3; ++k) {
      const VecX zd = zdot[k].col(i);
      const double dot = w.dot(zd);
      J.col(k) = (w.array() * zd.array()).matrix() - dot * w;
    }
  }
}

void SkinNet::backward(const Tape& tape, const VecX& g_w, MlpGrads* acc, Vec3* g_x) const {
  const VecX& w = tape.w;
  const double dot = w.dot(g_w);
  const VecX gz = (w.array() * g_w.array()).matrix() - dot * w;
  VecX gin;
  mlp.backward(tape.t, gz, nullptr, acc, g_x ? &gin : nullptr);
  if (g_x) {
    g_x->setZero();
    enc_x.add_grad(tape.x.data(), 3, gin.data(), g_x->data());
  }
}

void SkinNet::backward_fwd(const Tape& tape, const VecX& g_w, const Vec3& vin,
                           const VecX& g_w_dot, MlpGrads* acc, Vec3* g_x, MlpGrads* acc_dot,
                           Vec3* g_x_dot) const {
  VecX vin_enc(mlp.input_dim());
  enc_x.tangent(tape.x.data(), vin.data(), 3, vin_enc.data());
  const VecX zdot = mlp.jvp(tape.t, vin_enc);
  const VecX& w = tape.w;
  const VecX wdot = (w.array() * zdot.array()).matrix() - w.dot(zdot) * w;
  // adjoint at the logits and its tangent, softmax differentiated once more
  const double wg = w.dot(g_w);
  const VecX gz = (w.array() * g_w.array()).matrix() - wg * w;
  const VecX gz_dot = (wdot.array() * g_w.array()).matrix() +
                      (w.array() * g_w_dot.array()).matrix() - wdot * wg -
                      w * (wdot.dot(g_w) + w.dot(g_w_dot));
  VecX gin, gin_dot;
  mlp.backward_fwd(tape.t, gz, nullptr, vin_enc, gz_dot, nullptr, acc,
                   (g_x || g_x_dot) ? &gin : nullptr, acc_dot, g_x_dot ? &gin_dot : nullptr);
  if (g_x) {
    g_x->setZero();
    enc_x.add_grad(tape.x.data(), 3, gin.data(), g_x->data());
  }
  if (g_x_dot) {
    g_x_dot->setZero();
    enc_x.add_grad_tangent(tape.x.data(), vin.data(), 3, gin.data(), gin_dot.data(),
                           g_x_dot->data());
  }
}

// ---------- RgbNet ----------

RgbNet::RgbNet(int feature_dim, int theta_dim, int psi_dim, const NetConfig& cfg,
               std::uint64_t seed)
    : feature_dim_in(feature_dim), theta_dim_(theta_dim), psi_dim_(psi_dim) {
  enc_x = Encoding{cfg.pos_octaves, true};
  enc_c = Encoding{cfg.cond_octaves, true};
  cond_gain = cfg.cond_gain;
  std::vector<int> widths;
  widths.push_back(enc_x.out_dim(3) + 3 + feature_dim + enc_c.out_dim(theta_dim) +
                   enc_c.out_dim(psi_dim));
  for (int k = 0; k < cfg.layers; ++k) widths.push_back(cfg.hidden);
  widths.push_back(3);
  mlp = Mlp(widths, seed);
}

PoseCond RgbNet::condition(const VecX& theta_b, const VecX& psi) const {
  PoseCond c;
  c.enc.resize(enc_c.out_dim(theta_dim_) + enc_c.out_dim(psi_dim_));
  enc_c.encode(theta_b.data(), theta_dim_, c.enc.data());
  enc_c.encode(psi.data(), psi_dim_, c.enc.data() + enc_c.out_dim(theta_dim_));
  c.enc *= cond_gain;
  return c;
}

VecX RgbNet::assemble(const Vec3& x, const Vec3& n_d, const VecX& feat,
                      const PoseCond& cond) const {
  const int ex = enc_x.out_dim(3);
  VecX in(mlp.input_dim());
  enc_x.encode(x.data(), 3, in.data());
  in.segment<3>(ex) = n_d;
  in.segment(ex + 3, feat.size()) = feat;
  in.tail(cond.enc.size()) = cond.enc;
  return in;
}

Vec3 RgbNet::forward(const Vec3& x, const Vec3& n_d, const VecX& feat, const PoseCond& cond,
                     Tape* tape) const {
  const VecX in = assemble(x, n_d, feat, cond);
  const VecX z = mlp.forward(in, tape ? &tape->t : nullptr);
  Vec3 rgb(sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2]));
  if (tape) {
    tape->x = x;
    tape->rgb = rgb;
  }
  return rgb;
}

void RgbNet::forward_batch(std::span<const Vec3> xs, const MatX& n_d, const MatX& feat,
                           const PoseCond& cond, MatX* rgb) const {
  const int ex = enc_x.out_dim(3);
  const auto n = static_cast<Eigen::Index>(xs.size());
  MatX encx(ex, n);
  for (Eigen::Index i = 0; i < n; ++i) enc_x.encode(xs[i].data(), 3, encx.col(i).data());
  const int fd = feature_dim_in;
  const VecX beff = mlp.Wd(0).rightCols(cond.enc.size()) * cond.enc + mlp.bd(0);
  MatX z0 = mlp.Wd(0).leftCols(ex) * encx;
  z0.noalias() += mlp.Wd(0).middleCols(ex, 3) * n_d;
  z0.noalias() += mlp.Wd(0).middleCols(ex + 3, fd) * feat;
  z0.colwise() += beff;
  const MatX z = mlp.forward_batch_pre(std::move(z0), nullptr, nullptr);
  rgb->resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) (*rgb)(c, i) = sigmoid(z(c, i));
}

void RgbNet::backward(const Tape& tape, const Vec3& g_rgb, MlpGrads* acc, Vec3* g_x, Vec3* g_nd,
                      VecX* g_feat) const {
  VecX gout(3);
  for (int c = 0; c < 3; ++c) gout[c] = g_rgb[c] * tape.rgb[c] * (1.0 - tape.rgb[c]);
  VecX gin;
  const bool need_in = g_x || g_nd || g_feat;
  mlp.backward(tape.t, gout, nullptr, acc, need_in ? &gin : nullptr);
  const int ex = enc_x.out_dim(3);
  if (g_x) {
    g_x->setZero();
    enc_x.add_grad(tape.x.data(), 3, gin.data(), g_x->data());
  }
  if (g_nd) *g_nd = gin.segment<3>(ex);
  if (g_feat) *g_feat = gin.segment(ex + 3, feature_dim_in);
}

AvatarNets make_avatar_nets(int bones, int theta_dim, int psi_dim, const NetConfig& cfg,
                            std::uint64_t seed) {
  AvatarNets nets;
  nets.occ = OccNet(theta_dim, psi_dim, cfg, splitmix64(seed ^ 0x0ccULL));
  nets.skin = SkinNet(bones, cfg, splitmix64(seed ^ 0x5817ULL));
  nets.rgb = RgbNet(nets.occ.feature_dim(), theta_dim, psi_dim, cfg, splitmix64(seed ^ 0x96bULL));
  return nets;
}

}  // namespace arti
