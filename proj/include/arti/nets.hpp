#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "arti/geom.hpp"

namespace arti {

// Sinusoidal positional encoding, per coordinate:
// [x (if raw), sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)]
struct Encoding {
  int octaves = 0;
  bool include_raw = true;

  int per_coord() const { return (include_raw ? 1 : 0) + 2 * octaves; }
  int out_dim(int d) const { return d * per_coord(); }

  void encode(const double* x, int d, double* out) const;
  // out = (d enc / d x) v
  void tangent(const double* x, const double* v, int d, double* out) const;
  // g_raw += (d enc / d x)^T g_enc
  void add_grad(const double* x, int d, const double* g_enc, double* g_raw) const;
  // directional derivative of add_grad along v, with g_enc moving too:
  // g_raw_dot += (d2 enc / dx2 . v)^T g_enc + (d enc / d x)^T g_enc_dot
  void add_grad_tangent(const double* x, const double* v, int d, const double* g_enc,
                        const double* g_enc_dot, double* g_raw_dot) const;
};

VecX encode_vec(const Encoding& e, const VecX& x);

// Gradient accumulator shaped like an Mlp's parameters, kept in double.
class Mlp;
struct MlpGrads {
  std::vector<MatX> dW;
  std::vector<VecX> db;
  void init_like(const Mlp& net);
  void zero();
  void add_scaled(const MlpGrads& other, double s);
  bool finite() const;
  std::size_t count() const;
  double flat(std::size_t i) const;  // layer order, W row-major then bias
};

// Fully connected net, softplus (beta = 100) hidden units, linear output
// layer. Parameters are stored in float32; all arithmetic runs in double on a
// mirrored copy, so results are a pure function of the stored float values.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, std::uint64_t seed);

  int layer_count() const { return static_cast<int>(w32_.size()); }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int feature_dim() const { return widths_[widths_.size() - 2]; }  // last hidden
  const std::vector<int>& widths() const { return widths_; }

  const MatX& Wd(int k) const { return wd_[k]; }
  const VecX& bd(int k) const { return bd_[k]; }
  Eigen::MatrixXf& W32(int k) { return w32_[k]; }
  Eigen::VectorXf& b32(int k) { return b32_[k]; }
  const Eigen::MatrixXf& W32(int k) const { return w32_[k]; }
  const Eigen::VectorXf& b32(int k) const { return b32_[k]; }
  void sync();  // refresh the double mirror after editing float params

  std::size_t param_count() const;
  double param(std::size_t i) const;
  void set_param(std::size_t i, double v);  // rounds through float32, then syncs

  struct Tape {
    std::vector<VecX> a;  // a[0] = input, a[k] = activation entering layer k
    std::vector<VecX> z;  // pre-activations
  };

  // Output is the final pre-activation; heads live in the wrappers.
  VecX forward(const VecX& in, Tape* tape = nullptr) const;

  // gout is dL/d(output); g_feat, if given, adds dL/d(last hidden activation).
  void backward(const Tape& tape, const VecX& gout, const VecX* g_feat, MlpGrads* acc,
                VecX* gin) const;

  // Directional derivative of the output (and optionally the feature) along vin.
  VecX jvp(const Tape& tape, const VecX& vin, VecX* feat_dot = nullptr) const;

  // Forward-over-reverse: differentiates the whole backward pass along an
  // input direction vin while gout and g_feat move with rates gout_dot and
  // g_feat_dot. Any output pointer may be null.
  void backward_fwd(const Tape& tape, const VecX& gout, const VecX* g_feat, const VecX& vin,
                    const VecX& gout_dot, const VecX* g_feat_dot, MlpGrads* acc, VecX* gin,
                    MlpGrads* acc_dot, VecX* gin_dot) const;

  // Batched evaluation (one column per sample).
  struct BatchTape {
    std::vector<MatX> z;
  };
  MatX forward_batch(const MatX& in, BatchTape* tape = nullptr, MatX* feat = nullptr) const;
  // Same but with the first pre-activation already formed; wrappers use this
  // to fold constant conditioning into an effective bias.
  MatX forward_batch_pre(MatX z0, BatchTape* tape, MatX* feat) const;
  // Adjoints at the first pre-activation for per-sample output gradients.
  MatX delta0_batch(const BatchTape& tape, const MatX& gout, const MatX* g_feat) const;
  // Input gradients for the whole batch given per-sample output gradients.
  MatX input_grad_batch(const BatchTape& tape, const MatX& gout, const MatX* g_feat) const;
  // Output tangents from first pre-activation tangents.
  void tangents_pre(const BatchTape& tape, std::span<const MatX> zdot0,
                    std::vector<MatX>* out) const;
  // Tangents of outputs for several input directions at once.
  void forward_batch_tangents(const MatX& in, std::span<const MatX> tin, MatX* out,
                              std::vector<MatX>* tout) const;

 private:
  std::vector<int> widths_;
  std::vector<Eigen::MatrixXf> w32_;
  std::vector<Eigen::VectorXf> b32_;
  std::vector<MatX> wd_;
  std::vector<VecX> bd_;
};

// Encoded pose conditioning shared by the occupancy and color nets.
struct PoseCond {
  VecX enc;  // [enc(theta_b); enc(psi)]
};

struct NetConfig {
  int hidden = 128;
  int layers = 4;  // hidden layer count
  int pos_octaves = 6;
  int cond_octaves = 2;
  // scales the encoded conditioning so a fresh net starts close to
  // pose-invariant; the weights can grow the influence back where needed
  double cond_gain = 0.1;
};

// Canonical occupancy field net: occ(x | theta_b, psi) = sigmoid(mlp(...)),
// also exposing the last hidden activation as a shape feature.
class OccNet {
 public:
  OccNet() = default;
  OccNet(int theta_dim, int psi_dim, const NetConfig& cfg, std::uint64_t seed);

  int theta_dim() const { return theta_dim_; }
  int psi_dim() const { return psi_dim_; }
  int feature_dim() const { return mlp.feature_dim(); }
  PoseCond condition(const VecX& theta_b, const VecX& psi) const;

  struct Tape {
    Mlp::Tape t;
    Vec3 x = Vec3::Zero();
    double z = 0.0;
    double occ = 0.0;
  };
  double forward(const Vec3& x, const PoseCond& cond, Tape* tape = nullptr,
                 VecX* feat = nullptr) const;
  void forward_batch(std::span<const Vec3> xs, const PoseCond& cond, VecX* occ,
                     MatX* feat = nullptr) const;

  // Accumulates parameter gradients for dL/d(occ) = g_occ plus an optional
  // feature gradient; g_x receives the position gradient.
  void backward(const Tape& tape, double g_occ, const VecX* g_feat, MlpGrads* acc,
                Vec3* g_x) const;
  // Position gradient of occ for every sample (the canonical normal direction).
  void grad_x_batch(std::span<const Vec3> xs, const PoseCond& cond, std::vector<Vec3>* g,
                    VecX* occ = nullptr, MatX* feat = nullptr) const;
  // Forward-over-reverse along position direction vin; see Mlp::backward_fwd.
  void backward_fwd(const Tape& tape, double g_occ, const VecX* g_feat, const Vec3& vin,
                    double g_occ_dot, const VecX* g_feat_dot, MlpGrads* acc, Vec3* g_x,
                    MlpGrads* acc_dot, Vec3* g_x_dot) const;

  Encoding enc_x{6, true};
  Encoding enc_c{2, true};
  double cond_gain = 0.1;
  Mlp mlp;

 private:
  VecX assemble(const Vec3& x, const PoseCond& cond) const;
  int theta_dim_ = 0, psi_dim_ = 0;
};

// Canonical skinning net: w(x) = softmax(mlp(enc(x))).
class SkinNet {
 public:
  SkinNet() = default;
  SkinNet(int bones, const NetConfig& cfg, std::uint64_t seed);

  int bone_count() const { return mlp.output_dim(); }

  struct Tape {
    Mlp::Tape t;
    Vec3 x = Vec3::Zero();
    VecX w;
  };
  VecX forward(const Vec3& x, Tape* tape = nullptr) const;
  void forward_batch(std::span<const Vec3> xs, MatX* W) const;
  void forward_batch_jacobian(std::span<const Vec3> xs, MatX* W, std::vector<MatX3>* jac) const;

  void backward(const Tape& tape, const VecX& g_w, MlpGrads* acc, Vec3* g_x) const;
  void backward_fwd(const Tape& tape, const VecX& g_w, const Vec3& vin, const VecX& g_w_dot,
                    MlpGrads* acc, Vec3* g_x, MlpGrads* acc_dot, Vec3* g_x_dot) const;

  Encoding enc_x{6, true};
  Mlp mlp;
};

// Color net: rgb(x, n_d, feature | theta_b, psi), sigmoid head.
class RgbNet {
 public:
  RgbNet() = default;
  RgbNet(int feature_dim, int theta_dim, int psi_dim, const NetConfig& cfg, std::uint64_t seed);

  PoseCond condition(const VecX& theta_b, const VecX& psi) const;

  struct Tape {
    Mlp::Tape t;
    Vec3 x = Vec3::Zero();
    Vec3 rgb = Vec3::Zero();
  };
  Vec3 forward(const Vec3& x, const Vec3& n_d, const VecX& feat, const PoseCond& cond,
               Tape* tape = nullptr) const;
  void forward_batch(std::span<const Vec3> xs, const MatX& n_d, const MatX& feat,
                     const PoseCond& cond, MatX* rgb) const;

  void backward(const Tape& tape, const Vec3& g_rgb, MlpGrads* acc, Vec3* g_x, Vec3* g_nd,
                VecX* g_feat) const;

  Encoding enc_x{6, true};
  Encoding enc_c{2, true};
  double cond_gain = 0.1;
  Mlp mlp;
  int feature_dim_in = 0;

 private:
  VecX assemble(const Vec3& x, const Vec3& n_d, const VecX& feat, const PoseCond& cond) const;
  int theta_dim_ = 0, psi_dim_ = 0;
};

// The trio making up one avatar.
struct AvatarNets {
  OccNet occ;
  SkinNet skin;
  RgbNet rgb;
};
AvatarNets make_avatar_nets(int bones, int theta_dim, int psi_dim, const NetConfig& cfg,
                            std::uint64_t seed);

}  // namespace arti
