#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "arti/nets.hpp"
#include "testutil.hpp"

using namespace arti;

namespace {

double softplus100(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-100.0 * z)) / 100.0;
  return std::log1p(std::exp(100.0 * z)) / 100.0;
}

Vec3 rand_vec3(std::mt19937_64& g, double s) {
  std::uniform_real_distribution<double> u(-s, s);
  return Vec3(u(g), u(g), u(g));
}

VecX rand_vecx(std::mt19937_64& g, int n, double s) {
  std::uniform_real_distribution<double> u(-s, s);
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = u(g);
  return v;
}

double flat_inf_diff(const MlpGrads& a, const MlpGrads& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) m = std::max(m, std::abs(a.flat(i) - b.flat(i)));
  return m;
}

}  // namespace

TEST_CASE("encoding dimensions follow the octave formula") {
  for (int d : {1, 2, 3}) {
    for (int L : {0, 1, 2, 6}) {
      for (bool raw : {true, false}) {
        Encoding e{L, raw};
        CHECK(e.per_coord() == (raw ? 1 : 0) + 2 * L);
        CHECK(e.out_dim(d) == d * e.per_coord());
      }
    }
  }
}

TEST_CASE("encoding emits raw then interleaved sin cos per coordinate") {
  Encoding e{2, true};
  const double x[2] = {0.3, -0.7};
  std::vector<double> out(std::size_t(e.out_dim(2)));
  e.encode(x, 2, out.data());
  for (int c = 0; c < 2; ++c) {
    const double* o = out.data() + c * e.per_coord();
    CHECK(o[0] == doctest::Approx(x[c]).epsilon(1e-15));
    CHECK(o[1] == doctest::Approx(std::sin(M_PI * x[c])).epsilon(1e-12));
    CHECK(o[2] == doctest::Approx(std::cos(M_PI * x[c])).epsilon(1e-12));
    CHECK(o[3] == doctest::Approx(std::sin(2.0 * M_PI * x[c])).epsilon(1e-12));
    CHECK(o[4] == doctest::Approx(std::cos(2.0 * M_PI * x[c])).epsilon(1e-12));
  }
}

TEST_CASE("encoding tangent and gradient pullback match differences") {
  Encoding e{3, true};
  std::mt19937_64 g(7);
  const Vec3 x = rand_vec3(g, 0.8);
  const Vec3 v = rand_vec3(g, 1.0);
  const int n = e.out_dim(3);
  const double h = 1e-6;

  std::vector<double> lo(static_cast<std::size_t>(n));
  std::vector<double> hi(static_cast<std::size_t>(n));
  std::vector<double> tan(static_cast<std::size_t>(n));
  Vec3 xp = x + h * v, xm = x - h * v;
  e.encode(xp.data(), 3, hi.data());
  e.encode(xm.data(), 3, lo.data());
  e.tangent(x.data(), v.data(), 3, tan.data());
  for (int i = 0; i < n; ++i)
    CHECK(tan[std::size_t(i)] ==
          doctest::Approx((hi[std::size_t(i)] - lo[std::size_t(i)]) / (2 * h)).epsilon(1e-5));

  // pullback is the transpose of the tangent map
  const VecX ge = rand_vecx(g, n, 1.0);
  Vec3 gr = Vec3::Zero();
  e.add_grad(x.data(), 3, ge.data(), gr.data());
  double dot_t = 0.0;
  for (int i = 0; i < n; ++i) dot_t += tan[std::size_t(i)] * ge[i];
  CHECK(gr.dot(v) == doctest::Approx(dot_t).epsilon(1e-10));
}

TEST_CASE("forward pass matches a straight line reevaluation") {
  Mlp net({3, 4, 2}, 123);
  std::mt19937_64 g(9);
  const VecX in = rand_vecx(g, 3, 1.0);
  const VecX out = net.forward(in);

  VecX a = in;
  for (int k = 0; k < net.layer_count(); ++k) {
    VecX z = net.Wd(k) * a + net.bd(k);
    if (k + 1 < net.layer_count())
      for (int i = 0; i < z.size(); ++i) z[i] = softplus100(z[i]);
    a = z;
  }
  CHECK((out - a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mlp backward and jvp agree with central differences") {
  Mlp net({5, 8, 8, 2}, 321);
  std::mt19937_64 g(11);
  const VecX in = rand_vecx(g, 5, 0.9);
  const VecX gout = rand_vecx(g, 2, 1.0);
  const VecX gfeat = rand_vecx(g, 8, 1.0);

  Mlp::Tape tape;
  net.forward(in, &tape);
  MlpGrads acc;
  acc.init_like(net);
  acc.zero();
  VecX gin = VecX::Zero(5);
  net.backward(tape, gout, &gfeat, &acc, &gin);

  const auto probe = [&]() {
    Mlp::Tape t;
    VecX feat = VecX::Zero(8);
    const VecX o = net.forward(in, &t);
    // feature = activation entering the output layer
    const VecX f = t.a[std::size_t(net.layer_count() - 1)];
    return gout.dot(o) + gfeat.dot(f);
  };

  SUBCASE("parameter gradients") {
    int ok = 0, n = 0;
    for (std::size_t i = 0; i < net.param_count(); ++i) {
      const double fd = tu::fd_param(&net, i, 1e-3, probe);
      if (tu::rel_err(acc.flat(i), fd, 1e-7) <= 1e-3) ++ok;
      ++n;
    }
    CHECK(double(ok) / n >= 0.95);
  }

  SUBCASE("input gradient") {
    for (int j = 0; j < 5; ++j) {
      VecX ip = in, im = in;
      ip[j] += 1e-6;
      im[j] -= 1e-6;
      Mlp::Tape tp, tm;
      const double fp = gout.dot(net.forward(ip, &tp)) +
                        gfeat.dot(tp.a[std::size_t(net.layer_count() - 1)]);
      const double fm = gout.dot(net.forward(im, &tm)) +
                        gfeat.dot(tm.a[std::size_t(net.layer_count() - 1)]);
      CHECK(gin[j] == doctest::Approx((fp - fm) / 2e-6).epsilon(1e-5));
    }
  }

  SUBCASE("jvp is the directional derivative") {
    const VecX v = rand_vecx(g, 5, 1.0);
    VecX fdot;
    const VecX odot = net.jvp(tape, v, &fdot);
    const double h = 1e-6;
    Mlp::Tape tp, tm;
    const VecX op = net.forward(in + h * v, &tp);
    const VecX om = net.forward(in - h * v, &tm);
    CHECK((odot - (op - om) / (2 * h)).cwiseAbs().maxCoeff() < 1e-5);
    const VecX fp = tp.a[std::size_t(net.layer_count() - 1)];
    const VecX fm = tm.a[std::size_t(net.layer_count() - 1)];
    CHECK((fdot - (fp - fm) / (2 * h)).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("forward over reverse differentiates the backward pass") {
  Mlp net({4, 6, 6, 3}, 77);
  std::mt19937_64 g(13);
  const VecX in = rand_vecx(g, 4, 0.8);
  const VecX v = rand_vecx(g, 4, 1.0);
  const VecX gout = rand_vecx(g, 3, 1.0);
  const VecX gout_dot = rand_vecx(g, 3, 1.0);

  Mlp::Tape tape;
  net.forward(in, &tape);
  MlpGrads acc_dot;
  acc_dot.init_like(net);
  acc_dot.zero();
  VecX gin_dot = VecX::Zero(4);
  net.backward_fwd(tape, gout, nullptr, v, gout_dot, nullptr, nullptr, nullptr, &acc_dot,
                   &gin_dot);

  // reference: run backward at in +- h v with gout moving at gout_dot
  const double h = 1e-6;
  const auto bw_at = [&](double t, MlpGrads* acc, VecX* gin) {
    Mlp::Tape tp;
    net.forward(in + t * v, &tp);
    acc->init_like(net);
    acc->zero();
    gin->setZero();
    net.backward(tp, gout + t * gout_dot, nullptr, acc, gin);
  };
  MlpGrads ap, am;
  VecX gp = VecX::Zero(4), gm = VecX::Zero(4);
  bw_at(h, &ap, &gp);
  bw_at(-h, &am, &gm);

  for (std::size_t i = 0; i < acc_dot.count(); ++i) {
    const double fd = (ap.flat(i) - am.flat(i)) / (2 * h);
    CHECK(std::abs(acc_dot.flat(i) - fd) < 1e-4 * std::max(1.0, std::abs(fd)));
  }
  const VecX fd_gin = (gp - gm) / (2 * h);
  CHECK((gin_dot - fd_gin).cwiseAbs().maxCoeff() < 1e-4 * std::max(1.0, fd_gin.norm()));
}

TEST_CASE("occupancy net heads") {
  const NetConfig cfg = tu::tiny_net_cfg();
  OccNet occ(3, 2, cfg, 5);
  std::mt19937_64 g(15);
  const VecX theta = rand_vecx(g, 3, 0.5);
  const VecX psi = rand_vecx(g, 2, 0.8);
  const PoseCond cond = occ.condition(theta, psi);

  SUBCASE("conditioning length follows the encoding") {
    const int per = 1 + 2 * cfg.cond_octaves;
    CHECK(cond.enc.size() == 3 * per + 2 * per);
  }

  SUBCASE("feature is the last hidden activation") {
    CHECK(occ.feature_dim() == cfg.hidden);
    VecX feat;
    occ.forward(Vec3(0.1, 0.2, -0.1), cond, nullptr, &feat);
    CHECK(feat.size() == cfg.hidden);
  }

  SUBCASE("zero final layer pins occupancy to sigmoid of the bias") {
    Mlp& m = occ.mlp;
    const int k = m.layer_count() - 1;
    m.W32(k).setZero();
    m.b32(k).setZero();
    m.b32(k)(0) = 1.25f;
    m.sync();
    const double want = 1.0 / (1.0 + std::exp(-double(m.b32(k)(0))));
    for (int i = 0; i < 5; ++i)
      CHECK(occ.forward(rand_vec3(g, 0.5), cond) == doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("permuting the shape code moves the output") {
    VecX psi2(2);
    psi2 << psi[1], psi[0];
    const PoseCond cond2 = occ.condition(theta, psi2);
    const Vec3 x(0.05, 0.2, -0.1);
    CHECK(std::abs(occ.forward(x, cond) - occ.forward(x, cond2)) > 1e-6);
  }

  SUBCASE("batched forward matches single evaluation") {
    std::vector<Vec3> xs;
    for (int i = 0; i < 7; ++i) xs.push_back(rand_vec3(g, 0.6));
    VecX o;
    MatX feat;
    occ.forward_batch(xs, cond, &o, &feat);
    REQUIRE(o.size() == 7);
    for (int i = 0; i < 7; ++i) {
      VecX f1;
      const double o1 = occ.forward(xs[std::size_t(i)], cond, nullptr, &f1);
      CHECK(o[i] == doctest::Approx(o1).epsilon(1e-12));
      CHECK((feat.col(i) - f1).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("position gradient matches differences") {
    const Vec3 x(0.12, 0.31, -0.05);
    OccNet::Tape tape;
    occ.forward(x, cond, &tape);
    Vec3 gx;
    occ.backward(tape, 1.0, nullptr, nullptr, &gx);
    for (int j = 0; j < 3; ++j) {
      Vec3 xp = x, xm = x;
      xp[j] += 1e-6;
      xm[j] -= 1e-6;
      const double fd = (occ.forward(xp, cond) - occ.forward(xm, cond)) / 2e-6;
      CHECK(gx[j] == doctest::Approx(fd).epsilon(1e-5));
    }
    std::vector<Vec3> gb;
    occ.grad_x_batch(std::span<const Vec3>(&x, 1), cond, &gb);
    CHECK((gb[0] - gx).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("parameter gradients match differences through both heads") {
    const Vec3 x(0.12, 0.31, -0.05);
    const VecX gfeat = rand_vecx(g, cfg.hidden, 1.0);
    OccNet::Tape tape;
    occ.forward(x, cond, &tape);
    MlpGrads acc;
    acc.init_like(occ.mlp);
    acc.zero();
    occ.backward(tape, 1.0, &gfeat, &acc, nullptr);
    const auto probe = [&]() {
      VecX f;
      const double o = occ.forward(x, cond, nullptr, &f);
      return o + gfeat.dot(f);
    };
    int ok = 0, n = 0;
    for (std::size_t i = 0; i < occ.mlp.param_count(); i += 2) {
      const double fd = tu::fd_param(&occ.mlp, i, 1e-3, probe);
      if (tu::rel_err(acc.flat(i), fd, 1e-7) <= 1e-3) ++ok;
      ++n;
    }
    CHECK(double(ok) / n >= 0.95);
  }
}

TEST_CASE("skinning net softmax head") {
  SkinNet skin(4, tu::tiny_net_cfg(), 6);
  std::mt19937_64 g(17);

  SUBCASE("weights are a partition of unity") {
    for (int i = 0; i < 1000; ++i) {
      const VecX w = skin.forward(rand_vec3(g, 1.2));
      CHECK(std::abs(w.sum() - 1.0) < 1e-6);
      CHECK(w.minCoeff() >= 0.0);
    }
  }

  SUBCASE("zero logits give uniform weights") {
    Mlp& m = skin.mlp;
    const int k = m.layer_count() - 1;
    m.W32(k).setZero();
    m.b32(k).setZero();
    m.sync();
    const VecX w = skin.forward(Vec3(0.2, -0.4, 0.1));
    for (int i = 0; i < 4; ++i) CHECK(w[i] == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("batch jacobian matches differences") {
    const Vec3 x(0.15, -0.2, 0.3);
    MatX W;
    std::vector<MatX3> jac;
    skin.forward_batch_jacobian(std::span<const Vec3>(&x, 1), &W, &jac);
    CHECK((skin.forward(x) - W.col(0)).cwiseAbs().maxCoeff() < 1e-12);
    for (int j = 0; j < 3; ++j) {
      Vec3 xp = x, xm = x;
      xp[j] += 1e-6;
      xm[j] -= 1e-6;
      const VecX fd = (skin.forward(xp) - skin.forward(xm)) / 2e-6;
      for (int i = 0; i < 4; ++i)
        CHECK(jac[0](i, j) == doctest::Approx(fd[i]).epsilon(1e-4).scale(1.0));
    }
  }

  SUBCASE("parameter gradients match differences") {
    const Vec3 x(0.15, -0.2, 0.3);
    const VecX gw = rand_vecx(g, 4, 1.0);
    SkinNet::Tape tape;
    skin.forward(x, &tape);
    MlpGrads acc;
    acc.init_like(skin.mlp);
    acc.zero();
    skin.backward(tape, gw, &acc, nullptr);
    const auto probe = [&]() { return gw.dot(skin.forward(x)); };
    int ok = 0, n = 0;
    for (std::size_t i = 0; i < skin.mlp.param_count(); i += 2) {
      const double fd = tu::fd_param(&skin.mlp, i, 1e-3, probe);
      if (tu::rel_err(acc.flat(i), fd, 1e-7) <= 1e-3) ++ok;
      ++n;
    }
    CHECK(double(ok) / n >= 0.95);
  }
}

TEST_CASE("color net head") {
  const NetConfig cfg = tu::tiny_net_cfg();
  RgbNet rgb(cfg.hidden, 3, 2, cfg, 8);
  std::mt19937_64 g(19);
  const PoseCond cond = rgb.condition(rand_vecx(g, 3, 0.5), rand_vecx(g, 2, 0.8));
  const Vec3 x(0.1, 0.25, -0.08);
  const Vec3 n_d = Vec3(0.3, -0.5, 0.2).normalized();
  const VecX feat = rand_vecx(g, cfg.hidden, 0.7);

  SUBCASE("outputs live in the unit cube") {
    const Vec3 c = rgb.forward(x, n_d, feat, cond);
    for (int i = 0; i < 3; ++i) {
      CHECK(c[i] > 0.0);
      CHECK(c[i] < 1.0);
    }
  }

  SUBCASE("zero final layer gives mid gray") {
    Mlp& m = rgb.mlp;
    const int k = m.layer_count() - 1;
    m.W32(k).setZero();
    m.b32(k).setZero();
    m.sync();
    const Vec3 c = rgb.forward(x, n_d, feat, cond);
    for (int i = 0; i < 3; ++i) CHECK(c[i] == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("flipping the deformed normal moves the output") {
    const Vec3 a = rgb.forward(x, n_d, feat, cond);
    const Vec3 b = rgb.forward(x, -n_d, feat, cond);
    CHECK((a - b).cwiseAbs().maxCoeff() > 1e-6);
  }

  SUBCASE("input gradients match differences") {
    RgbNet::Tape tape;
    rgb.forward(x, n_d, feat, cond, &tape);
    const Vec3 grgb = rand_vec3(g, 1.0);
    Vec3 gx, gn;
    VecX gf;
    rgb.backward(tape, grgb, nullptr, &gx, &gn, &gf);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Vec3 xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double fd =
          grgb.dot(rgb.forward(xp, n_d, feat, cond) - rgb.forward(xm, n_d, feat, cond)) / (2 * h);
      CHECK(gx[j] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
      Vec3 np = n_d, nm = n_d;
      np[j] += h;
      nm[j] -= h;
      const double fdn =
          grgb.dot(rgb.forward(x, np, feat, cond) - rgb.forward(x, nm, feat, cond)) / (2 * h);
      CHECK(gn[j] == doctest::Approx(fdn).epsilon(1e-4).scale(1.0));
    }
    for (int j = 0; j < feat.size(); j += 3) {
      VecX fp = feat, fm = feat;
      fp[j] += h;
      fm[j] -= h;
      const double fd =
          grgb.dot(rgb.forward(x, n_d, fp, cond) - rgb.forward(x, n_d, fm, cond)) / (2 * h);
      CHECK(gf[j] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }

  SUBCASE("parameter gradients match differences") {
    RgbNet::Tape tape;
    rgb.forward(x, n_d, feat, cond, &tape);
    const Vec3 grgb = rand_vec3(g, 1.0);
    MlpGrads acc;
    acc.init_like(rgb.mlp);
    acc.zero();
    rgb.backward(tape, grgb, &acc, nullptr, nullptr, nullptr);
    const auto probe = [&]() { return grgb.dot(rgb.forward(x, n_d, feat, cond)); };
    int ok = 0, n = 0;
    for (std::size_t i = 0; i < rgb.mlp.param_count(); i += 3) {
      const double fd = tu::fd_param(&rgb.mlp, i, 1e-3, probe);
      if (tu::rel_err(acc.flat(i), fd, 1e-7) <= 1e-3) ++ok;
      ++n;
    }
    CHECK(double(ok) / n >= 0.95);
  }
}

TEST_CASE("avatar net bundle is seeded and shaped consistently") {
  const NetConfig cfg = tu::tiny_net_cfg();
  const AvatarNets a = make_avatar_nets(5, 6, 2, cfg, 42);
  const AvatarNets b = make_avatar_nets(5, 6, 2, cfg, 42);
  const AvatarNets c = make_avatar_nets(5, 6, 2, cfg, 43);
  CHECK(a.skin.bone_count() == 5);
  CHECK(a.occ.feature_dim() == cfg.hidden);
  CHECK(a.rgb.feature_dim_in == cfg.hidden);

  bool same = true, diff = false;
  for (std::size_t i = 0; i < a.occ.mlp.param_count(); ++i) {
    same = same && a.occ.mlp.param(i) == b.occ.mlp.param(i);
    diff = diff || a.occ.mlp.param(i) != c.occ.mlp.param(i);
  }
  CHECK(same);
  CHECK(diff);
  // the three nets draw distinct initializations
  bool occ_vs_skin = false;
  const std::size_t n = std::min(a.occ.mlp.param_count(), a.skin.mlp.param_count());
  for (std::size_t i = 0; i < n; ++i)
    occ_vs_skin = occ_vs_skin || a.occ.mlp.param(i) != a.skin.mlp.param(i);
  CHECK(occ_vs_skin);
}
