#include "arti/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "arti/rng.hpp"

namespace arti {

void AdamState::init_like(const Mlp& net) {
  mW.clear();
  vW.clear();
  mb.clear();
  vb.clear();
  for (int k = 0; k < net.layer_count(); ++k) {
    mW.push_back(Eigen::MatrixXf::Zero(net.W32(k).rows(), net.W32(k).cols()));
    vW.push_back(Eigen::MatrixXf::Zero(net.W32(k).rows(), net.W32(k).cols()));
    mb.push_back(Eigen::VectorXf::Zero(net.b32(k).size()));
    vb.push_back(Eigen::VectorXf::Zero(net.b32(k).size()));
  }
  steps = 0;
}

bool adam_step(Mlp* net, AdamState* st, const MlpGrads& g, const AdamConfig& cfg) {
  if (!g.finite()) return false;
  st->steps += 1;
  const double t = static_cast<double>(st->steps);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (int k = 0; k < net->layer_count(); ++k) {
    auto update = [&](float& p, float& m32, float& v32, double grad) {
      double m = cfg.beta1 * static_cast<double>(m32) + (1.0 - cfg.beta1) * grad;
      double v = cfg.beta2 * static_cast<double>(v32) + (1.0 - cfg.beta2) * grad * grad;
      m32 = static_cast<float>(m);
      v32 = static_cast<float>(v);
      const double stepv = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p = static_cast<float>(static_cast<double>(p) - stepv);
    };
    auto& W = net->W32(k);
    auto& b = net->b32(k);
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        update(W(r, c), st->mW[k](r, c), st->vW[k](r, c), g.dW[k](r, c));
    for (Eigen::Index r = 0; r < b.size(); ++r)
      update(b(r), st->mb[k](r), st->vb[k](r), g.db[k](r));
  }
  net->sync();
  return true;
}

Trainer::Trainer(Rig rig, AvatarNets nets, TrainConfig cfg)
    : rig_(std::move(rig)), nets_(std::move(nets)), cfg_(cfg) {
  occ_st_.init_like(nets_.occ.mlp);
  skin_st_.init_like(nets_.skin.mlp);
  rgb_st_.init_like(nets_.rgb.mlp);
  grads_.init_like(nets_);
}

void Trainer::set_data(std::vector<Scan> scans) { scans_ = std::move(scans); }

void Trainer::pretrain() {
  std::vector<int> all_bones(static_cast<std::size_t>(rig_.bone_count()));
  std::iota(all_bones.begin(), all_bones.end(), 0);
  MlpGrads g;
  g.init_like(nets_.skin.mlp);
  MlpGrads go;
  go.init_like(nets_.occ.mlp);
  AdamState occ_st;
  occ_st.init_like(nets_.occ.mlp);
  Vec3 bmin, bmax;
  rig_bounds(rig_, &bmin, &bmax);
  const Vec3 pad = 0.25 * (bmax - bmin);
  bmin -= pad;
  bmax += pad;
  std::vector<int> small_bones;
  for (PartId p : {PartId::LeftHand, PartId::RightHand, PartId::Face})
    for (int b : rig_.group(p)) small_bones.push_back(b);
  for (int it = 0; it < cfg_.pretrain_steps; ++it) {
    auto gen = rng_stream(cfg_.seed, RngUse::Pretrain, static_cast<std::uint64_t>(it));
    std::vector<Vec3> pts, normals;
    sample_union_surface(rig_, all_bones, cfg_.pretrain_batch, gen, &pts, &normals, nullptr);
    // the solver visits canonical points far off the surface, so anchor the
    // weights to the reference field there too or the map grows folds
    std::vector<Vec3> far;
    for (int i = 0; i < cfg_.pretrain_batch / 4; ++i) {
      Vec3 x;
      for (int c = 0; c < 3; ++c) x[c] = uniform(gen, bmin[c], bmax[c]);
      far.push_back(x);
    }
    const double n = static_cast<double>(pts.size() + far.size());
    g.zero();
    auto fit_ref = [&](const Vec3& x) {
      const VecX ref = reference_weights(rig_, x);
      SkinNet::Tape tape;
      const VecX w = nets_.skin.forward(x, &tape);
      const VecX gw = (2.0 / n) * (w - ref);
      nets_.skin.backward(tape, gw, &g, nullptr);
    };
    for (std::size_t i = 0; i < pts.size(); ++i)
      fit_ref(pts[i] + uniform(gen, -cfg_.pretrain_jitter, cfg_.pretrain_jitter) * normals[i]);
    for (const Vec3& x : far) fit_ref(x);
    if (!adam_step(&nets_.skin.mlp, &skin_st_, g, cfg_.pretrain_adam)) ++stats_.skipped_skin;

    // occupancy toward the capsule template so the field starts shaped; the
    // pose conditioning cycles through the scans to anchor it as a no-op
    auto gocc = rng_stream(cfg_.seed, RngUse::PretrainOcc, static_cast<std::uint64_t>(it));
    const Pose* pose = scans_.empty() ? nullptr : &scans_[static_cast<std::size_t>(it) % scans_.size()].pose;
    const VecX theta = pose ? pose->theta_b : VecX::Zero(nets_.occ.theta_dim());
    const VecX psi = pose ? pose->psi : VecX::Zero(nets_.occ.psi_dim());
    const PoseCond cond = nets_.occ.condition(theta, psi);
    std::vector<Vec3> opts;
    std::vector<double> olab;
    const int ns = cfg_.pretrain_batch / 2;
    std::vector<Vec3> spts, snorm;
    sample_union_surface(rig_, all_bones, ns / 2, gocc, &spts, &snorm, nullptr);
    if (!small_bones.empty())  // area-uniform sampling starves the thin parts
      sample_union_surface(rig_, small_bones, ns - ns / 2, gocc, &spts, &snorm, nullptr);
    for (std::size_t i = 0; i < spts.size(); ++i) {
      const double d = uniform(gocc, 1e-4, cfg_.pretrain_jitter);
      const double s = (i % 2 == 0) ? -1.0 : 1.0;
      const Vec3 x = spts[i] + s * d * snorm[i];
      opts.push_back(x);
      olab.push_back(analytic_occupancy(rig_, x));
    }
    for (int i = 0; i < cfg_.pretrain_batch / 4; ++i) {
      Vec3 x;
      for (int c = 0; c < 3; ++c) x[c] = uniform(gocc, bmin[c], bmax[c]);
      opts.push_back(x);
      olab.push_back(analytic_occupancy(rig_, x));
    }
    go.zero();
    const double no = static_cast<double>(opts.size());
    for (std::size_t i = 0; i < opts.size(); ++i) {
      OccNet::Tape tape;
      const double o = nets_.occ.forward(opts[i], cond, &tape);
      if (o <= 0.0 || o >= 1.0) continue;
      const double g_o = (o - olab[i]) / (o * (1.0 - o)) / no;
      nets_.occ.backward(tape, g_o, nullptr, &go, nullptr);
    }
    if (!adam_step(&nets_.occ.mlp, &occ_st, go, cfg_.pretrain_adam)) ++stats_.skipped_occ;
  }
  skin_st_.init_like(nets_.skin.mlp);  // the main loop starts with fresh moments
  stats_.pretrain_done = true;
}

LossReport Trainer::train_step() {
  if (scans_.empty()) throw std::runtime_error("trainer has no scans");
  auto gen = rng_stream(cfg_.seed, RngUse::FramePick, static_cast<std::uint64_t>(step_));
  const auto frame = uniform_index(gen, scans_.size());
  const Scan& scan = scans_[frame];
  const TrainBatch batch =
      make_train_batch(rig_, scan, cfg_.budgets, cfg_.shells, cfg_.reg, cfg_.part_sampling,
                       cfg_.seed, static_cast<std::uint64_t>(step_));
  const BoneTransforms bt = forward_kinematics(rig_, scan.pose);
  grads_.zero();
  const LossReport rep = loss_total(nets_, rig_, bt, scan.pose, batch, cfg_.weights,
                                    cfg_.init_mode, cfg_.solver, &grads_, &counters_);
  if (!std::isfinite(rep.total)) throw NumericError("non-finite training loss");
  if (!adam_step(&nets_.occ.mlp, &occ_st_, grads_.occ, cfg_.adam)) ++stats_.skipped_occ;
  if (!adam_step(&nets_.skin.mlp, &skin_st_, grads_.skin, cfg_.adam)) ++stats_.skipped_skin;
  if (!adam_step(&nets_.rgb.mlp, &rgb_st_, grads_.rgb, cfg_.adam)) ++stats_.skipped_rgb;
  ++step_;
  return rep;
}

void Trainer::run(std::ostream* log) {
  using clock = std::chrono::steady_clock;
  if (!stats_.pretrain_done && cfg_.pretrain_steps > 0) {
    const auto t0 = clock::now();
    pretrain();
    if (log)
      *log << "pretrain " << cfg_.pretrain_steps << " steps "
           << std::chrono::duration<double>(clock::now() - t0).count() << "s\n";
  }
  stats_.pretrain_done = true;
  while (step_ < cfg_.steps) {
    const auto t0 = clock::now();
    const LossReport r = train_step();
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    if (log && (step_ % cfg_.log_every == 0 || step_ == cfg_.steps)) {
      *log << "step " << step_ << "/" << cfg_.steps << " total " << r.total << " bce " << r.bce
           << " normal " << r.normal << " rgb " << r.rgb << " bone " << r.bone << " joint "
           << r.joint << " surf " << r.surf << " on " << r.on_valid << "/" << r.on_total
           << " off " << r.off_valid << "/" << r.off_total << " " << secs << "s\n";
    }
  }
}

namespace {

NamedBlob blob_from_adam(const std::string& name, const AdamState& st, bool second) {
  NamedBlob blob;
  blob.name = name;
  for (std::size_t k = 0; k < st.mW.size(); ++k) {
    const auto& M = second ? st.vW[k] : st.mW[k];
    const auto& b = second ? st.vb[k] : st.mb[k];
    LayerBlob layer;
    layer.rows = static_cast<std::uint32_t>(M.rows());
    layer.cols = static_cast<std::uint32_t>(M.cols());
    layer.W.resize(static_cast<std::size_t>(M.rows()) * static_cast<std::size_t>(M.cols()));
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        layer.W[static_cast<std::size_t>(r) * M.cols() + c] = M(r, c);
    layer.b.assign(b.data(), b.data() + b.size());
    blob.layers.push_back(std::move(layer));
  }
  return blob;
}

void adam_from_blob(const NamedBlob& blob, AdamState* st, bool second) {
  auto& Ms = second ? st->vW : st->mW;
  auto& bs = second ? st->vb : st->mb;
  if (blob.layers.size() != Ms.size()) throw CheckpointError("optimizer layer count mismatch");
  for (std::size_t k = 0; k < Ms.size(); ++k) {
    const LayerBlob& layer = blob.layers[k];
    if (static_cast<Eigen::Index>(layer.rows) != Ms[k].rows() ||
        static_cast<Eigen::Index>(layer.cols) != Ms[k].cols())
      throw CheckpointError("optimizer layer shape mismatch");
    for (Eigen::Index r = 0; r < Ms[k].rows(); ++r)
      for (Eigen::Index c = 0; c < Ms[k].cols(); ++c)
        Ms[k](r, c) = layer.W[static_cast<std::size_t>(r) * layer.cols + c];
    for (Eigen::Index r = 0; r < bs[k].size(); ++r) bs[k](r) = layer.b[static_cast<std::size_t>(r)];
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::vector<NamedBlob> blobs;
  blobs.push_back(blob_from_mlp("net.occ", nets_.occ.mlp));
  blobs.push_back(blob_from_mlp("net.skin", nets_.skin.mlp));
  blobs.push_back(blob_from_mlp("net.rgb", nets_.rgb.mlp));
  blobs.push_back(blob_from_adam("adam.m.occ", occ_st_, false));
  blobs.push_back(blob_from_adam("adam.v.occ", occ_st_, true));
  blobs.push_back(blob_from_adam("adam.m.skin", skin_st_, false));
  blobs.push_back(blob_from_adam("adam.v.skin", skin_st_, true));
  blobs.push_back(blob_from_adam("adam.m.rgb", rgb_st_, false));
  blobs.push_back(blob_from_adam("adam.v.rgb", rgb_st_, true));
  NamedBlob meta;
  meta.name = "opt.meta";
  LayerBlob layer;
  layer.rows = 1;
  layer.cols = 8;
  layer.W = {static_cast<float>(step_), static_cast<float>(occ_st_.steps),
             static_cast<float>(skin_st_.steps), static_cast<float>(rgb_st_.steps),
             static_cast<float>(stats_.skipped_occ), static_cast<float>(stats_.skipped_skin),
             static_cast<float>(stats_.skipped_rgb), stats_.pretrain_done ? 1.0f : 0.0f};
  layer.b = {0.0f};
  meta.layers.push_back(std::move(layer));
  blobs.push_back(std::move(meta));
  save_blobs(path, blobs);
}

void Trainer::load_checkpoint(const std::string& path) {
  const std::vector<NamedBlob> blobs = load_blobs(path);
  auto need = [&](const char* name) {
    const NamedBlob* b = find_blob(blobs, name);
    if (!b) throw CheckpointError(std::string("missing array: ") + name);
    return b;
  };
  load_mlp(*need("net.occ"), &nets_.occ.mlp);
  load_mlp(*need("net.skin"), &nets_.skin.mlp);
  load_mlp(*need("net.rgb"), &nets_.rgb.mlp);
  adam_from_blob(*need("adam.m.occ"), &occ_st_, false);
  adam_from_blob(*need("adam.v.occ"), &occ_st_, true);
  adam_from_blob(*need("adam.m.skin"), &skin_st_, false);
  adam_from_blob(*need("adam.v.skin"), &skin_st_, true);
  adam_from_blob(*need("adam.m.rgb"), &rgb_st_, false);
  adam_from_blob(*need("adam.v.rgb"), &rgb_st_, true);
  const NamedBlob* meta = need("opt.meta");
  if (meta->layers.size() != 1 || meta->layers[0].W.size() != 8)
    throw CheckpointError("bad opt.meta shape");
  const auto& m = meta->layers[0].W;
  step_ = static_cast<int>(m[0]);
  occ_st_.steps = static_cast<long long>(m[1]);
  skin_st_.steps = static_cast<long long>(m[2]);
  rgb_st_.steps = static_cast<long long>(m[3]);
  stats_.skipped_occ = static_cast<long long>(m[4]);
  stats_.skipped_skin = static_cast<long long>(m[5]);
  stats_.skipped_rgb = static_cast<long long>(m[6]);
  stats_.pretrain_done = m[7] != 0.0f;
}

}  // namespace arti
