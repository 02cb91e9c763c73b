#include "splice/train.hpp"

#include <cmath>
#include <fstream>

#include "splice/descriptors.hpp"
#include "splice/errors.hpp"

namespace splice::train {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train: lr must be positive");
  if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
  if (clean_pair_interval < 1 || checkpoint_interval < 1)
    throw ConfigError("train: intervals must be >= 1");
  if (vit_resize < 1) throw ConfigError("train: vit_resize must be >= 1");
  if (identity_pair_p < 0 || identity_pair_p > 1)
    throw ConfigError("train: identity_pair_p must lie in [0,1]");
  if (!(weights.alpha >= 0) || !(weights.beta >= 0) ||
      !std::isfinite(weights.alpha) || !std::isfinite(weights.beta))
    throw ConfigError("train: loss weights must be finite and >= 0");
}

void write_history_csv(const LossHistory& h, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write loss history: " + path);
  f << "iteration,total,app,structure,identity\n";
  for (const auto& r : h)
    f << r.iteration << ',' << r.total << ',' << r.app << ',' << r.structure
      << ',' << r.identity << '\n';
}

namespace {

Index round_multiple(Index v, Index m) {
  return std::max(m, ((v + m / 2) / m) * m);
}

Tensor canonical(const Tensor& chw, Index h, Index w) {
  return resize_bicubic(chw, h, w);
}

void check_finite(Scalar v, const char* term, Index iter) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + term + " loss at iteration " +
                       std::to_string(iter));
}

void check_report(const LossRecord& r) {
  check_finite(r.app, "appearance", r.iteration);
  check_finite(r.structure, "structure", r.iteration);
  check_finite(r.identity, "identity", r.iteration);
  check_finite(r.total, "total", r.iteration);
}

struct PairTargets {       // frozen-extractor outputs for one (s, t) draw
  Tensor sim_s;            // structure self-similarity
  Tensor cls_t, keys_t;    // appearance token + deepest keys
};

PairTargets extract_targets(const vit::VitModel& vit, const Tensor& s,
                            const Tensor& t, Index resize) {
  const Index L = vit.deepest_layer();
  const Index patch = vit.config().patch_size;
  auto fs = vit.forward_features(resize_for_vit(Image{s}, resize, patch).t,
                                 {L});
  auto ft = vit.forward_features(resize_for_vit(Image{t}, resize, patch).t,
                                 {L});
  PairTargets out;
  out.sim_s = features::self_similarity(fs.keys_at(L)->value);
  out.cls_t = features::extract_cls(ft, L)->value;
  out.keys_t = ft.keys_at(L)->value;
  return out;
}

}  // namespace

LossHistory train_splice(gen::SpliceGenerator& g, const vit::VitModel& vit,
                         const Image& structure, const Image& appearance,
                         const TrainConfig& cfg, const AugmentPolicy& policy,
                         const std::function<void(const LossRecord&)>&
                             on_iteration,
                         nn::Adam* optimizer) {
  cfg.validate();
  policy.validate();
  const Index L = vit.deepest_layer();
  const Index patch = vit.config().patch_size;
  const Index factor = g.downsample_factor();
  nn::Rng rng(cfg.seed);
  nn::Adam local_opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  nn::Adam& opt = optimizer ? *optimizer : local_opt;

  // Canonical generator resolutions, fixed across iterations.
  const Index sh = round_multiple(structure.height(), factor);
  const Index sw = round_multiple(structure.width(), factor);
  const Index th = round_multiple(appearance.height(), factor);
  const Index tw = round_multiple(appearance.width(), factor);
  const Tensor s0 = canonical(structure.t, sh, sw);
  const Tensor t0 = canonical(appearance.t, th, tw);
  const PairTargets clean_targets =
      extract_targets(vit, s0, t0, cfg.vit_resize);

  auto objective = [&](const Tensor& s, const Tensor& t,
                       const PairTargets& tg) {
    Var out_s = g.forward(ad::constant(s), /*training=*/true);
    auto fo = vit.forward_features(
        resize_for_vit_var(out_s, cfg.vit_resize, patch), {L});
    Var cls_o = features::extract_cls(fo, L);
    Var sim_o = features::self_similarity(fo.keys_at(L));

    Var out_t = g.forward(ad::constant(t), /*training=*/true);
    auto fot = vit.forward_features(
        resize_for_vit_var(out_t, cfg.vit_resize, patch), {L});

    return losses::splice_objective(cls_o, ad::constant(tg.cls_t), sim_o,
                                    ad::constant(tg.sim_s),
                                    ad::constant(tg.keys_t), fot.keys_at(L),
                                    cfg.weights);
  };

  LossHistory history;
  for (Index it = 1; it <= cfg.iterations; ++it) {
    auto [sa, ta] = augment_pair(Image{s0}, Image{t0}, policy, rng);
    const Tensor s = canonical(sa.t, sh, sw);
    const Tensor t = canonical(ta.t, th, tw);
    auto report = objective(s, t, extract_targets(vit, s, t, cfg.vit_resize));

    Var total = report.total;
    LossRecord rec{it, report.total->value.item(), report.app->value.item(),
                   report.structure->value.item(),
                   report.identity->value.item()};
    if (it % cfg.clean_pair_interval == 0) {
      auto clean = objective(s0, t0, clean_targets);
      total = ad::scale(ad::add(total, clean.total), 0.5f);
      rec.total = 0.5f * (rec.total + clean.total->value.item());
      rec.app = 0.5f * (rec.app + clean.app->value.item());
      rec.structure = 0.5f * (rec.structure + clean.structure->value.item());
      rec.identity = 0.5f * (rec.identity + clean.identity->value.item());
    }
    check_report(rec);
    ad::backward(total);
    opt.step(g.params());
    history.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  return history;
}

LossHistory train_splicenet(
    gen::SpliceNet& net, const vit::VitModel& vit,
    const std::vector<PairSample>& pairs, const TrainConfig& cfg,
    const AugmentPolicy& policy, const losses::PerceptualDistance& dist,
    const std::function<void(Index step)>& on_checkpoint,
    const std::function<void(const LossRecord&)>& on_iteration,
    nn::Adam* optimizer) {
  cfg.validate();
  policy.validate();
  if (pairs.empty()) throw ConfigError("train: empty pair set");
  const Index L = vit.deepest_layer();
  const Index patch = vit.config().patch_size;
  const Index factor = net.downsample_factor();
  nn::Rng rng(cfg.seed);
  nn::Adam local_opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  nn::Adam& opt = optimizer ? *optimizer : local_opt;

  LossHistory history;
  for (Index it = 1; it <= cfg.iterations; ++it) {
    const auto& sample = pairs[rng.integer(pairs.size())];
    const bool identity_step = rng.bernoulli(cfg.identity_pair_p);
    const Image& raw_s = identity_step ? sample.appearance : sample.structure;
    const Image& raw_t = sample.appearance;

    auto [sa, ta] = identity_step
                        ? std::pair<Image, Image>{raw_s, raw_t}
                        : augment_pair(raw_s, raw_t, policy, rng);
    const Tensor s = canonical(sa.t, round_multiple(sa.height(), factor),
                               round_multiple(sa.width(), factor));
    const Tensor t = identity_step
                         ? s
                         : canonical(ta.t, round_multiple(ta.height(), factor),
                                     round_multiple(ta.width(), factor));

    const PairTargets tg = extract_targets(vit, s, t, cfg.vit_resize);
    Var out = net.forward(ad::constant(s), ad::constant(tg.cls_t));
    auto fo = vit.forward_features(
        resize_for_vit_var(out, cfg.vit_resize, patch), {L});
    Var app = losses::appearance_loss(features::extract_cls(fo, L),
                                      ad::constant(tg.cls_t));
    Var structure = losses::structure_loss(features::self_similarity(fo.keys_at(L)),
                                           ad::constant(tg.sim_s));
    Var total = ad::add(app, ad::scale(structure, cfg.weights.alpha));
    LossRecord rec{it, 0, app->value.item(), structure->value.item(), 0};
    if (identity_step) {
      Var id = dist(ad::constant(t), out);
      total = ad::add(total, ad::scale(id, cfg.weights.beta));
      rec.identity = id->value.item();
    }
    rec.total = total->value.item();
    check_report(rec);
    ad::backward(total);
    opt.step(net.params());
    history.push_back(rec);
    if (on_iteration) on_iteration(rec);
    if (on_checkpoint && (it % cfg.checkpoint_interval == 0 ||
                          it == cfg.iterations))
      on_checkpoint(it);
  }
  return history;
}

}  // namespace splice::train
