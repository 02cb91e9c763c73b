// Command-line surface: splice, splicenet-train, splicenet-run, distill,
// invert, modes, interpolate, eval-recon, vit-init.
// Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "splice/clsops.hpp"
#include "splice/config.hpp"
#include "splice/descriptors.hpp"
#include "splice/distill.hpp"
#include "splice/errors.hpp"
#include "splice/generators.hpp"
#include "splice/image.hpp"
#include "splice/invert.hpp"
#include "splice/manifest.hpp"
#include "splice/train.hpp"

namespace fs = std::filesystem;
using namespace splice;

namespace {

// ------------------------------------------------------------ configuration

Config merge_config(const std::string& config_path,
                    const std::vector<std::string>& sets) {
  Config c = config_path.empty() ? Config() : Config::from_file(config_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

vit::VitModel make_vit(const Config& c, RunManifest& man) {
  vit::VitConfig vc;
  vc.weights_source = c.get("vit.weights", "");
  if (vc.weights_source.empty())
    throw ConfigError("vit.weights not set (config key or --set vit.weights=PATH)");
  vc.patch_size = c.get_int("vit.patch_size", 8);
  vc.num_layers = c.get_int("vit.layers", 12);
  vc.token_dim = c.get_int("vit.dim", 768);
  vc.num_heads = c.get_int("vit.heads", 12);
  vc.mlp_ratio = c.get_int("vit.mlp_ratio", 4);
  man.add_input(vc.weights_source);
  return vit::VitModel::load(vc);
}

train::TrainConfig train_cfg_from(const Config& c, bool feedforward) {
  train::TrainConfig t;
  t.weights.alpha = c.get_number("train.alpha", feedforward ? 2.0f : 0.1f);
  t.weights.beta = c.get_number("train.beta", 0.1f);
  t.lr = c.get_number("train.lr", 2e-3f);
  t.adam_beta1 = c.get_number("train.beta1", 0.0f);
  t.adam_beta2 = c.get_number("train.beta2", 0.99f);
  t.iterations = c.get_int("train.iterations", 2000);
  t.clean_pair_interval = c.get_int("train.clean_interval", 75);
  t.vit_resize = c.get_int("vit.resize", 224);
  t.identity_pair_p = c.get_number("train.identity_pair_p", 0.25f);
  t.checkpoint_interval = c.get_int("train.checkpoint_interval", 500);
  t.seed = c.get_uint("train.seed", 0);
  return t;
}

train::AugmentPolicy augment_from(const Config& c, bool feedforward) {
  train::AugmentPolicy p = feedforward
                               ? train::AugmentPolicy::splicenet_defaults()
                               : train::AugmentPolicy::splice_defaults();
  p.crop_lo = c.get_number("augment.crop_lo", p.crop_lo);
  p.crop_hi = c.get_number("augment.crop_hi", p.crop_hi);
  p.hflip_p = c.get_number("augment.hflip_p", p.hflip_p);
  p.jitter_p = c.get_number("augment.jitter_p", p.jitter_p);
  p.blur_p = c.get_number("augment.blur_p", p.blur_p);
  p.blur_sigma_lo = c.get_number("augment.blur_sigma_lo", p.blur_sigma_lo);
  p.blur_sigma_hi = c.get_number("augment.blur_sigma_hi", p.blur_sigma_hi);
  p.brightness = c.get_number("augment.brightness", p.brightness);
  p.contrast = c.get_number("augment.contrast", p.contrast);
  p.saturation = c.get_number("augment.saturation", p.saturation);
  p.hue = c.get_number("augment.hue", p.hue);
  return p;
}

gen::SpliceNetConfig splicenet_cfg_from(const Config& c) {
  gen::SpliceNetConfig g;
  g.stem_channels = c.get_int("splicenet.stem", g.stem_channels);
  g.style_dim = c.get_int("splicenet.style_dim", g.style_dim);
  g.mapping_hidden = c.get_int("splicenet.mapping_hidden", g.mapping_hidden);
  const std::string ch = c.get("splicenet.channels", "");
  if (!ch.empty()) {
    g.encoder_channels.clear();
    size_t pos = 0;
    while (pos <= ch.size()) {
      const size_t comma = ch.find(',', pos);
      const std::string tok =
          ch.substr(pos, comma == std::string::npos ? std::string::npos
                                                    : comma - pos);
      try {
        g.encoder_channels.push_back(std::stol(tok));
      } catch (const std::exception&) {
        throw ConfigError("splicenet.channels: '" + tok +
                          "' is not an integer");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  return g;
}

// --------------------------------------------------------------- utilities

Index round_multiple(Index v, Index m) {
  return std::max(m, ((v + m / 2) / m) * m);
}

Tensor canonical_for(const Image& img, Index factor) {
  return train::resize_bicubic(img.t, round_multiple(img.height(), factor),
                               round_multiple(img.width(), factor));
}

Image load_input(const std::string& path, RunManifest& man) {
  man.add_input(path);
  return load_image(path);
}

Tensor cls_of(const vit::VitModel& vit, const Image& img, Index resize) {
  const Index L = vit.deepest_layer();
  auto f = vit.forward_features(
      train::resize_for_vit(img, resize, vit.config().patch_size).t, {L});
  return features::extract_cls(f, L)->value;
}

std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
      out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " +
                        ec.message());
}

// -------------------------------------------------------------- checkpoints

constexpr Scalar kKindSplice = 1, kKindSpliceNet = 2;

void save_splice_checkpoint(const std::string& path,
                            const gen::SpliceGenerator& g, const nn::Adam& opt,
                            Index iteration) {
  TensorArchive a = g.state();
  opt.save(a, "opt.");
  a.put("meta.kind", Tensor::scalar(kKindSplice));
  a.put("meta.iteration", Tensor::scalar(static_cast<Scalar>(iteration)));
  Tensor ch({static_cast<Index>(g.config().encoder_channels.size())});
  for (Index i = 0; i < ch.size(); ++i)
    ch[i] = static_cast<Scalar>(g.config().encoder_channels[i]);
  a.put("meta.encoder_channels", ch);
  a.save(path);
}

void save_splicenet_checkpoint(const std::string& path,
                               const gen::SpliceNet& net, const nn::Adam* opt,
                               Index iteration) {
  TensorArchive a = net.state();
  if (opt) opt->save(a, "opt.");
  a.put("meta.kind", Tensor::scalar(kKindSpliceNet));
  a.put("meta.iteration", Tensor::scalar(static_cast<Scalar>(iteration)));
  const auto& cfg = net.config();
  Tensor ch({static_cast<Index>(cfg.encoder_channels.size())});
  for (Index i = 0; i < ch.size(); ++i)
    ch[i] = static_cast<Scalar>(cfg.encoder_channels[i]);
  a.put("meta.encoder_channels", ch);
  a.put("meta.stem", Tensor::scalar(static_cast<Scalar>(cfg.stem_channels)));
  a.put("meta.style_dim",
        Tensor::scalar(static_cast<Scalar>(cfg.style_dim)));
  a.put("meta.mapping_hidden",
        Tensor::scalar(static_cast<Scalar>(cfg.mapping_hidden)));
  a.save(path);
}

void check_kind(const TensorArchive& a, Scalar want, const std::string& path) {
  if (!a.has("meta.kind") ||
      a.get("meta.kind").item() != want)
    throw ConfigError("checkpoint " + path +
                      " is missing or of the wrong model kind");
}

gen::SpliceNet load_splicenet_checkpoint(const std::string& path,
                                         Index* iteration = nullptr,
                                         TensorArchive* raw = nullptr) {
  TensorArchive a = TensorArchive::load(path);
  check_kind(a, kKindSpliceNet, path);
  gen::SpliceNetConfig cfg;
  const Tensor& ch = a.get("meta.encoder_channels");
  cfg.encoder_channels.clear();
  for (Index i = 0; i < ch.size(); ++i)
    cfg.encoder_channels.push_back(static_cast<Index>(ch[i]));
  cfg.stem_channels = static_cast<Index>(a.get("meta.stem").item());
  cfg.style_dim = static_cast<Index>(a.get("meta.style_dim").item());
  cfg.mapping_hidden =
      static_cast<Index>(a.get("meta.mapping_hidden").item());
  gen::SpliceNet net(cfg, /*seed=*/0);
  net.load_state(a);
  if (iteration) *iteration = static_cast<Index>(a.get("meta.iteration").item());
  if (raw) *raw = std::move(a);
  return net;
}

// ----------------------------------------------------------------- commands

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "key=value configuration file");
  cmd->add_option("--set", args.sets,
                  "override a config key (key=value, repeatable)");
}

int cmd_splice(const CommonArgs& ca, const std::string& structure_path,
               const std::string& appearance_path, const std::string& out_dir) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "splice";
  man.set_config(cfg);
  ensure_dir(out_dir);

  vit::VitModel vit = make_vit(cfg, man);
  Image structure = load_input(structure_path, man);
  Image appearance = load_input(appearance_path, man);
  train::TrainConfig tc = train_cfg_from(cfg, false);
  train::AugmentPolicy policy = augment_from(cfg, false);
  man.seeds["train"] = tc.seed;
  const std::uint64_t gen_seed = cfg.get_uint("generator.seed", tc.seed);
  man.seeds["generator"] = gen_seed;

  gen::SpliceGenerator g(gen::SpliceGeneratorConfig{}, gen_seed);
  nn::Adam opt(tc.lr, tc.adam_beta1, tc.adam_beta2);
  Stopwatch train_sw;
  auto history = train::train_splice(g, vit, structure, appearance, tc, policy,
                                     {}, &opt);
  man.timings_sec["train"] = train_sw.seconds();

  const Tensor s0 = canonical_for(structure, g.downsample_factor());
  // Render with per-image normalization statistics: with a single pair the
  // objective is optimized under batch stats, and running averages lag it.
  Tensor result = g.forward(ad::constant(s0), /*training=*/true)->value;

  const std::string result_png = out_dir + "/result.png";
  const std::string ckpt = out_dir + "/checkpoint.spta";
  const std::string csv = out_dir + "/losses.csv";
  save_png(result_png, result);
  save_splice_checkpoint(ckpt, g, opt, tc.iterations);
  train::write_history_csv(history, csv);
  man.outputs = {result_png, ckpt, csv};
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "final_total_loss=" << history.back().total << "\n";
  return 0;
}

std::vector<train::PairSample> load_pairs(const std::string& pairs_path,
                                          const std::string& data_dir,
                                          RunManifest& man) {
  distill::PairSet ps = distill::PairSet::load(pairs_path, "");
  man.add_input(pairs_path);
  if (ps.pairs.empty()) throw ConfigError("empty pair set: " + pairs_path);
  std::map<std::string, Image> cache;
  auto image_for = [&](const std::string& id) -> const Image& {
    auto it = cache.find(id);
    if (it == cache.end()) {
      const std::string path = data_dir + "/" + id;
      it = cache.emplace(id, load_input(path, man)).first;
    }
    return it->second;
  };
  std::vector<train::PairSample> out;
  for (const auto& [sid, aid] : ps.pairs)
    out.push_back({image_for(sid), image_for(aid)});
  return out;
}

int cmd_splicenet_train(const CommonArgs& ca, const std::string& pairs_path,
                        const std::string& data_dir,
                        const std::string& out_dir,
                        const std::string& resume_path) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "splicenet-train";
  man.set_config(cfg);
  ensure_dir(out_dir);

  vit::VitModel vit = make_vit(cfg, man);
  auto pairs = load_pairs(pairs_path, data_dir, man);
  train::TrainConfig tc = train_cfg_from(cfg, true);
  train::AugmentPolicy policy = augment_from(cfg, true);
  man.seeds["train"] = tc.seed;
  const std::uint64_t gen_seed = cfg.get_uint("generator.seed", tc.seed);
  man.seeds["generator"] = gen_seed;

  gen::SpliceNet net(splicenet_cfg_from(cfg), gen_seed);
  nn::Adam opt(tc.lr, tc.adam_beta1, tc.adam_beta2);
  Index start = 0;
  if (!resume_path.empty()) {
    TensorArchive raw;
    net = load_splicenet_checkpoint(resume_path, &start, &raw);
    if (raw.has("opt.t")) opt.load(raw, "opt.", net.params());
    man.add_input(resume_path);
    man.seeds["resume_iteration"] = static_cast<std::uint64_t>(start);
  }
  losses::PerceptualDistance dist(
      losses::parse_distance_backend(
          cfg.get("distance.backend", "learned-perceptual")));

  std::vector<std::string> outputs;
  auto on_checkpoint = [&](Index step) {
    const std::string path =
        out_dir + "/checkpoint_" + std::to_string(start + step) + ".spta";
    save_splicenet_checkpoint(path, net, &opt, start + step);
    outputs.push_back(path);
  };

  Stopwatch sw;
  auto history = train::train_splicenet(net, vit, pairs, tc, policy, dist,
                                        on_checkpoint, {}, &opt);
  man.timings_sec["train"] = sw.seconds();
  for (auto& r : history) r.iteration += start;

  const std::string ckpt = out_dir + "/checkpoint.spta";
  const std::string csv = out_dir + "/losses.csv";
  save_splicenet_checkpoint(ckpt, net, &opt, start + tc.iterations);
  train::write_history_csv(history, csv);
  outputs.push_back(ckpt);
  outputs.push_back(csv);
  man.outputs = outputs;
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "final_total_loss=" << history.back().total << "\n";
  return 0;
}

int cmd_splicenet_run(const CommonArgs& ca, const std::string& ckpt_path,
                      const std::string& structure_path,
                      const std::string& appearance_path,
                      const std::string& token_path, Index token_index,
                      const std::string& out_path) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "splicenet-run";
  man.set_config(cfg);

  gen::SpliceNet net = load_splicenet_checkpoint(ckpt_path);
  man.add_input(ckpt_path);
  Image structure = load_input(structure_path, man);

  Tensor token;
  if (!appearance_path.empty()) {
    vit::VitModel vit = make_vit(cfg, man);
    token = cls_of(vit, load_input(appearance_path, man),
                   cfg.get_int("vit.resize", 224));
  } else if (!token_path.empty()) {
    TensorArchive a = TensorArchive::load(token_path);
    man.add_input(token_path);
    if (a.has("token")) {
      token = a.get("token");
    } else if (a.has("centroids")) {
      const Tensor& c = a.get("centroids");
      if (token_index < 0 || token_index >= c.dim(0))
        throw ConfigError("token index out of range for " + token_path);
      token = Tensor({c.dim(1)});
      token.vec() = c.mat().row(token_index);
    } else {
      throw ConfigError("token file " + token_path +
                        " holds neither 'token' nor 'centroids'");
    }
  } else {
    throw ConfigError("provide --appearance or --token");
  }

  const Tensor s = canonical_for(structure, net.downsample_factor());
  Stopwatch sw;
  Tensor out = net.forward(ad::constant(s), ad::constant(token))->value;
  const double infer = sw.seconds();
  save_png(out_path, out);
  man.outputs = {out_path};
  man.timings_sec["inference"] = infer;
  man.timings_sec["total"] = total.seconds();
  man.write(out_path + ".manifest.json");
  std::cout << "inference_sec=" << infer << "\n";
  return 0;
}

int cmd_distill(const CommonArgs& ca, const std::string& data_dir, Index k,
                Index window, const std::string& out_dir) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "distill";
  man.set_config(cfg);
  ensure_dir(out_dir);

  vit::VitModel vit = make_vit(cfg, man);
  std::vector<std::pair<std::string, Image>> images;
  std::vector<std::string> skipped;
  for (const auto& name : list_images(data_dir)) {
    try {
      images.emplace_back(name, load_input(data_dir + "/" + name, man));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << name << ": " << e.what() << "\n";
      skipped.push_back(name);
    }
  }
  if (images.size() < 2)
    throw ConfigError("distill: need at least 2 usable images in " + data_dir);
  if (k >= static_cast<Index>(images.size()))
    throw ConfigError("distill: K (" + std::to_string(k) +
                      ") must be smaller than the usable image count (" +
                      std::to_string(images.size()) + ")");

  auto idx = distill::compute_descriptors(
      vit, images, window, cfg.get_int("vit.resize", 224),
      distill::parse_metric(cfg.get("distill.metric", "cosine")));
  idx.skipped = skipped;
  auto pairs = distill::mutual_knn_pairs(idx, k);

  const std::string index_spta = out_dir + "/index.spta";
  const std::string index_json = out_dir + "/index.json";
  const std::string pairs_tsv = out_dir + "/pairs.tsv";
  const std::string pairs_json = out_dir + "/pairs.json";
  idx.save(index_spta, index_json);
  pairs.save(pairs_tsv, pairs_json);
  man.outputs = {index_spta, index_json, pairs_tsv, pairs_json};
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "pairs=" << pairs.pairs.size() << "\n";
  return 0;
}

int cmd_invert(const CommonArgs& ca, const std::string& target_path,
               const std::string& selector, const std::vector<Index>& layers,
               const std::string& out_dir) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "invert";
  man.set_config(cfg);
  ensure_dir(out_dir);

  vit::VitModel vit = make_vit(cfg, man);
  Image target = load_input(target_path, man);
  invert::InversionConfig ic;
  ic.selector = invert::parse_selector(selector);
  ic.steps = cfg.get_int("invert.steps", 2000);
  ic.lr = cfg.get_number("invert.lr", 1e-3f);
  ic.prior_seed = cfg.get_uint("invert.seed", 0);
  ic.output_size = cfg.get_int("invert.size", 224);
  ic.pixels_only = cfg.get_bool("invert.pixels_only", false);
  man.seeds["prior"] = ic.prior_seed;

  auto write_one = [&](const std::string& stem,
                       const invert::InversionResult& r) {
    const std::string png = out_dir + "/" + stem + ".png";
    const std::string csv = out_dir + "/" + stem + "_trace.csv";
    save_png(png, r.image);
    std::ofstream f(csv);
    if (!f) throw IoError("cannot write " + csv);
    f << "step,loss\n";
    for (size_t i = 0; i < r.trace.size(); ++i)
      f << i << ',' << r.trace[i] << '\n';
    man.outputs.push_back(png);
    man.outputs.push_back(csv);
  };

  if (!layers.empty()) {
    std::set<Index> ls(layers.begin(), layers.end());
    auto multi = invert::invert_cls_across_layers(vit, target, ls, ic);
    for (const auto& [l, r] : multi.results)
      write_one("layer_" + std::to_string(l), r);
    for (const auto& [l, e] : multi.errors)
      std::cerr << "warning: layer " << l << " failed: " << e << "\n";
    man.timings_sec["total"] = total.seconds();
    man.write(out_dir + "/manifest.json");
    return multi.results.empty() ? 4 : 0;
  }
  auto r = invert::invert_feature(vit, target, ic);
  write_one("result", r);
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "initial_loss=" << r.initial_loss
            << " final_loss=" << r.final_loss << "\n";
  return 0;
}

int cmd_modes(const CommonArgs& ca, const std::string& data_dir,
              const std::string& tokens_path, Index k,
              const std::string& out_dir) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "modes";
  man.set_config(cfg);
  ensure_dir(out_dir);

  Tensor tokens;
  if (!tokens_path.empty()) {
    tokens = TensorArchive::load(tokens_path).get("tokens");
    man.add_input(tokens_path);
  } else if (!data_dir.empty()) {
    vit::VitModel vit = make_vit(cfg, man);
    const Index resize = cfg.get_int("vit.resize", 224);
    std::vector<Tensor> rows;
    for (const auto& name : list_images(data_dir))
      rows.push_back(cls_of(vit, load_input(data_dir + "/" + name, man),
                            resize));
    if (rows.empty()) throw ConfigError("modes: no images in " + data_dir);
    tokens = Tensor({static_cast<Index>(rows.size()), rows.front().size()});
    for (size_t i = 0; i < rows.size(); ++i)
      tokens.mat().row(static_cast<Index>(i)) = rows[i].vec();
  } else {
    throw ConfigError("provide --data or --tokens");
  }

  const std::uint64_t seed = cfg.get_uint("modes.seed", 0);
  man.seeds["kmeans"] = seed;
  auto modes = clsops::kmeans_modes(tokens, k, seed);

  const std::string spta = out_dir + "/modes.spta";
  const std::string json = out_dir + "/modes.json";
  modes.save(spta, json);
  man.outputs = {spta, json};
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "inertia=" << modes.inertia << "\n";
  return 0;
}

int cmd_interpolate(const CommonArgs& ca, const std::string& ckpt_path,
                    const std::string& structure_path,
                    const std::string& appearance_path,
                    const std::vector<Scalar>& alphas,
                    const std::string& out_dir) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "interpolate";
  man.set_config(cfg);
  ensure_dir(out_dir);

  gen::SpliceNet net = load_splicenet_checkpoint(ckpt_path);
  man.add_input(ckpt_path);
  vit::VitModel vit = make_vit(cfg, man);
  Image structure = load_input(structure_path, man);
  Image appearance = load_input(appearance_path, man);
  const Index resize = cfg.get_int("vit.resize", 224);
  Tensor cls_s = cls_of(vit, structure, resize);
  Tensor cls_t = cls_of(vit, appearance, resize);

  const Tensor s = canonical_for(structure, net.downsample_factor());
  auto tokens = clsops::interpolate_cls(cls_s, cls_t, alphas);
  for (size_t i = 0; i < tokens.size(); ++i) {
    Tensor out =
        net.forward(ad::constant(s), ad::constant(tokens[i]))->value;
    char name[64];
    std::snprintf(name, sizeof(name), "alpha_%04.2f.png",
                  static_cast<double>(alphas[i]));
    const std::string path = out_dir + "/" + name;
    save_png(path, out);
    man.outputs.push_back(path);
  }
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  return 0;
}

int cmd_eval_recon(const CommonArgs& ca, const std::string& ckpt_path,
                   const std::string& data_dir, const std::string& out_csv) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "eval-recon";
  man.set_config(cfg);

  gen::SpliceNet net = load_splicenet_checkpoint(ckpt_path);
  man.add_input(ckpt_path);
  vit::VitModel vit = make_vit(cfg, man);
  const Index resize = cfg.get_int("vit.resize", 224);
  losses::PerceptualDistance dist(losses::parse_distance_backend(
      cfg.get("distance.backend", "learned-perceptual")));

  auto names = list_images(data_dir);
  if (names.empty()) throw ConfigError("eval-recon: no images in " + data_dir);

  std::ofstream f(out_csv);
  if (!f) throw IoError("cannot write " + out_csv);
  f << "image,mse,perceptual\n";
  double sum_mse = 0, sum_p = 0;
  for (const auto& name : names) {
    Image img = load_input(data_dir + "/" + name, man);
    const Tensor s = canonical_for(img, net.downsample_factor());
    const Tensor token = cls_of(vit, Image{s}, resize);
    Tensor out = net.forward(ad::constant(s), ad::constant(token))->value;
    const Scalar mse = (out.array() - s.array()).square().mean();
    const Scalar p = dist(s, out);
    f << name << ',' << mse << ',' << p << '\n';
    sum_mse += mse;
    sum_p += p;
  }
  const double n = static_cast<double>(names.size());
  f << "mean," << sum_mse / n << ',' << sum_p / n << '\n';
  man.outputs = {out_csv};
  man.timings_sec["total"] = total.seconds();
  man.write(out_csv + ".manifest.json");
  std::cout << "mean_mse=" << sum_mse / n << " mean_perceptual=" << sum_p / n
            << "\n";
  return 0;
}

int cmd_pca(const CommonArgs& ca, const std::string& image_path, Index k,
            const std::string& out_dir) {
  Stopwatch total;
  Config cfg = merge_config(ca.config_path, ca.sets);
  RunManifest man;
  man.command = "pca";
  man.set_config(cfg);
  ensure_dir(out_dir);

  vit::VitModel vit = make_vit(cfg, man);
  Image img = load_input(image_path, man);
  const Index patch = vit.config().patch_size;
  const Index L = vit.deepest_layer();
  auto f = vit.forward_features(
      train::resize_for_vit(img, cfg.get_int("vit.resize", 224), patch).t,
      {L});
  Tensor sim = features::self_similarity(f.keys_at(L)->value);
  Tensor maps = features::pca_component_maps(sim, k);

  const Index g = maps.dim(1);
  for (Index c = 0; c < k; ++c) {
    Tensor gray({1, g, maps.dim(2)});
    gray.array() = maps.array().segment(c * g * maps.dim(2),
                                        g * maps.dim(2));
    Tensor rgb({3, g, maps.dim(2)});
    for (Index ch = 0; ch < 3; ++ch)
      rgb.array().segment(ch * gray.size(), gray.size()) = gray.array();
    // Scale back up to pixel resolution for viewing.
    Tensor big = train::resize_bicubic(rgb, g * patch, maps.dim(2) * patch);
    const std::string path =
        out_dir + "/component_" + std::to_string(c + 1) + ".png";
    save_png(path, big);
    man.outputs.push_back(path);
  }
  man.timings_sec["total"] = total.seconds();
  man.write(out_dir + "/manifest.json");
  return 0;
}

int cmd_vit_init(const std::string& out_path, std::uint64_t seed, Index patch,
                 Index layers, Index dim, Index heads, Index mlp_ratio,
                 Index grid) {
  vit::VitConfig vc;
  vc.patch_size = patch;
  vc.num_layers = layers;
  vc.token_dim = dim;
  vc.num_heads = heads;
  vc.mlp_ratio = mlp_ratio;
  vit::VitModel::random(vc, seed, grid).save(out_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Compute-device selection; this build runs everything on the CPU.
  if (const char* dev = std::getenv("SPLICE_DEVICE")) {
    const std::string d(dev);
    if (!d.empty() && d != "cpu") {
      std::cerr << "config error: SPLICE_DEVICE='" << d
                << "' is not available in this build (only 'cpu')\n";
      return 2;
    }
  }

  CLI::App app{"Structure/appearance splicing in frozen ViT feature space"};
  app.require_subcommand(1);

  CommonArgs ca;
  std::string structure, appearance, out, pairs, data, resume, ckpt, token,
      target, selector = "cls", tokens_path;
  std::vector<Index> layers;
  std::vector<Scalar> alphas{0, 0.25f, 0.5f, 0.75f, 1};
  Index k = 10, window = 4, token_index = 0;
  std::uint64_t seed = 0;
  Index vi_patch = 8, vi_layers = 12, vi_dim = 768, vi_heads = 12,
        vi_mlp = 4, vi_grid = 28;

  auto* sp = app.add_subcommand("splice", "optimize a per-pair generator");
  add_common(sp, ca);
  sp->add_option("--structure", structure)->required();
  sp->add_option("--appearance", appearance)->required();
  sp->add_option("--out", out)->required();

  auto* snt = app.add_subcommand("splicenet-train",
                                 "train the feed-forward model");
  add_common(snt, ca);
  snt->add_option("--pairs", pairs)->required();
  snt->add_option("--data", data)->required();
  snt->add_option("--out", out)->required();
  snt->add_option("--resume", resume);

  auto* snr = app.add_subcommand("splicenet-run", "one feed-forward pass");
  add_common(snr, ca);
  snr->add_option("--checkpoint", ckpt)->required();
  snr->add_option("--structure", structure)->required();
  snr->add_option("--appearance", appearance);
  snr->add_option("--token", token);
  snr->add_option("--token-index", token_index);
  snr->add_option("--out", out)->required();

  auto* di = app.add_subcommand("distill", "mutual-KNN pair mining");
  add_common(di, ca);
  di->add_option("--data", data)->required();
  di->add_option("--k", k);
  di->add_option("--window", window);
  di->add_option("--out", out)->required();

  auto* inv = app.add_subcommand("invert", "feature inversion");
  add_common(inv, ca);
  inv->add_option("--target", target)->required();
  inv->add_option("--selector", selector);
  inv->add_option("--layers", layers)->delimiter(',');
  inv->add_option("--out", out)->required();

  auto* mo = app.add_subcommand("modes", "token-space K-means");
  add_common(mo, ca);
  mo->add_option("--data", data);
  mo->add_option("--tokens", tokens_path);
  mo->add_option("--k", k);
  mo->add_option("--out", out)->required();

  auto* ip = app.add_subcommand("interpolate", "token interpolation sweep");
  add_common(ip, ca);
  ip->add_option("--checkpoint", ckpt)->required();
  ip->add_option("--structure", structure)->required();
  ip->add_option("--appearance", appearance)->required();
  ip->add_option("--alphas", alphas)->delimiter(',');
  ip->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval-recon", "reconstruction evaluation");
  add_common(ev, ca);
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--out", out)->required();

  auto* pc = app.add_subcommand("pca", "self-similarity component maps");
  add_common(pc, ca);
  pc->add_option("--image", target)->required();
  pc->add_option("--k", k);
  pc->add_option("--out", out)->required();

  auto* vi = app.add_subcommand("vit-init",
                                "write seeded random extractor weights");
  vi->add_option("--out", out)->required();
  vi->add_option("--seed", seed);
  vi->add_option("--patch", vi_patch);
  vi->add_option("--layers", vi_layers);
  vi->add_option("--dim", vi_dim);
  vi->add_option("--heads", vi_heads);
  vi->add_option("--mlp-ratio", vi_mlp);
  vi->add_option("--grid", vi_grid);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sp->parsed()) return cmd_splice(ca, structure, appearance, out);
    if (snt->parsed())
      return cmd_splicenet_train(ca, pairs, data, out, resume);
    if (snr->parsed())
      return cmd_splicenet_run(ca, ckpt, structure, appearance, token,
                               token_index, out);
    if (di->parsed()) return cmd_distill(ca, data, k, window, out);
    if (inv->parsed()) return cmd_invert(ca, target, selector, layers, out);
    if (mo->parsed()) return cmd_modes(ca, data, tokens_path, k, out);
    if (ip->parsed())
      return cmd_interpolate(ca, ckpt, structure, appearance, alphas, out);
    if (ev->parsed()) return cmd_eval_recon(ca, ckpt, data, out);
    if (pc->parsed()) return cmd_pca(ca, target, k, out);
    if (vi->parsed())
      return cmd_vit_init(out, seed, vi_patch, vi_layers, vi_dim, vi_heads,
                          vi_mlp, vi_grid);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
