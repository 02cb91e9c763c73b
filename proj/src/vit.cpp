#include "splice/vit.hpp"

#include <cmath>

#include "splice/errors.hpp"

namespace splice::vit {

namespace ad = splice::ad;

void VitConfig::validate() const {
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (token_dim < 1) throw ConfigError("token_dim must be >= 1");
  if (num_heads < 1 || token_dim % num_heads != 0)
    throw ConfigError("num_heads must divide token_dim");
}

const Var& LayerFeatures::tokens_at(Index layer) const {
  auto it = tokens.find(layer);
  if (it == tokens.end())
    throw ConfigError("layer " + std::to_string(layer) +
                      " was not captured in this forward pass");
  return it->second;
}

const Var& LayerFeatures::keys_at(Index layer) const {
  auto it = keys.find(layer);
  if (it == keys.end())
    throw ConfigError("keys for layer " + std::to_string(layer) +
                      " were not captured in this forward pass");
  return it->second;
}

namespace {

std::string blk(Index i, const char* name) {
  return "blocks." + std::to_string(i) + "." + name;
}

void check_shape(const Tensor& t, const Shape& want, const std::string& name) {
  if (t.shape() != want) {
    Tensor probe(want);
    throw ConfigError("weight tensor '" + name + "' has shape " +
                      t.shape_str() + ", config expects " + probe.shape_str());
  }
}

}  // namespace

void VitModel::bind() {
  const auto find = [this](const std::string& name) -> Var {
    for (const auto& p : params_.params())
      if (p.name == name) return p.var;
    throw ConfigError("missing weight tensor '" + name + "'");
  };
  patch_w_ = find("patch_embed.weight");
  patch_b_ = find("patch_embed.bias");
  cls_token_ = find("cls_token");
  pos_embed_ = find("pos_embed");
  blocks_.clear();
  for (Index i = 0; i < cfg_.num_layers; ++i) {
    Block b;
    b.norm1_g = find(blk(i, "norm1.gamma"));
    b.norm1_b = find(blk(i, "norm1.beta"));
    b.wq = find(blk(i, "attn.q.weight"));
    b.bq = find(blk(i, "attn.q.bias"));
    b.wk = find(blk(i, "attn.k.weight"));
    b.bk = find(blk(i, "attn.k.bias"));
    b.wv = find(blk(i, "attn.v.weight"));
    b.bv = find(blk(i, "attn.v.bias"));
    b.wproj = find(blk(i, "attn.proj.weight"));
    b.bproj = find(blk(i, "attn.proj.bias"));
    b.norm2_g = find(blk(i, "norm2.gamma"));
    b.norm2_b = find(blk(i, "norm2.beta"));
    b.fc1_w = find(blk(i, "mlp.fc1.weight"));
    b.fc1_b = find(blk(i, "mlp.fc1.bias"));
    b.fc2_w = find(blk(i, "mlp.fc2.weight"));
    b.fc2_b = find(blk(i, "mlp.fc2.bias"));
    blocks_.push_back(std::move(b));
  }
}

VitModel VitModel::load(const VitConfig& config) {
  config.validate();
  VitModel m;
  m.cfg_ = config;
  TensorArchive a;
  try {
    a = TensorArchive::load(config.weights_source);
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  const Index d = config.token_dim, p = config.patch_size;
  const Index hidden = d * config.mlp_ratio;
  auto take = [&](const std::string& name, const Shape& want) {
    if (!a.has(name)) throw ConfigError("missing weight tensor '" + name + "'");
    check_shape(a.get(name), want, name);
    return m.params_.add(name, a.get(name), /*trainable=*/false);
  };
  take("patch_embed.weight", {d, 3, p, p});
  take("patch_embed.bias", {d});
  take("cls_token", {d});
  // pos_embed rows = 1 + base_grid^2; only squareness is enforced.
  {
    if (!a.has("pos_embed")) throw ConfigError("missing weight tensor 'pos_embed'");
    const Tensor& pe = a.get("pos_embed");
    if (pe.rank() != 2 || pe.dim(1) != d)
      throw ConfigError("weight tensor 'pos_embed' has shape " +
                        pe.shape_str() + ", expected [1+g*g," +
                        std::to_string(d) + "]");
    const Index g = static_cast<Index>(std::lround(std::sqrt(
        static_cast<double>(pe.dim(0) - 1))));
    if (1 + g * g != pe.dim(0))
      throw ConfigError("'pos_embed' spatial rows are not a square grid");
    m.params_.add("pos_embed", pe, false);
  }
  for (Index i = 0; i < config.num_layers; ++i) {
    take(blk(i, "norm1.gamma"), {d});
    take(blk(i, "norm1.beta"), {d});
    take(blk(i, "attn.q.weight"), {d, d});
    take(blk(i, "attn.q.bias"), {d});
    take(blk(i, "attn.k.weight"), {d, d});
    take(blk(i, "attn.k.bias"), {d});
    take(blk(i, "attn.v.weight"), {d, d});
    take(blk(i, "attn.v.bias"), {d});
    take(blk(i, "attn.proj.weight"), {d, d});
    take(blk(i, "attn.proj.bias"), {d});
    take(blk(i, "norm2.gamma"), {d});
    take(blk(i, "norm2.beta"), {d});
    take(blk(i, "mlp.fc1.weight"), {hidden, d});
    take(blk(i, "mlp.fc1.bias"), {hidden});
    take(blk(i, "mlp.fc2.weight"), {d, hidden});
    take(blk(i, "mlp.fc2.bias"), {d});
  }
  m.bind();
  return m;
}

VitModel VitModel::random(const VitConfig& config, std::uint64_t seed,
                          Index base_grid) {
  config.validate();
  VitModel m;
  m.cfg_ = config;
  nn::Rng rng(seed);
  const Index d = config.token_dim, p = config.patch_size;
  const Index hidden = d * config.mlp_ratio;
  const Scalar std0 = 0.02f;
  auto put = [&](const std::string& name, Tensor t) {
    m.params_.add(name, std::move(t), false);
  };
  put("patch_embed.weight", nn::randn({d, 3, p, p}, rng, std0));
  put("patch_embed.bias", Tensor::zeros({d}));
  put("cls_token", nn::randn({d}, rng, std0));
  put("pos_embed", nn::randn({1 + base_grid * base_grid, d}, rng, std0));
  for (Index i = 0; i < config.num_layers; ++i) {
    put(blk(i, "norm1.gamma"), Tensor::full({d}, 1));
    put(blk(i, "norm1.beta"), Tensor::zeros({d}));
    put(blk(i, "attn.q.weight"), nn::randn({d, d}, rng, std0));
    put(blk(i, "attn.q.bias"), Tensor::zeros({d}));
    put(blk(i, "attn.k.weight"), nn::randn({d, d}, rng, std0));
    put(blk(i, "attn.k.bias"), Tensor::zeros({d}));
    put(blk(i, "attn.v.weight"), nn::randn({d, d}, rng, std0));
    put(blk(i, "attn.v.bias"), Tensor::zeros({d}));
    put(blk(i, "attn.proj.weight"), nn::randn({d, d}, rng, std0));
    put(blk(i, "attn.proj.bias"), Tensor::zeros({d}));
    put(blk(i, "norm2.gamma"), Tensor::full({d}, 1));
    put(blk(i, "norm2.beta"), Tensor::zeros({d}));
    put(blk(i, "mlp.fc1.weight"), nn::randn({hidden, d}, rng, std0));
    put(blk(i, "mlp.fc1.bias"), Tensor::zeros({hidden}));
    put(blk(i, "mlp.fc2.weight"), nn::randn({d, hidden}, rng, std0));
    put(blk(i, "mlp.fc2.bias"), Tensor::zeros({d}));
  }
  m.bind();
  return m;
}

void VitModel::save(const std::string& path) const {
  params_.to_archive().save(path);
}

Tensor VitModel::interpolated_pos_embed(Index grid_h, Index grid_w) const {
  const Tensor& pe = pos_embed_->value;  // [1+g*g, D]
  const Index d = cfg_.token_dim;
  const Index g = static_cast<Index>(std::lround(
      std::sqrt(static_cast<double>(pe.dim(0) - 1))));
  Tensor out({1 + grid_h * grid_w, d});
  out.mat().row(0) = pe.mat().row(0);
  if (grid_h == g && grid_w == g) {
    out.mat().bottomRows(g * g) = pe.mat().bottomRows(g * g);
    return out;
  }
  const MatrixRM rw = ad::bicubic_matrix(grid_h, g);
  const MatrixRM cw = ad::bicubic_matrix(grid_w, g);
  for (Index c = 0; c < d; ++c) {
    // channel c of the spatial grid, [g,g]
    MatrixRM src(g, g);
    for (Index i = 0; i < g; ++i)
      for (Index j = 0; j < g; ++j) src(i, j) = pe.mat()(1 + i * g + j, c);
    MatrixRM dst = rw * src * cw.transpose();
    for (Index i = 0; i < grid_h; ++i)
      for (Index j = 0; j < grid_w; ++j)
        out.mat()(1 + i * grid_w + j, c) = dst(i, j);
  }
  return out;
}

Var VitModel::block_forward(Index layer, const Var& tokens, bool record,
                            LayerFeatures& out) const {
  const Block& b = blocks_[static_cast<size_t>(layer - 1)];
  const Index d = cfg_.token_dim;
  const Index heads = cfg_.num_heads;
  const Index dh = d / heads;
  const Scalar attn_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Var ln1 = ad::layer_norm_rows(tokens, b.norm1_g, b.norm1_b);
  Var q = ad::add_row_bias(ad::matmul(ln1, b.wq, false, true), b.bq);
  Var k = ad::add_row_bias(ad::matmul(ln1, b.wk, false, true), b.bk);
  Var v = ad::add_row_bias(ad::matmul(ln1, b.wv, false, true), b.bv);
  if (record) {
    out.queries[layer] = q;
    out.keys[layer] = k;
    out.values[layer] = v;
  }
  std::vector<Var> head_out;
  head_out.reserve(static_cast<size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var attn = ad::softmax_rows(
        ad::scale(ad::matmul(qh, kh, false, true), attn_scale));
    head_out.push_back(ad::matmul(attn, vh));
  }
  Var fused = ad::concat_cols(head_out);
  Var msa = ad::add_row_bias(ad::matmul(fused, b.wproj, false, true), b.bproj);
  Var mid = ad::add(tokens, msa);

  Var ln2 = ad::layer_norm_rows(mid, b.norm2_g, b.norm2_b);
  Var h1 = ad::gelu(ad::add_row_bias(ad::matmul(ln2, b.fc1_w, false, true),
                                     b.fc1_b));
  Var h2 = ad::add_row_bias(ad::matmul(h1, b.fc2_w, false, true), b.fc2_b);
  return ad::add(mid, h2);
}

LayerFeatures VitModel::forward_features(const Var& image,
                                         const std::set<Index>& layers) const {
  const Tensor& img = image->value;
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ConfigError("expected a [3,H,W] image, got " + img.shape_str());
  const Index p = cfg_.patch_size;
  if (img.dim(1) % p != 0 || img.dim(2) % p != 0)
    throw ConfigError("image size " + std::to_string(img.dim(1)) + "x" +
                      std::to_string(img.dim(2)) +
                      " is not divisible by patch size " + std::to_string(p) +
                      "; resize first");
  for (Index l : layers)
    if (l < 1 || l > cfg_.num_layers)
      throw ConfigError("requested layer " + std::to_string(l) +
                        " outside 1.." + std::to_string(cfg_.num_layers));
  const Index gh = img.dim(1) / p, gw = img.dim(2) / p;
  const Index n = gh * gw;
  const Index d = cfg_.token_dim;

  // Channel normalization with the extractor's training statistics.
  Tensor s({3}), t({3});
  for (Index c = 0; c < 3; ++c) {
    s[c] = Scalar(1) / cfg_.norm_std[static_cast<size_t>(c)];
    t[c] = -cfg_.norm_mean[static_cast<size_t>(c)] /
           cfg_.norm_std[static_cast<size_t>(c)];
  }
  Var x = ad::add_channel_bias(ad::scale_channels(image, ad::constant(s)),
                               ad::constant(t));

  Var patches = ad::conv2d(x, patch_w_, patch_b_, p, 0);     // [D,gh,gw]
  Var seq = ad::transpose(ad::reshape(patches, {d, n}));     // [n,D]
  Var cls_row = ad::reshape(cls_token_, {1, d});
  Var tokens = ad::concat_rows({cls_row, seq});              // [n+1,D]
  tokens = ad::add(tokens, ad::constant(interpolated_pos_embed(gh, gw)));

  LayerFeatures out;
  out.n = n;
  for (Index l = 1; l <= cfg_.num_layers; ++l) {
    const bool record = layers.count(l) > 0;
    tokens = block_forward(l, tokens, record, out);
    if (record) out.tokens[l] = tokens;
  }
  return out;
}

LayerFeatures VitModel::forward_features(const Tensor& image_chw,
                                         const std::set<Index>& layers) const {
  return forward_features(ad::constant(image_chw), layers);
}

}  // namespace splice::vit
