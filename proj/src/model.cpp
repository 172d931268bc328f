// SPDX-License-Identifier: Apache-2.0
#include "longsum/model.hpp"

#include <cmath>
#include <optional>

#include "longsum/attention.hpp"

namespace longsum {
namespace {

using Eigen::Index;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct Context {
  const ModelConfig& cfg;
  bool dropout_active = false;
  std::uint64_t seed = 0;
  ActivationMeter* meter = nullptr;
};

Context make_context(const ModelConfig& cfg, const ForwardOptions& opt, ActivationMeter* meter = nullptr) {
  return Context{cfg, opt.training && cfg.dropout > 0.0, opt.dropout_seed, meter};
}

// Dropout sites; masks are a pure function of (seed, site, element) so the
// recomputed forward pass under checkpointing sees the same masks.
enum : std::uint64_t { kSiteEncEmbed = 1, kSiteDecEmbed = 2 };
std::uint64_t enc_site(std::size_t layer, std::uint64_t k) { return 16 + 4 * layer + k; }
std::uint64_t dec_site(std::size_t layer, std::uint64_t k) { return (1ULL << 32) + 4 * layer + k; }

void dropout(Matrix& m, const Context& ctx, std::uint64_t site) {
  if (!ctx.dropout_active) return;
  const double p = ctx.cfg.dropout;
  const double scale = 1.0 / (1.0 - p);
  const std::uint64_t key = mix64(ctx.seed ^ mix64(site));
  double* data = m.data();
  for (Index i = 0; i < m.size(); ++i) {
    const double u = static_cast<double>(mix64(key + static_cast<std::uint64_t>(i)) >> 11) * 0x1.0p-53;
    data[i] *= (u < p) ? 0.0 : scale;
  }
}

Matrix linear(const Matrix& x, const Tensor& w, const Tensor& b) {
  Matrix y = x * w.mat();
  y.rowwise() += b.vec();
  return y;
}

// ---------------------------------------------------------------- layer norm

struct NormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
  std::size_t elements() const { return static_cast<std::size_t>(xhat.size() + rstd.size()); }
};

Matrix norm_forward(const Matrix& x, const LayerNormWeights& w, double eps, NormCache* cache) {
  const Index n = x.rows();
  const Index d = x.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const RowVector centered = x.row(i).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * r;
    rstd(i) = r;
  }
  Matrix y = xhat.array().rowwise() * w.gamma.vec().array();
  y.rowwise() += w.beta.vec();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix norm_backward(const Matrix& dy, const NormCache& c, const LayerNormWeights& w, LayerNormWeights& g) {
  g.gamma.vec() += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.beta.vec() += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * w.gamma.vec().array();
  Matrix dx(dy.rows(), dy.cols());
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() * inv_d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - mean_dxhat - c.xhat.row(i).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

// ----------------------------------------------------------------- attention

struct AttnCache {
  Matrix q, k, v, ctx;
  std::vector<double> probs;
  std::size_t elements() const {
    return static_cast<std::size_t>(q.size() + k.size() + v.size() + ctx.size()) + probs.size();
  }
};

Matrix attn_forward(const Matrix& xq, const Matrix& xkv, const AttentionWeights& w,
                    const AttentionPattern& pattern, std::size_t heads, AttnCache* cache) {
  Matrix q = linear(xq, w.wq, w.bq);
  Matrix k = linear(xkv, w.wk, w.bk);
  Matrix v = linear(xkv, w.wv, w.bv);
  Matrix ctx;
  std::vector<double> probs;
  pattern_attention_forward(q, k, v, pattern, heads, ctx, probs);
  Matrix out = linear(ctx, w.wo, w.bo);
  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
    cache->probs = std::move(probs);
  }
  return out;
}

void attn_backward(const Matrix& dout, const Matrix& xq, const Matrix& xkv, const AttentionWeights& w,
                   AttentionWeights& g, const AttentionPattern& pattern, std::size_t heads,
                   const AttnCache& c, Matrix& dxq, Matrix& dxkv) {
  g.wo.mat().noalias() += c.ctx.transpose() * dout;
  g.bo.vec() += dout.colwise().sum();
  const Matrix dctx = dout * w.wo.mat().transpose();
  Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
  Matrix dk = Matrix::Zero(c.k.rows(), c.k.cols());
  Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
  pattern_attention_backward(c.q, c.k, c.v, pattern, heads, c.probs, dctx, dq, dk, dv);
  g.wq.mat().noalias() += xq.transpose() * dq;
  g.bq.vec() += dq.colwise().sum();
  g.wk.mat().noalias() += xkv.transpose() * dk;
  g.bk.vec() += dk.colwise().sum();
  g.wv.mat().noalias() += xkv.transpose() * dv;
  g.bv.vec() += dv.colwise().sum();
  dxq = dq * w.wq.mat().transpose();
  dxkv = dk * w.wk.mat().transpose() + dv * w.wv.mat().transpose();
}

// -------------------------------------------------------------- feed-forward

struct FFCache {
  Matrix pre;
  std::size_t elements() const { return static_cast<std::size_t>(pre.size()); }
};

Matrix ff_forward(const Matrix& x, const FeedForwardWeights& w, FFCache* cache) {
  Matrix pre = linear(x, w.w1, w.b1);
  const Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix out = linear(act, w.w2, w.b2);
  if (cache != nullptr) cache->pre = std::move(pre);
  return out;
}

Matrix ff_backward(const Matrix& dout, const Matrix& x, const FeedForwardWeights& w, FeedForwardWeights& g,
                   const FFCache& c) {
  const Matrix act = c.pre.unaryExpr([](double v) { return gelu(v); });
  g.w2.mat().noalias() += act.transpose() * dout;
  g.b2.vec() += dout.colwise().sum();
  const Matrix dact = dout * w.w2.mat().transpose();
  const Matrix dpre = dact.array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  g.w1.mat().noalias() += x.transpose() * dpre;
  g.b1.vec() += dpre.colwise().sum();
  return dpre * w.w1.mat().transpose();
}

// ------------------------------------------------------------- encoder layer

struct EncLayerCache {
  NormCache n1;
  Matrix xn1;
  AttnCache attn;
  NormCache n2;
  Matrix xn2;
  FFCache ff;
  ActivationLease lease;

  std::size_t elements() const {
    return n1.elements() + static_cast<std::size_t>(xn1.size()) + attn.elements() + n2.elements() +
           static_cast<std::size_t>(xn2.size()) + ff.elements();
  }
};

Matrix enc_layer_forward(const Matrix& x, const EncoderLayerWeights& w, const AttentionPattern& pattern,
                         const Context& ctx, std::size_t layer, EncLayerCache* cache) {
  const double eps = ctx.cfg.layer_norm_eps;
  NormCache n1;
  NormCache n2;
  AttnCache attn;
  FFCache ff;
  const bool keep = cache != nullptr;
  Matrix xn1 = norm_forward(x, w.attn_norm, eps, keep ? &n1 : nullptr);
  Matrix a = attn_forward(xn1, xn1, w.self_attn, pattern, ctx.cfg.n_heads, keep ? &attn : nullptr);
  dropout(a, ctx, enc_site(layer, 0));
  Matrix h = x + a;
  Matrix xn2 = norm_forward(h, w.ff_norm, eps, keep ? &n2 : nullptr);
  Matrix f = ff_forward(xn2, w.ff, keep ? &ff : nullptr);
  dropout(f, ctx, enc_site(layer, 1));
  h += f;
  if (keep) {
    cache->n1 = std::move(n1);
    cache->xn1 = std::move(xn1);
    cache->attn = std::move(attn);
    cache->n2 = std::move(n2);
    cache->xn2 = std::move(xn2);
    cache->ff = std::move(ff);
    cache->lease = ActivationLease(ctx.meter, ActivationRegion::encoder, cache->elements());
  }
  return h;
}

Matrix enc_layer_backward(const Matrix& dy, const EncoderLayerWeights& w, EncoderLayerWeights& g,
                          const AttentionPattern& pattern, const Context& ctx, std::size_t layer,
                          const EncLayerCache& c) {
  Matrix dh = dy;
  Matrix df = dy;
  dropout(df, ctx, enc_site(layer, 1));
  const Matrix dxn2 = ff_backward(df, c.xn2, w.ff, g.ff, c.ff);
  dh += norm_backward(dxn2, c.n2, w.ff_norm, g.ff_norm);
  Matrix da = dh;
  dropout(da, ctx, enc_site(layer, 0));
  Matrix dxq;
  Matrix dxkv;
  attn_backward(da, c.xn1, c.xn1, w.self_attn, g.self_attn, pattern, ctx.cfg.n_heads, c.attn, dxq, dxkv);
  dxq += dxkv;
  dh += norm_backward(dxq, c.n1, w.attn_norm, g.attn_norm);
  return dh;
}

// ------------------------------------------------------------- decoder layer

struct DecLayerCache {
  NormCache n1;
  Matrix xn1;
  AttnCache self_attn;
  NormCache n2;
  Matrix xn2;
  AttnCache cross_attn;
  NormCache n3;
  Matrix xn3;
  FFCache ff;
  ActivationLease lease;

  std::size_t elements() const {
    return n1.elements() + static_cast<std::size_t>(xn1.size()) + self_attn.elements() + n2.elements() +
           static_cast<std::size_t>(xn2.size()) + cross_attn.elements() + n3.elements() +
           static_cast<std::size_t>(xn3.size()) + ff.elements();
  }
};

struct DecoderPatterns {
  AttentionPattern self;
  AttentionPattern cross;
};

DecoderPatterns decoder_patterns(std::size_t m, std::size_t n, std::span<const std::uint8_t> enc_mask) {
  AttentionSpec self_spec;
  self_spec.causal = true;
  AttentionSpec cross_spec;
  cross_spec.pad_mask.assign(enc_mask.begin(), enc_mask.end());
  return {dense_pattern(m, m, self_spec), dense_pattern(m, n, cross_spec)};
}

Matrix dec_layer_forward(const Matrix& y, const Matrix& enc, const DecoderLayerWeights& w,
                         const DecoderPatterns& patterns, const Context& ctx, std::size_t layer,
                         DecLayerCache* cache) {
  const double eps = ctx.cfg.layer_norm_eps;
  const std::size_t heads = ctx.cfg.n_heads;
  const bool keep = cache != nullptr;
  NormCache n1;
  NormCache n2;
  NormCache n3;
  AttnCache sa;
  AttnCache ca;
  FFCache ff;
  Matrix xn1 = norm_forward(y, w.self_norm, eps, keep ? &n1 : nullptr);
  Matrix s = attn_forward(xn1, xn1, w.self_attn, patterns.self, heads, keep ? &sa : nullptr);
  dropout(s, ctx, dec_site(layer, 0));
  Matrix b = y + s;
  Matrix xn2 = norm_forward(b, w.cross_norm, eps, keep ? &n2 : nullptr);
  Matrix c = attn_forward(xn2, enc, w.cross_attn, patterns.cross, heads, keep ? &ca : nullptr);
  dropout(c, ctx, dec_site(layer, 1));
  b += c;
  Matrix xn3 = norm_forward(b, w.ff_norm, eps, keep ? &n3 : nullptr);
  Matrix f = ff_forward(xn3, w.ff, keep ? &ff : nullptr);
  dropout(f, ctx, dec_site(layer, 2));
  b += f;
  if (keep) {
    cache->n1 = std::move(n1);
    cache->xn1 = std::move(xn1);
    cache->self_attn = std::move(sa);
    cache->n2 = std::move(n2);
    cache->xn2 = std::move(xn2);
    cache->cross_attn = std::move(ca);
    cache->n3 = std::move(n3);
    cache->xn3 = std::move(xn3);
    cache->ff = std::move(ff);
    cache->lease = ActivationLease(ctx.meter, ActivationRegion::decoder, cache->elements());
  }
  return b;
}

Matrix dec_layer_backward(const Matrix& dout, const Matrix& enc, const DecoderLayerWeights& w,
                          DecoderLayerWeights& g, const DecoderPatterns& patterns, const Context& ctx,
                          std::size_t layer, const DecLayerCache& c, Matrix& denc) {
  const std::size_t heads = ctx.cfg.n_heads;
  Matrix db = dout;
  Matrix df = dout;
  dropout(df, ctx, dec_site(layer, 2));
  const Matrix dxn3 = ff_backward(df, c.xn3, w.ff, g.ff, c.ff);
  db += norm_backward(dxn3, c.n3, w.ff_norm, g.ff_norm);

  Matrix dc = db;
  dropout(dc, ctx, dec_site(layer, 1));
  Matrix dxq;
  Matrix dxkv;
  attn_backward(dc, c.xn2, enc, w.cross_attn, g.cross_attn, patterns.cross, heads, c.cross_attn, dxq, dxkv);
  denc += dxkv;
  db += norm_backward(dxq, c.n2, w.cross_norm, g.cross_norm);

  Matrix ds = db;
  dropout(ds, ctx, dec_site(layer, 0));
  attn_backward(ds, c.xn1, c.xn1, w.self_attn, g.self_attn, patterns.self, heads, c.self_attn, dxq, dxkv);
  dxq += dxkv;
  db += norm_backward(dxq, c.n1, w.self_norm, g.self_norm);
  return db;
}

// ------------------------------------------------------------ embeddings/head

Matrix embed(const Parameters& p, const ModelConfig& cfg, std::span<const TokenId> ids, const Tensor& positions) {
  const auto d = static_cast<Index>(cfg.d_model);
  Matrix x(static_cast<Index>(ids.size()), d);
  const auto table = p.token_embedding.mat();
  const auto pos = positions.mat();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    x.row(static_cast<Index>(i)) = table.row(ids[i]) + pos.row(static_cast<Index>(i));
  }
  return x;
}

void embed_backward(const Matrix& dx, std::span<const TokenId> ids, Tensor& g_table, Tensor& g_positions) {
  auto table = g_table.mat();
  auto pos = g_positions.mat();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    table.row(ids[i]) += dx.row(static_cast<Index>(i));
    pos.row(static_cast<Index>(i)) += dx.row(static_cast<Index>(i));
  }
}

Matrix head_forward(const Matrix& h, const Parameters& p, const ModelConfig& cfg) {
  Matrix logits = cfg.tie_embeddings ? Matrix(h * p.token_embedding.mat().transpose()) : Matrix(h * p.lm_head.mat());
  logits.rowwise() += p.lm_head_bias.vec();
  return logits;
}

void check_source(const ModelConfig& cfg, const Encoding& enc) {
  if (enc.ids.empty()) throw std::invalid_argument("source: empty encoding");
  if (enc.ids.size() > cfg.max_enc_len) {
    throw std::invalid_argument("source: length " + std::to_string(enc.ids.size()) + " exceeds max_enc_len " +
                                std::to_string(cfg.max_enc_len));
  }
  if (enc.attention_mask.size() != enc.ids.size() || enc.global_mask.size() != enc.ids.size()) {
    throw std::invalid_argument("source: mask lengths disagree with ids");
  }
}

void check_target_length(const ModelConfig& cfg, std::size_t m) {
  if (m == 0) throw std::invalid_argument("target: empty decoder input");
  if (m > cfg.max_dec_len) {
    throw std::invalid_argument("target: length " + std::to_string(m) + " exceeds max_dec_len " +
                                std::to_string(cfg.max_dec_len));
  }
}

AttentionPattern encoder_pattern(const ModelConfig& cfg, const Encoding& enc, EncoderAttention mode) {
  AttentionSpec spec;
  spec.window = cfg.window;
  spec.pad_mask = enc.attention_mask;
  spec.global_mask = enc.global_mask;
  if (mode == EncoderAttention::full_reference) return dense_pattern(enc.size(), enc.size(), spec);
  return sliding_window_pattern(enc.size(), spec);
}

std::string layer_name(const ModelConfig& cfg, std::size_t index) {
  if (index < cfg.n_enc_layers) return "encoder layer " + std::to_string(index);
  if (index < cfg.n_enc_layers + cfg.n_dec_layers) {
    return "decoder layer " + std::to_string(index - cfg.n_enc_layers);
  }
  return "output head";
}

}  // namespace

RowVector log_softmax(const RowVector& logits) {
  const double max = logits.maxCoeff();
  const double lse = max + std::log((logits.array() - max).exp().sum());
  return logits.array() - lse;
}

Matrix encode_document(const Parameters& params, const ModelConfig& config, const Encoding& enc,
                       const ForwardOptions& options) {
  check_source(config, enc);
  const Context ctx = make_context(config, options);
  const AttentionPattern pattern = encoder_pattern(config, enc, options.encoder_attention);
  Matrix x = embed(params, config, enc.ids, params.enc_positions);
  dropout(x, ctx, kSiteEncEmbed);
  for (std::size_t l = 0; l < config.n_enc_layers; ++l) {
    x = enc_layer_forward(x, params.encoder[l], pattern, ctx, l, nullptr);
  }
  return norm_forward(x, params.enc_final_norm, config.layer_norm_eps, nullptr);
}

Matrix decoder_forward(const Parameters& params, const ModelConfig& config, const Matrix& enc_states,
                       std::span<const std::uint8_t> enc_mask, std::span<const TokenId> target_ids,
                       const ForwardOptions& options) {
  check_target_length(config, target_ids.size());
  if (!enc_mask.empty() && enc_mask.size() != static_cast<std::size_t>(enc_states.rows())) {
    throw std::invalid_argument("enc_mask: length disagrees with encoder states");
  }
  const Context ctx = make_context(config, options);
  const DecoderPatterns patterns =
      decoder_patterns(target_ids.size(), static_cast<std::size_t>(enc_states.rows()), enc_mask);
  Matrix y = embed(params, config, target_ids, params.dec_positions);
  dropout(y, ctx, kSiteDecEmbed);
  for (std::size_t l = 0; l < config.n_dec_layers; ++l) {
    y = dec_layer_forward(y, enc_states, params.decoder[l], patterns, ctx, l, nullptr);
  }
  return head_forward(norm_forward(y, params.dec_final_norm, config.layer_norm_eps, nullptr), params, config);
}

SequenceLoss sequence_loss(const Parameters& params, const ModelConfig& config, const Example& example) {
  const Encoding& tgt = example.target;
  if (tgt.ids.size() < 2) throw std::invalid_argument("target: needs at least SOS and EOS");
  const Matrix enc = encode_document(params, config, example.source);
  const std::span<const TokenId> dec_in(tgt.ids.data(), tgt.ids.size() - 1);
  const Matrix logits = decoder_forward(params, config, enc, example.source.attention_mask, dec_in);
  SequenceLoss out;
  for (std::size_t t = 0; t < dec_in.size(); ++t) {
    if (tgt.attention_mask[t + 1] == 0) continue;
    const RowVector lp = log_softmax(logits.row(static_cast<Index>(t)));
    out.total_nll -= lp(tgt.ids[t + 1]);
    ++out.tokens;
  }
  return out;
}

LossResult loss_and_gradients(const Parameters& params, const ModelConfig& config, const Example& example,
                              const LossOptions& options) {
  const Encoding& src = example.source;
  const Encoding& tgt = example.target;
  check_source(config, src);
  if (tgt.ids.size() < 2 || tgt.attention_mask.size() != tgt.ids.size()) {
    throw std::invalid_argument("target: needs at least SOS and EOS with a matching mask");
  }
  const std::size_t m = tgt.ids.size() - 1;
  check_target_length(config, m);
  const std::span<const TokenId> dec_in(tgt.ids.data(), m);

  const Context ctx = make_context(config, options, options.meter);
  const std::size_t n_enc = config.n_enc_layers;
  const std::size_t n_dec = config.n_dec_layers;
  const bool ckpt = options.checkpointing;
  std::optional<std::size_t> first_bad;
  auto note_finite = [&](const Matrix& x, std::size_t index) {
    if (!first_bad && !x.allFinite()) first_bad = index;
  };

  // ---- encoder forward
  const AttentionPattern enc_pattern = encoder_pattern(config, src, options.encoder_attention);
  ActivationLease pattern_lease(options.meter, ActivationRegion::encoder, enc_pattern.memory_elements());
  Matrix x = embed(params, config, src.ids, params.enc_positions);
  dropout(x, ctx, kSiteEncEmbed);

  std::vector<Matrix> enc_inputs(ckpt ? n_enc : 0);
  std::vector<ActivationLease> enc_input_leases(ckpt ? n_enc : 0);
  std::vector<EncLayerCache> enc_caches(ckpt ? 0 : n_enc);
  for (std::size_t l = 0; l < n_enc; ++l) {
    if (ckpt) {
      enc_inputs[l] = x;
      enc_input_leases[l] = ActivationLease(options.meter, ActivationRegion::encoder, static_cast<std::size_t>(x.size()));
      x = enc_layer_forward(x, params.encoder[l], enc_pattern, ctx, l, nullptr);
    } else {
      x = enc_layer_forward(x, params.encoder[l], enc_pattern, ctx, l, &enc_caches[l]);
    }
    note_finite(x, l);
  }
  NormCache enc_final;
  const Matrix enc_states = norm_forward(x, params.enc_final_norm, config.layer_norm_eps, &enc_final);
  ActivationLease enc_final_lease(options.meter, ActivationRegion::encoder,
                                  enc_final.elements() + static_cast<std::size_t>(enc_states.size()));

  // ---- decoder forward
  const DecoderPatterns dec_patterns = decoder_patterns(m, src.size(), src.attention_mask);
  ActivationLease dec_pattern_lease(options.meter, ActivationRegion::decoder,
                                    dec_patterns.self.memory_elements() + dec_patterns.cross.memory_elements());
  Matrix y = embed(params, config, dec_in, params.dec_positions);
  dropout(y, ctx, kSiteDecEmbed);
  std::vector<Matrix> dec_inputs(ckpt ? n_dec : 0);
  std::vector<ActivationLease> dec_input_leases(ckpt ? n_dec : 0);
  std::vector<DecLayerCache> dec_caches(ckpt ? 0 : n_dec);
  for (std::size_t l = 0; l < n_dec; ++l) {
    if (ckpt) {
      dec_inputs[l] = y;
      dec_input_leases[l] = ActivationLease(options.meter, ActivationRegion::decoder, static_cast<std::size_t>(y.size()));
      y = dec_layer_forward(y, enc_states, params.decoder[l], dec_patterns, ctx, l, nullptr);
    } else {
      y = dec_layer_forward(y, enc_states, params.decoder[l], dec_patterns, ctx, l, &dec_caches[l]);
    }
    note_finite(y, n_enc + l);
  }
  NormCache dec_final;
  const Matrix h = norm_forward(y, params.dec_final_norm, config.layer_norm_eps, &dec_final);
  Matrix logits = head_forward(h, params, config);
  ActivationLease head_lease(options.meter, ActivationRegion::decoder,
                             dec_final.elements() + static_cast<std::size_t>(h.size() + logits.size()));
  note_finite(logits, n_enc + n_dec);

  // ---- loss; logits become dloss/dlogits in place
  std::size_t count = 0;
  for (std::size_t t = 0; t < m; ++t) count += tgt.attention_mask[t + 1] != 0 ? 1 : 0;
  if (count == 0) throw std::invalid_argument("target: no unmasked positions");
  double total = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    auto row = logits.row(static_cast<Index>(t));
    if (tgt.attention_mask[t + 1] == 0) {
      row.setZero();
      continue;
    }
    const TokenId label = tgt.ids[t + 1];
    if (label < 0 || static_cast<std::size_t>(label) >= config.vocab_size) {
      throw std::out_of_range("target id outside vocabulary");
    }
    const RowVector lp = log_softmax(row);
    total -= lp(label);
    row = lp.array().exp() / static_cast<double>(count);
    row(label) -= 1.0 / static_cast<double>(count);
  }
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) {
    const std::size_t where = first_bad.value_or(n_enc + n_dec);
    throw NonFiniteError(where, layer_name(config, where));
  }

  LossResult result;
  result.loss = loss;
  result.target_tokens = count;
  result.grads = Parameters::zeros(config);
  Parameters& g = result.grads;

  // ---- head backward
  Matrix dh;
  if (config.tie_embeddings) {
    g.token_embedding.mat().noalias() += logits.transpose() * h;
    dh = logits * params.token_embedding.mat();
  } else {
    g.lm_head.mat().noalias() += h.transpose() * logits;
    dh = logits * params.lm_head.mat().transpose();
  }
  g.lm_head_bias.vec() += logits.colwise().sum();
  Matrix dy = norm_backward(dh, dec_final, params.dec_final_norm, g.dec_final_norm);

  // ---- decoder backward
  Matrix denc = Matrix::Zero(enc_states.rows(), enc_states.cols());
  for (std::size_t l = n_dec; l-- > 0;) {
    if (ckpt) {
      DecLayerCache cache;
      dec_layer_forward(dec_inputs[l], enc_states, params.decoder[l], dec_patterns, ctx, l, &cache);
      dy = dec_layer_backward(dy, enc_states, params.decoder[l], g.decoder[l], dec_patterns, ctx, l, cache, denc);
      dec_input_leases[l].reset();
    } else {
      dy = dec_layer_backward(dy, enc_states, params.decoder[l], g.decoder[l], dec_patterns, ctx, l,
                              dec_caches[l], denc);
      dec_caches[l] = DecLayerCache{};
    }
  }
  dropout(dy, ctx, kSiteDecEmbed);
  embed_backward(dy, dec_in, g.token_embedding, g.dec_positions);

  // ---- encoder backward
  Matrix dx = norm_backward(denc, enc_final, params.enc_final_norm, g.enc_final_norm);
  for (std::size_t l = n_enc; l-- > 0;) {
    if (ckpt) {
      EncLayerCache cache;
      enc_layer_forward(enc_inputs[l], params.encoder[l], enc_pattern, ctx, l, &cache);
      dx = enc_layer_backward(dx, params.encoder[l], g.encoder[l], enc_pattern, ctx, l, cache);
      enc_input_leases[l].reset();
    } else {
      dx = enc_layer_backward(dx, params.encoder[l], g.encoder[l], enc_pattern, ctx, l, enc_caches[l]);
      enc_caches[l] = EncLayerCache{};
    }
  }
  dropout(dx, ctx, kSiteEncEmbed);
  embed_backward(dx, src.ids, g.token_embedding, g.enc_positions);
  return result;
}

// ------------------------------------------------------------ DecoderSession

DecoderSession::DecoderSession(const Parameters& params, const ModelConfig& config, const Matrix& enc_states,
                               std::span<const std::uint8_t> enc_mask)
    : params_(params), config_(config) {
  if (!enc_mask.empty() && enc_mask.size() != static_cast<std::size_t>(enc_states.rows())) {
    throw std::invalid_argument("enc_mask: length disagrees with encoder states");
  }
  for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
    const auto& w = params_.decoder[l].cross_attn;
    cross_k_.push_back(linear(enc_states, w.wk, w.bk));
    cross_v_.push_back(linear(enc_states, w.wv, w.bv));
  }
  for (Index j = 0; j < enc_states.rows(); ++j) {
    if (enc_mask.empty() || enc_mask[static_cast<std::size_t>(j)] != 0) {
      cross_keys_.push_back(static_cast<std::uint32_t>(j));
    }
  }
}

DecoderSession::State DecoderSession::start() const {
  State s;
  s.self_k.assign(config_.n_dec_layers, Matrix(0, static_cast<Index>(config_.d_model)));
  s.self_v.assign(config_.n_dec_layers, Matrix(0, static_cast<Index>(config_.d_model)));
  step(s, Tokenizer::kSos);
  return s;
}

DecoderSession::State DecoderSession::extend(const State& state, TokenId token) const {
  State s = state;
  step(s, token);
  return s;
}

void DecoderSession::step(State& s, TokenId token) const {
  if (s.length >= config_.max_dec_len) {
    throw std::invalid_argument("decoder: position " + std::to_string(s.length) + " exceeds max_dec_len");
  }
  const double eps = config_.layer_norm_eps;
  const std::size_t heads = config_.n_heads;
  const auto d = static_cast<Index>(config_.d_model);
  if (token < 0 || static_cast<std::size_t>(token) >= config_.vocab_size) {
    throw std::out_of_range("token id outside vocabulary");
  }
  Matrix row = params_.token_embedding.mat().row(token) + params_.dec_positions.mat().row(static_cast<Index>(s.length));

  AttentionPattern self_pattern;
  self_pattern.rows = 1;
  self_pattern.cols_total = s.length + 1;
  self_pattern.row_ptr = {0, s.length + 1};
  self_pattern.cols.resize(s.length + 1);
  for (std::size_t j = 0; j <= s.length; ++j) self_pattern.cols[j] = static_cast<std::uint32_t>(j);

  AttentionPattern cross_pattern;
  cross_pattern.rows = 1;
  cross_pattern.cols_total = cross_keys_.size();
  cross_pattern.row_ptr = {0, cross_keys_.size()};
  cross_pattern.cols = cross_keys_;

  Matrix ctx_out;
  std::vector<double> probs;
  for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
    const auto& w = params_.decoder[l];
    const Matrix xn1 = norm_forward(row, w.self_norm, eps, nullptr);
    Matrix& k = s.self_k[l];
    Matrix& v = s.self_v[l];
    k.conservativeResize(k.rows() + 1, d);
    v.conservativeResize(v.rows() + 1, d);
    k.row(k.rows() - 1) = linear(xn1, w.self_attn.wk, w.self_attn.bk);
    v.row(v.rows() - 1) = linear(xn1, w.self_attn.wv, w.self_attn.bv);
    const Matrix q = linear(xn1, w.self_attn.wq, w.self_attn.bq);
    pattern_attention_forward(q, k, v, self_pattern, heads, ctx_out, probs);
    Matrix b = row + linear(ctx_out, w.self_attn.wo, w.self_attn.bo);

    const Matrix xn2 = norm_forward(b, w.cross_norm, eps, nullptr);
    const Matrix qc = linear(xn2, w.cross_attn.wq, w.cross_attn.bq);
    pattern_attention_forward(qc, cross_k_[l], cross_v_[l], cross_pattern, heads, ctx_out, probs);
    b += linear(ctx_out, w.cross_attn.wo, w.cross_attn.bo);

    const Matrix xn3 = norm_forward(b, w.ff_norm, eps, nullptr);
    b += ff_forward(xn3, w.ff, nullptr);
    row = std::move(b);
  }
  const Matrix h = norm_forward(row, params_.dec_final_norm, eps, nullptr);
  s.log_probs = log_softmax(head_forward(h, params_, config_).row(0));
  ++s.length;
}

}  // namespace longsum
