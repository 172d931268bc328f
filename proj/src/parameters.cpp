// SPDX-License-Identifier: Apache-2.0
#include "longsum/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace longsum {
namespace {

template <typename P, typename F>
void visit_norm(P& n, const std::string& prefix, F&& fn) {
  fn(prefix + ".gamma", n.gamma);
  fn(prefix + ".beta", n.beta);
}

template <typename P, typename F>
void visit_attn(P& a, const std::string& prefix, F&& fn) {
  fn(prefix + ".wq", a.wq);
  fn(prefix + ".bq", a.bq);
  fn(prefix + ".wk", a.wk);
  fn(prefix + ".bk", a.bk);
  fn(prefix + ".wv", a.wv);
  fn(prefix + ".bv", a.bv);
  fn(prefix + ".wo", a.wo);
  fn(prefix + ".bo", a.bo);
}

template <typename P, typename F>
void visit_ff(P& f, const std::string& prefix, F&& fn) {
  fn(prefix + ".w1", f.w1);
  fn(prefix + ".b1", f.b1);
  fn(prefix + ".w2", f.w2);
  fn(prefix + ".b2", f.b2);
}

// Walks every tensor slot, including the lm_head slot when untied.
template <typename P, typename F>
void visit(P& p, bool include_lm_head, F&& fn) {
  fn(std::string("embed.tokens"), p.token_embedding);
  fn(std::string("embed.enc_positions"), p.enc_positions);
  fn(std::string("embed.dec_positions"), p.dec_positions);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    visit_norm(p.encoder[i].attn_norm, pre + ".attn_norm", fn);
    visit_attn(p.encoder[i].self_attn, pre + ".self_attn", fn);
    visit_norm(p.encoder[i].ff_norm, pre + ".ff_norm", fn);
    visit_ff(p.encoder[i].ff, pre + ".ff", fn);
  }
  visit_norm(p.enc_final_norm, std::string("encoder.final_norm"), fn);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string pre = "decoder." + std::to_string(i);
    visit_norm(p.decoder[i].self_norm, pre + ".self_norm", fn);
    visit_attn(p.decoder[i].self_attn, pre + ".self_attn", fn);
    visit_norm(p.decoder[i].cross_norm, pre + ".cross_norm", fn);
    visit_attn(p.decoder[i].cross_attn, pre + ".cross_attn", fn);
    visit_norm(p.decoder[i].ff_norm, pre + ".ff_norm", fn);
    visit_ff(p.decoder[i].ff, pre + ".ff", fn);
  }
  visit_norm(p.dec_final_norm, std::string("decoder.final_norm"), fn);
  if (include_lm_head) fn(std::string("lm_head.weight"), p.lm_head);
  fn(std::string("lm_head.bias"), p.lm_head_bias);
}

// Expected shape of a named slot.
std::vector<std::size_t> shape_for(const std::string& name, const ModelConfig& c) {
  const std::size_t d = c.d_model;
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (name == "embed.tokens") return {c.vocab_size, d};
  if (name == "embed.enc_positions") return {c.max_enc_len, d};
  if (name == "embed.dec_positions") return {c.max_dec_len, d};
  if (name == "lm_head.weight") return {d, c.vocab_size};
  if (name == "lm_head.bias") return {c.vocab_size};
  if (ends_with(".gamma") || ends_with(".beta")) return {d};
  if (ends_with(".w1")) return {d, c.d_ff};
  if (ends_with(".b1")) return {c.d_ff};
  if (ends_with(".w2")) return {c.d_ff, d};
  if (ends_with(".b2")) return {d};
  if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".wo")) return {d, d};
  if (ends_with(".bq") || ends_with(".bk") || ends_with(".bv") || ends_with(".bo")) return {d};
  throw std::logic_error("unknown parameter " + name);
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(field) + ": " + what);
  };
  require(vocab_size >= 1, "vocab_size", "must be >= 1");
  require(d_model >= 1, "d_model", "must be >= 1");
  require(n_heads >= 1, "n_heads", "must be >= 1");
  require(d_model % n_heads == 0, "n_heads", "must divide d_model");
  require(n_enc_layers >= 1, "n_enc_layers", "must be >= 1");
  require(n_dec_layers >= 1, "n_dec_layers", "must be >= 1");
  require(d_ff >= 1, "d_ff", "must be >= 1");
  require(window >= 2 && window % 2 == 0, "window", "must be even and >= 2");
  require(max_enc_len >= 1, "max_enc_len", "must be >= 1");
  require(window <= max_enc_len, "window", "must not exceed max_enc_len");
  require(max_dec_len >= 1, "max_dec_len", "must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must be within [0, 1)");
  require(layer_norm_eps > 0.0, "layer_norm_eps", "must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
                     {"n_heads", c.n_heads},         {"n_enc_layers", c.n_enc_layers},
                     {"n_dec_layers", c.n_dec_layers}, {"d_ff", c.d_ff},
                     {"window", c.window},           {"max_enc_len", c.max_enc_len},
                     {"max_dec_len", c.max_dec_len}, {"dropout", c.dropout},
                     {"tie_embeddings", c.tie_embeddings}, {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.d_model = j.value("d_model", d.d_model);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.n_enc_layers = j.value("n_enc_layers", d.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", d.n_dec_layers);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.window = j.value("window", d.window);
  c.max_enc_len = j.value("max_enc_len", d.max_enc_len);
  c.max_dec_len = j.value("max_dec_len", d.max_dec_len);
  c.dropout = j.value("dropout", d.dropout);
  c.tie_embeddings = j.value("tie_embeddings", d.tie_embeddings);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
}

Parameters Parameters::zeros(const ModelConfig& config) {
  config.validate();
  Parameters p;
  p.encoder.resize(config.n_enc_layers);
  p.decoder.resize(config.n_dec_layers);
  visit(p, !config.tie_embeddings,
        [&](const std::string& name, Tensor& t) { t = Tensor(shape_for(name, config)); });
  return p;
}

Parameters Parameters::initialize(const ModelConfig& config, std::uint64_t seed, double init_std) {
  Parameters p = zeros(config);
  NormalSampler normal(seed);
  visit(p, !config.tie_embeddings, [&](const std::string& name, Tensor& t) {
    const bool is_gamma = name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    if (is_gamma) {
      t.fill(1.0);
    } else if (t.rank() == 1) {
      t.fill(0.0);
    } else if (name.rfind("embed.", 0) == 0) {
      for (double& v : t.data) v = init_std * normal();
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(t.rows()));
      for (double& v : t.data) v = scale * normal();
    }
  });
  return p;
}

std::vector<std::pair<std::string, Tensor*>> Parameters::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit(*this, !lm_head.data.empty(), [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Parameters::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  visit(*this, !lm_head.data.empty(),
        [&](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

std::size_t Parameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

bool Parameters::all_finite() const {
  for (const auto& [name, t] : named()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

void Parameters::check_shapes(const ModelConfig& config) const {
  if (encoder.size() != config.n_enc_layers) throw std::invalid_argument("n_enc_layers: layer count mismatch");
  if (decoder.size() != config.n_dec_layers) throw std::invalid_argument("n_dec_layers: layer count mismatch");
  if (lm_head.data.empty() != config.tie_embeddings) {
    throw std::invalid_argument("tie_embeddings: lm_head presence disagrees with config");
  }
  for (const auto& [name, t] : named()) {
    if (t->shape != shape_for(name, config)) throw std::invalid_argument(name + ": shape mismatch");
  }
}

void Parameters::set_zero() {
  for (auto& [name, t] : named()) t->fill(0.0);
}

void Parameters::add_scaled(const Parameters& other, double scale) {
  auto mine = named();
  auto theirs = other.named();
  if (mine.size() != theirs.size()) throw std::invalid_argument("parameter layouts differ");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    mine[i].second->vec() += scale * theirs[i].second->vec();
  }
}

}  // namespace longsum
