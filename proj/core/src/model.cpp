#include "sttm/model.hpp"

#include <cmath>

#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm::model {

namespace nx = numerics;

namespace {

constexpr std::array<std::string_view, 6> kVariantNames{
    "sttm", "no_temporal_position", "no_spatial_position", "no_temporal_transformer", "no_spatial_transformer",
    "no_memory",
};

constexpr std::array<const char*, 6> kSensitiveNames{"city", "district", "minute", "peak_period", "day_of_week",
                                                     "weather"};

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor matrix(std::size_t rows, std::size_t cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = u(rng_);
    return Tensor::from({rows, cols}, std::move(v), true);
  }
  Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
  Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }

 private:
  std::mt19937_64 rng_;
};

EncoderLayerParams make_layer(Initializer& init, std::size_t h, std::size_t f) {
  EncoderLayerParams p;
  p.wq = init.matrix(h, h);
  p.bq = init.zeros(h);
  p.wk = init.matrix(h, h);
  p.bk = init.zeros(h);
  p.wv = init.matrix(h, h);
  p.bv = init.zeros(h);
  p.wo = init.matrix(h, h);
  p.bo = init.zeros(h);
  p.w1 = init.matrix(h, f);
  p.b1 = init.zeros(f);
  p.w2 = init.matrix(f, h);
  p.b2 = init.zeros(h);
  p.ln1_gain = init.ones(h);
  p.ln1_bias = init.zeros(h);
  p.ln2_gain = init.ones(h);
  p.ln2_bias = init.zeros(h);
  return p;
}

void append_layer(std::vector<NamedTensor>& out, const std::string& prefix, const EncoderLayerParams& p) {
  const std::pair<const char*, const Tensor*> fields[] = {
      {"wq", &p.wq}, {"bq", &p.bq}, {"wk", &p.wk}, {"bk", &p.bk}, {"wv", &p.wv}, {"bv", &p.bv},
      {"wo", &p.wo}, {"bo", &p.bo}, {"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2}, {"b2", &p.b2},
      {"ln1_gain", &p.ln1_gain}, {"ln1_bias", &p.ln1_bias}, {"ln2_gain", &p.ln2_gain}, {"ln2_bias", &p.ln2_bias},
  };
  for (const auto& [name, t] : fields) out.emplace_back(prefix + name, *t);
}

// [G, T, H] -> [G * heads, T, H / heads]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t g = x.dim(0), t = x.dim(1), h = x.dim(2), dh = h / heads;
  return nx::reshape(nx::permute(nx::reshape(x, {g, t, heads, dh}), {0, 2, 1, 3}), {g * heads, t, dh});
}

// [G * heads, T, dh] -> [G, T, heads * dh]
Tensor merge_heads(const Tensor& x, std::size_t heads) {
  const std::size_t g = x.dim(0) / heads, t = x.dim(1), dh = x.dim(2);
  return nx::reshape(nx::permute(nx::reshape(x, {g, heads, t, dh}), {0, 2, 1, 3}), {g, t, heads * dh});
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return nx::add(nx::matmul(x, w), b); }

}  // namespace

std::string_view to_string(Variant v) { return kVariantNames[static_cast<std::size_t>(v)]; }

Variant parse_variant(std::string_view name) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i) {
    if (kVariantNames[i] == name) return static_cast<Variant>(i);
  }
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

void SttmConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("model.") + field + ": must be positive");
  };
  positive(m, "m");
  positive(n, "n");
  positive(d_a, "d_a");
  positive(d_b, "d_b");
  positive(hidden, "h");
  positive(layers, "layers");
  positive(embed, "e");
  positive(mem_hidden, "h_mem");
  positive(mem_patterns, "l_mem");
  positive(mem_dim, "d_mem");
  positive(heads, "heads");
  positive(mlp_hidden, "mlp_hidden");
  if (nx < 1) throw ConfigError("model.nx: must be positive");
  if (ny < 1) throw ConfigError("model.ny: must be positive");
  if (hidden % heads != 0) throw ConfigError("model.heads: must divide model.h");
  if (d_b != vocab.size()) throw ConfigError("model.d_b: the sensitive vocabulary has 6 slots");
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == 0) throw ConfigError(std::string("model.vocab_") + kSensitiveNames[i] + ": must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout: must lie in [0, 1)");
}

std::uint64_t SttmConfig::hash() const {
  Fnv1a h;
  h.update(std::string_view("sttm-config"));
  for (std::size_t v : {m, n, d_a, d_b, hidden, layers, embed, mem_hidden, mem_patterns, mem_dim, heads, ffn_dim(),
                        mlp_hidden}) {
    h.update(static_cast<std::uint64_t>(v));
  }
  h.update(static_cast<std::int64_t>(nx));
  h.update(static_cast<std::int64_t>(ny));
  h.update(dropout);
  for (std::size_t v : vocab) h.update(static_cast<std::uint64_t>(v));
  h.update(to_string(variant));
  return h.digest();
}

std::size_t parameter_count(const SttmConfig& c) {
  const std::size_t h = c.hidden, f = c.ffn_dim();
  const std::size_t layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
  std::size_t total = c.d_a * h;
  if (c.temporal_position()) total += c.n * h;
  if (c.spatial_position()) total += 2 * static_cast<std::size_t>(c.nx) * h + 2 * static_cast<std::size_t>(c.ny) * h;
  if (c.temporal_transformer()) total += c.layers * layer;
  if (c.spatial_transformer()) total += c.layers * layer;
  for (std::size_t v : c.vocab) total += v * c.embed;
  total += c.d_b * c.embed * c.mem_hidden;
  std::size_t head_in = h + c.mem_hidden;
  if (c.memory()) {
    total += (h + c.mem_hidden) * c.mem_dim + c.mem_dim + c.mem_patterns * c.mem_dim;
    head_in = h + 2 * c.mem_dim;
  }
  total += head_in * c.mlp_hidden + c.mlp_hidden + c.mlp_hidden + 1;
  return total;
}

// ---------------------------------------------------------------------------

SttmModel::SttmModel(SttmConfig config, std::uint64_t seed) : config_(config), dropout_rng_(seed ^ 0x5bd1e995ULL) {
  config_.validate();
  const auto& c = config_;
  const std::size_t h = c.hidden;
  Initializer init(seed);
  auto& p = params_;
  if (c.temporal_position()) p.w_tpe = init.matrix(c.n, h);
  if (c.spatial_position()) {
    p.w_spe_x = init.matrix(2 * static_cast<std::size_t>(c.nx), h);
    p.w_spe_y = init.matrix(2 * static_cast<std::size_t>(c.ny), h);
  }
  p.w_xa = init.matrix(c.d_a, h);
  if (c.temporal_transformer()) {
    for (std::size_t l = 0; l < c.layers; ++l) p.temporal.push_back(make_layer(init, h, c.ffn_dim()));
  }
  if (c.spatial_transformer()) {
    for (std::size_t l = 0; l < c.layers; ++l) p.spatial.push_back(make_layer(init, h, c.ffn_dim()));
  }
  for (std::size_t i = 0; i < p.sensitive.size(); ++i) p.sensitive[i] = init.matrix(c.vocab[i], c.embed);
  p.w_xb = init.matrix(c.d_b * c.embed, c.mem_hidden);
  std::size_t head_in = h + c.mem_hidden;
  if (c.memory()) {
    p.w_q = init.matrix(h + c.mem_hidden, c.mem_dim);
    p.b_q = init.zeros(c.mem_dim);
    p.w_mem = init.matrix(c.mem_patterns, c.mem_dim);
    head_in = h + 2 * c.mem_dim;
  }
  p.mlp_w1 = init.matrix(head_in, c.mlp_hidden);
  p.mlp_b1 = init.zeros(c.mlp_hidden);
  p.mlp_w2 = init.matrix(c.mlp_hidden, 1);
  p.mlp_b2 = init.zeros(1);
}

std::vector<NamedTensor> SttmModel::named_parameters() const {
  std::vector<NamedTensor> out;
  const auto& p = params_;
  auto push = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.emplace_back(name, t);
  };
  push("w_tpe", p.w_tpe);
  push("w_spe_x", p.w_spe_x);
  push("w_spe_y", p.w_spe_y);
  push("w_xa", p.w_xa);
  for (std::size_t l = 0; l < p.temporal.size(); ++l) append_layer(out, "temporal." + std::to_string(l) + ".", p.temporal[l]);
  for (std::size_t l = 0; l < p.spatial.size(); ++l) append_layer(out, "spatial." + std::to_string(l) + ".", p.spatial[l]);
  for (std::size_t i = 0; i < p.sensitive.size(); ++i) {
    out.emplace_back(std::string("embed.") + kSensitiveNames[i], p.sensitive[i]);
  }
  push("w_xb", p.w_xb);
  push("w_q", p.w_q);
  push("b_q", p.b_q);
  push("w_mem", p.w_mem);
  push("mlp.w1", p.mlp_w1);
  push("mlp.b1", p.mlp_b1);
  push("mlp.w2", p.mlp_w2);
  push("mlp.b2", p.mlp_b2);
  return out;
}

std::vector<Tensor> SttmModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t SttmModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.size();
  return total;
}

void SttmModel::set_label_affine(double label_mean, double label_scale) {
  if (!std::isfinite(label_mean) || !(label_scale > 0.0) || !std::isfinite(label_scale)) {
    throw ContractError("label affine must be finite with a positive scale");
  }
  label_mean_ = label_mean;
  label_scale_ = label_scale;
}

Tensor SttmModel::temporal_position_embedding(std::size_t slice) const {
  if (!params_.w_tpe.defined()) throw ContractError("variant has no temporal position embedding");
  return nx::take(params_.w_tpe, 0, slice);
}

Tensor SttmModel::spatial_position_embedding(std::int64_t x, std::int64_t y) const {
  if (!params_.w_spe_x.defined()) throw ContractError("variant has no spatial position embedding");
  const std::int64_t xs[1] = {x};
  const std::int64_t ys[1] = {y};
  const Tensor sum = nx::add(nx::embedding_lookup(params_.w_spe_x, xs, "relative_x"),
                             nx::embedding_lookup(params_.w_spe_y, ys, "relative_y"));
  return nx::reshape(sum, {config_.hidden});
}

Tensor SttmModel::encoder_layer(const EncoderLayerParams& p, const Tensor& x, const Tensor& queries, bool training) {
  const std::size_t heads = config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(config_.hidden / heads));
  const Tensor q = split_heads(linear(queries, p.wq, p.bq), heads);
  const Tensor k = split_heads(linear(x, p.wk, p.bk), heads);
  const Tensor v = split_heads(linear(x, p.wv, p.bv), heads);
  const Tensor weights = nx::softmax(nx::scale(nx::batched_matmul(q, k, true), inv_sqrt), 2);
  Tensor attended = linear(merge_heads(nx::batched_matmul(weights, v), heads), p.wo, p.bo);
  attended = nx::dropout(attended, config_.dropout, training, dropout_rng_);
  const Tensor x1 = nx::layer_norm(nx::add(queries, attended), p.ln1_gain, p.ln1_bias);
  Tensor ffn = linear(nx::relu(linear(x1, p.w1, p.b1)), p.w2, p.b2);
  ffn = nx::dropout(ffn, config_.dropout, training, dropout_rng_);
  return nx::layer_norm(nx::add(x1, ffn), p.ln2_gain, p.ln2_bias);
}

// x: [G, T, H] -> token `readout` of the final layer, [G, H]. The final layer
// only evaluates the readout query since no other output position is used.
Tensor SttmModel::encoder_stack(const std::vector<EncoderLayerParams>& layers, Tensor x, std::size_t readout,
                                bool training) {
  const std::size_t g = x.dim(0), h = x.dim(2);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) x = encoder_layer(layers[l], x, x, training);
  const Tensor query = nx::reshape(nx::take(x, 1, readout), {g, 1, h});
  return nx::reshape(encoder_layer(layers.back(), x, query, training), {g, h});
}

Tensor SttmModel::encode_temporal(const Tensor& x_a, bool training, Tensor* projected) {
  const auto& c = config_;
  if (x_a.rank() != 4 || x_a.dim(1) != c.m || x_a.dim(2) != c.n || x_a.dim(3) != c.d_a) {
    throw DimensionError("encode_temporal: expected [B, " + std::to_string(c.m) + ", " + std::to_string(c.n) + ", " +
                         std::to_string(c.d_a) + "], got " + nx::to_string(x_a.shape()));
  }
  const std::size_t b = x_a.dim(0);
  Tensor x = nx::matmul(x_a, params_.w_xa);
  if (c.temporal_position()) x = nx::add(x, params_.w_tpe);
  if (projected != nullptr) *projected = x;
  const Tensor tokens = nx::reshape(x, {b * c.m, c.n, c.hidden});
  const Tensor summary = c.temporal_transformer() ? encoder_stack(params_.temporal, tokens, c.n - 1, training)
                                                  : nx::take(tokens, 1, c.n - 1);
  return nx::reshape(summary, {b, c.m, c.hidden});
}

Tensor SttmModel::encode_spatial(const Tensor& o_temporal, std::span<const std::int64_t> rel_x,
                                 std::span<const std::int64_t> rel_y, bool training) {
  const auto& c = config_;
  if (o_temporal.rank() != 3 || o_temporal.dim(1) != c.m || o_temporal.dim(2) != c.hidden) {
    throw DimensionError("encode_spatial: expected [B, " + std::to_string(c.m) + ", " + std::to_string(c.hidden) +
                         "], got " + nx::to_string(o_temporal.shape()));
  }
  const std::size_t b = o_temporal.dim(0);
  if (rel_x.size() != b * c.m || rel_y.size() != b * c.m) {
    throw DimensionError("encode_spatial: expected " + std::to_string(b * c.m) + " coordinate pairs");
  }
  Tensor x = o_temporal;
  if (c.spatial_position()) {
    const Tensor spe = nx::add(nx::embedding_lookup(params_.w_spe_x, rel_x, "relative_x"),
                               nx::embedding_lookup(params_.w_spe_y, rel_y, "relative_y"));
    x = nx::add(x, nx::reshape(spe, {b, c.m, c.hidden}));
  }
  if (!c.spatial_transformer()) return nx::mean_axis(x, 1);
  return encoder_stack(params_.spatial, x, 0, training);
}

Tensor SttmModel::embed_sensitive(std::span<const std::int64_t> ids) const {
  const std::size_t slots = params_.sensitive.size();
  if (ids.size() % slots != 0) throw DimensionError("embed_sensitive: id count is not a multiple of 6");
  const std::size_t b = ids.size() / slots;
  std::vector<Tensor> parts;
  std::vector<std::int64_t> column(b);
  for (std::size_t s = 0; s < slots; ++s) {
    for (std::size_t i = 0; i < b; ++i) column[i] = ids[i * slots + s];
    parts.push_back(nx::embedding_lookup(params_.sensitive[s], column, kSensitiveNames[s]));
  }
  return nx::matmul(nx::concat(parts), params_.w_xb);
}

MemoryRead SttmModel::memory_forward(const Tensor& o_spatial, const Tensor& x_b_tilde) const {
  if (!config_.memory()) throw ContractError("variant has no memory network");
  MemoryRead r;
  r.q = linear(nx::concat({o_spatial, x_b_tilde}), params_.w_q, params_.b_q);
  r.weights = nx::softmax(nx::matmul(r.q, nx::transpose(params_.w_mem)), 1);
  r.alpha = nx::matmul(r.weights, params_.w_mem);
  return r;
}

void SttmModel::check_batch(const features::SampleBatch& batch) const {
  const auto& c = config_;
  if (batch.size == 0) throw ContractError("empty batch");
  if (batch.m != c.m || batch.n != c.n) {
    throw DimensionError("batch has m=" + std::to_string(batch.m) + ", n=" + std::to_string(batch.n) +
                         " but the model expects m=" + std::to_string(c.m) + ", n=" + std::to_string(c.n));
  }
  if (batch.x_a.size() != batch.size * c.m * c.n * c.d_a) throw DimensionError("batch x_a size mismatch");
  if (batch.sensitive.size() != batch.size * c.d_b) throw DimensionError("batch sensitive id count mismatch");
}

Tensor SttmModel::forward(const features::SampleBatch& batch, bool training, ForwardTrace* trace) {
  check_batch(batch);
  const auto& c = config_;
  const auto& p = params_;
  const Tensor x_a = Tensor::from({batch.size, c.m, c.n, c.d_a}, batch.x_a);
  Tensor projected;
  const Tensor o_temporal = encode_temporal(x_a, training, trace != nullptr ? &projected : nullptr);
  const Tensor o_spatial = encode_spatial(o_temporal, batch.rel_x, batch.rel_y, training);
  const Tensor x_b = embed_sensitive(batch.sensitive);

  Tensor head_in;
  MemoryRead read;
  if (c.memory()) {
    read = memory_forward(o_spatial, x_b);
    head_in = nx::concat({o_spatial, read.q, read.alpha});
  } else {
    head_in = nx::concat({o_spatial, x_b});
  }
  Tensor hidden = nx::relu(linear(head_in, p.mlp_w1, p.mlp_b1));
  hidden = nx::dropout(hidden, c.dropout, training, dropout_rng_);
  const Tensor out = nx::reshape(linear(hidden, p.mlp_w2, p.mlp_b2), {batch.size});
  const Tensor y_hat = nx::add_scalar(nx::scale(out, label_scale_), label_mean_);

  if (trace != nullptr) {
    trace->x_a_tilde = projected;
    trace->o_temporal = o_temporal;
    trace->o_spatial = o_spatial;
    trace->x_b_tilde = x_b;
    trace->q = read.q;
    trace->alpha = read.alpha;
    trace->pattern_weights = read.weights;
    trace->y_hat = y_hat;
  }
  return y_hat;
}

std::vector<double> SttmModel::predict(const features::SampleBatch& batch) {
  nx::NoGradGuard guard;
  const Tensor y = forward(batch, false);
  return {y.data().begin(), y.data().end()};
}

double SttmModel::predict(const features::Sample& sample) { return predict(single_batch(sample, config_)).front(); }

features::SampleBatch single_batch(const features::Sample& sample, const SttmConfig& config) {
  if (sample.m != config.m || sample.n != config.n) {
    throw DimensionError("sample has m=" + std::to_string(sample.m) + ", n=" + std::to_string(sample.n) +
                         " but the model expects m=" + std::to_string(config.m) + ", n=" + std::to_string(config.n));
  }
  if (sample.x_a.size() != config.m * config.n * config.d_a) {
    throw DimensionError("sample x_a holds " + std::to_string(sample.x_a.size()) + " values, expected " +
                         std::to_string(config.m * config.n * config.d_a));
  }
  if (sample.coords.size() != config.m) {
    throw DimensionError("sample has " + std::to_string(sample.coords.size()) + " coordinate pairs, expected " +
                         std::to_string(config.m));
  }
  for (const auto& rc : sample.coords) {
    if (rc.x < 0 || rc.x >= 2 * config.nx || rc.y < 0 || rc.y >= 2 * config.ny) {
      throw IndexError("relative coordinate (" + std::to_string(rc.x) + ", " + std::to_string(rc.y) +
                       ") outside the embedding grid");
    }
  }
  features::SampleBatch b;
  b.size = 1;
  b.m = sample.m;
  b.n = sample.n;
  b.x_a = sample.x_a;
  for (const auto& rc : sample.coords) {
    b.rel_x.push_back(rc.x);
    b.rel_y.push_back(rc.y);
  }
  b.sensitive.assign(sample.x_b.begin(), sample.x_b.end());
  b.labels = {sample.label};
  return b;
}

}  // namespace sttm::model
