#pragma once

// Spatio-temporal transformer with a memory network for per-district pressure
// forecasting.
//
// Per district, N slices of 31 features are projected to H, summed with a
// temporal position embedding and encoded by a transformer; the most recent
// slice is the district summary. The M district summaries plus spatial
// position embeddings go through a second transformer whose center token is
// the spatio-temporal summary. Sensitive ids are embedded and projected, then
// query a learned pattern memory. An MLP maps [summary, query, memory read]
// to the forecast in minutes.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sttm/dataset.hpp"
#include "sttm/numerics.hpp"

namespace sttm::model {

using numerics::Tensor;

enum class Variant {
  kFull,
  kNoTemporalPosition,
  kNoSpatialPosition,
  kNoTemporalTransformer,
  kNoSpatialTransformer,
  kNoMemory,
};

inline constexpr std::array<Variant, 6> kAllVariants{
    Variant::kFull,
    Variant::kNoTemporalPosition,
    Variant::kNoSpatialPosition,
    Variant::kNoTemporalTransformer,
    Variant::kNoSpatialTransformer,
    Variant::kNoMemory,
};

std::string_view to_string(Variant v);
// Accepts the names produced by to_string; throws ConfigError otherwise.
Variant parse_variant(std::string_view name);

struct SttmConfig {
  std::size_t m = 10;
  std::size_t n = 6;
  std::size_t d_a = 31;
  std::size_t d_b = 6;
  int nx = 10;
  int ny = 10;
  std::size_t hidden = 256;         // H
  std::size_t layers = 1;           // L
  std::size_t embed = 8;            // E
  std::size_t mem_hidden = 256;     // H'
  std::size_t mem_patterns = 12;    // L_mem
  std::size_t mem_dim = 64;         // D_mem
  std::size_t heads = 4;
  std::size_t ffn = 0;              // 0 selects 4 * hidden
  double dropout = 0.1;
  std::size_t mlp_hidden = 256;
  std::array<std::size_t, 6> vocab{2, 31, 1441, 6, 8, 4};
  Variant variant = Variant::kFull;

  std::size_t ffn_dim() const { return ffn == 0 ? 4 * hidden : ffn; }
  bool temporal_position() const { return variant != Variant::kNoTemporalPosition; }
  bool spatial_position() const { return variant != Variant::kNoSpatialPosition; }
  bool temporal_transformer() const { return variant != Variant::kNoTemporalTransformer; }
  bool spatial_transformer() const { return variant != Variant::kNoSpatialTransformer; }
  bool memory() const { return variant != Variant::kNoMemory; }

  // Throws ConfigError naming the field.
  void validate() const;
  std::uint64_t hash() const;
  friend bool operator==(const SttmConfig&, const SttmConfig&) = default;
};

// Closed-form parameter count.
std::size_t parameter_count(const SttmConfig& config);

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor w1, b1, w2, b2;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// Undefined tensors mark components removed by the variant.
struct SttmParams {
  Tensor w_tpe;    // [N, H]
  Tensor w_spe_x;  // [2 N_x, H]
  Tensor w_spe_y;  // [2 N_y, H]
  Tensor w_xa;     // [D_A, H]
  std::vector<EncoderLayerParams> temporal;
  std::vector<EncoderLayerParams> spatial;
  std::array<Tensor, 6> sensitive;  // [vocab_i, E]
  Tensor w_xb;     // [D_B E, H']
  Tensor w_q;      // [H + H', D_mem]
  Tensor b_q;      // [D_mem]
  Tensor w_mem;    // [L_mem, D_mem]
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ForwardTrace {
  Tensor x_a_tilde;        // [B, M, N, H]
  Tensor o_temporal;       // [B, M, H]
  Tensor o_spatial;        // [B, H]
  Tensor x_b_tilde;        // [B, H']
  Tensor q;                // [B, D_mem]
  Tensor alpha;            // [B, D_mem]
  Tensor pattern_weights;  // [B, L_mem]
  Tensor y_hat;            // [B]
};

struct MemoryRead {
  Tensor q;
  Tensor alpha;
  Tensor weights;
};

using NamedTensor = std::pair<std::string, Tensor>;

class SttmModel {
 public:
  SttmModel(SttmConfig config, std::uint64_t seed);

  const SttmConfig& config() const noexcept { return config_; }
  SttmParams& params() noexcept { return params_; }
  const SttmParams& params() const noexcept { return params_; }
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  // Output affine: forecast = label_mean + label_scale * head output.
  void set_label_affine(double label_mean, double label_scale);
  double label_mean() const noexcept { return label_mean_; }
  double label_scale() const noexcept { return label_scale_; }

  void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

  // Building blocks. Batched tensors lead with the batch axis B.
  Tensor temporal_position_embedding(std::size_t slice) const;
  Tensor spatial_position_embedding(std::int64_t x, std::int64_t y) const;
  // x_a: [B, M, N, D_A] -> [B, M, H]
  Tensor encode_temporal(const Tensor& x_a, bool training, Tensor* projected = nullptr);
  // o_temporal: [B, M, H], coords: [B * M] -> [B, H]
  Tensor encode_spatial(const Tensor& o_temporal, std::span<const std::int64_t> rel_x,
                        std::span<const std::int64_t> rel_y, bool training);
  // ids: [B * 6] -> [B, H']
  Tensor embed_sensitive(std::span<const std::int64_t> ids) const;
  MemoryRead memory_forward(const Tensor& o_spatial, const Tensor& x_b_tilde) const;

  // Forecasts in minutes, shape [B].
  Tensor forward(const features::SampleBatch& batch, bool training, ForwardTrace* trace = nullptr);
  std::vector<double> predict(const features::SampleBatch& batch);
  double predict(const features::Sample& sample);

 private:
  Tensor encoder_stack(const std::vector<EncoderLayerParams>& layers, Tensor x, std::size_t readout, bool training);
  Tensor encoder_layer(const EncoderLayerParams& p, const Tensor& x, const Tensor& queries, bool training);
  void check_batch(const features::SampleBatch& batch) const;

  SttmConfig config_;
  SttmParams params_;
  double label_mean_ = 0.0;
  double label_scale_ = 1.0;
  std::mt19937_64 dropout_rng_;
};

// A sample converted to a one-element batch; throws on shape or range violations.
features::SampleBatch single_batch(const features::Sample& sample, const SttmConfig& config);

struct CheckpointInfo {
  SttmConfig config;
  std::uint64_t feature_order_hash = 0;
  std::uint64_t dataset_fingerprint = 0;
  std::uint64_t seed = 0;
  double label_mean = 0.0;
  double label_scale = 1.0;
};

void save_checkpoint(const std::string& path, const SttmModel& model, std::uint64_t dataset_fingerprint,
                     std::uint64_t seed);
CheckpointInfo read_checkpoint_info(const std::string& path);
// Rebuilds the model stored at path; throws CompatibilityError when expected_dataset is
// non-zero and differs from the stored dataset fingerprint.
SttmModel load_checkpoint(const std::string& path, std::uint64_t expected_dataset = 0,
                          CheckpointInfo* info = nullptr);
// Hash of the stored configuration and parameter values.
std::uint64_t parameter_fingerprint(const SttmModel& model);

}  // namespace sttm::model
