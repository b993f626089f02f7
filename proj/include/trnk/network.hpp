// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Neural building blocks and the four model families built from them.
//
// Layout conventions: sequences are (time x features) matrices, row vectors
// are 1 x n, and all weights multiply from the right (x * W).

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trnk/checkpoint.hpp"
#include "trnk/frontend.hpp"
#include "trnk/numerics.hpp"

namespace trnk {

enum class Architecture { ctc_attention, rnnt, transformer_transducer, transformer };

std::string to_string(Architecture a);
Architecture parse_architecture(std::string_view s);
bool is_transducer(Architecture a);
bool uses_transformer_encoder(Architecture a);

struct StackSpec {
  std::size_t layers = 1;
  std::size_t units = 32;
  double dropout = 0.0;
};

struct AttentionSpec {
  std::size_t heads = 1;
  std::size_t units = 32;
  double dropout = 0.0;
};

struct ModelConfig {
  Architecture architecture = Architecture::rnnt;
  std::size_t input_dim = 80;
  std::size_t vgg_channels1 = 16;
  std::size_t vgg_channels2 = 32;
  StackSpec encoder;      // BLSTM units per direction, or transformer d_model
  AttentionSpec attention;
  StackSpec decoder;      // predictor, LSTM decoder or transformer decoder
  std::size_t joiner_units = 32;
  std::size_t vocab_size = 0;  // includes blank and start
  double ctc_weight = 0.3;     // multi-task interpolation for attention families

  void validate() const;

  /// Full-size settings for each family.
  static ModelConfig paper(Architecture a, std::size_t input_dim, std::size_t vocab_size);
  /// Small settings used by tests and the synthetic corpus.
  static ModelConfig toy(Architecture a, std::size_t input_dim, std::size_t vocab_size);

  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  /// Overrides fields named in `kv`; unknown keys are an error.
  static ModelConfig from_key_values(const std::map<std::string, std::string>& kv, ModelConfig base);
  static std::vector<std::string> keys();
};

/// Row-wise affine map.
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out; undefined when bias-free

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);
  Tensor forward(const Tensor& x) const;
};

struct LstmCarry {
  Tensor h;  // 1 x H
  Tensor c;  // 1 x H
};

/// Gate order i, f, g, o. c' = f*c + i*g; h' = o * tanh(c').
LstmCarry lstm_cell(const Tensor& input_gates, const LstmCarry& prev, const Tensor& w_h);

struct LstmLayer {
  Tensor w_x;  // in x 4H
  Tensor w_h;  // H x 4H
  Tensor bias;  // 4H
  std::size_t hidden = 0;

  LstmLayer() = default;
  LstmLayer(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  LstmCarry zero_carry() const;
  /// Runs over all rows of x, optionally right-to-left; `w_h_override` swaps
  /// the recurrent matrix (used for weight drop); `initial` replaces the zero
  /// start carry.
  Tensor run(const Tensor& x, bool reverse = false, const Tensor* w_h_override = nullptr,
             LstmCarry* final_carry = nullptr, const LstmCarry* initial = nullptr) const;
  LstmCarry step(const Tensor& x_row, const LstmCarry& prev) const;
};

/// Plain-value recurrent carry for search-time state.
struct RecurrentState {
  std::vector<std::vector<double>> h;
  std::vector<std::vector<double>> c;
};

struct EncoderOutput {
  Tensor states;  // T' x d_enc
  std::size_t subsampling_factor = 4;

  std::size_t frames() const { return states.rows(); }
};

/// Four 3x3 conv layers in two blocks, each block ending in a 2x2 max pool.
struct VggSubsampler {
  std::array<Tensor, 4> weight;
  std::array<Tensor, 4> bias;
  std::size_t input_dim = 0;

  VggSubsampler() = default;
  VggSubsampler(ParameterStore& store, std::size_t input_dim, std::size_t c1, std::size_t c2, Rng& rng);
  std::size_t output_dim() const;
  /// (T x F) -> (ceil(T/4) x c2*ceil(F/4)).
  Tensor forward(const Tensor& features) const;
};

struct BlstmEncoder {
  std::vector<LstmLayer> forward_layers;
  std::vector<LstmLayer> backward_layers;
  double dropout = 0.0;

  BlstmEncoder() = default;
  BlstmEncoder(ParameterStore& store, std::size_t input_dim, const StackSpec& spec, Rng& rng);
  std::size_t output_dim() const { return 2 * forward_layers.front().hidden; }
  Tensor forward(const Tensor& x, bool train, Rng& rng) const;
};

struct AttentionOutput {
  Tensor output;                  // n x d_model
  std::vector<Tensor> weights;    // per head, n x m, rows sum to one
};

/// Bias-free Q/K/V/O projections; `units` is split evenly across heads.
struct MultiHeadAttention {
  Tensor w_q, w_k, w_v, w_o;
  std::size_t heads = 1;
  std::size_t units = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t d_model, std::size_t heads,
                     std::size_t units, Rng& rng);
  /// `mask` (n x m) is added to the scaled scores; use kLogZero to block.
  AttentionOutput forward(const Tensor& query, const Tensor& memory, const Tensor* mask = nullptr) const;
};

struct LayerNorm {
  Tensor gain, bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t d);
  Tensor forward(const Tensor& x) const;
};

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& x, double dropout, bool train, Rng& rng) const;
};

/// (n x d) sinusoidal table.
Tensor sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset = 0);

/// Causal mask: 0 on and below the diagonal, kLogZero above.
Tensor causal_mask(std::size_t n);

/// Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)).
struct TransformerEncoderBlock {
  LayerNorm norm1, norm2;
  MultiHeadAttention attention;
  FeedForward ffn;

  Tensor forward(const Tensor& x, double dropout, bool train, Rng& rng,
                 std::vector<Tensor>* attention_weights = nullptr) const;
};

struct TransformerEncoder {
  Linear input;
  std::vector<TransformerEncoderBlock> blocks;
  LayerNorm final_norm;
  double dropout = 0.0;
  std::size_t d_model = 0;

  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, std::size_t input_dim, const StackSpec& enc,
                     const AttentionSpec& att, Rng& rng);
  Tensor forward(const Tensor& x, bool train, Rng& rng,
                 std::vector<std::vector<Tensor>>* attention_weights = nullptr) const;
};

struct PredictorState {
  RecurrentState carry;
  std::vector<double> g;  // top-layer output
};

/// Label-conditioned LSTM stack; blank is never an input.
struct Predictor {
  Tensor embedding;  // V x units
  std::vector<LstmLayer> layers;
  double dropout = 0.0;
  int blank = 0;

  Predictor() = default;
  Predictor(ParameterStore& store, std::size_t vocab, const StackSpec& spec, Rng& rng);
  std::size_t output_dim() const { return layers.back().hidden; }
  PredictorState zero_state() const;
  PredictorState step(const PredictorState& state, int label) const;
  /// Inputs [start, y_1..y_U] -> (U+1) x units.
  Tensor sequence(int start, std::span<const int> labels, bool train, Rng& rng) const;
};

/// z = W_out * tanh(W_enc h + W_pred g + b).
struct Joiner {
  Tensor w_enc;   // d_enc x J
  Tensor w_pred;  // P x J
  Tensor bias;    // J
  Tensor w_out;   // J x V

  Joiner() = default;
  Joiner(ParameterStore& store, std::size_t d_enc, std::size_t d_pred, std::size_t hidden, std::size_t vocab,
         Rng& rng);
  /// T' x (U+1) nodes flattened as t*(U+1)+u -> logits.
  Tensor lattice(const Tensor& enc, const Tensor& pred) const;
  /// One (h_t, g_u) pair -> 1 x V logits.
  Tensor score(const Tensor& h, const Tensor& g) const;
  /// Search fast path over pre-projected rows; returns log-probabilities.
  std::vector<double> log_probs(std::span<const double> enc_proj, std::span<const double> pred_proj) const;
  std::vector<double> project_predictor(std::span<const double> g) const;
};

struct AttentionDecoderState {
  RecurrentState carry;
  std::vector<int> prefix;
};

/// Additive single-head attention feeding an LSTM decoder.
struct AttentionDecoder {
  Tensor embedding;  // V x units
  Tensor w_att_enc;  // d_enc x A
  Tensor w_att_dec;  // H x A
  Tensor att_bias;   // A
  Tensor att_v;      // A x 1
  std::vector<LstmLayer> layers;
  Linear output;     // (H + d_enc) -> V
  double dropout = 0.0;

  AttentionDecoder() = default;
  AttentionDecoder(ParameterStore& store, std::size_t vocab, std::size_t d_enc, const AttentionSpec& att,
                   const StackSpec& dec, Rng& rng);

  struct Memory {
    Tensor enc;
    Tensor enc_proj;  // enc * w_att_enc
  };
  Memory prepare(const Tensor& enc) const;
  /// Attention weights (T' x 1) and context (1 x d_enc) for a query state.
  std::pair<Tensor, Tensor> attend(const Memory& mem, const Tensor& query) const;

  struct StepResult {
    Tensor logits;     // 1 x V
    Tensor weights;    // T' x 1
    std::vector<LstmCarry> carry;
  };
  StepResult step(const Memory& mem, const std::vector<LstmCarry>& carry, int y_prev, bool train,
                  Rng& rng) const;
  std::vector<LstmCarry> zero_carry() const;
};

struct TransformerDecoderBlock {
  LayerNorm norm1, norm2, norm3;
  MultiHeadAttention self_attention, cross_attention;
  FeedForward ffn;
};

struct TransformerDecoder {
  Tensor embedding;  // V x d
  std::optional<Linear> bridge;  // encoder width -> d, when they differ
  std::vector<TransformerDecoderBlock> blocks;
  LayerNorm final_norm;
  Linear output;
  double dropout = 0.0;
  std::size_t d_model = 0;

  TransformerDecoder() = default;
  TransformerDecoder(ParameterStore& store, std::size_t vocab, std::size_t d_enc, const AttentionSpec& att,
                     const StackSpec& dec, Rng& rng);
  /// Inputs [start, prefix...] -> one row of logits per input.
  Tensor forward(const Tensor& enc, std::span<const int> inputs, bool train, Rng& rng) const;
};

/// A complete model of one family. Copies share parameter storage.
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  int blank_id() const { return 0; }
  int start_id() const { return static_cast<int>(config_.vocab_size) - 1; }
  /// Attention families close hypotheses with the blank index.
  int end_id() const { return 0; }

  EncoderOutput encode(const Tensor& features, bool train, Rng& rng) const;
  EncoderOutput encode(const FeatureMatrix& features) const;

  // Transducer families.
  PredictorState predictor_initial_state() const;
  PredictorState predictor_step(const PredictorState& state, int label) const;
  Tensor transducer_logits(const EncoderOutput& enc, std::span<const int> labels, bool train, Rng& rng) const;

  // Attention families.
  Tensor ctc_logits(const EncoderOutput& enc) const;
  Tensor decoder_logits(const EncoderOutput& enc, std::span<const int> labels, bool train, Rng& rng) const;

  /// Training objective for one utterance (scalar).
  Tensor loss(const Tensor& features, std::span<const int> labels, bool train, Rng& rng) const;

  Checkpoint to_checkpoint(const std::vector<std::pair<std::string, std::string>>& extra_header = {}) const;
  static Model from_checkpoint(const Checkpoint& ckpt);

  VggSubsampler vgg;
  std::optional<BlstmEncoder> blstm;
  std::optional<TransformerEncoder> transformer;
  std::optional<Predictor> predictor;
  std::optional<Joiner> joiner;
  std::optional<Linear> ctc_head;
  std::optional<AttentionDecoder> attention_decoder;
  std::optional<TransformerDecoder> transformer_decoder;

 private:
  ModelConfig config_;
  ParameterStore params_;
};

}  // namespace trnk
