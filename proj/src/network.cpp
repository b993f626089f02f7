// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "trnk/keyvalue.hpp"
#include "trnk/losses.hpp"

namespace trnk {

namespace {

constexpr std::size_t kFfnRatio = 4;

// Uniform in +-gain/sqrt(fan_in).
Tensor create_scaled(ParameterStore& store, const std::string& name, Shape shape, std::size_t fan_in, Rng& rng,
                     double gain = 1.0) {
  const double b = gain / std::sqrt(static_cast<double>(fan_in));
  return store.create(name, std::move(shape), rng, -b, b);
}

// He-uniform gain for layers followed by ReLU.
const double kReluGain = std::sqrt(6.0);

Tensor row_tensor(std::span<const double> v) { return Tensor::from({1, v.size()}, {v.begin(), v.end()}); }


}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::ctc_attention: return "ctc_attention";
    case Architecture::rnnt: return "rnnt";
    case Architecture::transformer_transducer: return "transformer_transducer";
    case Architecture::transformer: return "transformer";
  }
  return "?";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "ctc_attention" || s == "ctc-attention") return Architecture::ctc_attention;
  if (s == "rnnt" || s == "rnn-t") return Architecture::rnnt;
  if (s == "transformer_transducer" || s == "t-t" || s == "tt") return Architecture::transformer_transducer;
  if (s == "transformer") return Architecture::transformer;
  throw std::invalid_argument("unknown architecture '" + std::string(s) + "'");
}

bool is_transducer(Architecture a) {
  return a == Architecture::rnnt || a == Architecture::transformer_transducer;
}

bool uses_transformer_encoder(Architecture a) {
  return a == Architecture::transformer_transducer || a == Architecture::transformer;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  auto rate = [](double p, const char* what) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(std::string(what) + " must be in [0, 1)");
  };
  positive(input_dim, "input_dim");
  positive(vgg_channels1, "vgg.channels1");
  positive(vgg_channels2, "vgg.channels2");
  positive(encoder.layers, "encoder.layers");
  positive(encoder.units, "encoder.units");
  positive(decoder.layers, "decoder.layers");
  positive(decoder.units, "decoder.units");
  positive(attention.heads, "attention.heads");
  positive(attention.units, "attention.units");
  positive(joiner_units, "joiner.units");
  rate(encoder.dropout, "encoder.dropout");
  rate(decoder.dropout, "decoder.dropout");
  rate(attention.dropout, "attention.dropout");
  if (vocab_size < 3) throw std::invalid_argument("vocab_size must cover blank, start and one unit");
  if (attention.units % attention.heads != 0) {
    throw std::invalid_argument("attention.units must be divisible by attention.heads");
  }
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw std::invalid_argument("ctc_weight must be in [0, 1]");
}

ModelConfig ModelConfig::paper(Architecture a, std::size_t input_dim, std::size_t vocab_size) {
  ModelConfig c;
  c.architecture = a;
  c.input_dim = input_dim;
  c.vocab_size = vocab_size;
  c.vgg_channels1 = 64;
  c.vgg_channels2 = 128;
  c.joiner_units = 256;
  switch (a) {
    case Architecture::ctc_attention:
      c.encoder = {6, 512, 0.4};
      c.attention = {1, 256, 0.4};
      c.decoder = {2, 256, 0.4};
      break;
    case Architecture::rnnt:
      c.encoder = {6, 512, 0.4};
      c.decoder = {2, 256, 0.4};
      break;
    case Architecture::transformer_transducer:
      c.encoder = {12, 1024, 0.4};
      c.attention = {8, 512, 0.4};
      c.decoder = {2, 256, 0.4};
      break;
    case Architecture::transformer:
      c.encoder = {12, 1024, 0.5};
      c.attention = {4, 256, 0.5};
      c.decoder = {2, 1024, 0.5};
      break;
  }
  return c;
}

ModelConfig ModelConfig::toy(Architecture a, std::size_t input_dim, std::size_t vocab_size) {
  ModelConfig c;
  c.architecture = a;
  c.input_dim = input_dim;
  c.vocab_size = vocab_size;
  c.joiner_units = 32;
  switch (a) {
    case Architecture::ctc_attention:
      c.encoder = {2, 64, 0.0};
      c.attention = {1, 32, 0.0};
      c.decoder = {1, 32, 0.0};
      break;
    case Architecture::rnnt:
      c.encoder = {2, 64, 0.0};
      c.decoder = {1, 32, 0.0};
      break;
    case Architecture::transformer_transducer:
      c.encoder = {2, 64, 0.0};
      c.attention = {4, 64, 0.0};
      c.decoder = {1, 32, 0.0};
      break;
    case Architecture::transformer:
      c.encoder = {2, 64, 0.0};
      c.attention = {4, 64, 0.0};
      c.decoder = {1, 64, 0.0};
      break;
  }
  return c;
}

std::vector<std::string> ModelConfig::keys() {
  std::vector<std::string> k;
  for (const auto& kv : ModelConfig{}.to_key_values()) k.push_back(kv.first);
  return k;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_key_values() const {
  return {
      {"architecture", to_string(architecture)},
      {"input_dim", std::to_string(input_dim)},
      {"vgg.channels1", std::to_string(vgg_channels1)},
      {"vgg.channels2", std::to_string(vgg_channels2)},
      {"encoder.layers", std::to_string(encoder.layers)},
      {"encoder.units", std::to_string(encoder.units)},
      {"encoder.dropout", format_real(encoder.dropout)},
      {"attention.heads", std::to_string(attention.heads)},
      {"attention.units", std::to_string(attention.units)},
      {"attention.dropout", format_real(attention.dropout)},
      {"decoder.layers", std::to_string(decoder.layers)},
      {"decoder.units", std::to_string(decoder.units)},
      {"decoder.dropout", format_real(decoder.dropout)},
      {"joiner.units", std::to_string(joiner_units)},
      {"vocab_size", std::to_string(vocab_size)},
      {"ctc_weight", format_real(ctc_weight)},
  };
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv, ModelConfig c) {
  for (const auto& [k, v] : kv) {
    if (k == "architecture") c.architecture = parse_architecture(v);
    else if (k == "input_dim") c.input_dim = parse_size(k, v);
    else if (k == "vgg.channels1") c.vgg_channels1 = parse_size(k, v);
    else if (k == "vgg.channels2") c.vgg_channels2 = parse_size(k, v);
    else if (k == "encoder.layers") c.encoder.layers = parse_size(k, v);
    else if (k == "encoder.units") c.encoder.units = parse_size(k, v);
    else if (k == "encoder.dropout") c.encoder.dropout = parse_real(k, v);
    else if (k == "attention.heads") c.attention.heads = parse_size(k, v);
    else if (k == "attention.units") c.attention.units = parse_size(k, v);
    else if (k == "attention.dropout") c.attention.dropout = parse_real(k, v);
    else if (k == "decoder.layers") c.decoder.layers = parse_size(k, v);
    else if (k == "decoder.units") c.decoder.units = parse_size(k, v);
    else if (k == "decoder.dropout") c.decoder.dropout = parse_real(k, v);
    else if (k == "joiner.units") c.joiner_units = parse_size(k, v);
    else if (k == "vocab_size") c.vocab_size = parse_size(k, v);
    else if (k == "ctc_weight") c.ctc_weight = parse_real(k, v);
    else throw std::invalid_argument("unknown model key '" + k + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Basic layers

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias) {
  weight = create_scaled(store, name + ".weight", {in, out}, in, rng);
  if (with_bias) bias = create_scaled(store, name + ".bias", {out}, in, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

LstmCarry lstm_cell(const Tensor& input_gates, const LstmCarry& prev, const Tensor& w_h) {
  const std::size_t H = w_h.rows();
  Tensor g = add(input_gates, matmul(prev.h, w_h));
  Tensor i = sigmoid(slice_cols(g, 0, H));
  Tensor f = sigmoid(slice_cols(g, H, 2 * H));
  Tensor cand = tanh(slice_cols(g, 2 * H, 3 * H));
  Tensor o = sigmoid(slice_cols(g, 3 * H, 4 * H));
  Tensor c = add(mul(f, prev.c), mul(i, cand));
  return {mul(o, tanh(c)), c};
}

LstmLayer::LstmLayer(ParameterStore& store, const std::string& name, std::size_t in, std::size_t h, Rng& rng)
    : hidden(h) {
  w_x = create_scaled(store, name + ".w_x", {in, 4 * h}, h, rng);
  w_h = create_scaled(store, name + ".w_h", {h, 4 * h}, h, rng);
  bias = create_scaled(store, name + ".bias", {4 * h}, h, rng);
}

LstmCarry LstmLayer::zero_carry() const { return {Tensor::zeros({1, hidden}), Tensor::zeros({1, hidden})}; }

Tensor LstmLayer::run(const Tensor& x, bool reverse, const Tensor* w_h_override, LstmCarry* final_carry,
                      const LstmCarry* initial) const {
  const Tensor& wh = w_h_override ? *w_h_override : w_h;
  const Tensor gates = add_bias(matmul(x, w_x), bias);
  const std::size_t T = x.rows();
  std::vector<Tensor> out(T);
  LstmCarry s = initial ? *initial : zero_carry();
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = reverse ? T - 1 - k : k;
    s = lstm_cell(slice_rows(gates, t, t + 1), s, wh);
    out[t] = s.h;
  }
  if (final_carry) *final_carry = s;
  return concat_rows(out);
}

LstmCarry LstmLayer::step(const Tensor& x_row, const LstmCarry& prev) const {
  return lstm_cell(add_bias(matmul(x_row, w_x), bias), prev, w_h);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t d) {
  gain = store.add(name + ".gain", Tensor::full({d}, 1.0));
  bias = store.add(name + ".bias", Tensor::zeros({d}));
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t d, std::size_t hidden,
                         Rng& rng)
    : in(store, name + ".in", d, hidden, rng), out(store, name + ".out", hidden, d, rng) {}

Tensor FeedForward::forward(const Tensor& x, double p, bool train, Rng& rng) const {
  return out.forward(dropout(relu(in.forward(x)), p, train, rng));
}

// ---------------------------------------------------------------------------
// Encoders

VggSubsampler::VggSubsampler(ParameterStore& store, std::size_t in_dim, std::size_t c1, std::size_t c2, Rng& rng)
    : input_dim(in_dim) {
  const std::size_t ins[4] = {1, c1, c1, c2};
  const std::size_t outs[4] = {c1, c1, c2, c2};
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string name = "vgg.conv" + std::to_string(l);
    weight[l] = create_scaled(store, name + ".weight", {outs[l], ins[l], 3, 3}, ins[l] * 9, rng, kReluGain);
    bias[l] = create_scaled(store, name + ".bias", {outs[l]}, ins[l] * 9, rng);
  }
}

std::size_t VggSubsampler::output_dim() const {
  return weight[3].dim(0) * ((((input_dim + 1) / 2) + 1) / 2);
}

Tensor VggSubsampler::forward(const Tensor& features) const {
  if (features.ndim() != 2 || features.cols() != input_dim) {
    throw ShapeError("vgg: expected T x " + std::to_string(input_dim) + " features, got " +
                     shape_string(features.shape()));
  }
  if (features.rows() < 4) throw ShapeError("vgg: need at least 4 frames");
  Tensor x = reshape(features, {1, features.rows(), features.cols()});
  x = relu(conv2d(x, weight[0], bias[0]));
  x = max_pool2x2(relu(conv2d(x, weight[1], bias[1])));
  x = relu(conv2d(x, weight[2], bias[2]));
  x = max_pool2x2(relu(conv2d(x, weight[3], bias[3])));
  return channels_to_frames(x);
}

BlstmEncoder::BlstmEncoder(ParameterStore& store, std::size_t input_dim, const StackSpec& spec, Rng& rng)
    : dropout(spec.dropout) {
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::size_t in = l == 0 ? input_dim : 2 * spec.units;
    const std::string name = "blstm." + std::to_string(l);
    forward_layers.emplace_back(store, name + ".fwd", in, spec.units, rng);
    backward_layers.emplace_back(store, name + ".bwd", in, spec.units, rng);
  }
}

Tensor BlstmEncoder::forward(const Tensor& x, bool train, Rng& rng) const {
  Tensor h = x;
  for (std::size_t l = 0; l < forward_layers.size(); ++l) {
    if (l > 0) h = trnk::dropout(h, dropout, train, rng);
    const Tensor parts[2] = {forward_layers[l].run(h, false), backward_layers[l].run(h, true)};
    h = concat_cols(parts);
  }
  return h;
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t d_model,
                                       std::size_t n_heads, std::size_t n_units, Rng& rng)
    : heads(n_heads), units(n_units) {
  if (n_units % n_heads != 0) throw std::invalid_argument("attention units not divisible by heads");
  w_q = create_scaled(store, name + ".w_q", {d_model, n_units}, d_model, rng);
  w_k = create_scaled(store, name + ".w_k", {d_model, n_units}, d_model, rng);
  w_v = create_scaled(store, name + ".w_v", {d_model, n_units}, d_model, rng);
  w_o = create_scaled(store, name + ".w_o", {n_units, d_model}, n_units, rng);
}

AttentionOutput MultiHeadAttention::forward(const Tensor& query, const Tensor& memory, const Tensor* mask) const {
  const Tensor q = matmul(query, w_q), k = matmul(memory, w_k), v = matmul(memory, w_v);
  const std::size_t dk = units / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  AttentionOutput out;
  std::vector<Tensor> ctx(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * dk, e = b + dk;
    Tensor scores = scale(matmul(slice_cols(q, b, e), transpose(slice_cols(k, b, e))), inv);
    if (mask) scores = add(scores, *mask);
    Tensor w = softmax(scores, 1);
    ctx[h] = matmul(w, slice_cols(v, b, e));
    out.weights.push_back(w);
  }
  out.output = matmul(concat_cols(ctx), w_o);
  return out;
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset) {
  std::vector<double> v(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double a = static_cast<double>(p + offset) / rate;
      v[p * d + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor::from({n, d}, std::move(v));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = kLogZero;
  return Tensor::from({n, n}, std::move(v));
}

Tensor TransformerEncoderBlock::forward(const Tensor& x, double p, bool train, Rng& rng,
                                        std::vector<Tensor>* attention_weights) const {
  const Tensor n1 = norm1.forward(x);
  AttentionOutput a = attention.forward(n1, n1);
  if (attention_weights) *attention_weights = a.weights;
  const Tensor h = add(x, dropout(a.output, p, train, rng));
  return add(h, dropout(ffn.forward(norm2.forward(h), p, train, rng), p, train, rng));
}

TransformerEncoder::TransformerEncoder(ParameterStore& store, std::size_t input_dim, const StackSpec& enc,
                                       const AttentionSpec& att, Rng& rng)
    : input(store, "tenc.input", input_dim, enc.units, rng), dropout(enc.dropout), d_model(enc.units) {
  for (std::size_t l = 0; l < enc.layers; ++l) {
    const std::string name = "tenc." + std::to_string(l);
    TransformerEncoderBlock b;
    b.norm1 = LayerNorm(store, name + ".norm1", d_model);
    b.attention = MultiHeadAttention(store, name + ".mha", d_model, att.heads, att.units, rng);
    b.norm2 = LayerNorm(store, name + ".norm2", d_model);
    b.ffn = FeedForward(store, name + ".ffn", d_model, kFfnRatio * d_model, rng);
    blocks.push_back(std::move(b));
  }
  final_norm = LayerNorm(store, "tenc.final_norm", d_model);
}

Tensor TransformerEncoder::forward(const Tensor& x, bool train, Rng& rng,
                                   std::vector<std::vector<Tensor>>* attention_weights) const {
  Tensor h = add(input.forward(x), sinusoidal_positions(x.rows(), d_model));
  h = trnk::dropout(h, dropout, train, rng);
  if (attention_weights) attention_weights->assign(blocks.size(), {});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    h = blocks[l].forward(h, dropout, train, rng, attention_weights ? &(*attention_weights)[l] : nullptr);
  }
  return final_norm.forward(h);
}

// ---------------------------------------------------------------------------
// Transducer pieces

Predictor::Predictor(ParameterStore& store, std::size_t vocab, const StackSpec& spec, Rng& rng)
    : dropout(spec.dropout) {
  embedding = store.create("pred.embedding", {vocab, spec.units}, rng);
  for (std::size_t l = 0; l < spec.layers; ++l) {
    layers.emplace_back(store, "pred.lstm" + std::to_string(l), spec.units, spec.units, rng);
  }
}

PredictorState Predictor::zero_state() const {
  PredictorState s;
  const std::size_t H = layers.front().hidden;
  s.carry.h.assign(layers.size(), std::vector<double>(H, 0.0));
  s.carry.c.assign(layers.size(), std::vector<double>(H, 0.0));
  s.g.assign(layers.back().hidden, 0.0);
  return s;
}

PredictorState Predictor::step(const PredictorState& state, int label) const {
  if (label == blank) throw std::invalid_argument("predictor_step: blank is not a predictor input");
  if (label < 0 || static_cast<std::size_t>(label) >= embedding.rows()) {
    throw std::out_of_range("predictor_step: label out of range");
  }
  NoGradGuard guard;
  const int ids[1] = {label};
  Tensor x = gather_rows(embedding, ids);
  PredictorState next;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LstmCarry prev{row_tensor(state.carry.h[l]), row_tensor(state.carry.c[l])};
    const LstmCarry s = layers[l].step(x, prev);
    next.carry.h.push_back(s.h.to_vector());
    next.carry.c.push_back(s.c.to_vector());
    x = s.h;
  }
  next.g = x.to_vector();
  return next;
}

Tensor Predictor::sequence(int start, std::span<const int> labels, bool train, Rng& rng) const {
  std::vector<int> ids{start};
  for (int y : labels) {
    if (y == blank) throw std::invalid_argument("predictor: blank in label sequence");
    ids.push_back(y);
  }
  Tensor x = gather_rows(embedding, ids);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = layers[l].run(trnk::dropout(x, dropout, train, rng));
  }
  return x;
}

Joiner::Joiner(ParameterStore& store, std::size_t d_enc, std::size_t d_pred, std::size_t hidden,
               std::size_t vocab, Rng& rng) {
  w_enc = create_scaled(store, "joiner.w_enc", {d_enc, hidden}, d_enc, rng);
  w_pred = create_scaled(store, "joiner.w_pred", {d_pred, hidden}, d_pred, rng);
  bias = create_scaled(store, "joiner.bias", {hidden}, d_enc + d_pred, rng);
  w_out = create_scaled(store, "joiner.w_out", {hidden, vocab}, hidden, rng);
}

Tensor Joiner::lattice(const Tensor& enc, const Tensor& pred) const {
  return matmul(tanh(add_bias(pair_add(matmul(enc, w_enc), matmul(pred, w_pred)), bias)), w_out);
}

Tensor Joiner::score(const Tensor& h, const Tensor& g) const {
  if (h.size() != w_enc.rows() || g.size() != w_pred.rows()) throw ShapeError("joiner: input width mismatch");
  return lattice(reshape(h, {1, h.size()}), reshape(g, {1, g.size()}));
}

std::vector<double> Joiner::project_predictor(std::span<const double> g) const {
  const std::size_t P = w_pred.rows(), J = w_pred.cols();
  if (g.size() != P) throw ShapeError("joiner: predictor width mismatch");
  auto w = w_pred.data();
  auto b = bias.data();
  std::vector<double> out(b.begin(), b.end());
  for (std::size_t p = 0; p < P; ++p) {
    if (g[p] == 0.0) continue;
    for (std::size_t j = 0; j < J; ++j) out[j] += g[p] * w[p * J + j];
  }
  return out;
}

std::vector<double> Joiner::log_probs(std::span<const double> enc_proj, std::span<const double> pred_proj) const {
  const std::size_t J = w_out.rows(), V = w_out.cols();
  if (enc_proj.size() != J || pred_proj.size() != J) throw ShapeError("joiner: projection width mismatch");
  auto w = w_out.data();
  std::vector<double> z(V, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const double a = std::tanh(enc_proj[j] + pred_proj[j]);
    for (std::size_t v = 0; v < V; ++v) z[v] += a * w[j * V + v];
  }
  const double lse = log_sum_exp(z);
  for (double& v : z) v -= lse;
  return z;
}

// ---------------------------------------------------------------------------
// Attention decoders

AttentionDecoder::AttentionDecoder(ParameterStore& store, std::size_t vocab, std::size_t d_enc,
                                   const AttentionSpec& att, const StackSpec& dec, Rng& rng)
    : dropout(dec.dropout) {
  embedding = store.create("adec.embedding", {vocab, dec.units}, rng);
  w_att_enc = create_scaled(store, "adec.att.w_enc", {d_enc, att.units}, d_enc, rng);
  w_att_dec = create_scaled(store, "adec.att.w_dec", {dec.units, att.units}, dec.units, rng);
  att_bias = store.create("adec.att.bias", {att.units}, rng);
  att_v = create_scaled(store, "adec.att.v", {att.units, 1}, att.units, rng);
  for (std::size_t l = 0; l < dec.layers; ++l) {
    const std::size_t in = l == 0 ? dec.units + d_enc : dec.units;
    layers.emplace_back(store, "adec.lstm" + std::to_string(l), in, dec.units, rng);
  }
  output = Linear(store, "adec.output", dec.units + d_enc, vocab, rng);
}

AttentionDecoder::Memory AttentionDecoder::prepare(const Tensor& enc) const {
  if (enc.rows() == 0) throw ShapeError("attention decoder: empty encoder output");
  return {enc, matmul(enc, w_att_enc)};
}

std::pair<Tensor, Tensor> AttentionDecoder::attend(const Memory& mem, const Tensor& query) const {
  const Tensor q = add_bias(matmul(query, w_att_dec), att_bias);  // 1 x A
  const Tensor q_rows = pair_add(mem.enc_proj, q);                 // T' x A
  const Tensor e = matmul(tanh(q_rows), att_v);                    // T' x 1
  const Tensor w = softmax(e, 0);
  return {w, matmul(transpose(w), mem.enc)};
}

std::vector<LstmCarry> AttentionDecoder::zero_carry() const {
  std::vector<LstmCarry> c;
  for (const auto& l : layers) c.push_back(l.zero_carry());
  return c;
}

AttentionDecoder::StepResult AttentionDecoder::step(const Memory& mem, const std::vector<LstmCarry>& carry,
                                                    int y_prev, bool train, Rng& rng) const {
  auto [weights, context] = attend(mem, carry.back().h);
  const int ids[1] = {y_prev};
  const Tensor in_parts[2] = {trnk::dropout(gather_rows(embedding, ids), this->dropout, train, rng), context};
  Tensor x = concat_cols(in_parts);
  StepResult r;
  r.weights = weights;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) x = trnk::dropout(x, this->dropout, train, rng);
    LstmCarry s = layers[l].step(x, carry[l]);
    x = s.h;
    r.carry.push_back(s);
  }
  const Tensor out_parts[2] = {trnk::dropout(x, this->dropout, train, rng), context};
  r.logits = output.forward(concat_cols(out_parts));
  return r;
}

TransformerDecoder::TransformerDecoder(ParameterStore& store, std::size_t vocab, std::size_t d_enc,
                                       const AttentionSpec& att, const StackSpec& dec, Rng& rng)
    : dropout(dec.dropout), d_model(dec.units) {
  embedding = store.create("tdec.embedding", {vocab, d_model}, rng);
  if (d_enc != d_model) bridge = Linear(store, "tdec.bridge", d_enc, d_model, rng);
  for (std::size_t l = 0; l < dec.layers; ++l) {
    const std::string name = "tdec." + std::to_string(l);
    TransformerDecoderBlock b;
    b.norm1 = LayerNorm(store, name + ".norm1", d_model);
    b.self_attention = MultiHeadAttention(store, name + ".self", d_model, att.heads, att.units, rng);
    b.norm2 = LayerNorm(store, name + ".norm2", d_model);
    b.cross_attention = MultiHeadAttention(store, name + ".cross", d_model, att.heads, att.units, rng);
    b.norm3 = LayerNorm(store, name + ".norm3", d_model);
    b.ffn = FeedForward(store, name + ".ffn", d_model, kFfnRatio * d_model, rng);
    blocks.push_back(std::move(b));
  }
  final_norm = LayerNorm(store, "tdec.final_norm", d_model);
  output = Linear(store, "tdec.output", d_model, vocab, rng);
}

Tensor TransformerDecoder::forward(const Tensor& enc, std::span<const int> inputs, bool train, Rng& rng) const {
  const Tensor memory = bridge ? bridge->forward(enc) : enc;
  const std::size_t n = inputs.size();
  Tensor x = add(gather_rows(embedding, inputs), sinusoidal_positions(n, d_model));
  x = trnk::dropout(x, dropout, train, rng);
  const Tensor mask = causal_mask(n);
  for (const auto& b : blocks) {
    const Tensor n1 = b.norm1.forward(x);
    x = add(x, trnk::dropout(b.self_attention.forward(n1, n1, &mask).output, dropout, train, rng));
    x = add(x, trnk::dropout(b.cross_attention.forward(b.norm2.forward(x), memory).output, dropout, train, rng));
    x = add(x, trnk::dropout(b.ffn.forward(b.norm3.forward(x), dropout, train, rng), dropout, train, rng));
  }
  return output.forward(final_norm.forward(x));
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  vgg = VggSubsampler(params_, c.input_dim, c.vgg_channels1, c.vgg_channels2, rng);
  std::size_t d_enc = 0;
  if (uses_transformer_encoder(c.architecture)) {
    transformer = TransformerEncoder(params_, vgg.output_dim(), c.encoder, c.attention, rng);
    d_enc = transformer->d_model;
  } else {
    blstm = BlstmEncoder(params_, vgg.output_dim(), c.encoder, rng);
    d_enc = blstm->output_dim();
  }
  if (is_transducer(c.architecture)) {
    predictor = Predictor(params_, c.vocab_size, c.decoder, rng);
    joiner = Joiner(params_, d_enc, predictor->output_dim(), c.joiner_units, c.vocab_size, rng);
  } else {
    ctc_head = Linear(params_, "ctc", d_enc, c.vocab_size, rng);
    if (c.architecture == Architecture::ctc_attention) {
      attention_decoder = AttentionDecoder(params_, c.vocab_size, d_enc, c.attention, c.decoder, rng);
    } else {
      transformer_decoder = TransformerDecoder(params_, c.vocab_size, d_enc, c.attention, c.decoder, rng);
    }
  }
}

EncoderOutput Model::encode(const Tensor& features, bool train, Rng& rng) const {
  const Tensor sub = vgg.forward(features);
  EncoderOutput out;
  out.states = transformer ? transformer->forward(sub, train, rng) : blstm->forward(sub, train, rng);
  return out;
}

EncoderOutput Model::encode(const FeatureMatrix& features) const {
  NoGradGuard guard;
  Rng unused(0);
  return encode(features.to_tensor(), false, unused);
}

PredictorState Model::predictor_initial_state() const {
  if (!predictor) throw std::logic_error("model has no predictor");
  return predictor->step(predictor->zero_state(), start_id());
}

PredictorState Model::predictor_step(const PredictorState& state, int label) const {
  if (!predictor) throw std::logic_error("model has no predictor");
  return predictor->step(state, label);
}

Tensor Model::transducer_logits(const EncoderOutput& enc, std::span<const int> labels, bool train, Rng& rng) const {
  if (!joiner) throw std::logic_error("model is not a transducer");
  return joiner->lattice(enc.states, predictor->sequence(start_id(), labels, train, rng));
}

Tensor Model::ctc_logits(const EncoderOutput& enc) const {
  if (!ctc_head) throw std::logic_error("model has no CTC head");
  return ctc_head->forward(enc.states);
}

Tensor Model::decoder_logits(const EncoderOutput& enc, std::span<const int> labels, bool train, Rng& rng) const {
  std::vector<int> inputs{start_id()};
  inputs.insert(inputs.end(), labels.begin(), labels.end());
  if (transformer_decoder) return transformer_decoder->forward(enc.states, inputs, train, rng);
  if (!attention_decoder) throw std::logic_error("model has no attention decoder");
  const auto mem = attention_decoder->prepare(enc.states);
  auto carry = attention_decoder->zero_carry();
  std::vector<Tensor> rows;
  for (int y : inputs) {
    auto r = attention_decoder->step(mem, carry, y, train, rng);
    rows.push_back(r.logits);
    carry = std::move(r.carry);
  }
  return concat_rows(rows);
}

Tensor Model::loss(const Tensor& features, std::span<const int> labels, bool train, Rng& rng) const {
  for (int y : labels) {
    if (y <= 0 || y >= start_id()) throw std::invalid_argument("label outside the unit range");
  }
  const EncoderOutput enc = encode(features, train, rng);
  if (is_transducer(config_.architecture)) {
    return transducer_loss_node(transducer_logits(enc, labels, train, rng), enc.frames(), labels, blank_id());
  }
  std::vector<int> targets(labels.begin(), labels.end());
  targets.push_back(end_id());
  const Tensor att = sequence_cross_entropy_node(decoder_logits(enc, labels, train, rng), targets);
  if (config_.ctc_weight == 0.0) return att;
  const Tensor ctc = ctc_loss_node(ctc_logits(enc), labels, blank_id());
  return joint_ctc_attention_loss(ctc, att, config_.ctc_weight);
}

Checkpoint Model::to_checkpoint(const std::vector<std::pair<std::string, std::string>>& extra_header) const {
  Checkpoint ck;
  ck.header.emplace_back("kind", "acoustic");
  for (auto& kv : config_.to_key_values()) ck.header.push_back(std::move(kv));
  ck.header.insert(ck.header.end(), extra_header.begin(), extra_header.end());
  for (const auto& [name, t] : params_.entries()) ck.tensors.emplace_back(name, t.detach());
  return ck;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.has_header("kind") || ckpt.header_value("kind") != "acoustic") {
    throw std::invalid_argument("checkpoint does not hold an acoustic model");
  }
  std::map<std::string, std::string> kv;
  const auto known = ModelConfig::keys();
  for (const auto& [k, v] : ckpt.header) {
    if (std::find(known.begin(), known.end(), k) != known.end()) kv[k] = v;
  }
  Model m(ModelConfig::from_key_values(kv, ModelConfig{}), 0);
  m.params_.assign(ckpt.tensors);
  return m;
}

}  // namespace trnk
