// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/selfcheck.hpp"

#include "trnk/losses.hpp"

namespace trnk {

namespace {

Tensor random_tensor(Shape shape, double scale, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

ModelConfig tiny_model_config(Architecture a) {
  ModelConfig c;
  c.architecture = a;
  c.input_dim = 4;
  c.vgg_channels1 = 1;
  c.vgg_channels2 = 2;
  c.encoder = {1, 2, 0.0};
  c.attention = {2, 4, 0.0};
  c.decoder = {1, 3, 0.0};
  c.joiner_units = 3;
  c.vocab_size = 4;
  if (uses_transformer_encoder(a)) c.encoder.units = 4;
  if (a == Architecture::transformer) c.decoder.units = 4;
  return c;
}

std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed) {
  std::vector<GradCheckCase> out;
  Rng rng(seed);
  const std::vector<int> target{1, 2};

  std::vector<Tensor> ctc{random_tensor({6, 4}, 2.0, rng)};
  ctc[0].set_requires_grad(true);
  auto r = check_gradients([&] { return ctc_loss_node(ctc[0], target); }, ctc);
  out.push_back({"ctc_loss", r.max_rel_error, r.parameter_count});

  std::vector<Tensor> rnnt{random_tensor({4 * 3, 4}, 2.0, rng)};
  rnnt[0].set_requires_grad(true);
  r = check_gradients([&] { return transducer_loss_node(rnnt[0], 4, target); }, rnnt);
  out.push_back({"transducer_loss", r.max_rel_error, r.parameter_count});

  for (auto a : {Architecture::rnnt, Architecture::transformer_transducer, Architecture::ctc_attention,
                 Architecture::transformer}) {
    Model m(tiny_model_config(a), rng.next());
    const Tensor x = random_tensor({8, 4}, 1.0, rng);
    auto params = m.parameters().tensors();
    r = check_gradients([&] {
      Rng unused(0);
      return m.loss(x, target, false, unused);
    }, params);
    out.push_back({"model:" + to_string(a), r.max_rel_error, r.parameter_count});
  }
  return out;
}

}  // namespace trnk
