#include <catch2/catch.hpp>

#include "test_util.hpp"
#include "upesv/nets.hpp"

using namespace upesv;
using namespace upesv::nets;
using testutil::tiny_dims;

namespace {

// Scalar probe for Jacobian checks: fixed random projection of the output.
template <class S>
double probe(const Tensor<S>& out, const Tensor<S>& weights) {
  double acc = 0;
  for (int64_t i = 0; i < out.numel(); ++i)
    acc += static_cast<double>(out[i]) * static_cast<double>(weights[i]);
  return acc;
}

}  // namespace

TEST_CASE("encode: zero head, determinism, shape errors") {
  auto dims = tiny_dims();
  ModelBundle<float> b(dims, 3);

  SECTION("zero observation through a zero-initialized head is exactly zero") {
    ModelBundle<float> bz(dims, 4);
    auto& head = bz.encoder.head();
    head.weight.zero();
    head.bias.zero();
    // Zero input: conv maps are zero, the spatial softmax is uniform over a
    // symmetric grid (zero expected coordinates), the head is zeroed.
    Tensor<float> obs({2, 5, 4, 4});
    auto feats = encode(bz, obs);
    for (int64_t i = 0; i < feats.numel(); ++i) REQUIRE(feats[i] == 0.0f);
  }

  SECTION("identical observations yield identical features") {
    rng::Stream rs(1);
    auto one = testutil::random_tensor<float>({1, 5, 4, 4}, rs);
    Tensor<float> two({2, 5, 4, 4});
    std::copy_n(one.data(), one.numel(), two.data());
    std::copy_n(one.data(), one.numel(), two.data() + one.numel());
    auto feats = encode(b, two);
    for (int64_t j = 0; j < feats.dim(1); ++j)
      REQUIRE(feats.at(0, j) == feats.at(1, j));
  }

  SECTION("shape mismatch throws") {
    Tensor<float> bad({1, 5, 3, 3});
    REQUIRE_THROWS_AS(encode(b, bad), ShapeError);
  }
}

TEST_CASE("encoder gradient matches central finite differences") {
  auto dims = tiny_dims();
  ModelBundle<double> b(dims, 7);
  rng::Stream rs(11);
  auto obs = testutil::random_tensor<double>({3, 5, 4, 4}, rs);
  auto w = testutil::random_tensor<double>({3, dims.feature_dim}, rs, -1, 1);

  b.zero_all_grads();
  nn::EncoderTrace<double> trace;
  auto out = b.encoder.forward(obs, &trace);
  Tensor<double> gout = w;  // d(probe)/d(out) = w
  b.encoder.backward(trace, gout);

  auto rep = testutil::fd_check(b.params(Component::kEncoder), [&] {
    return probe(b.encoder.forward(obs), w);
  });
  INFO(rep.worst);
  REQUIRE(rep.max_err <= 1e-4);
}

TEST_CASE("predict_latent: order sensitivity and gradients") {
  auto dims = tiny_dims();
  ModelBundle<double> b(dims, 9);
  rng::Stream rs(13);

  const int64_t n = 2, d = dims.feature_dim;
  auto hist = testutil::random_tensor<double>({n, d}, rs, -1, 1);
  auto ft = testutil::random_tensor<double>({n, d}, rs, -1, 1);
  auto ft1 = testutil::random_tensor<double>({n, d}, rs, -1, 1);

  SECTION("zero inputs through a zero-initialized predictor give zero") {
    ModelBundle<double> bz(dims, 10);
    auto& last = bz.latent_predictor.layer(1);
    last.weight.zero();
    last.bias.zero();
    Tensor<double> zh({n, d}), zt({n, d}), zt1({n, d});
    auto out = predict_latent(bz, zh, zt, zt1);
    for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == 0.0);
  }

  SECTION("permuting (t, t+1) changes the output") {
    auto ab = predict_latent(b, hist, ft, ft1);
    auto ba = predict_latent(b, hist, ft1, ft);
    bool differs = false;
    for (int64_t i = 0; i < ab.numel(); ++i)
      if (ab[i] != ba[i]) differs = true;
    REQUIRE(differs);
  }

  SECTION("gradient check") {
    auto w = testutil::random_tensor<double>({n, dims.latent_dim}, rs, -1, 1);
    b.zero_all_grads();
    nn::MlpTrace<double> trace;
    auto out = predict_latent(b, hist, ft, ft1, &trace);
    b.latent_predictor.backward(trace, w);
    auto rep = testutil::fd_check(b.params(Component::kLatentPredictor), [&] {
      return probe(predict_latent(b, hist, ft, ft1), w);
    });
    INFO(rep.worst);
    REQUIRE(rep.max_err <= 1e-4);
  }
}

TEST_CASE("quantize: nearest neighbor, ties, idempotence, finiteness") {
  Tensor<double> codebook({3, 2});
  codebook.at(0, 0) = 0;
  codebook.at(0, 1) = 0;
  codebook.at(1, 0) = 1;
  codebook.at(1, 1) = 1;
  codebook.at(2, 0) = 2;
  codebook.at(2, 1) = 2;

  SECTION("nearest neighbor") {
    Tensor<double> pre({1, 2});
    pre.at(0, 0) = 0.9;
    pre.at(0, 1) = 1.2;
    auto q = quantize(codebook, pre);
    REQUIRE(q.indices == std::vector<int>{1});
    REQUIRE(q.rows.at(0, 0) == 1.0);
  }

  SECTION("equidistant between rows resolves to the lowest index") {
    Tensor<double> pre({1, 2});
    pre.at(0, 0) = 1.0;
    pre.at(0, 1) = 1.0;
    Tensor<double> cb2({2, 2});
    cb2.at(0, 0) = 0;
    cb2.at(0, 1) = 0;
    cb2.at(1, 0) = 2;
    cb2.at(1, 1) = 2;
    auto q = quantize(cb2, pre);
    REQUIRE(q.indices == std::vector<int>{0});
  }

  SECTION("quantize of quantized rows is the identity") {
    rng::Stream rs(3);
    auto pre = testutil::random_tensor<double>({5, 2}, rs, -3, 3);
    auto q1 = quantize(codebook, pre);
    auto q2 = quantize(codebook, q1.rows);
    REQUIRE(q1.indices == q2.indices);
    for (int64_t i = 0; i < q1.rows.numel(); ++i)
      REQUIRE(q1.rows[i] == q2.rows[i]);
  }

  SECTION("non-finite input is rejected") {
    Tensor<double> pre({1, 2});
    pre.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(quantize(codebook, pre), TrainError);
  }
}

TEST_CASE("project_action: argmax, ties, softmax normalization") {
  auto dims = tiny_dims();
  ModelBundle<float> b(dims, 21);

  Tensor<float> logits({2, 5});
  logits.at(0, 0) = 0.1f;
  logits.at(0, 1) = 2.0f;
  logits.at(0, 2) = 0.1f;
  logits.at(0, 3) = 0.1f;
  logits.at(0, 4) = 0.1f;
  for (int j = 0; j < 5; ++j) logits.at(1, j) = 0.7f;
  REQUIRE(argmax_row(logits, 0) == 1);
  REQUIRE(argmax_row(logits, 1) == 0);  // ties resolve to the lowest index

  rng::Stream rs(5);
  auto zq = testutil::random_tensor<float>({3, dims.latent_dim}, rs, -1, 1);
  auto out = project_action(b, zq);
  for (int64_t i = 0; i < 3; ++i) {
    double mx = -1e30;
    for (int j = 0; j < 5; ++j) mx = std::max(mx, double(out.at(i, j)));
    double z = 0;
    for (int j = 0; j < 5; ++j) z += std::exp(double(out.at(i, j)) - mx);
    double total = 0;
    for (int j = 0; j < 5; ++j)
      total += std::exp(double(out.at(i, j)) - mx) / z;
    REQUIRE(total == Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("contrast_score identities") {
  auto dims = tiny_dims();
  ModelBundle<double> b(dims, 31);
  const int64_t d = dims.feature_dim;

  rng::Stream rs(17);
  auto anchor = testutil::random_tensor<double>({d}, rs, -1, 1);
  auto u_out = b.contrast_proj.forward(anchor.reshaped({1, d}));

  SECTION("u(anchor) == target with w = 0 scores exactly 1") {
    Tensor<double> target({d});
    for (int64_t i = 0; i < d; ++i) target[i] = u_out[i];
    double score = contrast_score(b, anchor, target);
    REQUIRE(score == Approx(1.0).margin(1e-6));
  }

  SECTION("orthogonal target scores 0") {
    Tensor<double> target({d});
    target.fill(0);
    target[0] = -u_out[1];
    target[1] = u_out[0];
    double score = contrast_score(b, anchor, target);
    REQUIRE(score == Approx(0.0).margin(1e-9));
  }

  SECTION("invariant to positive rescaling of the target") {
    auto target = testutil::random_tensor<double>({d}, rs, -1, 1);
    double s1 = contrast_score(b, anchor, target);
    for (int64_t i = 0; i < d; ++i) target[i] *= 37.5;
    double s2 = contrast_score(b, anchor, target);
    REQUIRE(s1 == Approx(s2).margin(1e-7));
  }
}

TEST_CASE("world_forward and policy_latent: zero inits and gradients") {
  auto dims = tiny_dims();
  rng::Stream rs(23);

  SECTION("zero-initialized world model head predicts zero") {
    ModelBundle<double> b(dims, 41);
    auto& head = b.world_model.layer(b.world_model.depth() - 1);
    head.weight.zero();
    head.bias.zero();
    auto feat = testutil::random_tensor<double>({2, dims.feature_dim}, rs, -1, 1);
    auto zq = testutil::random_tensor<double>({2, dims.latent_dim}, rs, -1, 1);
    auto pred = world_forward(b, feat, zq);
    for (int64_t i = 0; i < pred.numel(); ++i) REQUIRE(pred[i] == 0.0);
  }

  SECTION("world model gradient check") {
    ModelBundle<double> b(dims, 43);
    auto feat = testutil::random_tensor<double>({3, dims.feature_dim}, rs, -1, 1);
    auto zq = testutil::random_tensor<double>({3, dims.latent_dim}, rs, -1, 1);
    auto w = testutil::random_tensor<double>({3, dims.feature_dim}, rs, -1, 1);
    b.zero_all_grads();
    nn::MlpTrace<double> trace;
    auto out = world_forward(b, feat, zq, &trace);
    b.world_model.backward(trace, w);
    auto rep = testutil::fd_check(b.params(Component::kWorldModel), [&] {
      return probe(world_forward(b, feat, zq), w);
    });
    INFO(rep.worst);
    REQUIRE(rep.max_err <= 1e-4);
  }

  SECTION("policy predictor gradient check and zero init") {
    ModelBundle<double> b(dims, 47);
    auto& last = b.policy_predictor.layer(b.policy_predictor.depth() - 1);
    last.weight.zero();
    last.bias.zero();
    auto hist = testutil::random_tensor<double>({2, dims.feature_dim}, rs, -1, 1);
    auto feat = testutil::random_tensor<double>({2, dims.feature_dim}, rs, -1, 1);
    auto zero_out = policy_latent(b, hist, feat);
    for (int64_t i = 0; i < zero_out.numel(); ++i) REQUIRE(zero_out[i] == 0.0);

    testutil::randomize_linear(last, rs);
    auto w = testutil::random_tensor<double>({2, dims.latent_dim}, rs, -1, 1);
    b.zero_all_grads();
    nn::MlpTrace<double> trace;
    auto out = policy_latent(b, hist, feat, &trace);
    b.policy_predictor.backward(trace, w);
    auto rep = testutil::fd_check(b.params(Component::kPolicyPredictor), [&] {
      return probe(policy_latent(b, hist, feat), w);
    });
    INFO(rep.worst);
    REQUIRE(rep.max_err <= 1e-4);
  }
}

TEST_CASE("ema_update contract") {
  auto dims = tiny_dims();
  ModelBundle<float> b(dims, 51);
  rng::Stream rs(29);
  for (auto& p : b.params(Component::kEncoder))
    for (int64_t i = 0; i < p.value->numel(); ++i)
      (*p.value)[i] += static_cast<float>(rs.uniform(-0.5, 0.5));

  SECTION("m = 0 leaves the mirror unchanged") {
    float before = b.encoder_ema.head().weight[0];
    ema_update(b, 0.0);
    REQUIRE(b.encoder_ema.head().weight[0] == before);
  }

  SECTION("m = 1 copies exactly") {
    ema_update(b, 1.0);
    auto src = b.params(Component::kEncoder);
    auto dst = b.params(Component::kEncoderEma);
    for (size_t i = 0; i < src.size(); ++i)
      for (int64_t j = 0; j < src[i].value->numel(); ++j)
        REQUIRE((*dst[i].value)[j] == (*src[i].value)[j]);
  }

  SECTION("stated arithmetic: 0 toward 1 with m = 0.05 gives 0.05") {
    b.encoder_ema.head().weight.zero();
    b.encoder.head().weight.fill(1.0f);
    ema_update(b, 0.05);
    REQUIRE(b.encoder_ema.head().weight[0] == Approx(0.05f));
  }

  SECTION("momentum outside [0,1] is rejected") {
    REQUIRE_THROWS_AS(ema_update(b, 1.5), ConfigError);
  }
}

TEST_CASE("label_video on an untrained bundle is a valid distribution") {
  auto dims = tiny_dims();
  ModelBundle<float> b(dims, 61);
  rng::Stream rs(31);
  auto o_t = testutil::random_tensor<float>({2, 5, 4, 4}, rs);
  auto o_t1 = testutil::random_tensor<float>({2, 5, 4, 4}, rs);
  auto o_hist = testutil::random_tensor<float>({2, 1, 5, 4, 4}, rs);

  auto out = label_video(b, o_t, o_t1, o_hist);
  REQUIRE(out.logits.dim(1) == 5);
  REQUIRE(static_cast<int64_t>(out.latent.indices.size()) == 2);
  for (int idx : out.latent.indices) {
    REQUIRE(idx >= 0);
    REQUIRE(idx < dims.codebook_size);
  }

  auto out2 = label_video(b, o_t, o_t1, o_hist);
  REQUIRE(out.latent.indices == out2.latent.indices);
}

TEST_CASE("parameter sharing: one encoder, one projector feed both paths") {
  auto dims = tiny_dims();
  ModelBundle<float> b(dims, 71);
  rng::Stream rs(37);

  auto o_t = testutil::random_tensor<float>({1, 5, 4, 4}, rs);
  auto o_t1 = testutil::random_tensor<float>({1, 5, 4, 4}, rs);
  auto o_hist = testutil::random_tensor<float>({1, 1, 5, 4, 4}, rs);

  auto feats_before = encode(b, o_t);
  auto hist_before = encode_history(b, o_hist, 1);
  auto latent_before =
      predict_latent(b, hist_before, feats_before, encode(b, o_t1));
  auto pol_before = policy_latent(b, hist_before, feats_before);

  // Mutate the shared encoder; both the labeling path and the policy path
  // must observe the change (pre-quantization, where it cannot be absorbed
  // by the discrete bottleneck). The bias reaches every input.
  b.encoder.head().bias[0] += 0.5f;
  auto feats_after = encode(b, o_t);
  auto hist_after = encode_history(b, o_hist, 1);
  auto latent_after =
      predict_latent(b, hist_after, feats_after, encode(b, o_t1));
  auto pol_after = policy_latent(b, hist_after, feats_after);

  bool label_changed = false;
  for (int64_t i = 0; i < latent_before.numel(); ++i)
    if (latent_before[i] != latent_after[i]) label_changed = true;
  bool policy_changed = false;
  for (int64_t i = 0; i < pol_before.numel(); ++i)
    if (pol_before[i] != pol_after[i]) policy_changed = true;
  REQUIRE(label_changed);
  REQUIRE(policy_changed);
}

TEST_CASE("the EMA encoder is absent from every optimizer parameter set") {
  auto dims = tiny_dims();
  ModelBundle<float> b(dims, 81);
  auto ema = b.params(Component::kEncoderEma);
  for (const auto& set :
       {b.params_vsc(), b.params_lfr(), b.params_gap(), b.params_upc()})
    for (const auto& p : set)
      for (const auto& e : ema) REQUIRE(p.value != e.value);
}
