// Shared test helpers: tiny network dims, random batches, and the central
// finite-difference oracle used by the gradient tests.
#pragma once

#include <functional>
#include <string>

#include "upesv/nets.hpp"
#include "upesv/nn.hpp"
#include "upesv/rng.hpp"
#include "upesv/tensor.hpp"

namespace testutil {

inline upesv::nets::BundleDims tiny_dims() {
  upesv::nets::BundleDims d;
  d.obs_channels = 5;
  d.obs_h = 4;
  d.obs_w = 4;
  d.history_k = 1;
  d.feature_dim = 64;  // head 19 + trunk summary 9 + ego readout 36
  d.ego_window = 3;
  d.latent_dim = 3;
  d.codebook_size = 5;
  d.conv_channels = {2, 3};
  d.conv_strides = {1, 2};
  d.latent_hidden = 7;
  d.contrast_hidden = 5;
  d.action_hidden = 5;
  d.world_hidden = 6;
  d.policy_hidden = 6;
  return d;
}

template <class S>
upesv::Tensor<S> random_tensor(upesv::Shape shape, upesv::rng::Stream& rs,
                               double lo = 0.0, double hi = 1.0) {
  upesv::Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<S>(rs.uniform(lo, hi));
  return t;
}

// Overwrite a zero-initialized layer with random weights (some components
// ship with zeroed final layers and need signal for sensitivity tests).
template <class S>
void randomize_linear(upesv::nn::Linear<S>& lin, upesv::rng::Stream& rs) {
  upesv::nn::init_fan_in(lin.weight, lin.in_dim(), rs);
  upesv::nn::init_fan_in(lin.bias, lin.in_dim(), rs);
}

struct FdReport {
  double max_err = 0;     // |analytic - fd| / max(scale floor, |analytic|, |fd|)
  std::string worst;      // parameter name of the worst element
};

// Central finite differences against already-populated analytic grads.
// `eval` must recompute the (stop-respecting) loss at the current params.
template <class Eval>
FdReport fd_check(const upesv::nn::ParamSet<double>& params, Eval&& eval,
                  double eps = 1e-5, double floor_scale = 1e-2) {
  FdReport rep;
  for (const auto& p : params) {
    for (int64_t i = 0; i < p.value->numel(); ++i) {
      double saved = (*p.value)[i];
      (*p.value)[i] = saved + eps;
      double up = eval();
      (*p.value)[i] = saved - eps;
      double down = eval();
      (*p.value)[i] = saved;
      double fd = (up - down) / (2 * eps);
      double analytic = (*p.grad)[i];
      double scale = std::max({floor_scale, std::abs(analytic), std::abs(fd)});
      double err = std::abs(analytic - fd) / scale;
      if (err > rep.max_err) {
        rep.max_err = err;
        rep.worst = upesv::cat(p.name, "[", i, "]");
      }
    }
  }
  return rep;
}

template <class S>
double grad_norm_of(upesv::nets::ModelBundle<S>& b, upesv::nets::Component c) {
  return upesv::nn::grad_norm(b.params(c));
}

}  // namespace testutil
