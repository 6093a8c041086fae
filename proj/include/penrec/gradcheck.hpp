#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "penrec/nn.hpp"

namespace penrec {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  bool pass(double tol = 1e-3) const { return max_rel_err < tol; }
};

// Central finite differences against backward() on one batch, in the scalar
// type of the model (double for verification). Dropout masks are drawn once
// and frozen across all perturbed forwards. Probes a deterministic sample of
// entries per tensor (all entries when the tensor is small).
//
// Central differences assume the loss is smooth on [w-h, w+h]; a ReLU unit
// flipping sign inside that interval makes the difference quotient invalid
// without indicting the analytic gradient. Probes whose two perturbed
// forwards disagree on any ReLU activation pattern are therefore discarded.
//
// corrupt_gradient is a test hook: it perturbs one analytic gradient entry so
// the check must fail (negative control).
template <typename T>
GradCheckResult gradient_check(Model<T>& model, const std::vector<T>& x, int batch,
                               const std::vector<int>& labels, double h = 1e-4,
                               int probes_per_tensor = 40,
                               bool corrupt_gradient = false) {
  const int classes = model.config().classes;
  Rng mask_rng(12345);
  ForwardCache<T> cache;
  // first pass draws the dropout masks; cache.has_masks freezes them after
  std::vector<T> logits = model.forward(x, batch, /*train=*/true, &cache, &mask_rng);
  auto [loss0, dlogits] = softmax_xent(logits, batch, classes, labels);
  (void)loss0;
  Gradients<T> grads = model.backward(cache, dlogits);

  // post-dropout activations: masked-out units cannot influence the loss, so
  // only the surviving units' relu signs matter for smoothness
  auto relu_pattern = [&](std::vector<std::uint8_t>& out) {
    out.clear();
    out.reserve(cache.a1.size() + cache.a2.size() + cache.a3.size());
    for (const T v : cache.a1) out.push_back(v > T(0));
    for (const T v : cache.a2) out.push_back(v > T(0));
    for (const T v : cache.a3) out.push_back(v > T(0));
  };

  auto loss_at = [&](std::vector<std::uint8_t>& pattern) {
    const std::vector<T> lg = model.forward(x, batch, /*train=*/true, &cache, nullptr);
    relu_pattern(pattern);
    return softmax_xent(lg, batch, classes, labels).first;
  };

  auto params = model.trainable_arrays();
  auto garrs = Model<T>::gradient_arrays(grads);

  if (corrupt_gradient) {
    auto& gd = *garrs.back().second;  // dense2.b
    gd[0] = static_cast<T>(static_cast<double>(gd[0]) + 0.05);
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<T>& w = *params[p].second;
    const std::vector<T>& g = *garrs[p].second;
    const std::size_t n = w.size();
    const std::size_t probes = std::min<std::size_t>(n, static_cast<std::size_t>(probes_per_tensor));
    Rng pick(derive_seed(777, p));
    std::vector<std::uint8_t> pat_plus, pat_minus;
    for (std::size_t i = 0; i < probes; ++i) {
      const std::size_t j = probes == n ? i : static_cast<std::size_t>(pick.uniform_index(n));
      const T saved = w[j];
      w[j] = static_cast<T>(static_cast<double>(saved) + h);
      const double lp = loss_at(pat_plus);
      w[j] = static_cast<T>(static_cast<double>(saved) - h);
      const double lm = loss_at(pat_minus);
      w[j] = saved;
      if (pat_plus != pat_minus) continue;  // kink inside the FD interval
      const double fd = (lp - lm) / (2.0 * h);
      const double an = static_cast<double>(g[j]);
      const double mag = std::max(std::abs(an), std::abs(fd));
      if (mag < 1e-7) continue;  // both effectively zero
      const double rel = std::abs(an - fd) / std::max(mag, 1e-5);
      ++result.checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = params[p].first + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace penrec
