// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "hdriqa/error.hpp"

namespace hdriqa {

using nn::Gradients;
using nn::GradCheckOptions;
using nn::GradCheckReport;
using nn::ParameterSet;
using nn::Tensor;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
  return s;
}

std::uint64_t sign_hash(const Tensor& x) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double v : x.values()) h = (h ^ (v > 0.0 ? 1u : 0u)) * 0x100000001b3ull;
  return h;
}

GradCheckReport check_conv(Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto x = p.add("x", random_tensor({2, 3, 8, 8}, rng, -1, 1));
  const auto k = p.add("kernels", random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  const auto b = p.add("bias", random_tensor({4}, rng, -0.5, 0.5));
  const Tensor r = random_tensor({2, 4, 6, 6}, rng, -1, 1);
  auto loss = [&] { return weighted_sum(nn::conv2d_valid(p[x].value, p[k].value, p[b].value), r); };
  Gradients g = p.zero_grads();
  nn::conv2d_valid_backward(p[x].value, p[k].value, r, &g[x], g[k], g[b]);
  return nn::gradient_check(p, g, loss, opt);
}

GradCheckReport check_pool(Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto x = p.add("x", random_tensor({2, 3, 9, 9}, rng, -1, 1));
  const Tensor r = random_tensor({2, 3, 4, 4}, rng, -1, 1);
  nn::MaxPool2 pool;
  auto loss = [&] { return weighted_sum(pool.forward(p[x].value), r); };
  loss();
  Gradients g{pool.backward(r)};
  return nn::gradient_check(p, g, loss, opt, [&] { return pool.signature(); });
}

GradCheckReport check_dense(Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto x = p.add("x", random_tensor({4, 6}, rng, -1, 1));
  const auto w = p.add("weights", random_tensor({5, 6}, rng, -1, 1));
  const auto b = p.add("bias", random_tensor({5}, rng, -1, 1));
  const Tensor r = random_tensor({4, 5}, rng, -1, 1);
  auto loss = [&] { return weighted_sum(nn::dense(p[x].value, p[w].value, p[b].value), r); };
  Gradients g = p.zero_grads();
  nn::dense_backward(p[x].value, p[w].value, r, &g[x], g[w], g[b]);
  return nn::gradient_check(p, g, loss, opt);
}

GradCheckReport check_activation(const std::string& kind, Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto x = p.add("x", random_tensor({64}, rng, -3, 3));
  const Tensor r = random_tensor({64}, rng, -1, 1);
  auto fwd = [&](const Tensor& v) {
    if (kind == "tanh") return nn::tanh_act(v);
    if (kind == "softplus") return nn::softplus_act(v);
    return nn::relu_act(v);
  };
  auto loss = [&] { return weighted_sum(fwd(p[x].value), r); };
  Gradients g(1);
  if (kind == "tanh") g[0] = nn::tanh_backward(nn::tanh_act(p[x].value), r);
  else if (kind == "softplus") g[0] = nn::softplus_backward(p[x].value, r);
  else g[0] = nn::relu_backward(p[x].value, r);
  return nn::gradient_check(p, g, loss, opt, [&] { return sign_hash(p[x].value); });
}

GradCheckReport check_dropout(Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto x = p.add("x", random_tensor({2, 8, 4, 4}, rng, -1, 1));
  const Tensor r = random_tensor({2, 8, 4, 4}, rng, -1, 1);
  const std::uint64_t mask_seed = rng();
  nn::SpatialDropout drop(0.25);
  // Same mask on every evaluation: the check is on the linear map it applies.
  auto loss = [&] {
    Rng mask_rng(mask_seed);
    return weighted_sum(drop.forward(p[x].value, &mask_rng, true), r);
  };
  loss();
  Gradients g{drop.backward(r)};
  return nn::gradient_check(p, g, loss, opt);
}

GradCheckReport check_l1(Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto x = p.add("pred", random_tensor({16}, rng, -1, 1));
  Tensor target = random_tensor({16}, rng, -1, 1);
  // Keep every residual away from the kink at zero.
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (std::abs(target[i] - p[x].value[i]) < 0.05) target[i] += 0.1;
  }
  auto loss = [&] { return nn::l1_loss(p[x].value, target).value; };
  Gradients g{nn::l1_loss(p[x].value, target).grad};
  return nn::gradient_check(p, g, loss, opt);
}

GradCheckReport check_mix(Rng& rng, const GradCheckOptions& opt) {
  ParameterSet p;
  const auto d = p.add("delta_hat", random_tensor({16}, rng, 0.0, 2.0));
  const auto t = p.add("t_resist", random_tensor({16}, rng, 0.5, 3.0));
  const auto k = p.add("kappa", random_tensor({1}, rng, -1.0, 1.0));
  const Tensor r = random_tensor({16}, rng, -1, 1);
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 16; ++i) s += r[i] * mix(p[d].value[i], p[t].value[i], p[k].value[0]);
    return s;
  };
  Gradients g = p.zero_grads();
  for (std::size_t i = 0; i < 16; ++i) {
    const MixGrad mg = mix_backward(p[d].value[i], p[t].value[i], p[k].value[0], r[i]);
    g[d][i] = mg.d_delta;
    g[t][i] = mg.d_t;
    g[k][0] += mg.d_kappa;
  }
  return nn::gradient_check(p, g, loss, opt);
}

void prefix(GradCheckReport& r, const std::string& tag) {
  for (auto& pc : r.params) pc.name = tag + "." + pc.name;
}

}  // namespace

const std::vector<std::string>& gradcheck_layer_kinds() {
  static const std::vector<std::string> kinds{"conv2d", "maxpool2", "dense",   "tanh", "softplus",
                                              "relu",   "dropout",  "l1_loss", "mix"};
  return kinds;
}

GradCheckReport check_layer(const std::string& kind, std::uint64_t seed, const GradCheckOptions& opt) {
  Rng rng(seed);
  GradCheckReport r;
  if (kind == "conv2d") r = check_conv(rng, opt);
  else if (kind == "maxpool2") r = check_pool(rng, opt);
  else if (kind == "dense") r = check_dense(rng, opt);
  else if (kind == "tanh" || kind == "softplus" || kind == "relu") r = check_activation(kind, rng, opt);
  else if (kind == "dropout") r = check_dropout(rng, opt);
  else if (kind == "l1_loss") r = check_l1(rng, opt);
  else if (kind == "mix") r = check_mix(rng, opt);
  else throw UsageError("unknown layer kind '" + kind + "'");
  prefix(r, kind);
  return r;
}

GradCheckReport check_chain(const std::string& chain, const ModelConfig& config, std::uint64_t seed,
                            const GradCheckOptions& opt) {
  const bool use_enet = chain == "enet+mix" || chain == "full";
  const bool use_pnet = chain == "pnet+mix" || chain == "full";
  if (!use_enet && !use_pnet) throw UsageError("unknown chain '" + chain + "'");

  ModelBundle bundle = create_bundle(config, seed);
  Rng rng(derive_seed(seed, 7));
  const std::size_t n = 2;
  const auto s = static_cast<std::size_t>(config.patch_size);
  const Tensor x = random_tensor({n, 1, s, s}, rng, 0.0, 1.0);
  std::vector<FeatureStack> stacks;
  for (std::size_t i = 0; i < n; ++i) {
    Plane pl(config.patch_size, config.patch_size);
    for (double& v : pl.data) v = uniform(rng, 0.0, 1.0);
    stacks.push_back(feature_stack(pl, config.window));
  }
  std::vector<const FeatureStack*> ptrs;
  for (const auto& st : stacks) ptrs.push_back(&st);
  const Tensor f = make_pnet_batch(ptrs);
  calibrate_augmented_layer(bundle, stacks);
  const Tensor fixed_delta = random_tensor({n}, rng, 0.2, 1.0);
  const Tensor fixed_t = random_tensor({n}, rng, 0.5, 1.5);
  // Above tanh's range, so the L1 residual never changes sign.
  const Tensor target({n}, 1.5);

  ENet enet(config);
  PNet pnet(config);
  auto forward = [&](Tensor& d, Tensor& t) {
    d = use_enet ? enet.forward(bundle.enet, x, false, nullptr) : fixed_delta;
    t = use_pnet ? pnet.forward(bundle.pnet, f) : fixed_t;
    Tensor pred({n});
    for (std::size_t i = 0; i < n; ++i) pred[i] = mix(d[i], t[i], bundle.kappa());
    return pred;
  };
  auto loss = [&] {
    Tensor d, t;
    return nn::l1_loss(forward(d, t), target).value;
  };
  auto signature = [&] {
    return (use_enet ? enet.signature() : 0) * 1000003u ^ (use_pnet ? pnet.signature() : 0);
  };

  Tensor d, t;
  const nn::LossResult l = nn::l1_loss(forward(d, t), target);
  Tensor gd({n}), gt({n});
  Gradients g_mix = bundle.mixing.zero_grads();
  for (std::size_t i = 0; i < n; ++i) {
    const MixGrad mg = mix_backward(d[i], t[i], bundle.kappa(), l.grad[i]);
    gd[i] = mg.d_delta;
    gt[i] = mg.d_t;
    g_mix[0][0] += mg.d_kappa;
  }
  Gradients g_enet = bundle.enet.zero_grads();
  Gradients g_pnet = bundle.pnet.zero_grads();
  if (use_enet) enet.backward(bundle.enet, gd, g_enet);
  if (use_pnet) pnet.backward(bundle.pnet, gt, g_pnet);

  GradCheckReport report;
  if (use_enet) report.merge(nn::gradient_check(bundle.enet, g_enet, loss, opt, signature));
  if (use_pnet) report.merge(nn::gradient_check(bundle.pnet, g_pnet, loss, opt, signature));
  report.merge(nn::gradient_check(bundle.mixing, g_mix, loss, opt, signature));
  prefix(report, chain);
  return report;
}

GradCheckSuite run_gradcheck_suite(const ModelConfig& config, std::uint64_t seed,
                                   const GradCheckOptions& options) {
  GradCheckSuite suite;
  auto timed = [&](const std::string& name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckCase c{name, fn(), 0.0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    suite.max_rel_error = std::max(suite.max_rel_error, c.report.max_rel_error);
    suite.passed = suite.passed && c.report.passed;
    suite.cases.push_back(std::move(c));
  };
  std::uint64_t stream = 0;
  for (const auto& kind : gradcheck_layer_kinds()) {
    timed(kind, [&] { return check_layer(kind, derive_seed(seed, stream++), options); });
  }
  for (const char* chain : {"enet+mix", "pnet+mix", "full"}) {
    timed(chain, [&] { return check_chain(chain, config, derive_seed(seed, stream++), options); });
  }
  return suite;
}

std::string GradCheckSuite::to_json() const {
  nlohmann::ordered_json j;
  j["passed"] = passed;
  j["max_rel_error"] = max_rel_error;
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : cases) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["passed"] = c.report.passed;
    cj["max_rel_error"] = c.report.max_rel_error;
    cj["seconds"] = c.seconds;
    cj["params"] = nlohmann::ordered_json::array();
    for (const auto& p : c.report.params) {
      cj["params"].push_back({{"name", p.name},
                              {"checked", p.checked},
                              {"skipped", p.skipped},
                              {"max_rel_error", p.max_rel_error},
                              {"flagged", p.flagged}});
    }
    j["cases"].push_back(std::move(cj));
  }
  return j.dump(2);
}

}  // namespace hdriqa
