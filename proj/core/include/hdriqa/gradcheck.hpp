// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdriqa/model.hpp"
#include "hdriqa/nn.hpp"

namespace hdriqa {

struct GradCheckCase {
  std::string name;
  nn::GradCheckReport report;
  double seconds = 0.0;
};

struct GradCheckSuite {
  std::vector<GradCheckCase> cases;
  double max_rel_error = 0.0;
  bool passed = true;

  std::string to_json() const;
};

// Every layer kind on its own, then E-Net -> mix, P-Net -> mix and the full
// model under L1(mix(enet, pnet, kappa), target), dropout off.
GradCheckSuite run_gradcheck_suite(const ModelConfig& config, std::uint64_t seed,
                                   const nn::GradCheckOptions& options = {});

// The individual pieces, for callers that want only one.
nn::GradCheckReport check_layer(const std::string& kind, std::uint64_t seed,
                                const nn::GradCheckOptions& options = {});
// chain: "enet+mix", "pnet+mix" or "full".
nn::GradCheckReport check_chain(const std::string& chain, const ModelConfig& config,
                                std::uint64_t seed, const nn::GradCheckOptions& options = {});

const std::vector<std::string>& gradcheck_layer_kinds();

}  // namespace hdriqa
