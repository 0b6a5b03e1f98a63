// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hdriqa/io.hpp"

namespace hdriqa {

// Correlations raise ValidationError on length mismatch, fewer than 3 samples
// or a constant vector.
double srcc(const std::vector<double>& x, const std::vector<double>& y);
// Kendall tau-b, O(n log n).
double krcc(const std::vector<double>& x, const std::vector<double>& y);
double plcc(const std::vector<double>& x, const std::vector<double>& y);
double rmse(const std::vector<double>& x, const std::vector<double>& y);

// Fractional ranks starting at 1; ties share their average rank.
std::vector<double> fractional_ranks(const std::vector<double>& v);

struct Split {
  std::vector<std::string> train_contents;
  std::vector<std::string> test_contents;
};

// Content-level splits; n_train = round(fraction * n) clamped to [1, n-1].
std::vector<Split> make_splits(const DatasetManifest& manifest, double train_fraction,
                               std::size_t iterations, std::uint64_t seed);

struct Metrics {
  double srcc = 0.0;
  double krcc = 0.0;
  double plcc = 0.0;
  double rmse = 0.0;
};

Metrics compute_metrics(const std::vector<double>& predicted, const std::vector<double>& truth);

struct MetricsReport {
  Metrics median;
  std::size_t n_iterations = 0;
  std::vector<Metrics> iterations;

  std::string to_json() const;
  std::string to_table() const;
};

// A trained model, opaque to the harness, that scores one manifest entry.
using Predictor = std::function<double(const ManifestEntry&)>;
// Trains on a manifest; the seed is derived per iteration from the master seed.
using Trainer = std::function<Predictor(const DatasetManifest& train, std::uint64_t seed)>;

struct EvalOptions {
  std::uint64_t seed = 0;
  // Workers for independent iterations; results do not depend on it.
  unsigned threads = 1;
};

// Trains on the train side of every split and scores the test side.
// A failure in one split is rethrown with the split index attached.
MetricsReport run_evaluation(const Trainer& trainer, const DatasetManifest& manifest,
                             const std::vector<Split>& splits, const EvalOptions& options = {});

// Trains on the union of `train`, tests on the union of `test`, `cycles` times.
MetricsReport cross_dataset_eval(const Trainer& trainer, const std::vector<DatasetManifest>& train,
                                 const std::vector<DatasetManifest>& test, std::uint64_t seed,
                                 std::size_t cycles = 3);

MetricsReport summarize(std::vector<Metrics> iterations);

}  // namespace hdriqa
