// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "hdriqa/error.hpp"
#include "hdriqa/rng.hpp"

namespace hdriqa {

namespace {

void check_pair(const std::vector<double>& x, const std::vector<double>& y, const char* what) {
  if (x.size() != y.size()) {
    throw ValidationError(std::string(what) + ": length mismatch " + std::to_string(x.size()) +
                          " vs " + std::to_string(y.size()));
  }
  if (x.size() < 3) throw ValidationError(std::string(what) + ": needs at least 3 samples");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw NumericError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

double pearson(const std::vector<double>& x, const std::vector<double>& y, const char* what) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError(std::string(what) + ": constant input vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Pairs tied within each run of equal keys in a sorted sequence.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq equal) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Merge sort counting exchanges (discordant pairs).
std::uint64_t sort_count_swaps(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                               std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = sort_count_swaps(v, buf, lo, mid) + sort_count_swaps(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
  return swaps;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return std::nan("");
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "srcc");
  return pearson(fractional_ranks(x), fractional_ranks(y), "srcc");
}

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "plcc");
  return pearson(x, y, "plcc");
}

double rmse(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty()) throw ValidationError("rmse: length mismatch or empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s / static_cast<double>(x.size()));
}

double krcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "krcc");
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t tx = tied_pairs(n, [&](std::size_t a, std::size_t b) { return x[idx[a]] == x[idx[b]]; });
  const std::uint64_t txy = tied_pairs(n, [&](std::size_t a, std::size_t b) {
    return x[idx[a]] == x[idx[b]] && ys[a] == ys[b];
  });
  std::vector<double> buf(n);
  const std::uint64_t swaps = sort_count_swaps(ys, buf, 0, n);
  const std::uint64_t ty = tied_pairs(n, [&](std::size_t a, std::size_t b) { return ys[a] == ys[b]; });
  if (tx == n0 || ty == n0) throw NumericError("krcc: constant input vector");

  // concordant - discordant, in exact integer arithmetic
  const std::int64_t s = static_cast<std::int64_t>(n0 - tx - ty + txy) - 2 * static_cast<std::int64_t>(swaps);
  return static_cast<double>(s) / std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
}

Metrics compute_metrics(const std::vector<double>& predicted, const std::vector<double>& truth) {
  return {srcc(predicted, truth), krcc(predicted, truth), plcc(predicted, truth), rmse(predicted, truth)};
}

std::vector<Split> make_splits(const DatasetManifest& manifest, double train_fraction,
                               std::size_t iterations, std::uint64_t seed) {
  const std::vector<std::string> ids = manifest.content_ids();
  const std::size_t n = ids.size();
  if (n < 2) throw ValidationError("make_splits: need at least 2 distinct contents, have " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("make_splits: train fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(
      std::clamp<long>(std::lround(train_fraction * static_cast<double>(n)), 1L, static_cast<long>(n) - 1));
  std::vector<Split> splits;
  splits.reserve(iterations);
  Rng rng(seed);
  std::vector<std::string> order = ids;
  for (std::size_t it = 0; it < iterations; ++it) {
    order = ids;
    shuffle(order.begin(), order.end(), rng);
    Split s;
    s.train_contents.assign(order.begin(), order.begin() + n_train);
    s.test_contents.assign(order.begin() + n_train, order.end());
    std::sort(s.train_contents.begin(), s.train_contents.end());
    std::sort(s.test_contents.begin(), s.test_contents.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

MetricsReport summarize(std::vector<Metrics> iterations) {
  MetricsReport r;
  r.n_iterations = iterations.size();
  auto pick = [&](double Metrics::*field) {
    std::vector<double> v;
    for (const auto& m : iterations) v.push_back(m.*field);
    return median_of(v);
  };
  r.median = {pick(&Metrics::srcc), pick(&Metrics::krcc), pick(&Metrics::plcc), pick(&Metrics::rmse)};
  r.iterations = std::move(iterations);
  return r;
}

namespace {

// Rethrows with the split named in the message, keeping the error class.
[[noreturn]] void rethrow_tagged(std::exception_ptr ep, const std::string& tag) {
  try {
    std::rethrow_exception(ep);
  } catch (const NumericError& e) {
    throw NumericError(tag + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(tag + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(tag + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(tag + ": " + e.what());
  } catch (const UsageError& e) {
    throw UsageError(tag + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(tag + ": " + e.what());
  }
}

Metrics score_side(const Trainer& trainer, const DatasetManifest& train, const DatasetManifest& test,
                   std::uint64_t seed) {
  const Predictor predict = trainer(train, seed);
  std::vector<double> pred, truth;
  for (const auto& e : test.entries) {
    pred.push_back(predict(e));
    truth.push_back(e.dmos);
  }
  return compute_metrics(pred, truth);
}

}  // namespace

MetricsReport run_evaluation(const Trainer& trainer, const DatasetManifest& manifest,
                             const std::vector<Split>& splits, const EvalOptions& options) {
  if (splits.empty()) throw ValidationError("run_evaluation: no splits");
  std::vector<Metrics> results(splits.size());
  std::vector<std::exception_ptr> errors(splits.size());
  auto run_one = [&](std::size_t i) {
    try {
      const auto& s = splits[i];
      results[i] = score_side(trainer, manifest.select_contents(s.train_contents),
                              manifest.select_contents(s.test_contents), derive_seed(options.seed, i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(splits.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < splits.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < splits.size(); i += workers) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (errors[i]) rethrow_tagged(errors[i], "split " + std::to_string(i));
  }
  return summarize(std::move(results));
}

MetricsReport cross_dataset_eval(const Trainer& trainer, const std::vector<DatasetManifest>& train,
                                 const std::vector<DatasetManifest>& test, std::uint64_t seed,
                                 std::size_t cycles) {
  const DatasetManifest train_all = merge_manifests(train);
  const DatasetManifest test_all = merge_manifests(test);
  std::set<std::string> seen;
  for (const auto& e : train_all.entries) seen.insert(e.distorted.lexically_normal().string());
  for (const auto& e : test_all.entries) {
    if (seen.count(e.distorted.lexically_normal().string())) {
      throw ValidationError("cross_dataset_eval: " + e.distorted.string() +
                            " appears in both the train and test sets");
    }
  }
  std::vector<Metrics> results;
  for (std::size_t c = 0; c < cycles; ++c) {
    try {
      results.push_back(score_side(trainer, train_all, test_all, derive_seed(seed, c)));
    } catch (...) {
      rethrow_tagged(std::current_exception(), "cycle " + std::to_string(c));
    }
  }
  return summarize(std::move(results));
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  auto m = [](const Metrics& x) {
    return nlohmann::ordered_json{{"srcc", x.srcc}, {"krcc", x.krcc}, {"plcc", x.plcc}, {"rmse", x.rmse}};
  };
  j["n_iterations"] = n_iterations;
  j["median"] = m(median);
  j["iterations"] = nlohmann::ordered_json::array();
  for (const auto& it : iterations) j["iterations"].push_back(m(it));
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  char line[160];
  std::ostringstream os;
  std::snprintf(line, sizeof line, "%-8s %10s %10s %10s %10s\n", "", "SRCC", "KRCC", "PLCC", "RMSE");
  os << line;
  std::snprintf(line, sizeof line, "%-8s %10.4f %10.4f %10.4f %10.4f\n", "median", median.srcc, median.krcc,
                median.plcc, median.rmse);
  os << line;
  os << "iterations: " << n_iterations << "\n";
  return os.str();
}

}  // namespace hdriqa
