// Acceptance checks for the DiffCL library. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fails. Pass criterion numbers as
// arguments to run a subset, e.g. `acceptance 1 4`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "diffcl/commands.hpp"
#include "diffcl/config.hpp"
#include "diffcl/data_io.hpp"
#include "diffcl/diffusion.hpp"
#include "diffcl/eval.hpp"
#include "diffcl/graph.hpp"
#include "diffcl/losses.hpp"
#include "oracles.hpp"
#include "toy_problem.hpp"

namespace {

using namespace diffcl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "diffcl_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<CheckedTensor> denoiser_tensors(DenoiserWeights& value, DenoiserWeights& grad) {
  auto v = named_tensors(value, "");
  auto g = named_tensors(grad, "");
  std::vector<CheckedTensor> out;
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back({v[k].first, v[k].second, g[k].second});
  return out;
}

// 1. Every loss and the end-to-end objective against central differences.
Verdict gradients() {
  const auto start = Clock::now();
  Rng rng(1);
  std::vector<std::pair<std::string, double>> worst;

  {
    DenseMatrix a = oracle::random_matrix(3, 2, rng), b = oracle::random_matrix(3, 2, rng);
    const auto r = infonce(a, b, 0.4);
    const CheckedTensor t[] = {{"v1", &a, &r.grad_view1}, {"v2", &b, &r.grad_view2}};
    worst.push_back({"infonce", grad_check([&] { return infonce(a, b, 0.4).loss; }, t).max_relative_error});
  }
  {
    const DenseMatrix id = oracle::random_matrix(6, 3, rng);
    DenseMatrix v = oracle::random_matrix(6, 3, rng), t = oracle::random_matrix(6, 3, rng);
    const auto r = align_loss(id, v, t, 0.4);
    const CheckedTensor ts[] = {{"v", &v, &r.grad_visual}, {"t", &t, &r.grad_textual}};
    worst.push_back({"align", grad_check([&] { return align_loss(id, v, t, 0.4).loss; }, ts).max_relative_error});
  }
  {
    DenseMatrix s = oracle::random_matrix(2, 5, rng);
    const auto eval = [&] {
      return bpr_loss(std::span(s.row(0).data(), 5), std::span(s.row(1).data(), 5));
    };
    const auto r = eval();
    DenseMatrix g(2, 5);
    for (std::size_t k = 0; k < 5; ++k) {
      g(0, k) = r.grad_positive[k];
      g(1, k) = r.grad_negative[k];
    }
    const CheckedTensor t[] = {{"scores", &s, &g}};
    worst.push_back({"bpr", grad_check([&] { return eval().loss; }, t).max_relative_error});
  }
  {
    DenseMatrix v = oracle::random_matrix(3, 2, rng), t = oracle::random_matrix(3, 2, rng);
    const auto r = l2_reg(v, t, 0.7);
    const CheckedTensor ts[] = {{"v", &v, &r.grad_visual}, {"t", &t, &r.grad_textual}};
    worst.push_back({"l2", grad_check([&] { return l2_reg(v, t, 0.7).loss; }, ts).max_relative_error});
  }
  {
    const auto sched = build_schedule(5, 0.3, 1e-3, 2e-2);
    DenoiserOptions o;
    o.dim = 3;
    o.hidden = 4;
    o.time_dim = 4;
    Denoiser d(o);
    for (auto& [name, m] : named_tensors(d.weights(), ""))
      for (double& x : m->values()) x = 0.5 * rng.normal();
    const DenseMatrix x0 = oracle::random_matrix(6, 3, rng);
    DenoiserWeights g = d.zero_weights();
    diffusion_loss(x0, d, sched, Rng(2), {}, &g);
    const auto report = grad_check([&] { return diffusion_loss(x0, d, sched, Rng(2)).value; },
                                   denoiser_tensors(d.weights(), g));
    worst.push_back({"diffusion", report.max_relative_error});
  }
  {
    auto p = toy::make(6, 8, 4, 3);
    worst.push_back({"total", toy::check_batch_gradient(p, {}).max_relative_error});
  }

  const double elapsed = seconds_since(start);
  Verdict v;
  for (const auto& [name, err] : worst) {
    v.detail += fmt::format("{}={:.1e} ", name, err);
    v.pass = v.pass && err <= 1e-4;
  }
  v.pass = v.pass && elapsed < 10.0;
  v.detail += fmt::format("({:.2f}s)", elapsed);
  return v;
}

// 2. Schedule endpoints and q_sample moments.
Verdict diffusion_statistics() {
  const auto start = Clock::now();
  Rng rng(2);
  std::size_t endpoint_misses = 0, moment_misses = 0;
  const int schedules = 20;
  for (int trial = 0; trial < schedules; ++trial) {
    const std::size_t T = 2 + rng.uniform_index(99);
    const double s = 0.05 + 0.95 * rng.uniform();
    const double lo = 1e-4 + 0.2 * rng.uniform();
    const double hi = lo + (0.99 - lo) * (0.05 + 0.9 * rng.uniform());
    const auto sched = build_schedule(T, s, lo, hi);
    endpoint_misses += sched.one_minus_gamma_bar(1) != s * lo;
    endpoint_misses += sched.one_minus_gamma_bar(T) != s * hi;

    const std::size_t t = 1 + rng.uniform_index(T);
    const std::size_t n = 10000;
    const double x0_value = rng.normal();
    const DenseMatrix xt = q_sample(DenseMatrix(n, 1, x0_value), t, sched, rng.substream(trial));
    double mean = 0, sq = 0;
    for (double x : xt.values()) mean += x;
    mean /= n;
    for (double x : xt.values()) sq += (x - mean) * (x - mean);
    const double var = sq / (n - 1);
    const double want_var = sched.one_minus_gamma_bar(t);
    const bool mean_ok = std::abs(mean - std::sqrt(sched.gamma_bar(t)) * x0_value) <=
                         3 * std::sqrt(want_var / n);
    const bool var_ok = std::abs(var - want_var) <= 3 * want_var * std::sqrt(2.0 / (n - 1));
    moment_misses += !mean_ok + !var_ok;
  }
  const double elapsed = seconds_since(start);
  // 40 moment checks at 3 sigma: allow the one expected chance excursion.
  Verdict v;
  v.pass = endpoint_misses == 0 && moment_misses <= 1 && elapsed < 5.0;
  v.detail = fmt::format("{} schedules, endpoint misses {}, moment misses {}/40 ({:.2f}s)",
                         schedules, endpoint_misses, moment_misses, elapsed);
  return v;
}

SparseMatrix to_sparse(const oracle::Dense& r) {
  std::vector<Triplet> t;
  for (std::size_t u = 0; u < r.size(); ++u)
    for (std::size_t i = 0; i < r[u].size(); ++i)
      if (r[u][i] != 0.0) t.push_back({u, i, 1.0});
  return SparseMatrix::from_triplets(r.size(), r[0].size(), std::move(t));
}

// 3. Propagation and the item-item graph against dense oracles.
Verdict graph_oracles() {
  Rng rng(3);
  double prop_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nodes = 2 + rng.uniform_index(19);
    const std::size_t users = 1 + rng.uniform_index(nodes - 1);
    const std::size_t items = nodes - users;
    const auto r = oracle::random_interactions(users, items, 0.3, rng);
    const auto g = build_norm_adjacency(to_sparse(r));
    const auto a = oracle::bipartite_adjacency(r);
    const DenseMatrix e0 = oracle::random_matrix(nodes, 4, rng);
    const std::size_t layers = rng.uniform_index(4);
    const auto stack = propagate(g.adjacency, e0, layers);
    for (std::size_t l = 0; l <= layers; ++l) {
      const auto want = oracle::power_apply(a, oracle::to_nested(e0), l);
      for (std::size_t n = 0; n < nodes; ++n)
        for (std::size_t c = 0; c < 4; ++c)
          prop_err = std::max(prop_err, std::abs(stack[l](n, c) - want[n][c]));
    }
  }
  double knn_err = 0.0;
  std::size_t pattern_misses = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const DenseMatrix f = oracle::random_matrix(10, 1 + rng.uniform_index(6), rng);
    for (std::size_t k : {1u, 2u, 5u}) {
      const auto g = build_knn_graph(f, {k, false});
      const auto want = oracle::knn_normalized(oracle::to_nested(f), k, false);
      for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
          knn_err = std::max(knn_err, std::abs(g.normalized.at(i, j) - want[i][j]));
          pattern_misses += g.binarized.contains(i, j) != (want[i][j] != 0.0);
        }
    }
  }
  Verdict v;
  v.pass = prop_err <= 1e-12 && knn_err <= 1e-12 && pattern_misses == 0;
  v.detail = fmt::format("propagation max err {:.1e} over 100 graphs; I-I max err {:.1e}, "
                         "pattern misses {} over 150 cases",
                         prop_err, knn_err, pattern_misses);
  return v;
}

// 4. Ranking metrics against a brute-force evaluator.
Verdict metric_oracles() {
  Rng rng(4);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t users = 1 + rng.uniform_index(6), items = 2 + rng.uniform_index(9);
    DenseMatrix scores(users, items);
    for (double& x : scores.values()) x = static_cast<double>(rng.uniform_index(5));
    std::vector<std::vector<std::size_t>> truth(users), masked(users);
    for (std::size_t u = 0; u < users; ++u)
      for (std::size_t i = 0; i < items; ++i) {
        const double x = rng.uniform();
        if (x < 0.2) masked[u].push_back(i);
        else if (x < 0.45) truth[u].push_back(i);
      }
    const std::vector<std::size_t> ks{1, 2, 5, 20};
    const auto r = evaluate(scores, masked, truth, ks);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      double rec = 0, nd = 0;
      std::size_t counted = 0;
      for (std::size_t u = 0; u < users; ++u) {
        if (truth[u].empty()) continue;
        ++counted;
        const std::vector<double> row(scores.row(u).begin(), scores.row(u).end());
        const auto m = oracle::brute_metrics(row, masked[u], truth[u], ks[j]);
        rec += m.recall;
        nd += m.ndcg;
      }
      if (counted == 0) continue;
      mismatches += r.recall[j] != rec / counted;
      mismatches += r.ndcg[j] != nd / counted;
    }
  }
  const std::vector<std::size_t> ranked{4, 7}, truth{7};
  const double hand = ndcg_at_k(ranked, truth, 2);
  Verdict v;
  v.pass = mismatches == 0 && std::abs(hand - 1.0 / std::log2(3.0)) < 1e-15;
  v.detail = fmt::format("200 instances, {} mismatches; rank-2 NDCG {:.4f}", mismatches, hand);
  return v;
}

// 5. Dataset sparsity from the published (users, items, interactions) triples.
Verdict sparsity_table() {
  struct Row {
    const char* name;
    std::size_t users, items, interactions;
    double published;
  };
  const Row rows[] = {{"Baby", 19445, 7050, 160792, 99.88},
                      {"Sports", 35598, 18357, 296337, 99.96},
                      {"Clothing", 24303, 10672, 231780, 99.91}};
  Verdict v;
  for (const auto& r : rows) {
    // Distinct pairs (k mod |U|, k div |U|), all in the train split.
    std::vector<Interaction> pairs(r.interactions);
    for (std::size_t k = 0; k < r.interactions; ++k) pairs[k] = {k % r.users, k / r.users};
    std::sort(pairs.begin(), pairs.end());
    const InteractionDataset d(r.users, r.items, std::move(pairs), {}, {});
    const double pct = 100.0 * dataset_stats(d).sparsity;
    // Agreement at the second decimal place.
    const bool ok = std::abs(pct - r.published) < 0.01;
    v.pass = v.pass && ok;
    v.detail += fmt::format("{} {:.4f}% vs {:.2f}% ", r.name, pct, r.published);
  }
  return v;
}

RunConfig learning_config(std::uint64_t seed, const std::string& variant, const fs::path& out) {
  RunConfig c;
  for (const std::string o :
       {"train.epochs=40", "train.patience=0", "train.batch_size=128", "output.checkpoint=false"}) {
    apply_override(c, o);
  }
  apply_override(c, fmt::format("train.seed={}", seed));
  apply_override(c, fmt::format("synth.seed={}", seed));
  apply_override(c, "variant.name=" + variant);
  c.output_dir = out;
  return c;
}

// Expected Recall@K when unmasked items are ranked uniformly at random.
double random_recall(const InteractionDataset& d, std::size_t k) {
  const auto test = d.items_by_user(d.test());
  const auto val = d.items_by_user(d.validation());
  double sum = 0;
  std::size_t users = 0;
  for (std::size_t u = 0; u < d.user_count(); ++u) {
    if (test[u].empty()) continue;
    const double candidates =
        static_cast<double>(d.item_count() - d.train_items(u).size() - val[u].size());
    sum += std::min(static_cast<double>(k), candidates) / candidates;
    ++users;
  }
  return users ? sum / users : 0.0;
}

// 6. Learning on the synthetic block dataset.
Verdict desk_scale_learning() {
  const fs::path root = scratch("learning");
  double base_r10 = 0, base_r20 = 0, full_r20 = 0, random_r10 = 0, slowest = 0;
  const std::uint64_t seeds[] = {1, 2, 3};
  for (std::uint64_t seed : seeds) {
    for (const std::string variant : {"baseline", "full"}) {
      const RunConfig c = learning_config(seed, variant, root / fmt::format("{}_{}", variant, seed));
      const auto start = Clock::now();
      const LoadedData data = load_data(c);
      const auto run = train_run(c, data, c.output_dir);
      slowest = std::max(slowest, seconds_since(start));
      if (variant == "baseline") {
        base_r10 += run.test.recall_at(10) / 3;
        base_r20 += run.test.recall_at(20) / 3;
        random_r10 += random_recall(data.dataset, 10) / 3;
      } else {
        full_r20 += run.test.recall_at(20) / 3;
      }
    }
  }
  Verdict v;
  const bool a = base_r10 >= 5 * random_r10;
  const bool b = full_r20 >= base_r20;
  v.pass = a && b && slowest < 300.0;
  v.detail = fmt::format(
      "(a) baseline R@10 {:.4f} vs random {:.4f} ({:.1f}x){}; (b) full R@20 {:.4f} vs baseline "
      "{:.4f}{}; slowest run {:.0f}s",
      base_r10, random_r10, base_r10 / random_r10, a ? "" : " FAIL", full_r20, base_r20,
      b ? "" : " FAIL", slowest);
  return v;
}

// 7. Byte-identical metrics from two identical cmd_train runs.
Verdict determinism() {
  const fs::path root = scratch("determinism");
  std::string first;
  for (const char* name : {"a", "b"}) {
    RunConfig c;
    for (const char* o : {"train.epochs=3", "train.batch_size=256", "train.seed=11",
                          "variant.name=full"}) {
      apply_override(c, o);
    }
    c.output_dir = root / name;
    cmd_train(c);
    const std::string bytes = read_file(c.output_dir / "metrics.json");
    if (first.empty()) first = bytes;
    else {
      Verdict v;
      v.pass = bytes == first && !bytes.empty();
      v.detail = fmt::format("metrics.json sha1 {} vs {}", git_blob_sha1(first).substr(0, 12),
                             git_blob_sha1(bytes).substr(0, 12));
      return v;
    }
  }
  return {false, "unreachable"};
}

// 8. One ablation run covers the eight variants under one manifest.
Verdict ablation_harness() {
  const fs::path root = scratch("ablation");
  RunConfig c;
  for (const char* o : {"synth.blocks=2", "synth.users_per_block=15", "synth.items_per_block=10",
                        "synth.interactions_per_user=6", "model.dim=8", "diffusion.hidden=8",
                        "diffusion.time_dim=4", "diffusion.view_depth=2", "train.epochs=1",
                        "train.batch_size=64", "output.checkpoint=false"}) {
    apply_override(c, o);
  }
  c.output_dir = root;
  const auto rows = cmd_ablate(c);

  std::vector<std::string> expected;
  for (const auto& v : variant_suite()) expected.push_back(v.name);
  std::vector<std::string> got;
  for (const auto& r : rows) got.push_back(r.variant);

  const std::string csv = read_file(root / "ablation.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  std::size_t manifests = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    manifests += entry.path().filename() == "manifest.json";
  }
  const std::string manifest = read_file(root / "manifest.json");
  std::size_t listed = 0;
  for (const auto& name : expected) {
    listed += manifest.find("\"variant\": \"" + name + "\"") != std::string::npos ||
              manifest.find("\"variant\":\"" + name + "\"") != std::string::npos;
  }
  Verdict v;
  v.pass = got == expected && lines == 9 && manifests == 1 && listed == 8;
  std::string names;
  for (const auto& g : got) names += (names.empty() ? "" : ",") + g;
  v.detail = fmt::format("{} rows [{}], {} csv data rows, {} manifest(s) listing {} variants",
                         rows.size(), names, lines - 1, manifests, listed);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradients},
      {"diffusion statistics", diffusion_statistics},
      {"graph oracle equivalence", graph_oracles},
      {"metric oracles", metric_oracles},
      {"sparsity reproduction", sparsity_table},
      {"desk-scale learning", desk_scale_learning},
      {"determinism", determinism},
      {"ablation harness", ablation_harness},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[k].first,
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
