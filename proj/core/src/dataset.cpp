#include "diffcl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "diffcl/error.hpp"

namespace diffcl {

namespace {

void check_split(const std::vector<Interaction>& split, std::size_t users, std::size_t items,
                 const char* name) {
  for (const auto& x : split) {
    if (x.user >= users || x.item >= items) {
      throw DataError(fmt::format("{} split: pair ({}, {}) outside {} users x {} items", name,
                                  x.user, x.item, users, items));
    }
  }
}

}  // namespace

InteractionDataset::InteractionDataset(std::size_t user_count, std::size_t item_count,
                                       std::vector<Interaction> train,
                                       std::vector<Interaction> validation,
                                       std::vector<Interaction> test)
    : user_count_(user_count),
      item_count_(item_count),
      train_(std::move(train)),
      validation_(std::move(validation)),
      test_(std::move(test)) {
  check_split(train_, user_count_, item_count_, "train");
  check_split(validation_, user_count_, item_count_, "validation");
  check_split(test_, user_count_, item_count_, "test");

  std::vector<Interaction> all;
  all.reserve(interaction_count());
  all.insert(all.end(), train_.begin(), train_.end());
  all.insert(all.end(), validation_.begin(), validation_.end());
  all.insert(all.end(), test_.begin(), test_.end());
  std::sort(all.begin(), all.end());
  const auto dup = std::adjacent_find(all.begin(), all.end());
  if (dup != all.end()) {
    throw DataError(fmt::format("interaction ({}, {}) appears twice across splits", dup->user,
                                dup->item));
  }

  std::vector<Triplet> entries;
  entries.reserve(train_.size());
  for (const auto& x : train_) entries.push_back({x.user, x.item, 1.0});
  matrix_ = SparseMatrix::from_triplets(user_count_, item_count_, std::move(entries));
}

std::span<const std::size_t> InteractionDataset::train_items(std::size_t user) const {
  const auto offsets = matrix_.row_offsets();
  return matrix_.col_indices().subspan(offsets[user], offsets[user + 1] - offsets[user]);
}

bool InteractionDataset::is_train(std::size_t user, std::size_t item) const {
  return matrix_.contains(user, item);
}

std::vector<std::vector<std::size_t>> InteractionDataset::items_by_user(
    const std::vector<Interaction>& split) const {
  std::vector<std::vector<std::size_t>> out(user_count_);
  for (const auto& x : split) out[x.user].push_back(x.item);
  for (auto& items : out) std::sort(items.begin(), items.end());
  return out;
}

FilteredInteractions five_core_filter(std::span<const RawInteraction> raw,
                                      std::size_t min_degree) {
  if (raw.empty()) throw DataError("five_core_filter: no interactions");

  // Intern ids in order of first appearance.
  std::unordered_map<std::string, std::size_t> user_ids;
  std::unordered_map<std::string, std::size_t> item_ids;
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<Interaction> pairs;
  pairs.reserve(raw.size());
  for (const auto& r : raw) {
    auto [uit, unew] = user_ids.try_emplace(r.user, user_names.size());
    if (unew) user_names.push_back(r.user);
    auto [iit, inew] = item_ids.try_emplace(r.item, item_names.size());
    if (inew) item_names.push_back(r.item);
    pairs.push_back({uit->second, iit->second});
  }
  // Keep first occurrence of each pair, preserving order.
  {
    std::vector<Interaction> sorted = pairs;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() != pairs.size()) {
      std::vector<bool> seen(sorted.size(), false);
      std::vector<Interaction> unique;
      unique.reserve(sorted.size());
      for (const auto& p : pairs) {
        const auto pos = static_cast<std::size_t>(
            std::lower_bound(sorted.begin(), sorted.end(), p) - sorted.begin());
        if (!seen[pos]) {
          seen[pos] = true;
          unique.push_back(p);
        }
      }
      pairs = std::move(unique);
    }
  }

  std::vector<bool> alive(pairs.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::size_t> user_degree(user_names.size(), 0);
    std::vector<std::size_t> item_degree(item_names.size(), 0);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      if (!alive[k]) continue;
      ++user_degree[pairs[k].user];
      ++item_degree[pairs[k].item];
    }
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      if (alive[k] && (user_degree[pairs[k].user] < min_degree ||
                       item_degree[pairs[k].item] < min_degree)) {
        alive[k] = false;
        changed = true;
      }
    }
  }

  constexpr std::size_t kUnmapped = static_cast<std::size_t>(-1);
  std::vector<std::size_t> user_remap(user_names.size(), kUnmapped);
  std::vector<std::size_t> item_remap(item_names.size(), kUnmapped);
  FilteredInteractions out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (!alive[k]) continue;
    auto& u = user_remap[pairs[k].user];
    if (u == kUnmapped) {
      u = out.ids.users.size();
      out.ids.users.push_back(user_names[pairs[k].user]);
    }
    auto& i = item_remap[pairs[k].item];
    if (i == kUnmapped) {
      i = out.ids.items.size();
      out.ids.items.push_back(item_names[pairs[k].item]);
    }
    out.interactions.push_back({u, i});
  }
  if (out.interactions.empty()) {
    throw DataError(fmt::format(
        "dataset vanished: no interactions survive {}-core filtering of {} raw records",
        min_degree, raw.size()));
  }
  std::sort(out.interactions.begin(), out.interactions.end());
  return out;
}

InteractionDataset split_dataset(std::span<const Interaction> interactions,
                                 std::size_t user_count, std::size_t item_count,
                                 const SplitRatios& ratios, const Rng& rng, SplitMode mode) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (std::abs(total - 1.0) > 1e-9 || ratios.train <= 0.0 || ratios.validation < 0.0 ||
      ratios.test < 0.0) {
    throw ConfigError(fmt::format("split ratios {}/{}/{} must be nonnegative and sum to 1",
                                  ratios.train, ratios.validation, ratios.test));
  }

  std::vector<Interaction> train, validation, test;
  if (mode == SplitMode::kPerUser) {
    std::vector<std::vector<std::size_t>> by_user(user_count);
    for (const auto& x : interactions) {
      if (x.user >= user_count) throw DataError("split_dataset: user index out of range");
      by_user[x.user].push_back(x.item);
    }
    for (std::size_t u = 0; u < user_count; ++u) {
      auto& items = by_user[u];
      std::sort(items.begin(), items.end());
      Rng user_rng = rng.substream(u);
      for (std::size_t k = items.size(); k > 1; --k) {
        std::swap(items[k - 1], items[user_rng.uniform_index(k)]);
      }
      const std::size_t n = items.size();
      std::size_t n_val = 0, n_test = 0;
      if (n >= 3) {
        const auto share = [n](double ratio) -> std::size_t {
          if (ratio <= 0.0) return 0;
          return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratio)));
        };
        n_val = share(ratios.validation);
        n_test = share(ratios.test);
        while (n_val + n_test >= n) {
          if (n_test >= n_val && n_test > 0) {
            --n_test;
          } else {
            --n_val;
          }
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const Interaction x{u, items[k]};
        if (k < n_val) {
          validation.push_back(x);
        } else if (k < n_val + n_test) {
          test.push_back(x);
        } else {
          train.push_back(x);
        }
      }
    }
  } else {
    std::vector<Interaction> shuffled(interactions.begin(), interactions.end());
    std::sort(shuffled.begin(), shuffled.end());
    Rng global_rng = rng.substream("global");
    for (std::size_t k = shuffled.size(); k > 1; --k) {
      std::swap(shuffled[k - 1], shuffled[global_rng.uniform_index(k)]);
    }
    const auto n = shuffled.size();
    const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train));
    const auto n_val = static_cast<std::size_t>(std::llround(n * ratios.validation));
    std::vector<bool> has_train(user_count, false);
    for (std::size_t k = 0; k < n; ++k) {
      if (k < n_train) {
        train.push_back(shuffled[k]);
        has_train[shuffled[k].user] = true;
      } else if (k < n_train + n_val) {
        validation.push_back(shuffled[k]);
      } else {
        test.push_back(shuffled[k]);
      }
    }
    const auto rescue = [&](std::vector<Interaction>& held) {
      std::vector<Interaction> keep;
      for (const auto& x : held) {
        if (!has_train[x.user]) {
          train.push_back(x);
          has_train[x.user] = true;
        } else {
          keep.push_back(x);
        }
      }
      held = std::move(keep);
    };
    rescue(validation);
    rescue(test);
  }

  // Items without a train pair would be isolated in the interaction graph.
  std::vector<bool> item_has_train(item_count, false);
  for (const auto& x : train) {
    if (x.item >= item_count) throw DataError("split_dataset: item index out of range");
    item_has_train[x.item] = true;
  }
  const auto move_orphans = [&](std::vector<Interaction>& held) {
    std::sort(held.begin(), held.end());
    std::vector<Interaction> keep;
    for (const auto& x : held) {
      if (x.item >= item_count) throw DataError("split_dataset: item index out of range");
      if (!item_has_train[x.item]) {
        train.push_back(x);
        item_has_train[x.item] = true;
      } else {
        keep.push_back(x);
      }
    }
    held = std::move(keep);
  };
  move_orphans(validation);
  move_orphans(test);

  std::sort(train.begin(), train.end());
  std::sort(validation.begin(), validation.end());
  std::sort(test.begin(), test.end());
  return InteractionDataset(user_count, item_count, std::move(train), std::move(validation),
                            std::move(test));
}

std::vector<BprTriplet> sample_triplets(const InteractionDataset& dataset,
                                        std::size_t batch_size, Rng& rng) {
  const auto& train = dataset.train();
  if (train.empty()) throw DataError("sample_triplets: empty train split");
  std::vector<BprTriplet> out;
  out.reserve(batch_size);
  std::size_t skipped = 0;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto& pair = train[rng.uniform_index(train.size())];
    if (dataset.train_items(pair.user).size() >= dataset.item_count()) {
      ++skipped;
      continue;
    }
    std::size_t negative = rng.uniform_index(dataset.item_count());
    while (dataset.is_train(pair.user, negative)) {
      negative = rng.uniform_index(dataset.item_count());
    }
    out.push_back({pair.user, pair.item, negative});
  }
  if (skipped > 0) {
    spdlog::warn("sample_triplets: skipped {} draws for users who interacted with every item",
                 skipped);
  }
  return out;
}

double sparsity(std::size_t users, std::size_t items, std::size_t interactions) {
  const double cells = static_cast<double>(users) * static_cast<double>(items);
  if (cells == 0.0) return 0.0;
  return 1.0 - static_cast<double>(interactions) / cells;
}

DatasetStats dataset_stats(const InteractionDataset& dataset) {
  DatasetStats s;
  s.users = dataset.user_count();
  s.items = dataset.item_count();
  s.interactions = dataset.interaction_count();
  s.sparsity = sparsity(s.users, s.items, s.interactions);
  return s;
}

SynthInteractions synth_interactions(const SynthOptions& options, const Rng& rng) {
  if (options.block_count == 0 || options.users_per_block == 0 ||
      options.items_per_block == 0 || options.interactions_per_user == 0 ||
      options.visual_dim == 0 || options.textual_dim == 0) {
    throw ConfigError("synth: all counts and dimensions must be >= 1");
  }
  if (options.noise_rate < 0.0 || options.noise_rate > 1.0) {
    throw ConfigError(fmt::format("synth: noise_rate {} outside [0, 1]", options.noise_rate));
  }
  const std::size_t blocks = options.block_count;
  const std::size_t per_block = options.items_per_block;
  const bool can_cross = blocks > 1 && options.noise_rate > 0.0;
  const std::size_t reachable =
      can_cross ? blocks * per_block : per_block;
  if (options.interactions_per_user > reachable) {
    throw ConfigError(fmt::format("synth: {} interactions per user but only {} reachable items",
                                  options.interactions_per_user, reachable));
  }

  SynthInteractions out;
  out.user_count = blocks * options.users_per_block;
  out.item_count = blocks * per_block;
  for (std::size_t u = 0; u < out.user_count; ++u) out.user_block.push_back(u / options.users_per_block);
  for (std::size_t i = 0; i < out.item_count; ++i) out.item_block.push_back(i / per_block);

  if (!(options.item_skew >= 0.0)) {
    throw ConfigError(fmt::format("synth: item_skew {} must be >= 0", options.item_skew));
  }
  // Within-block popularity: the j-th item of a block has weight (j+1)^-skew.
  std::vector<double> cumulative(per_block);
  double mass = 0.0;
  for (std::size_t j = 0; j < per_block; ++j) {
    mass += std::pow(static_cast<double>(j + 1), -options.item_skew);
    cumulative[j] = mass;
  }
  const auto draw_slot = [&](Rng& r) -> std::size_t {
    if (options.item_skew == 0.0) return r.uniform_index(per_block);
    const double x = r.uniform() * mass;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), per_block - 1);
  };

  Rng inter_rng = rng.substream("synth/interactions");
  for (std::size_t u = 0; u < out.user_count; ++u) {
    Rng user_rng = inter_rng.substream(u);
    const std::size_t own = out.user_block[u];
    std::vector<std::size_t> chosen;
    while (chosen.size() < options.interactions_per_user) {
      std::size_t block = own;
      if (can_cross && user_rng.bernoulli(options.noise_rate)) {
        block = user_rng.uniform_index(blocks - 1);
        if (block >= own) ++block;
      }
      const std::size_t item = block * per_block + draw_slot(user_rng);
      if (std::find(chosen.begin(), chosen.end(), item) == chosen.end()) chosen.push_back(item);
    }
    for (std::size_t item : chosen) out.interactions.push_back({u, item});
  }
  std::sort(out.interactions.begin(), out.interactions.end());

  const auto make_features = [&](std::size_t dim, std::string_view purpose) {
    Rng feat_rng = rng.substream(purpose);
    DenseMatrix centroids(blocks, dim);
    for (double& v : centroids.values()) v = feat_rng.normal();
    DenseMatrix features(out.item_count, dim);
    for (std::size_t i = 0; i < out.item_count; ++i) {
      const auto c = centroids.row(out.item_block[i]);
      auto row = features.row(i);
      for (std::size_t j = 0; j < dim; ++j) {
        row[j] = c[j] + options.feature_jitter * feat_rng.normal();
      }
    }
    return features;
  };
  out.features.visual = make_features(options.visual_dim, "synth/visual");
  out.features.textual = make_features(options.textual_dim, "synth/textual");
  return out;
}

SynthDataset synth_dataset(const SynthOptions& options, const Rng& rng) {
  auto raw = synth_interactions(options, rng);
  SynthDataset out;
  out.dataset = split_dataset(raw.interactions, raw.user_count, raw.item_count, options.ratios,
                              rng.substream("split"));
  out.features = std::move(raw.features);
  out.user_block = std::move(raw.user_block);
  out.item_block = std::move(raw.item_block);
  return out;
}

}  // namespace diffcl
