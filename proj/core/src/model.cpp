#include "diffcl/model.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/fmt/fmt.h>

#include "diffcl/error.hpp"

namespace diffcl {

std::string VariantMask::name() const {
  if (diff && align && enhance) return "full";
  if (!diff && !align && !enhance) return "baseline";
  std::string out;
  const auto append = [&out](const char* part) {
    if (!out.empty()) out += '+';
    out += part;
  };
  if (diff) append("diff");
  if (align) append("align");
  if (enhance) append("h");
  return out;
}

std::vector<Variant> variant_suite() {
  const VariantMask masks[] = {
      {false, false, false}, {true, false, false}, {false, true, false},
      {false, false, true},  {true, true, false},  {true, false, true},
      {false, true, true},   {true, true, true},
  };
  std::vector<Variant> out;
  for (const auto& m : masks) out.push_back({m.name(), m});
  return out;
}

std::optional<VariantMask> parse_variant(std::string_view name) {
  if (name == "DiffCL") return VariantMask{};
  for (const auto& v : variant_suite()) {
    if (v.name == name) return v.mask;
  }
  return std::nullopt;
}

void ModelOptions::validate() const {
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be >= 1");
  if (!(id_init_std >= 0.0)) throw ConfigError("id_init_std must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError(fmt::format("dropout {} must be in [0, 1)", dropout));
  }
  if (view_depth == 0 || view_depth > schedule.steps) {
    throw ConfigError(fmt::format("view depth {} must be in [1, T={}]", view_depth,
                                  schedule.steps));
  }
  if (learned_variance && !(schedule.scale > 0.0)) {
    throw ConfigError("learned variance needs a noise scale > 0");
  }
  weights.validate();
  NoiseSchedule check(schedule);
  (void)check;
}

DenoiserOptions ModelOptions::denoiser_options() const {
  DenoiserOptions o;
  o.dim = embedding_dim;
  o.hidden = denoiser_hidden;
  o.time_dim = denoiser_time_dim;
  o.learned_variance = learned_variance;
  return o;
}

std::vector<std::pair<std::string, DenseMatrix*>> DiffClParams::tensors() {
  std::vector<std::pair<std::string, DenseMatrix*>> out{
      {"user_id", &user_id},     {"item_id", &item_id},     {"w_visual", &w_visual},
      {"b_visual", &b_visual},   {"w_textual", &w_textual}, {"b_textual", &b_textual},
      {"fusion", &fusion},
  };
  for (auto& t : named_tensors(visual_denoiser.weights(), "visual_denoiser.")) out.push_back(t);
  for (auto& t : named_tensors(textual_denoiser.weights(), "textual_denoiser.")) {
    out.push_back(t);
  }
  return out;
}

DiffClParams DiffClParams::zeros_like() const {
  DiffClParams z;
  z.user_id = DenseMatrix(user_id.rows(), user_id.cols());
  z.item_id = DenseMatrix(item_id.rows(), item_id.cols());
  z.w_visual = DenseMatrix(w_visual.rows(), w_visual.cols());
  z.b_visual = DenseMatrix(b_visual.rows(), b_visual.cols());
  z.w_textual = DenseMatrix(w_textual.rows(), w_textual.cols());
  z.b_textual = DenseMatrix(b_textual.rows(), b_textual.cols());
  z.fusion = DenseMatrix(1, 1);
  z.visual_denoiser = Denoiser(visual_denoiser.options());
  z.textual_denoiser = Denoiser(textual_denoiser.options());
  return z;
}

bool DiffClParams::all_finite() {
  for (const auto& [name, t] : tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

DiffClParams init_params(const ModelShape& shape, const ModelOptions& options, const Rng& rng) {
  options.validate();
  const std::size_t d = options.embedding_dim;
  const auto normal = [&rng](std::size_t rows, std::size_t cols, std::string_view purpose,
                             double stddev = 0.0) {
    Rng r = rng.substream(purpose);
    DenseMatrix m(rows, cols);
    if (stddev <= 0.0) stddev = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (double& v : m.values()) v = stddev * r.normal();
    return m;
  };
  DiffClParams p;
  p.user_id = normal(shape.users, d, "init/user_id", options.id_init_std);
  p.item_id = normal(shape.items, d, "init/item_id", options.id_init_std);
  p.w_visual = normal(shape.visual_dim, d, "init/w_visual");
  p.b_visual = DenseMatrix(1, d);
  p.w_textual = normal(shape.textual_dim, d, "init/w_textual");
  p.b_textual = DenseMatrix(1, d);
  p.fusion = DenseMatrix(1, 1, 0.5);
  const DenoiserOptions dopts = options.denoiser_options();
  p.visual_denoiser = Denoiser::initialized(dopts, rng.substream("init/visual_denoiser"));
  p.textual_denoiser = Denoiser::initialized(dopts, rng.substream("init/textual_denoiser"));
  return p;
}

ModelGraphs build_graphs(const InteractionDataset& dataset, const ModalityFeatures& features,
                         const KnnOptions& knn) {
  if (features.visual.rows() != dataset.item_count() ||
      features.textual.rows() != dataset.item_count()) {
    throw ShapeError(fmt::format("feature rows ({}, {}) do not match {} items",
                                 features.visual.rows(), features.textual.rows(),
                                 dataset.item_count()));
  }
  return ModelGraphs{build_norm_adjacency(dataset), build_knn_graph(features.visual, knn),
                     build_knn_graph(features.textual, knn)};
}

namespace {

// Inverted dropout mask: 0 or 1 / (1 - p).
DenseMatrix dropout_mask(std::size_t rows, std::size_t cols, double p, Rng rng) {
  DenseMatrix m(rows, cols, 1.0);
  if (p <= 0.0) return m;
  const double keep = 1.0 / (1.0 - p);
  for (double& v : m.values()) v = rng.bernoulli(p) ? 0.0 : keep;
  return m;
}

void check_params(const DiffClParams& params, const ModalityFeatures& features,
                  const ModelGraphs& graphs, const ModelOptions& options) {
  const std::size_t d = options.embedding_dim;
  const auto& g = graphs.bipartite;
  if (params.user_id.rows() != g.user_count || params.item_id.rows() != g.item_count ||
      params.user_id.cols() != d || params.item_id.cols() != d) {
    throw ShapeError("ID tables do not match the graph or embedding dim");
  }
  if (params.w_visual.rows() != features.visual.cols() ||
      params.w_textual.rows() != features.textual.cols()) {
    throw ShapeError("projection weights do not match the feature dims");
  }
  if (features.visual.rows() != g.item_count || features.textual.rows() != g.item_count) {
    throw ShapeError("feature rows do not match the item count");
  }
}

// Forward pass intermediates needed by the backward pass.
struct Trace {
  DenseMatrix visual_mask;
  DenseMatrix textual_mask;
  EmbeddingSet emb;
};

Trace run_forward(const DiffClParams& params, const ModalityFeatures& features,
                  const ModelGraphs& graphs, const ModelOptions& options,
                  const VariantMask& mask, const Rng& rng, bool training) {
  check_params(params, features, graphs, options);
  const std::size_t users = graphs.bipartite.user_count;
  const std::size_t items = graphs.bipartite.item_count;
  const std::size_t d = options.embedding_dim;
  const double p = training ? options.dropout : 0.0;
  const SparseMatrix& adj = graphs.bipartite.adjacency;

  Trace tr;
  tr.visual_mask = dropout_mask(items, d, p, rng.substream("dropout/visual"));
  tr.textual_mask = dropout_mask(items, d, p, rng.substream("dropout/textual"));

  DenseMatrix proj_v = matmul(features.visual, params.w_visual);
  add_row_broadcast(proj_v, params.b_visual);
  DenseMatrix proj_t = matmul(features.textual, params.w_textual);
  add_row_broadcast(proj_t, params.b_textual);
  proj_v = hadamard(proj_v, tr.visual_mask);
  proj_t = hadamard(proj_t, tr.textual_mask);

  EmbeddingSet& e = tr.emb;
  e.user_count = users;
  e.visual = encode(adj, vstack(params.user_id, proj_v), options.layers);
  e.textual = encode(adj, vstack(params.user_id, proj_t), options.layers);
  e.id = encode(adj, vstack(params.user_id, params.item_id), options.layers);

  e.visual_final = e.visual;
  e.textual_final = e.textual;
  if (mask.enhance) {
    e.visual_aggregate =
        aggregate_ii(graphs.visual, slice_rows(e.visual, users, items), options.ii_layers);
    e.textual_aggregate =
        aggregate_ii(graphs.textual, slice_rows(e.textual, users, items), options.ii_layers);
    for (std::size_t i = 0; i < items; ++i) {
      auto rv = e.visual_final.row(users + i);
      auto rt = e.textual_final.row(users + i);
      const auto av = e.visual_aggregate.row(i);
      const auto at = e.textual_aggregate.row(i);
      for (std::size_t k = 0; k < d; ++k) {
        rv[k] += av[k];
        rt[k] += at[k];
      }
    }
  }
  const double mu = params.fusion_weight();
  e.fused = scaled(e.visual_final, mu);
  add_scaled(e.fused, e.textual_final, 1.0 - mu);
  return tr;
}

struct ViewRun {
  DenseMatrix first, second;
  ViewTape tape1, tape2;
};

ViewRun make_views(const DenseMatrix& x0, const Denoiser& denoiser,
                   const NoiseSchedule& schedule, std::size_t depth, const Rng& rng,
                   std::span<const std::size_t> keys, bool keep_tape) {
  ViewRun v;
  v.first = generate_view(x0, depth, denoiser, schedule, rng.substream(1), keys,
                          keep_tape ? &v.tape1 : nullptr);
  v.second = generate_view(x0, depth, denoiser, schedule, rng.substream(2), keys,
                           keep_tape ? &v.tape2 : nullptr);
  return v;
}

}  // namespace

EmbeddingSet forward(const DiffClParams& params, const ModalityFeatures& features,
                     const ModelGraphs& graphs, const ModelOptions& options,
                     const VariantMask& mask, const Rng& rng, bool training) {
  Trace tr = run_forward(params, features, graphs, options, mask, rng, training);
  if (mask.diff) {
    const NoiseSchedule schedule(options.schedule);
    const Rng views = rng.substream("views");
    auto v = make_views(tr.emb.visual, params.visual_denoiser, schedule, options.view_depth,
                        views.substream("visual"), {}, false);
    auto t = make_views(tr.emb.textual, params.textual_denoiser, schedule, options.view_depth,
                        views.substream("textual"), {}, false);
    tr.emb.visual_views = ViewPair{std::move(v.first), std::move(v.second)};
    tr.emb.textual_views = ViewPair{std::move(t.first), std::move(t.second)};
  }
  return std::move(tr.emb);
}

DenseMatrix predict_scores(const EmbeddingSet& e, std::span<const std::size_t> users,
                           std::span<const std::size_t> items) {
  const std::size_t u0 = e.user_count;
  const std::size_t total_items = e.fused.rows() - u0;
  DenseMatrix out(users.size(), items.size());
  for (std::size_t a = 0; a < users.size(); ++a) {
    if (users[a] >= u0) throw ShapeError(fmt::format("user {} out of range", users[a]));
    const auto fu = e.fused.row(users[a]);
    const auto iu = e.id.row(users[a]);
    for (std::size_t b = 0; b < items.size(); ++b) {
      if (items[b] >= total_items) throw ShapeError(fmt::format("item {} out of range", items[b]));
      out(a, b) = dot(fu, e.fused.row(u0 + items[b])) + dot(iu, e.id.row(u0 + items[b]));
    }
  }
  return out;
}

DenseMatrix predict_all_scores(const EmbeddingSet& e) {
  const std::size_t users = e.user_count;
  const std::size_t items = e.fused.rows() - users;
  DenseMatrix out = matmul_nt(slice_rows(e.fused, 0, users), slice_rows(e.fused, users, items));
  add_scaled(out, matmul_nt(slice_rows(e.id, 0, users), slice_rows(e.id, users, items)));
  return out;
}

LossBreakdown batch_loss(const DiffClParams& params, const ModalityFeatures& features,
                         const ModelGraphs& graphs, const ModelOptions& options,
                         const VariantMask& mask, std::span<const BprTriplet> batch,
                         const Rng& step_rng, DiffClParams* grads,
                         DetachedValues* detached) {
  if (batch.empty()) throw ShapeError("batch_loss: empty batch");
  const Trace tr = run_forward(params, features, graphs, options, mask, step_rng, true);
  const EmbeddingSet& e = tr.emb;
  const std::size_t users = graphs.bipartite.user_count;
  const std::size_t items = graphs.bipartite.item_count;
  const std::size_t n = users + items;
  const std::size_t d = options.embedding_dim;
  const LossWeights& w = options.weights;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double mu = params.fusion_weight();
  for (const auto& t : batch) {
    if (t.user >= users || t.positive >= items || t.negative >= items) {
      throw ShapeError("batch_loss: triplet index out of range");
    }
  }

  LossBreakdown out;
  DenseMatrix g_fused(n, d), g_id(n, d), g_vf(n, d), g_tf(n, d), g_v(n, d), g_t(n, d);

  // BPR, averaged over triplets.
  std::vector<double> pos(batch.size()), neg(batch.size());
  const auto score = [&](std::size_t u, std::size_t i) {
    return dot(e.fused.row(u), e.fused.row(users + i)) + dot(e.id.row(u), e.id.row(users + i));
  };
  for (std::size_t k = 0; k < batch.size(); ++k) {
    pos[k] = score(batch[k].user, batch[k].positive);
    neg[k] = score(batch[k].user, batch[k].negative);
  }
  const BprResult bpr = bpr_loss(pos, neg);
  out.bpr = bpr.loss * inv_b;
  const auto score_backward = [&](std::size_t u, std::size_t i, double g) {
    const std::size_t ri = users + i;
    for (std::size_t k = 0; k < d; ++k) {
      g_fused(u, k) += g * e.fused(ri, k);
      g_fused(ri, k) += g * e.fused(u, k);
      g_id(u, k) += g * e.id(ri, k);
      g_id(ri, k) += g * e.id(u, k);
    }
  };
  for (std::size_t k = 0; k < batch.size(); ++k) {
    score_backward(batch[k].user, batch[k].positive, bpr.grad_positive[k] * inv_b);
    score_backward(batch[k].user, batch[k].negative, bpr.grad_negative[k] * inv_b);
  }

  // Regularizer on the batch rows of the final modality embeddings.
  std::vector<std::size_t> reg_rows;
  reg_rows.reserve(3 * batch.size());
  for (const auto& t : batch) {
    reg_rows.push_back(t.user);
    reg_rows.push_back(users + t.positive);
    reg_rows.push_back(users + t.negative);
  }
  {
    const L2Result reg = l2_reg(gather_rows(e.visual_final, reg_rows),
                                gather_rows(e.textual_final, reg_rows), w.regularization);
    out.regularization = reg.loss * inv_b;
    scatter_add_rows(g_vf, reg_rows, scaled(reg.grad_visual, inv_b));
    scatter_add_rows(g_tf, reg_rows, scaled(reg.grad_textual, inv_b));
  }

  if (mask.align) {
    std::size_t begin = 0, count = n;
    if (options.align_rows == AlignRows::kUsers) count = users;
    if (options.align_rows == AlignRows::kItems) begin = users, count = items;
    GaussianSummary anchor;
    if (detached != nullptr && detached->frozen) {
      anchor = detached->align_anchor;
    } else {
      anchor = gaussian_summary(slice_rows(e.id, begin, count));
      if (detached != nullptr) detached->align_anchor = anchor;
    }
    const AlignResult al = align_loss(anchor, slice_rows(e.visual_final, begin, count),
                                      slice_rows(e.textual_final, begin, count), w.alignment);
    out.alignment = al.loss;
    for (std::size_t r = 0; r < count; ++r) {
      for (std::size_t k = 0; k < d; ++k) {
        g_vf(begin + r, k) += al.grad_visual(r, k);
        g_tf(begin + r, k) += al.grad_textual(r, k);
      }
    }
  }

  // Fusion.
  double g_mu = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      const double g = g_fused(r, k);
      g_vf(r, k) += mu * g;
      g_tf(r, k) += (1.0 - mu) * g;
      g_mu += g * (e.visual_final(r, k) - e.textual_final(r, k));
    }
  }

  // Enhancement adjoint.
  g_v = g_vf;
  g_t = g_tf;
  if (mask.enhance) {
    const DenseMatrix av = aggregate_ii_backward(graphs.visual, slice_rows(g_vf, users, items),
                                                 options.ii_layers);
    const DenseMatrix at = aggregate_ii_backward(graphs.textual, slice_rows(g_tf, users, items),
                                                 options.ii_layers);
    for (std::size_t i = 0; i < items; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        g_v(users + i, k) += av(i, k);
        g_t(users + i, k) += at(i, k);
      }
    }
  }

  if (mask.diff) {
    // Views for the batch's distinct users and items only.
    std::vector<std::size_t> batch_users, batch_items;
    for (const auto& t : batch) {
      batch_users.push_back(t.user);
      batch_items.push_back(t.positive);
      batch_items.push_back(t.negative);
    }
    std::sort(batch_users.begin(), batch_users.end());
    batch_users.erase(std::unique(batch_users.begin(), batch_users.end()), batch_users.end());
    std::sort(batch_items.begin(), batch_items.end());
    batch_items.erase(std::unique(batch_items.begin(), batch_items.end()), batch_items.end());
    std::vector<std::size_t> rows = batch_users;
    for (std::size_t i : batch_items) rows.push_back(users + i);
    const std::size_t nu = batch_users.size();
    const std::size_t ni = batch_items.size();

    const NoiseSchedule schedule(options.schedule);
    const Rng views = step_rng.substream("views");
    const Rng diff_rng = step_rng.substream("diffusion_loss");

    const auto modality = [&](const DenseMatrix& emb, const Denoiser& den, const char* tag,
                              DenseMatrix& g_emb, Denoiser* g_den, DenseMatrix* target) {
      const DenseMatrix x0 = gather_rows(emb, rows);
      if (target != nullptr && !detached->frozen) *target = x0;
      const DenseMatrix& diff_x0 = target != nullptr ? *target : x0;
      ViewRun v = make_views(x0, den, schedule, options.view_depth, views.substream(tag), rows,
                             grads != nullptr);
      DenseMatrix g1(rows.size(), d), g2(rows.size(), d);
      double loss = 0.0;
      const auto block = [&](std::size_t begin, std::size_t count) {
        if (count < 2) return;
        const InfoNceResult r = infonce(slice_rows(v.first, begin, count),
                                        slice_rows(v.second, begin, count), w.temperature);
        const double inv = 1.0 / static_cast<double>(count);
        loss += r.loss * inv;
        const double s = w.contrastive * inv;
        for (std::size_t a = 0; a < count; ++a) {
          for (std::size_t k = 0; k < d; ++k) {
            g1(begin + a, k) = s * r.grad_view1(a, k);
            g2(begin + a, k) = s * r.grad_view2(a, k);
          }
        }
      };
      block(0, nu);
      block(nu, ni);

      DenoiserWeights* dw = g_den != nullptr ? &g_den->weights() : nullptr;
      const DiffusionLoss dl =
          diffusion_loss(diff_x0, den, schedule, diff_rng.substream(tag), rows, dw, w.diffusion);
      out.diffusion += dl.value;

      if (grads != nullptr) {
        DenseMatrix gx = generate_view_backward(v.tape1, den, schedule, g1, dw);
        add_scaled(gx, generate_view_backward(v.tape2, den, schedule, g2, dw));
        scatter_add_rows(g_emb, rows, gx);
      }
      return loss;
    };
    out.contrastive += modality(e.visual, params.visual_denoiser, "visual", g_v,
                                grads ? &grads->visual_denoiser : nullptr,
                                detached ? &detached->diffusion_visual : nullptr);
    out.contrastive += modality(e.textual, params.textual_denoiser, "textual", g_t,
                                grads ? &grads->textual_denoiser : nullptr,
                                detached ? &detached->diffusion_textual : nullptr);
  }

  out.total = total_loss(out, w);
  if (grads == nullptr) return out;

  const SparseMatrix& adj = graphs.bipartite.adjacency;
  const DenseMatrix gx_v = encode_backward(adj, g_v, options.layers);
  const DenseMatrix gx_t = encode_backward(adj, g_t, options.layers);
  const DenseMatrix gx_id = encode_backward(adj, g_id, options.layers);

  DenseMatrix g_user = slice_rows(gx_id, 0, users);
  add_scaled(g_user, slice_rows(gx_v, 0, users));
  add_scaled(g_user, slice_rows(gx_t, 0, users));
  add_scaled(grads->user_id, g_user);
  add_scaled(grads->item_id, slice_rows(gx_id, users, items));

  const DenseMatrix gp_v = hadamard(slice_rows(gx_v, users, items), tr.visual_mask);
  const DenseMatrix gp_t = hadamard(slice_rows(gx_t, users, items), tr.textual_mask);
  add_scaled(grads->w_visual, matmul_tn(features.visual, gp_v));
  add_scaled(grads->b_visual, column_sums(gp_v));
  add_scaled(grads->w_textual, matmul_tn(features.textual, gp_t));
  add_scaled(grads->b_textual, column_sums(gp_t));
  grads->fusion(0, 0) += g_mu;
  return out;
}

}  // namespace diffcl
