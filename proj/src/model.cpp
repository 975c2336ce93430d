#include "vibrosense/model.hpp"

#include <cmath>
#include <stdexcept>

#include "vibrosense/io.hpp"
#include "vibrosense/parallel.hpp"
#include "vibrosense/rng.hpp"
#include "vibrosense/train.hpp"

namespace vibro {

void ModelConfig::validate() const {
  if (d_model <= 0 || d_model % n_heads != 0)
    throw std::invalid_argument("d_model must be divisible by n_heads");
  if (token_bins <= 0 || n_tokens <= 0 || n_points <= 0 || k_cont <= 0)
    throw std::invalid_argument("invalid model geometry");
  if (n_levels != 6)
    throw std::invalid_argument("level head is defined over 6 levels");
}

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_deriv(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

struct LnCache {
  Eigen::VectorXd inv_std;   // per column
  Eigen::MatrixXd xhat;      // normalized input
};

Eigen::MatrixXd layernorm_forward(const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& gain,
                                  const Eigen::VectorXd& bias, LnCache& cache) {
  const Eigen::Index d = x.rows(), n = x.cols();
  cache.inv_std.resize(n);
  cache.xhat.resize(d, n);
  Eigen::MatrixXd y(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double mu = x.col(j).mean();
    const double var = (x.col(j).array() - mu).square().sum() / double(d);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std(j) = inv;
    cache.xhat.col(j) = (x.col(j).array() - mu) * inv;
    y.col(j) = gain.array() * cache.xhat.col(j).array() + bias.array();
  }
  return y;
}

Eigen::MatrixXd layernorm_backward(const Eigen::MatrixXd& dy,
                                   const Eigen::VectorXd& gain,
                                   const LnCache& cache,
                                   Eigen::VectorXd& dgain,
                                   Eigen::VectorXd& dbias) {
  const Eigen::Index d = dy.rows(), n = dy.cols();
  Eigen::MatrixXd dx(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    dgain.array() += dy.col(j).array() * cache.xhat.col(j).array();
    dbias += dy.col(j);
    const Eigen::ArrayXd dxhat = dy.col(j).array() * gain.array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * cache.xhat.col(j).array()).mean();
    dx.col(j) = cache.inv_std(j) *
                (dxhat - m1 - cache.xhat.col(j).array() * m2);
  }
  return dx;
}

struct LayerCache {
  Eigen::MatrixXd x_in;
  LnCache ln1;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> attn;  // per head, n x n (query row, key col)
  Eigen::MatrixXd h;                  // concatenated head outputs
  Eigen::MatrixXd x_mid;
  LnCache ln2;
  Eigen::MatrixXd u;  // feed-forward pre-activation
  Eigen::MatrixXd g;  // gelu(u)
};

// key_mask[j] true => position j is excluded as an attention key in every
// layer, which makes its content exactly irrelevant to unmasked positions.
Eigen::MatrixXd encoder_forward(const Eigen::MatrixXd& x,
                                const EncoderLayerParams& lp, int n_heads,
                                const Mask& key_mask, LayerCache& cache) {
  const Eigen::Index d = x.rows(), n = x.cols();
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(double(dh));

  cache.x_in = x;
  const Eigen::MatrixXd xn = layernorm_forward(x, lp.ln1_gain, lp.ln1_bias,
                                               cache.ln1);
  cache.q = (lp.wq * xn).colwise() + lp.bq;
  cache.k = (lp.wk * xn).colwise() + lp.bk;
  cache.v = (lp.wv * xn).colwise() + lp.bv;

  cache.attn.assign(std::size_t(n_heads), Eigen::MatrixXd());
  cache.h.resize(d, n);
  for (int hd = 0; hd < n_heads; ++hd) {
    const auto qh = cache.q.middleRows(hd * dh, dh);
    const auto kh = cache.k.middleRows(hd * dh, dh);
    const auto vh = cache.v.middleRows(hd * dh, dh);
    Eigen::MatrixXd s = (qh.transpose() * kh) * scale;
    Eigen::MatrixXd& a = cache.attn[std::size_t(hd)];
    a.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (key_mask.empty() || !key_mask[std::size_t(j)])
          mx = std::max(mx, s(i, j));
      double z = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!key_mask.empty() && key_mask[std::size_t(j)]) {
          a(i, j) = 0.0;
        } else {
          a(i, j) = std::exp(s(i, j) - mx);
          z += a(i, j);
        }
      }
      a.row(i) /= z;
    }
    cache.h.middleRows(hd * dh, dh) = vh * a.transpose();
  }
  cache.x_mid = x + ((lp.wo * cache.h).colwise() + lp.bo);

  const Eigen::MatrixXd xn2 = layernorm_forward(cache.x_mid, lp.ln2_gain,
                                                lp.ln2_bias, cache.ln2);
  cache.u = (lp.w_ff1 * xn2).colwise() + lp.b_ff1;
  cache.g = cache.u.unaryExpr([](double v) { return gelu(v); });
  return cache.x_mid + ((lp.w_ff2 * cache.g).colwise() + lp.b_ff2);
}

Eigen::MatrixXd encoder_backward(const Eigen::MatrixXd& dx_out,
                                 const EncoderLayerParams& lp, int n_heads,
                                 const Mask& key_mask, const LayerCache& cache,
                                 EncoderLayerParams& dlp) {
  const Eigen::Index d = dx_out.rows(), n = dx_out.cols();
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(double(dh));

  // feed-forward branch
  dlp.w_ff2 += dx_out * cache.g.transpose();
  dlp.b_ff2 += dx_out.rowwise().sum();
  Eigen::MatrixXd dg = lp.w_ff2.transpose() * dx_out;
  Eigen::MatrixXd du =
      dg.cwiseProduct(cache.u.unaryExpr([](double v) { return gelu_deriv(v); }));
  const Eigen::MatrixXd xn2 = [&] {
    Eigen::MatrixXd m(d, n);
    for (Eigen::Index j = 0; j < n; ++j)
      m.col(j) = lp.ln2_gain.array() * cache.ln2.xhat.col(j).array() +
                 lp.ln2_bias.array();
    return m;
  }();
  dlp.w_ff1 += du * xn2.transpose();
  dlp.b_ff1 += du.rowwise().sum();
  Eigen::MatrixXd dxn2 = lp.w_ff1.transpose() * du;
  Eigen::MatrixXd dx_mid =
      dx_out +
      layernorm_backward(dxn2, lp.ln2_gain, cache.ln2, dlp.ln2_gain,
                         dlp.ln2_bias);

  // attention branch
  dlp.wo += dx_mid * cache.h.transpose();
  dlp.bo += dx_mid.rowwise().sum();
  const Eigen::MatrixXd dhmat = lp.wo.transpose() * dx_mid;

  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(d, n);
  Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(d, n);
  Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(d, n);
  for (int hd = 0; hd < n_heads; ++hd) {
    const auto qh = cache.q.middleRows(hd * dh, dh);
    const auto kh = cache.k.middleRows(hd * dh, dh);
    const auto vh = cache.v.middleRows(hd * dh, dh);
    const Eigen::MatrixXd& a = cache.attn[std::size_t(hd)];
    const auto doh = dhmat.middleRows(hd * dh, dh);

    dv.middleRows(hd * dh, dh) = doh * a;
    Eigen::MatrixXd da = doh.transpose() * vh;  // n x n
    Eigen::MatrixXd ds(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dot = da.row(i).dot(a.row(i));
      ds.row(i) = a.row(i).cwiseProduct(da.row(i).array().operator-(dot).matrix());
    }
    if (!key_mask.empty())
      for (Eigen::Index j = 0; j < n; ++j)
        if (key_mask[std::size_t(j)]) ds.col(j).setZero();
    dq.middleRows(hd * dh, dh) = kh * ds.transpose() * scale;
    dk.middleRows(hd * dh, dh) = qh * ds * scale;
  }
  const Eigen::MatrixXd xn = [&] {
    Eigen::MatrixXd m(d, n);
    for (Eigen::Index j = 0; j < n; ++j)
      m.col(j) = lp.ln1_gain.array() * cache.ln1.xhat.col(j).array() +
                 lp.ln1_bias.array();
    return m;
  }();
  dlp.wq += dq * xn.transpose();
  dlp.bq += dq.rowwise().sum();
  dlp.wk += dk * xn.transpose();
  dlp.bk += dk.rowwise().sum();
  dlp.wv += dv * xn.transpose();
  dlp.bv += dv.rowwise().sum();
  Eigen::MatrixXd dxn = lp.wq.transpose() * dq + lp.wk.transpose() * dk +
                        lp.wv.transpose() * dv;
  return dx_mid + layernorm_backward(dxn, lp.ln1_gain, cache.ln1, dlp.ln1_gain,
                                     dlp.ln1_bias);
}

// Flattened 200-dim patch vectors, one column per token: x-axis bins then
// y-axis bins of the token's frequency band.
Eigen::MatrixXd patch_matrix(const Eigen::MatrixXd& magnitudes,
                             const ModelConfig& cfg) {
  if (magnitudes.rows() != 2 ||
      magnitudes.cols() != Eigen::Index(cfg.token_bins) * cfg.n_tokens)
    throw std::invalid_argument("feature shape does not match token grid");
  Eigen::MatrixXd p(2 * cfg.token_bins, cfg.n_tokens);
  for (int t = 0; t < cfg.n_tokens; ++t) {
    p.col(t).head(cfg.token_bins) =
        magnitudes.row(0).segment(t * cfg.token_bins, cfg.token_bins);
    p.col(t).tail(cfg.token_bins) =
        magnitudes.row(1).segment(t * cfg.token_bins, cfg.token_bins);
  }
  return p;
}

struct StackCache {
  std::vector<LayerCache> layers;
};

Eigen::MatrixXd run_stack(Eigen::MatrixXd x,
                          const std::vector<EncoderLayerParams>& layers,
                          int n_heads, const Mask& key_mask,
                          StackCache* cache) {
  StackCache local;
  StackCache& sc = cache ? *cache : local;
  sc.layers.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i)
    x = encoder_forward(x, layers[i], n_heads, key_mask, sc.layers[i]);
  return x;
}

// PNT/CLS live at position 0; input tokens shift right by one.
Mask prepend_unmasked(const Mask& m, std::size_t n_total) {
  if (m.empty()) return {};
  Mask out(n_total, false);
  for (std::size_t i = 0; i < m.size(); ++i) out[i + 1] = m[i];
  return out;
}

struct HeadCache {
  Eigen::VectorXd hidden_pre;  // before ReLU
  Eigen::VectorXd hidden;
};

Eigen::VectorXd head_forward(const Eigen::VectorXd& e,
                             const Eigen::MatrixXd& w1,
                             const Eigen::VectorXd& b1,
                             const Eigen::MatrixXd& w2,
                             const Eigen::VectorXd& b2, HeadCache& cache) {
  cache.hidden_pre = w1 * e + b1;
  cache.hidden = cache.hidden_pre.cwiseMax(0.0);
  return w2 * cache.hidden + b2;
}

Eigen::VectorXd head_backward(const Eigen::VectorXd& dlogits,
                              const Eigen::VectorXd& e,
                              const Eigen::MatrixXd& w1,
                              const Eigen::MatrixXd& w2, const HeadCache& cache,
                              Eigen::MatrixXd& dw1, Eigen::VectorXd& db1,
                              Eigen::MatrixXd& dw2, Eigen::VectorXd& db2) {
  dw2 += dlogits * cache.hidden.transpose();
  db2 += dlogits;
  Eigen::VectorXd dh = w2.transpose() * dlogits;
  for (Eigen::Index i = 0; i < dh.size(); ++i)
    if (cache.hidden_pre(i) <= 0.0) dh(i) = 0.0;
  dw1 += dh * e.transpose();
  db1 += dh;
  return w1.transpose() * dh;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

struct ExampleCache {
  std::vector<Eigen::MatrixXd> patches;   // per point, 200 x n_tokens
  std::vector<Eigen::MatrixXd> point_in;  // per point, d x (1+n_tokens)
  std::vector<StackCache> point_stacks;
  std::vector<Mask> point_key_masks;
  Eigen::MatrixXd shape_in;  // d x (1+n_points)
  StackCache shape_stack;
  Mask shape_key_mask;
  Eigen::VectorXd cls_embed;
  HeadCache cls_head, lvl_head;
};

PredictionResult forward_cached(const std::vector<Eigen::MatrixXd>& features,
                                const TransformerParams& p,
                                const std::vector<Mask>& token_masks,
                                const Mask& point_mask, ExampleCache& ec) {
  const ModelConfig& cfg = p.config;
  if (int(features.size()) != cfg.n_points)
    throw std::invalid_argument("expected one feature per point");
  if (!point_mask.empty() && int(point_mask.size()) != cfg.n_points)
    throw std::invalid_argument("point mask size mismatch");
  if (!token_masks.empty() && int(token_masks.size()) != cfg.n_points)
    throw std::invalid_argument("token mask count mismatch");

  ec.patches.resize(std::size_t(cfg.n_points));
  ec.point_in.resize(std::size_t(cfg.n_points));
  ec.point_stacks.assign(std::size_t(cfg.n_points), StackCache());
  ec.point_key_masks.assign(std::size_t(cfg.n_points), Mask());

  Eigen::MatrixXd pnt_embeds =
      Eigen::MatrixXd::Zero(cfg.d_model, cfg.n_points);
  for (int i = 0; i < cfg.n_points; ++i) {
    if (!point_mask.empty() && point_mask[std::size_t(i)]) continue;
    ec.patches[std::size_t(i)] = patch_matrix(features[std::size_t(i)], cfg);
    Eigen::MatrixXd tokens =
        ((p.w_tok * ec.patches[std::size_t(i)]).colwise() + p.b_tok) +
        p.pos_freq;
    Eigen::MatrixXd x(cfg.d_model, 1 + cfg.n_tokens);
    x.col(0) = p.pnt_token;
    x.rightCols(cfg.n_tokens) = tokens;
    ec.point_in[std::size_t(i)] = x;
    const Mask& tm =
        token_masks.empty() ? Mask() : token_masks[std::size_t(i)];
    if (!tm.empty() && int(tm.size()) != cfg.n_tokens)
      throw std::invalid_argument("token mask size mismatch");
    ec.point_key_masks[std::size_t(i)] =
        prepend_unmasked(tm, std::size_t(1 + cfg.n_tokens));
    const Eigen::MatrixXd out =
        run_stack(x, p.point_layers, cfg.n_heads,
                  ec.point_key_masks[std::size_t(i)],
                  &ec.point_stacks[std::size_t(i)]);
    pnt_embeds.col(i) = out.col(0);
  }

  Eigen::MatrixXd sx(cfg.d_model, 1 + cfg.n_points);
  sx.col(0) = p.cls_token;
  sx.rightCols(cfg.n_points) = pnt_embeds + p.pos_grid;
  ec.shape_in = sx;
  ec.shape_key_mask = prepend_unmasked(point_mask, std::size_t(1 + cfg.n_points));
  const Eigen::MatrixXd sout = run_stack(sx, p.shape_layers, cfg.n_heads,
                                         ec.shape_key_mask, &ec.shape_stack);
  ec.cls_embed = sout.col(0);

  PredictionResult res;
  res.cls_embedding = ec.cls_embed;
  res.class_logits = head_forward(ec.cls_embed, p.w_cls1, p.b_cls1, p.w_cls2,
                                  p.b_cls2, ec.cls_head);
  res.level_logits = head_forward(ec.cls_embed, p.w_lvl1, p.b_lvl1, p.w_lvl2,
                                  p.b_lvl2, ec.lvl_head);
  res.level_probs = softmax(res.level_logits);
  res.l_map = map_estimate(res.level_probs);
  res.l_exp = expect_estimate(res.level_probs);
  return res;
}

}  // namespace

Eigen::MatrixXd tokenize(const SpectralFeature& s,
                         const TransformerParams& params) {
  const Eigen::MatrixXd patches = patch_matrix(s.magnitudes, params.config);
  return ((params.w_tok * patches).colwise() + params.b_tok) + params.pos_freq;
}

Eigen::VectorXd point_forward(const Eigen::MatrixXd& tokens,
                              const TransformerParams& params,
                              const Mask& token_mask) {
  const ModelConfig& cfg = params.config;
  if (tokens.rows() != cfg.d_model || tokens.cols() != cfg.n_tokens)
    throw std::invalid_argument("token sequence shape mismatch");
  Eigen::MatrixXd x(cfg.d_model, 1 + cfg.n_tokens);
  x.col(0) = params.pnt_token;
  x.rightCols(cfg.n_tokens) = tokens;
  const Mask km = prepend_unmasked(token_mask, std::size_t(1 + cfg.n_tokens));
  return run_stack(x, params.point_layers, cfg.n_heads, km, nullptr).col(0);
}

Eigen::VectorXd shape_forward(const Eigen::MatrixXd& pnt_embeddings,
                              const TransformerParams& params,
                              const Mask& point_mask) {
  const ModelConfig& cfg = params.config;
  if (pnt_embeddings.rows() != cfg.d_model ||
      pnt_embeddings.cols() != cfg.n_points)
    throw std::invalid_argument(
        "expected exactly n_points embeddings (use the mask for fewer)");
  Eigen::MatrixXd x(cfg.d_model, 1 + cfg.n_points);
  x.col(0) = params.cls_token;
  x.rightCols(cfg.n_points) = pnt_embeddings + params.pos_grid;
  const Mask km = prepend_unmasked(point_mask, std::size_t(1 + cfg.n_points));
  return run_stack(x, params.shape_layers, cfg.n_heads, km, nullptr).col(0);
}

PredictionResult forward(const std::vector<Eigen::MatrixXd>& features,
                         const TransformerParams& params,
                         const std::vector<Mask>& token_masks,
                         const Mask& point_mask) {
  ExampleCache ec;
  return forward_cached(features, params, token_masks, point_mask, ec);
}

namespace {

// Per-example loss and parameter gradient; returns the example loss.
double example_grad(const TransformerParams& p, const TrainExample& ex,
                    const LossWeights& w, TransformerParams& g) {
  const ModelConfig& cfg = p.config;
  ExampleCache ec;
  const PredictionResult res =
      forward_cached(ex.features, p, ex.token_masks, ex.point_mask, ec);

  if (!res.class_logits.allFinite() || !res.level_logits.allFinite())
    throw std::runtime_error("non-finite logits in training forward pass");
  if (ex.class_id < 0 || ex.class_id >= cfg.k_cont)
    throw std::invalid_argument("class label out of range");

  const Eigen::VectorXd pc = softmax(res.class_logits);
  const double ce = -std::log(std::max(pc(ex.class_id), 1e-300));
  const Eigen::VectorXd q = sord_target(ex.level).q;
  const double sord = sord_loss(res.level_probs, SordTarget{q});
  const double loss = w.w_sord * sord + w.w_ce * ce;

  // class head: d/dz of CE is p - onehot
  Eigen::VectorXd dcls_logits = pc;
  dcls_logits(ex.class_id) -= 1.0;
  dcls_logits *= w.w_ce;

  // SORD gradient matches the eps-clamped loss exactly
  Eigen::VectorXd dlvl_logits(cfg.n_levels);
  {
    const Eigen::VectorXd& ph = res.level_probs;
    Eigen::VectorXd r(cfg.n_levels);
    for (int j = 0; j < cfg.n_levels; ++j)
      r(j) = ph(j) > 1e-12 ? q(j) / ph(j) : 0.0;
    const double dot = r.cwiseProduct(ph).sum();
    for (int j = 0; j < cfg.n_levels; ++j)
      dlvl_logits(j) = w.w_sord * ph(j) * (dot - r(j));
  }

  Eigen::VectorXd de = Eigen::VectorXd::Zero(cfg.d_model);
  de += head_backward(dcls_logits, ec.cls_embed, p.w_cls1, p.w_cls2,
                      ec.cls_head, g.w_cls1, g.b_cls1, g.w_cls2, g.b_cls2);
  de += head_backward(dlvl_logits, ec.cls_embed, p.w_lvl1, p.w_lvl2,
                      ec.lvl_head, g.w_lvl1, g.b_lvl1, g.w_lvl2, g.b_lvl2);

  // shape stack
  Eigen::MatrixXd dsx = Eigen::MatrixXd::Zero(cfg.d_model, 1 + cfg.n_points);
  dsx.col(0) = de;
  for (int li = int(p.shape_layers.size()) - 1; li >= 0; --li)
    dsx = encoder_backward(dsx, p.shape_layers[std::size_t(li)], cfg.n_heads,
                           ec.shape_key_mask,
                           ec.shape_stack.layers[std::size_t(li)],
                           g.shape_layers[std::size_t(li)]);
  g.cls_token += dsx.col(0);
  for (int i = 0; i < cfg.n_points; ++i) {
    if (!ex.point_mask.empty() && ex.point_mask[std::size_t(i)]) continue;
    g.pos_grid.col(i) += dsx.col(1 + i);

    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(cfg.d_model, 1 + cfg.n_tokens);
    dx.col(0) = dsx.col(1 + i);
    for (int li = int(p.point_layers.size()) - 1; li >= 0; --li)
      dx = encoder_backward(
          dx, p.point_layers[std::size_t(li)], cfg.n_heads,
          ec.point_key_masks[std::size_t(i)],
          ec.point_stacks[std::size_t(i)].layers[std::size_t(li)],
          g.point_layers[std::size_t(li)]);
    g.pnt_token += dx.col(0);
    const Eigen::MatrixXd dtokens = dx.rightCols(cfg.n_tokens);
    g.pos_freq += dtokens;
    g.w_tok += dtokens * ec.patches[std::size_t(i)].transpose();
    g.b_tok += dtokens.rowwise().sum();
  }
  return loss;
}

void add_params(TransformerParams& acc, TransformerParams& inc) {
  auto a = acc.blocks();
  auto b = inc.blocks();
  for (std::size_t i = 0; i < a.size(); ++i)
    Eigen::Map<Eigen::VectorXd>(a[i].data, Eigen::Index(a[i].size)) +=
        Eigen::Map<const Eigen::VectorXd>(b[i].data, Eigen::Index(b[i].size));
}

void scale_params(TransformerParams& p, double s) {
  for (auto& blk : p.blocks())
    Eigen::Map<Eigen::VectorXd>(blk.data, Eigen::Index(blk.size)) *= s;
}

}  // namespace

double grad(const TransformerParams& params,
            const std::vector<TrainExample>& batch, const LossWeights& weights,
            TransformerParams& grads, unsigned n_threads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  grads.set_zero();
  double total = 0.0;
  // per-example slots summed in index order: the reduction is bit-identical
  // regardless of thread count
  if (n_threads <= 1) {
    TransformerParams scratch = TransformerParams::zeros(params.config);
    for (const auto& ex : batch) {
      scratch.set_zero();
      total += example_grad(params, ex, weights, scratch);
      add_params(grads, scratch);
    }
  } else {
    std::vector<TransformerParams> slots(batch.size(),
                                         TransformerParams::zeros(params.config));
    std::vector<double> losses(batch.size(), 0.0);
    parallel_for(
        batch.size(),
        [&](std::size_t i) {
          losses[i] = example_grad(params, batch[i], weights, slots[i]);
        },
        n_threads);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      total += losses[i];
      add_params(grads, slots[i]);
    }
  }
  scale_params(grads, 1.0 / double(batch.size()));
  const double loss = total / double(batch.size());
  if (!std::isfinite(loss))
    throw std::runtime_error("non-finite training loss");
  return loss;
}

double batch_loss(const TransformerParams& params,
                  const std::vector<TrainExample>& batch,
                  const LossWeights& weights) {
  double total = 0.0;
  for (const auto& ex : batch) {
    const PredictionResult res =
        forward(ex.features, params, ex.token_masks, ex.point_mask);
    const Eigen::VectorXd pc = softmax(res.class_logits);
    const double ce = -std::log(std::max(pc(ex.class_id), 1e-300));
    const double sord = sord_loss(res.level_probs, sord_target(ex.level));
    total += weights.w_sord * sord + weights.w_ce * ce;
  }
  return total / double(batch.size());
}

// ---------------------------------------------------------------------------
// parameter plumbing

namespace {

EncoderLayerParams layer_zeros(int d, int ff) {
  EncoderLayerParams l;
  l.ln1_gain = Eigen::VectorXd::Zero(d);
  l.ln1_bias = Eigen::VectorXd::Zero(d);
  l.wq = Eigen::MatrixXd::Zero(d, d);
  l.wk = Eigen::MatrixXd::Zero(d, d);
  l.wv = Eigen::MatrixXd::Zero(d, d);
  l.wo = Eigen::MatrixXd::Zero(d, d);
  l.bq = Eigen::VectorXd::Zero(d);
  l.bk = Eigen::VectorXd::Zero(d);
  l.bv = Eigen::VectorXd::Zero(d);
  l.bo = Eigen::VectorXd::Zero(d);
  l.ln2_gain = Eigen::VectorXd::Zero(d);
  l.ln2_bias = Eigen::VectorXd::Zero(d);
  l.w_ff1 = Eigen::MatrixXd::Zero(ff, d);
  l.b_ff1 = Eigen::VectorXd::Zero(ff);
  l.w_ff2 = Eigen::MatrixXd::Zero(d, ff);
  l.b_ff2 = Eigen::VectorXd::Zero(ff > 0 ? d : 0);
  return l;
}

void fill_gaussian(Eigen::MatrixXd& m, Rng& rng, double std_dev) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = std_dev * rng.normal();
}
void fill_gaussian(Eigen::VectorXd& v, Rng& rng, double std_dev) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std_dev * rng.normal();
}

}  // namespace

TransformerParams TransformerParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  TransformerParams p;
  p.config = cfg;
  const int d = cfg.d_model, ff = cfg.ff_hidden();
  p.w_tok = Eigen::MatrixXd::Zero(d, 2 * cfg.token_bins);
  p.b_tok = Eigen::VectorXd::Zero(d);
  p.pos_freq = Eigen::MatrixXd::Zero(d, cfg.n_tokens);
  p.pnt_token = Eigen::VectorXd::Zero(d);
  p.point_layers.assign(std::size_t(cfg.n_layers_point), layer_zeros(d, ff));
  p.pos_grid = Eigen::MatrixXd::Zero(d, cfg.n_points);
  p.cls_token = Eigen::VectorXd::Zero(d);
  p.shape_layers.assign(std::size_t(cfg.n_layers_shape), layer_zeros(d, ff));
  p.w_cls1 = Eigen::MatrixXd::Zero(cfg.head_hidden, d);
  p.b_cls1 = Eigen::VectorXd::Zero(cfg.head_hidden);
  p.w_cls2 = Eigen::MatrixXd::Zero(cfg.k_cont, cfg.head_hidden);
  p.b_cls2 = Eigen::VectorXd::Zero(cfg.k_cont);
  p.w_lvl1 = Eigen::MatrixXd::Zero(cfg.head_hidden, d);
  p.b_lvl1 = Eigen::VectorXd::Zero(cfg.head_hidden);
  p.w_lvl2 = Eigen::MatrixXd::Zero(cfg.n_levels, cfg.head_hidden);
  p.b_lvl2 = Eigen::VectorXd::Zero(cfg.n_levels);
  return p;
}

TransformerParams TransformerParams::init(const ModelConfig& cfg,
                                          std::uint64_t seed) {
  TransformerParams p = zeros(cfg);
  Rng rng(seed);
  const double std_dev = 0.02;
  fill_gaussian(p.w_tok, rng, std_dev);
  fill_gaussian(p.pos_freq, rng, std_dev);
  fill_gaussian(p.pnt_token, rng, std_dev);
  fill_gaussian(p.pos_grid, rng, std_dev);
  fill_gaussian(p.cls_token, rng, std_dev);
  auto init_stack = [&](std::vector<EncoderLayerParams>& layers) {
    // output projections damped by 1/sqrt(2*n_layers): residual-friendly
    const double out_std =
        std_dev / std::sqrt(2.0 * double(std::max<std::size_t>(1, layers.size())));
    for (auto& l : layers) {
      l.ln1_gain.setOnes();
      l.ln2_gain.setOnes();
      fill_gaussian(l.wq, rng, std_dev);
      fill_gaussian(l.wk, rng, std_dev);
      fill_gaussian(l.wv, rng, std_dev);
      fill_gaussian(l.wo, rng, out_std);
      fill_gaussian(l.w_ff1, rng, std_dev);
      fill_gaussian(l.w_ff2, rng, out_std);
    }
  };
  init_stack(p.point_layers);
  init_stack(p.shape_layers);
  fill_gaussian(p.w_cls1, rng, std_dev);
  fill_gaussian(p.w_cls2, rng, std_dev);
  fill_gaussian(p.w_lvl1, rng, std_dev);
  fill_gaussian(p.w_lvl2, rng, std_dev);
  return p;
}

std::vector<ParamBlock> TransformerParams::blocks() {
  std::vector<ParamBlock> out;
  auto add_m = [&](const std::string& name, Eigen::MatrixXd& m) {
    out.push_back({name, m.data(), std::size_t(m.size())});
  };
  auto add_v = [&](const std::string& name, Eigen::VectorXd& v) {
    out.push_back({name, v.data(), std::size_t(v.size())});
  };
  auto add_layer = [&](const std::string& prefix, EncoderLayerParams& l) {
    add_v(prefix + ".ln1_gain", l.ln1_gain);
    add_v(prefix + ".ln1_bias", l.ln1_bias);
    add_m(prefix + ".wq", l.wq);
    add_v(prefix + ".bq", l.bq);
    add_m(prefix + ".wk", l.wk);
    add_v(prefix + ".bk", l.bk);
    add_m(prefix + ".wv", l.wv);
    add_v(prefix + ".bv", l.bv);
    add_m(prefix + ".wo", l.wo);
    add_v(prefix + ".bo", l.bo);
    add_v(prefix + ".ln2_gain", l.ln2_gain);
    add_v(prefix + ".ln2_bias", l.ln2_bias);
    add_m(prefix + ".w_ff1", l.w_ff1);
    add_v(prefix + ".b_ff1", l.b_ff1);
    add_m(prefix + ".w_ff2", l.w_ff2);
    add_v(prefix + ".b_ff2", l.b_ff2);
  };
  add_m("w_tok", w_tok);
  add_v("b_tok", b_tok);
  add_m("pos_freq", pos_freq);
  add_v("pnt_token", pnt_token);
  for (std::size_t i = 0; i < point_layers.size(); ++i)
    add_layer("point." + std::to_string(i), point_layers[i]);
  add_m("pos_grid", pos_grid);
  add_v("cls_token", cls_token);
  for (std::size_t i = 0; i < shape_layers.size(); ++i)
    add_layer("shape." + std::to_string(i), shape_layers[i]);
  add_m("w_cls1", w_cls1);
  add_v("b_cls1", b_cls1);
  add_m("w_cls2", w_cls2);
  add_v("b_cls2", b_cls2);
  add_m("w_lvl1", w_lvl1);
  add_v("b_lvl1", b_lvl1);
  add_m("w_lvl2", w_lvl2);
  add_v("b_lvl2", b_lvl2);
  return out;
}

std::size_t TransformerParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : const_cast<TransformerParams*>(this)->blocks())
    n += b.size;
  return n;
}

std::uint64_t TransformerParams::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& b : const_cast<TransformerParams*>(this)->blocks())
    h = fnv1a(b.data, b.size * sizeof(double), h);
  return h;
}

void TransformerParams::set_zero() {
  for (auto& b : blocks())
    Eigen::Map<Eigen::VectorXd>(b.data, Eigen::Index(b.size)).setZero();
}

void save_checkpoint(const TransformerParams& params,
                     const std::string& path) {
  auto& p = const_cast<TransformerParams&>(params);
  BinaryWriter w(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto write_hashed = [&](const void* data, std::size_t n) {
    w.bytes(data, n);
    h = fnv1a(data, n, h);
  };
  const char magic[4] = {'V', 'T', 'C', 'K'};
  write_hashed(magic, 4);
  const std::int32_t cfg_words[10] = {
      p.config.d_model,   p.config.n_layers_point, p.config.n_layers_shape,
      p.config.n_heads,   p.config.token_bins,     p.config.n_tokens,
      p.config.n_points,  p.config.k_cont,         p.config.n_levels,
      p.config.head_hidden};
  write_hashed(cfg_words, sizeof(cfg_words));
  for (const auto& b : p.blocks()) write_hashed(b.data, b.size * sizeof(double));
  w.pod<std::uint64_t>(h);
}

TransformerParams load_checkpoint(const std::string& path) {
  BinaryReader r(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto read_hashed = [&](void* data, std::size_t n) {
    r.bytes(data, n);
    h = fnv1a(data, n, h);
  };
  char magic[4];
  read_hashed(magic, 4);
  if (std::string(magic, 4) != "VTCK")
    throw std::runtime_error("not a checkpoint file");
  std::int32_t cw[10];
  read_hashed(cw, sizeof(cw));
  ModelConfig cfg;
  cfg.d_model = cw[0];
  cfg.n_layers_point = cw[1];
  cfg.n_layers_shape = cw[2];
  cfg.n_heads = cw[3];
  cfg.token_bins = cw[4];
  cfg.n_tokens = cw[5];
  cfg.n_points = cw[6];
  cfg.k_cont = cw[7];
  cfg.n_levels = cw[8];
  cfg.head_hidden = cw[9];
  TransformerParams p = TransformerParams::zeros(cfg);
  for (auto& b : p.blocks()) read_hashed(b.data, b.size * sizeof(double));
  const auto stored = r.pod<std::uint64_t>();
  if (stored != h) throw std::runtime_error("checkpoint hash mismatch");
  return p;
}

}  // namespace vibro
