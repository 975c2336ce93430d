#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vibrosense/spectral.hpp"

namespace vibro {

struct ModelConfig {
  int d_model = 64;
  int n_layers_point = 2;
  int n_layers_shape = 2;
  int n_heads = 4;
  int token_bins = 100;
  int n_tokens = 48;
  int n_points = 3;
  int k_cont = 8;
  int n_levels = 6;
  int head_hidden = 64;

  int ff_hidden() const { return 4 * d_model; }
  void validate() const;

  // full-scale geometry; acceptance experiments run at the desk default
  static ModelConfig full_scale() {
    ModelConfig c;
    c.d_model = 512;
    c.n_layers_point = 8;
    c.n_layers_shape = 8;
    return c;
  }
};

struct EncoderLayerParams {
  Eigen::VectorXd ln1_gain, ln1_bias;
  Eigen::MatrixXd wq, wk, wv, wo;
  Eigen::VectorXd bq, bk, bv, bo;
  Eigen::VectorXd ln2_gain, ln2_bias;
  Eigen::MatrixXd w_ff1;
  Eigen::VectorXd b_ff1;
  Eigen::MatrixXd w_ff2;
  Eigen::VectorXd b_ff2;
};

// Named view of one parameter block; blocks() enumerates every block in
// the fixed declared order used by the optimizer, the checkpoint format
// and the finite-difference harness.
struct ParamBlock {
  std::string name;
  double* data;
  std::size_t size;
};

struct TransformerParams {
  ModelConfig config;
  Eigen::MatrixXd w_tok;  // d x 2*token_bins
  Eigen::VectorXd b_tok;
  Eigen::MatrixXd pos_freq;  // d x n_tokens
  Eigen::VectorXd pnt_token;
  std::vector<EncoderLayerParams> point_layers;
  Eigen::MatrixXd pos_grid;  // d x n_points
  Eigen::VectorXd cls_token;
  std::vector<EncoderLayerParams> shape_layers;
  Eigen::MatrixXd w_cls1;
  Eigen::VectorXd b_cls1;
  Eigen::MatrixXd w_cls2;
  Eigen::VectorXd b_cls2;
  Eigen::MatrixXd w_lvl1;
  Eigen::VectorXd b_lvl1;
  Eigen::MatrixXd w_lvl2;
  Eigen::VectorXd b_lvl2;

  static TransformerParams init(const ModelConfig& config,
                                std::uint64_t seed);
  static TransformerParams zeros(const ModelConfig& config);

  std::vector<ParamBlock> blocks();
  std::size_t parameter_count() const;
  std::uint64_t content_hash() const;
  void set_zero();
};

struct PredictionResult {
  Eigen::VectorXd class_logits;
  Eigen::VectorXd level_logits;
  Eigen::VectorXd level_probs;
  double l_map = 0.0;
  double l_exp = 0.0;
  Eigen::VectorXd cls_embedding;
};

// true = token/point masked out (excluded as an attention key everywhere,
// so its content cannot influence any output).
using Mask = std::vector<bool>;

// Linear patch projection plus learned frequency positional embedding.
Eigen::MatrixXd tokenize(const SpectralFeature& s,
                         const TransformerParams& params);

// PointTransformer: prepends the PNT token, runs the point encoder stack,
// returns the transformed PNT position. token_mask covers the n_tokens
// input tokens (the PNT token itself is never masked).
Eigen::VectorXd point_forward(const Eigen::MatrixXd& tokens,
                              const TransformerParams& params,
                              const Mask& token_mask = {});

// ShapeTransformer: grid positional embedding, CLS token, shape encoder
// stack; returns the transformed CLS position.
Eigen::VectorXd shape_forward(const Eigen::MatrixXd& pnt_embeddings,
                              const TransformerParams& params,
                              const Mask& point_mask = {});

// Full pipeline on preprocessed features (one 2 x grid matrix per point).
PredictionResult forward(const std::vector<Eigen::MatrixXd>& features,
                         const TransformerParams& params,
                         const std::vector<Mask>& token_masks = {},
                         const Mask& point_mask = {});

struct TrainExample {
  std::vector<Eigen::MatrixXd> features;  // n_points of 2 x grid
  int class_id = 0;
  double level = 0.0;
  std::vector<Mask> token_masks;  // empty = no dropout
  Mask point_mask;                // empty = all points active
};

struct LossWeights {
  double w_sord = 0.9;
  double w_ce = 0.1;
};

// Exact reverse-mode gradient of the mean total loss over the batch.
// Returns the loss; grads must be zeros(config) on entry or is overwritten.
double grad(const TransformerParams& params,
            const std::vector<TrainExample>& batch, const LossWeights& weights,
            TransformerParams& grads, unsigned n_threads = 1);

// Loss only (shares the forward path with grad; used by tests and the
// divergence guard).
double batch_loss(const TransformerParams& params,
                  const std::vector<TrainExample>& batch,
                  const LossWeights& weights);

void save_checkpoint(const TransformerParams& params, const std::string& path);
TransformerParams load_checkpoint(const std::string& path);

}  // namespace vibro
