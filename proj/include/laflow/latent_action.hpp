#pragma once
// Trajectory-level latent action model: action chunks are embedded by a short
// temporal convolution, aggregated by a GRU into a causal latent trajectory,
// and decoded chunk by chunk under FiLM modulation from an execution-time
// context vector.

#include <vector>

#include "laflow/layers.hpp"
#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow {

struct LatentConfig {
  Index chunk = 4;
  Index action_dim = 4;
  Index context_dim = 5;
  Index latent_dim = 16;
  Index hidden_dim = 64;
  Index embed_dim = 32;
  Index conv_channels = 16;
  Index context_hidden = 32;
  std::vector<Index> decoder_widths{64, 64};
  double logvar_min = -10.0;
  double logvar_max = 4.0;
};

struct ActionTrajectory {
  Matrix actions;  // H x d_a
  double dt = 0.05;
};

struct ActionChunk {
  Matrix actions;  // c x d_a
  Index index = 1;  // 1-based position in the trajectory
};

// Splits H x d_a into H / c consecutive chunks. Throws when c does not divide H.
std::vector<ActionChunk> chunk_trajectory(const ActionTrajectory& traj, Index c);
Matrix concat_chunks(const std::vector<ActionChunk>& chunks);

// c x d_a chunk -> 1 x (c * d_a) row, time-major.
Matrix flatten_chunk(const Matrix& chunk);
Matrix unflatten_chunk(const Matrix& row, Index c, Index action_dim);

struct LatentCode {
  Eigen::VectorXd mean;
  Eigen::VectorXd logvar;
  Eigen::VectorXd sample;
};

enum class SampleMode { Train, Eval };

// Train: mean + exp(logvar / 2) * eps with eps drawn from `rng`. Eval: mean.
Eigen::VectorXd sample_latent(const LatentCode& code, SampleMode mode, Rng& rng);
Var sample_latent(Tape& tape, const Var& mean, const Var& logvar, SampleMode mode, Rng& rng);

// Kernel-3, same-padded 1-D convolution over time, then SiLU, flatten and an
// affine projection to embed_dim. Input rows are flattened chunks.
class ChunkEmbedder {
 public:
  ChunkEmbedder() = default;
  ChunkEmbedder(const std::string& name, const LatentConfig& cfg, Rng& rng);

  Var operator()(Tape& tape, const Var& chunks);
  void collect(ParamList& out);

  Linear& conv() { return conv_; }
  Linear& projection() { return proj_; }

 private:
  Index chunk_ = 0;
  Index action_dim_ = 0;
  Linear conv_;  // (3 * d_a) -> channels; row blocks are taps t-1, t, t+1
  Linear proj_;
};

class GruCell {
 public:
  GruCell() = default;
  GruCell(const std::string& name, Index input_dim, Index hidden_dim, Rng& rng);

  // r = sig(x Wr + h Ur + br), u = sig(x Wu + h Uu + bu),
  // n = tanh(x Wn + (r * h) Un + bn), h' = (1 - u) * h + u * n
  Var operator()(Tape& tape, const Var& x, const Var& h);
  void collect(ParamList& out);

  Index hidden_dim() const { return hidden_; }
  // Input-side weights/biases laid out as [reset | update | candidate].
  Linear& input() { return input_; }

 private:
  Index hidden_ = 0;
  Linear input_;
  Parameter recurrent_gates_;      // d_h x 2 d_h
  Parameter recurrent_candidate_;  // d_h x d_h
};

struct EncodedSequence {
  std::vector<Var> embeddings;
  std::vector<Var> hidden;
  std::vector<Var> mean;
  std::vector<Var> logvar;
};

class LatentEncoder {
 public:
  LatentEncoder() = default;
  LatentEncoder(const std::string& name, const LatentConfig& cfg, Rng& rng);

  // chunks[k] is B x (c * d_a); h_0 = 0 and h_k sees chunks 1..k only.
  EncodedSequence operator()(Tape& tape, const std::vector<Var>& chunks);
  void collect(ParamList& out);

  ChunkEmbedder& embedder() { return embed_; }
  GruCell& gru() { return gru_; }
  Linear& mean_head() { return mean_head_; }
  Linear& logvar_head() { return logvar_head_; }

 private:
  LatentConfig cfg_;
  ChunkEmbedder embed_;
  GruCell gru_;
  Linear mean_head_;
  Linear logvar_head_;
};

class FilmDecoder {
 public:
  FilmDecoder() = default;
  FilmDecoder(const std::string& name, const LatentConfig& cfg, Rng& rng);

  // z: B x d_z, context: B x d_v -> B x (c * d_a). When `pre_activations` is
  // given, the modulated pre-activation of every hidden layer is appended.
  Var operator()(Tape& tape, const Var& z, const Var& context, std::vector<Var>* pre_activations = nullptr);

  // Same network with the FiLM stage skipped entirely.
  Var unmodulated(Tape& tape, const Var& z, std::vector<Var>* pre_activations = nullptr);

  void collect(ParamList& out);
  FilmGenerator& context_film() { return context_; }

 private:
  Var run(Tape& tape, const Var& z, const std::vector<FilmLayer>* mods, std::vector<Var>* pre);

  std::vector<Linear> hidden_;
  Linear out_;
  FilmGenerator context_;
};

struct VaeBatch {
  std::vector<Matrix> chunks;    // K entries, each B x (c * d_a)
  std::vector<Matrix> contexts;  // K entries, each B x d_v
};

struct VaeLoss {
  Var total;
  double recon = 0.0;
  double kl = 0.0;
  double smooth = 0.0;
};

class LatentActionModel {
 public:
  LatentActionModel() = default;
  LatentActionModel(const LatentConfig& cfg, Rng& init_rng);

  // recon + lambda_kl * KL + lambda_smooth * smooth. Throws std::domain_error
  // on a non-finite loss.
  VaeLoss loss(Tape& tape, const VaeBatch& batch, double lambda_kl, double lambda_smooth, SampleMode mode,
               Rng& sampling);

  // Deterministic posterior means: returns B x (K * d_z), chunk-major.
  Matrix encode_means(const std::vector<Matrix>& chunks);
  // z: B x d_z, context: B x d_v -> B x (c * d_a).
  Matrix decode(const Matrix& z, const Matrix& context);

  ParamList params();
  ParamList encoder_params();
  ParamList decoder_params();

  const LatentConfig& config() const { return cfg_; }
  LatentEncoder& encoder() { return encoder_; }
  FilmDecoder& decoder() { return decoder_; }

 private:
  LatentConfig cfg_;
  LatentEncoder encoder_;
  FilmDecoder decoder_;
};

// Closed-form KL(N(mean, exp(logvar)) || N(0, I)) summed over latent dims,
// averaged over rows.
Var gaussian_kl(const Var& mean, const Var& logvar);

}  // namespace laflow
