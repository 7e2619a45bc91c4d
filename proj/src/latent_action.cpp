#include "laflow/latent_action.hpp"

#include <stdexcept>
#include <string>

namespace laflow {

std::vector<ActionChunk> chunk_trajectory(const ActionTrajectory& traj, Index c) {
  const Index h = traj.actions.rows();
  if (c <= 0) throw std::invalid_argument("chunk_trajectory: chunk length must be positive");
  if (h == 0 || h % c != 0)
    throw std::invalid_argument("chunk_trajectory: horizon " + std::to_string(h) + " is not a multiple of " +
                                std::to_string(c));
  std::vector<ActionChunk> out;
  for (Index k = 0; k < h / c; ++k) out.push_back({traj.actions.middleRows(k * c, c), k + 1});
  return out;
}

Matrix concat_chunks(const std::vector<ActionChunk>& chunks) {
  if (chunks.empty()) return Matrix();
  Index rows = 0;
  for (const auto& ch : chunks) rows += ch.actions.rows();
  Matrix out(rows, chunks.front().actions.cols());
  Index r = 0;
  for (const auto& ch : chunks) {
    out.middleRows(r, ch.actions.rows()) = ch.actions;
    r += ch.actions.rows();
  }
  return out;
}

Matrix flatten_chunk(const Matrix& chunk) {
  Matrix row(1, chunk.size());
  for (Index t = 0; t < chunk.rows(); ++t) row.block(0, t * chunk.cols(), 1, chunk.cols()) = chunk.row(t);
  return row;
}

Matrix unflatten_chunk(const Matrix& row, Index c, Index action_dim) {
  if (row.rows() != 1 || row.cols() != c * action_dim) throw std::invalid_argument("unflatten_chunk: size mismatch");
  Matrix chunk(c, action_dim);
  for (Index t = 0; t < c; ++t) chunk.row(t) = row.block(0, t * action_dim, 1, action_dim);
  return chunk;
}

Eigen::VectorXd sample_latent(const LatentCode& code, SampleMode mode, Rng& rng) {
  if (mode == SampleMode::Eval) return code.mean;
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd z(code.mean.size());
  for (Index i = 0; i < z.size(); ++i) z(i) = code.mean(i) + std::exp(0.5 * code.logvar(i)) * nd(rng);
  return z;
}

Var sample_latent(Tape& tape, const Var& mean, const Var& logvar, SampleMode mode, Rng& rng) {
  if (mode == SampleMode::Eval) return mean;
  Var eps = tape.constant(standard_normal(mean.rows(), mean.cols(), rng));
  return mean + cwise_product(exp(0.5 * logvar), eps);
}

// ---------------------------------------------------------------------------

ChunkEmbedder::ChunkEmbedder(const std::string& name, const LatentConfig& cfg, Rng& rng)
    : chunk_(cfg.chunk),
      action_dim_(cfg.action_dim),
      conv_(name + ".conv", 3 * cfg.action_dim, cfg.conv_channels, rng),
      proj_(name + ".proj", cfg.chunk * cfg.conv_channels, cfg.embed_dim, rng) {}

Var ChunkEmbedder::operator()(Tape& tape, const Var& chunks) {
  if (chunks.cols() != chunk_ * action_dim_) throw std::invalid_argument("ChunkEmbedder: chunk width mismatch");
  const Index batch = chunks.rows();
  Var zeros = tape.constant(Matrix::Zero(batch, action_dim_));
  std::vector<Var> steps;
  steps.reserve(static_cast<std::size_t>(chunk_));
  for (Index t = 0; t < chunk_; ++t) {
    Var prev = t > 0 ? slice_cols(chunks, (t - 1) * action_dim_, action_dim_) : zeros;
    Var cur = slice_cols(chunks, t * action_dim_, action_dim_);
    Var next = t + 1 < chunk_ ? slice_cols(chunks, (t + 1) * action_dim_, action_dim_) : zeros;
    steps.push_back(conv_(tape, concat_cols<double>({prev, cur, next})));
  }
  return proj_(tape, silu(concat_cols(steps)));
}

void ChunkEmbedder::collect(ParamList& out) {
  conv_.collect(out);
  proj_.collect(out);
}

// ---------------------------------------------------------------------------

GruCell::GruCell(const std::string& name, Index input_dim, Index hidden_dim, Rng& rng)
    : hidden_(hidden_dim), input_(name + ".input", input_dim, 3 * hidden_dim, rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  recurrent_gates_ = Parameter(name + ".recurrent_gates", uniform<double>(hidden_dim, 2 * hidden_dim, -bound, bound, rng));
  recurrent_candidate_ =
      Parameter(name + ".recurrent_candidate", uniform<double>(hidden_dim, hidden_dim, -bound, bound, rng));
}

Var GruCell::operator()(Tape& tape, const Var& x, const Var& h) {
  if (h.cols() != hidden_) throw std::invalid_argument("GruCell: hidden width mismatch");
  Var gx = input_(tape, x);
  Var gh = matmul(h, tape.param(recurrent_gates_));
  Var reset = sigmoid(slice_cols(gx, 0, hidden_) + slice_cols(gh, 0, hidden_));
  Var update = sigmoid(slice_cols(gx, hidden_, hidden_) + slice_cols(gh, hidden_, hidden_));
  Var candidate =
      tanh(slice_cols(gx, 2 * hidden_, hidden_) + matmul(cwise_product(reset, h), tape.param(recurrent_candidate_)));
  return h + cwise_product(update, candidate - h);
}

void GruCell::collect(ParamList& out) {
  input_.collect(out);
  out.push_back(&recurrent_gates_);
  out.push_back(&recurrent_candidate_);
}

// ---------------------------------------------------------------------------

LatentEncoder::LatentEncoder(const std::string& name, const LatentConfig& cfg, Rng& rng)
    : cfg_(cfg),
      embed_(name + ".embed", cfg, rng),
      gru_(name + ".gru", cfg.embed_dim, cfg.hidden_dim, rng),
      mean_head_(name + ".mean", cfg.hidden_dim, cfg.latent_dim, rng),
      logvar_head_(name + ".logvar", cfg.hidden_dim, cfg.latent_dim, rng) {}

EncodedSequence LatentEncoder::operator()(Tape& tape, const std::vector<Var>& chunks) {
  if (chunks.empty()) throw std::invalid_argument("LatentEncoder: need at least one chunk");
  EncodedSequence out;
  Var h = tape.constant(Matrix::Zero(chunks.front().rows(), cfg_.hidden_dim));
  for (const Var& chunk : chunks) {
    Var x = embed_(tape, chunk);
    h = gru_(tape, x, h);
    out.embeddings.push_back(x);
    out.hidden.push_back(h);
    out.mean.push_back(mean_head_(tape, h));
    out.logvar.push_back(clamp(logvar_head_(tape, h), cfg_.logvar_min, cfg_.logvar_max));
  }
  return out;
}

void LatentEncoder::collect(ParamList& out) {
  embed_.collect(out);
  gru_.collect(out);
  mean_head_.collect(out);
  logvar_head_.collect(out);
}

// ---------------------------------------------------------------------------

FilmDecoder::FilmDecoder(const std::string& name, const LatentConfig& cfg, Rng& rng) {
  Index in = cfg.latent_dim;
  for (std::size_t i = 0; i < cfg.decoder_widths.size(); ++i) {
    hidden_.emplace_back(name + ".hidden" + std::to_string(i), in, cfg.decoder_widths[i], rng);
    in = cfg.decoder_widths[i];
  }
  out_ = Linear(name + ".out", in, cfg.chunk * cfg.action_dim, rng);
  context_ = FilmGenerator(name + ".context", cfg.context_dim, cfg.context_hidden, cfg.decoder_widths, rng);
}

Var FilmDecoder::run(Tape& tape, const Var& z, const std::vector<FilmLayer>* mods, std::vector<Var>* pre) {
  Var h = z;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    Var a = hidden_[i](tape, h);
    if (mods != nullptr) a = film(a, (*mods)[i].gamma, (*mods)[i].beta);
    if (pre != nullptr) pre->push_back(a);
    h = silu(a);
  }
  return out_(tape, h);
}

Var FilmDecoder::operator()(Tape& tape, const Var& z, const Var& context, std::vector<Var>* pre_activations) {
  if (context.rows() != z.rows()) throw std::invalid_argument("FilmDecoder: context rows differ from latent rows");
  auto mods = context_(tape, context);
  return run(tape, z, &mods, pre_activations);
}

Var FilmDecoder::unmodulated(Tape& tape, const Var& z, std::vector<Var>* pre_activations) {
  return run(tape, z, nullptr, pre_activations);
}

void FilmDecoder::collect(ParamList& out) {
  for (auto& l : hidden_) l.collect(out);
  out_.collect(out);
  context_.collect(out);
}

// ---------------------------------------------------------------------------

Var gaussian_kl(const Var& mean, const Var& logvar) {
  // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
  Var terms = add_scalar(square(mean) + exp(logvar) - logvar, -1.0);
  return (0.5 / static_cast<double>(mean.rows())) * sum(terms);
}

LatentActionModel::LatentActionModel(const LatentConfig& cfg, Rng& init_rng)
    : cfg_(cfg), encoder_("encoder", cfg, init_rng), decoder_("decoder", cfg, init_rng) {}

VaeLoss LatentActionModel::loss(Tape& tape, const VaeBatch& batch, double lambda_kl, double lambda_smooth,
                                SampleMode mode, Rng& sampling) {
  const std::size_t k = batch.chunks.size();
  if (k == 0 || batch.contexts.size() != k) throw std::invalid_argument("vae loss: chunk/context count mismatch");
  std::vector<Var> chunks;
  for (const auto& c : batch.chunks) chunks.push_back(tape.constant(c));
  EncodedSequence enc = encoder_(tape, chunks);

  std::vector<Var> recon_terms, kl_terms, smooth_terms;
  for (std::size_t i = 0; i < k; ++i) {
    Var z = sample_latent(tape, enc.mean[i], enc.logvar[i], mode, sampling);
    Var decoded = decoder_(tape, z, tape.constant(batch.contexts[i]));
    recon_terms.push_back(mean(square(decoded - chunks[i])));
    kl_terms.push_back(gaussian_kl(enc.mean[i], enc.logvar[i]));
    if (i + 1 < k) {
      Var diff = enc.mean[i + 1] - enc.mean[i];
      smooth_terms.push_back((1.0 / static_cast<double>(diff.rows())) * sum(square(diff)));
    }
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  Var recon = inv_k * sum(concat_cols(recon_terms));
  Var kl = inv_k * sum(concat_cols(kl_terms));
  Var total = recon + lambda_kl * kl;
  VaeLoss out;
  if (!smooth_terms.empty()) {
    Var smooth = (1.0 / static_cast<double>(smooth_terms.size())) * sum(concat_cols(smooth_terms));
    total = total + lambda_smooth * smooth;
    out.smooth = smooth.scalar();
  }
  out.total = total;
  out.recon = recon.scalar();
  out.kl = kl.scalar();
  if (!std::isfinite(total.scalar())) throw std::domain_error("vae loss is not finite");
  return out;
}

Matrix LatentActionModel::encode_means(const std::vector<Matrix>& chunks) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& c : chunks) vars.push_back(tape.constant(c));
  EncodedSequence enc = encoder_(tape, vars);
  const Index b = chunks.front().rows();
  Matrix out(b, static_cast<Index>(chunks.size()) * cfg_.latent_dim);
  for (std::size_t i = 0; i < chunks.size(); ++i)
    out.middleCols(static_cast<Index>(i) * cfg_.latent_dim, cfg_.latent_dim) = enc.mean[i].value();
  return out;
}

Matrix LatentActionModel::decode(const Matrix& z, const Matrix& context) {
  Tape tape;
  return decoder_(tape, tape.constant(z), tape.constant(context)).value();
}

ParamList LatentActionModel::params() {
  ParamList out = encoder_params();
  ParamList dec = decoder_params();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

ParamList LatentActionModel::encoder_params() {
  ParamList out;
  encoder_.collect(out);
  return out;
}

ParamList LatentActionModel::decoder_params() {
  ParamList out;
  decoder_.collect(out);
  return out;
}

}  // namespace laflow
