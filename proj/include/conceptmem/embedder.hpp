#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conceptmem/ops.hpp"
#include "conceptmem/params.hpp"

namespace cmem {

/// cnn: two conv-conv-batchnorm-relu-pool modules, then FC-relu-batchnorm-FC.
/// mlp: FC layers with relu between them.
/// identity: pass-through, used as an oracle embedding in tests.
/// scaled-identity: h = g * x with one trainable gain g (enumerable toy policy).
enum class EmbedderKind { Cnn, Mlp, Identity, ScaledIdentity };

std::string to_string(EmbedderKind kind);
EmbedderKind embedder_kind_from_string(const std::string& s);

struct EmbedderConfig {
  EmbedderKind kind = EmbedderKind::Mlp;
  Shape input_shape{16};
  /// Embedding length l_hidden. Derived for mlp (last width) and identity.
  std::size_t hidden_size = 0;
  /// mlp layer widths; the last one is the embedding length.
  std::vector<std::size_t> widths;
  /// cnn filter counts of the two conv modules.
  std::vector<std::size_t> conv_filters{128, 256};

  /// 1x28x28 input, 128/256 filters, FC 300.
  static EmbedderConfig cnn_full();
  /// 1x8x8 input, 8/16 filters, FC 32; for fast gradient checks.
  static EmbedderConfig cnn_reduced();
  static EmbedderConfig mlp(std::size_t input_size, std::vector<std::size_t> widths);
  static EmbedderConfig identity(Shape input_shape);

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  std::size_t embedding_size() const;

  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

/// The embedding function F: raw sample -> hidden vector h.
class Embedder {
 public:
  /// Fresh parameters: Glorot-uniform weights, zero biases, gamma 1, beta 0.
  Embedder(EmbedderConfig config, std::uint64_t seed);
  /// Restores from stored parameters; shapes are checked against the config.
  Embedder(EmbedderConfig config, ParamSet params);

  const EmbedderConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  std::size_t embedding_size() const { return config_.embedding_size(); }

  /// Embeds a batch [B x input_shape...] into [B x l_hidden]. In train mode
  /// batchnorm uses the batch statistics and appends them to `stats`.
  Var forward(Tape& tape, Var batch, ops::NormMode mode, std::vector<ops::BatchStats>* stats = nullptr) const;
  /// Stacks samples into one batch node and embeds it.
  Var forward(Tape& tape, std::span<const Array> samples, ops::NormMode mode,
              std::vector<ops::BatchStats>* stats = nullptr) const;

  /// Eval-mode embedding of one sample.
  Array embed(const Array& x) const;
  /// Eval-mode embeddings, one row per sample.
  std::vector<Array> embed_all(std::span<const Array> samples) const;

  /// Folds train-mode batch statistics into the running averages, in the
  /// order forward() produced them.
  void apply_batch_stats(std::span<const ops::BatchStats> stats);

 private:
  void init_params(std::uint64_t seed);
  Var batchnorm(Tape& tape, const std::string& prefix, Var x, ops::NormMode mode,
                std::vector<ops::BatchStats>* stats) const;
  Var dense(Tape& tape, const std::string& prefix, Var x) const;

  EmbedderConfig config_;
  ParamSet params_;
};

/// The pair (h, y) that forms the sample's part of the policy state. The two
/// parts stay separate because attention consumes them through different
/// channels.
struct StateContribution {
  Array hidden;
  Array label;
};

StateContribution embed_with_label(const Embedder& embedder, const Array& x, const Array& y,
                                   std::size_t label_length);

}  // namespace cmem
