#include "conceptmem/embedder.hpp"

#include "conceptmem/error.hpp"

namespace cmem {

std::string to_string(EmbedderKind kind) {
  switch (kind) {
    case EmbedderKind::Cnn:
      return "cnn";
    case EmbedderKind::Mlp:
      return "mlp";
    case EmbedderKind::Identity:
      return "identity";
    case EmbedderKind::ScaledIdentity:
      return "scaled-identity";
  }
  return "?";
}

EmbedderKind embedder_kind_from_string(const std::string& s) {
  if (s == "cnn") return EmbedderKind::Cnn;
  if (s == "mlp") return EmbedderKind::Mlp;
  if (s == "identity") return EmbedderKind::Identity;
  if (s == "scaled-identity") return EmbedderKind::ScaledIdentity;
  throw ConfigError("embedder.kind: unknown kind '" + s + "' (expected cnn, mlp, identity, scaled-identity)");
}

EmbedderConfig EmbedderConfig::cnn_full() {
  EmbedderConfig c;
  c.kind = EmbedderKind::Cnn;
  c.input_shape = {1, 28, 28};
  c.hidden_size = 300;
  c.conv_filters = {128, 256};
  return c;
}

EmbedderConfig EmbedderConfig::cnn_reduced() {
  EmbedderConfig c;
  c.kind = EmbedderKind::Cnn;
  c.input_shape = {1, 8, 8};
  c.hidden_size = 32;
  c.conv_filters = {8, 16};
  return c;
}

EmbedderConfig EmbedderConfig::mlp(std::size_t input_size, std::vector<std::size_t> widths) {
  EmbedderConfig c;
  c.kind = EmbedderKind::Mlp;
  c.input_shape = {input_size};
  c.hidden_size = widths.empty() ? 0 : widths.back();
  c.widths = std::move(widths);
  return c;
}

EmbedderConfig EmbedderConfig::identity(Shape input_shape) {
  EmbedderConfig c;
  c.kind = EmbedderKind::Identity;
  c.input_shape = std::move(input_shape);
  c.hidden_size = element_count(c.input_shape);
  return c;
}

void EmbedderConfig::validate() const {
  if (input_shape.empty()) throw ConfigError("embedder.input_shape: must not be empty");
  for (std::size_t d : input_shape) {
    if (d == 0) throw ConfigError("embedder.input_shape: dimensions must be positive");
  }
  switch (kind) {
    case EmbedderKind::Cnn: {
      if (input_shape.size() != 3 || input_shape[0] != 1 || input_shape[1] != input_shape[2]) {
        throw ConfigError("embedder.input_shape: cnn needs a square single-channel [1 x S x S] input, got " +
                          to_string(input_shape));
      }
      if (input_shape[1] % 4 != 0) {
        throw ConfigError("embedder.input_shape: cnn input side must be divisible by 4, got " +
                          std::to_string(input_shape[1]));
      }
      if (conv_filters.size() != 2 || conv_filters[0] == 0 || conv_filters[1] == 0) {
        throw ConfigError("embedder.conv_filters: cnn needs two positive filter counts");
      }
      if (hidden_size == 0) throw ConfigError("embedder.hidden_size: must be at least 1");
      break;
    }
    case EmbedderKind::Mlp: {
      if (input_shape.size() != 1) throw ConfigError("embedder.input_shape: mlp needs a flat [n] input");
      if (widths.empty()) throw ConfigError("embedder.widths: mlp needs at least one layer");
      for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("embedder.widths: layer widths must be positive");
      }
      if (hidden_size != 0 && hidden_size != widths.back()) {
        throw ConfigError("embedder.hidden_size: must equal the last mlp width (" + std::to_string(widths.back()) +
                          ")");
      }
      break;
    }
    case EmbedderKind::Identity:
    case EmbedderKind::ScaledIdentity:
      if (hidden_size != 0 && hidden_size != element_count(input_shape)) {
        throw ConfigError("embedder.hidden_size: identity embedding length must equal the input size");
      }
      break;
  }
}

std::size_t EmbedderConfig::embedding_size() const {
  switch (kind) {
    case EmbedderKind::Mlp:
      return widths.empty() ? hidden_size : widths.back();
    case EmbedderKind::Identity:
    case EmbedderKind::ScaledIdentity:
      return element_count(input_shape);
    case EmbedderKind::Cnn:
      break;
  }
  return hidden_size;
}

Embedder::Embedder(EmbedderConfig config, std::uint64_t seed) : config_(std::move(config)), params_(seed) {
  config_.validate();
  config_.hidden_size = config_.embedding_size();
  init_params(seed);
}

Embedder::Embedder(EmbedderConfig config, ParamSet params) : config_(std::move(config)) {
  config_.validate();
  config_.hidden_size = config_.embedding_size();
  // Build a reference layout and check every stored tensor against it.
  Embedder reference(config_, params.seed());
  for (const auto& p : reference.params().entries()) {
    if (!params.contains(p.name)) throw ConfigError("embedder checkpoint lacks parameter '" + p.name + "'");
    const auto& stored = params.at(p.name);
    if (stored.value.shape() != p.value.shape()) {
      throw DimensionError("embedder parameter '" + p.name + "' has shape " + to_string(stored.value.shape()) +
                           ", config expects " + to_string(p.value.shape()));
    }
  }
  if (params.size() != reference.params().size()) throw ConfigError("embedder checkpoint has extra parameters");
  params_ = std::move(params);
}

void Embedder::init_params(std::uint64_t seed) {
  Rng rng(seed);
  auto add_dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.add(prefix + ".weight", glorot_uniform({in, out}, in, out, rng));
    params_.add(prefix + ".bias", Array({out}));
  };
  auto add_conv = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.add(prefix + ".kernel", glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng));
    params_.add(prefix + ".bias", Array({out}));
  };
  auto add_norm = [&](const std::string& prefix, std::size_t n) {
    params_.add(prefix + ".gamma", Array::filled({n}, 1.0));
    params_.add(prefix + ".beta", Array({n}));
    params_.add(prefix + ".running_mean", Array({n}), false);
    params_.add(prefix + ".running_var", Array::filled({n}, 1.0), false);
  };

  switch (config_.kind) {
    case EmbedderKind::Identity:
      break;
    case EmbedderKind::ScaledIdentity:
      params_.add("gain", Array::filled({1, 1}, 1.0));
      break;
    case EmbedderKind::Mlp: {
      std::size_t in = config_.input_shape[0];
      for (std::size_t i = 0; i < config_.widths.size(); ++i) {
        add_dense("fc" + std::to_string(i + 1), in, config_.widths[i]);
        in = config_.widths[i];
      }
      break;
    }
    case EmbedderKind::Cnn: {
      const std::size_t f1 = config_.conv_filters[0], f2 = config_.conv_filters[1];
      const std::size_t side = config_.input_shape[1] / 4;
      add_conv("conv1", config_.input_shape[0], f1);
      add_conv("conv2", f1, f1);
      add_norm("bn1", f1);
      add_conv("conv3", f1, f2);
      add_conv("conv4", f2, f2);
      add_norm("bn2", f2);
      add_dense("fc1", f2 * side * side, config_.hidden_size);
      add_norm("bn3", config_.hidden_size);
      add_dense("fc2", config_.hidden_size, config_.hidden_size);
      break;
    }
  }
}

Var Embedder::dense(Tape& tape, const std::string& prefix, Var x) const {
  const Var w = tape.parameter(params_.at(prefix + ".weight"));
  const Var b = tape.parameter(params_.at(prefix + ".bias"));
  return ops::add_row_bias(ops::matmul(x, w), b);
}

Var Embedder::batchnorm(Tape& tape, const std::string& prefix, Var x, ops::NormMode mode,
                        std::vector<ops::BatchStats>* stats) const {
  const Var gamma = tape.parameter(params_.at(prefix + ".gamma"));
  const Var beta = tape.parameter(params_.at(prefix + ".beta"));
  ops::BatchStats batch;
  const Var y = ops::batchnorm(x, gamma, beta, mode, params_.at(prefix + ".running_mean").value,
                               params_.at(prefix + ".running_var").value, &batch);
  if (mode == ops::NormMode::Train && stats != nullptr) stats->push_back(std::move(batch));
  return y;
}

Var Embedder::forward(Tape& tape, Var batch, ops::NormMode mode, std::vector<ops::BatchStats>* stats) const {
  const Shape& bs = batch.shape();
  Shape expected{bs.empty() ? 0 : bs[0]};
  expected.insert(expected.end(), config_.input_shape.begin(), config_.input_shape.end());
  if (bs != expected) {
    throw DimensionError("embedder: batch shape " + to_string(bs) + " does not match input shape " +
                         to_string(config_.input_shape));
  }
  const std::size_t n = bs[0];
  const std::size_t flat = element_count(config_.input_shape);

  switch (config_.kind) {
    case EmbedderKind::Identity:
      return ops::reshape(batch, {n, flat});
    case EmbedderKind::ScaledIdentity: {
      const Var gain = tape.parameter(params_.at("gain"));
      const Var column = ops::reshape(batch, {n * flat, 1});
      return ops::reshape(ops::matmul(column, gain), {n, flat});
    }
    case EmbedderKind::Mlp: {
      Var h = batch;
      for (std::size_t i = 0; i < config_.widths.size(); ++i) {
        if (i > 0) h = ops::relu(h);
        h = dense(tape, "fc" + std::to_string(i + 1), h);
      }
      return h;
    }
    case EmbedderKind::Cnn: {
      auto conv = [&](const std::string& prefix, Var x) {
        return ops::conv2d_3x3(x, tape.parameter(params_.at(prefix + ".kernel")),
                               tape.parameter(params_.at(prefix + ".bias")));
      };
      Var h = conv("conv2", conv("conv1", batch));
      h = ops::maxpool2(ops::relu(batchnorm(tape, "bn1", h, mode, stats)));
      h = conv("conv4", conv("conv3", h));
      h = ops::maxpool2(ops::relu(batchnorm(tape, "bn2", h, mode, stats)));
      h = ops::reshape(h, {n, element_count(h.shape()) / n});
      h = ops::relu(dense(tape, "fc1", h));
      h = batchnorm(tape, "bn3", h, mode, stats);
      return dense(tape, "fc2", h);
    }
  }
  throw ConfigError("embedder: unknown kind");
}

Var Embedder::forward(Tape& tape, std::span<const Array> samples, ops::NormMode mode,
                      std::vector<ops::BatchStats>* stats) const {
  if (samples.empty()) throw ContractError("embedder: empty batch");
  const std::size_t flat = element_count(config_.input_shape);
  std::vector<double> data;
  data.reserve(samples.size() * flat);
  for (const auto& s : samples) {
    if (s.shape() != config_.input_shape) {
      throw DimensionError("embedder: sample shape " + to_string(s.shape()) + " does not match input shape " +
                           to_string(config_.input_shape));
    }
    data.insert(data.end(), s.data().begin(), s.data().end());
  }
  Shape shape{samples.size()};
  shape.insert(shape.end(), config_.input_shape.begin(), config_.input_shape.end());
  return forward(tape, tape.constant(Array(std::move(shape), std::move(data))), mode, stats);
}

Array Embedder::embed(const Array& x) const {
  return embed_all(std::span<const Array>(&x, 1)).front();
}

std::vector<Array> Embedder::embed_all(std::span<const Array> samples) const {
  Tape tape(false);
  const Var out = forward(tape, samples, ops::NormMode::Eval);
  const std::size_t d = embedding_size();
  std::vector<Array> rows;
  rows.reserve(samples.size());
  const auto& v = out.value().values();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    rows.emplace_back(Shape{d}, std::vector<double>(v.begin() + static_cast<long>(i * d),
                                                    v.begin() + static_cast<long>((i + 1) * d)));
  }
  return rows;
}

void Embedder::apply_batch_stats(std::span<const ops::BatchStats> stats) {
  if (config_.kind != EmbedderKind::Cnn || stats.empty()) return;
  static const char* kNorms[] = {"bn1", "bn2", "bn3"};
  if (stats.size() % 3 != 0) throw ContractError("embedder: batch statistics must come in groups of three");
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const std::string prefix = kNorms[i % 3];
    ops::update_running_stats(params_.at(prefix + ".running_mean").value, params_.at(prefix + ".running_var").value,
                              stats[i]);
  }
}

StateContribution embed_with_label(const Embedder& embedder, const Array& x, const Array& y,
                                   std::size_t label_length) {
  if (y.rank() != 1 || y.size() != label_length) {
    throw DimensionError("embed_with_label: label vector " + to_string(y.shape()) + " does not match l_label " +
                         std::to_string(label_length));
  }
  return StateContribution{embedder.embed(x), y};
}

}  // namespace cmem
