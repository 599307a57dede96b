#include "conceptmem/label_attention.hpp"

#include "conceptmem/error.hpp"

namespace cmem {

namespace {

constexpr const char* kGates[] = {"z", "r", "h"};

}  // namespace

LabelAttention::LabelAttention(std::size_t hidden_size, std::uint64_t seed) : hidden_(hidden_size), params_(seed) {
  if (hidden_size == 0) throw ConfigError("att_y.hidden_size: must be at least 1");
  Rng rng(seed);
  for (const char* g : kGates) {
    params_.add(std::string("gru.w_") + g, glorot_uniform({hidden_, 1}, 1, hidden_, rng));
    params_.add(std::string("gru.u_") + g, glorot_uniform({hidden_, hidden_}, hidden_, hidden_, rng));
    params_.add(std::string("gru.b_") + g, Array({hidden_}));
  }
  params_.add("readout.weight", glorot_uniform({hidden_, 1}, hidden_, 1, rng));
  params_.add("readout.bias", Array({1}));
}

LabelAttention::LabelAttention(ParamSet params) : params_(std::move(params)) {
  if (!params_.contains("gru.b_z")) throw ConfigError("att_y checkpoint lacks parameter 'gru.b_z'");
  hidden_ = params_.at("gru.b_z").value.size();
  check_layout();
}

LabelAttention LabelAttention::zeros(std::size_t hidden_size, double readout_bias) {
  LabelAttention a(hidden_size, 0);
  for (auto& p : a.params_.entries()) p.value.fill(0.0);
  a.params_.at("readout.bias").value[0] = readout_bias;
  return a;
}

void LabelAttention::check_layout() const {
  auto expect = [&](const std::string& name, const Shape& shape) {
    if (!params_.contains(name)) throw ConfigError("att_y checkpoint lacks parameter '" + name + "'");
    if (params_.at(name).value.shape() != shape) {
      throw DimensionError("att_y parameter '" + name + "' has shape " + to_string(params_.at(name).value.shape()) +
                           ", expected " + to_string(shape));
    }
  };
  for (const char* g : kGates) {
    expect(std::string("gru.w_") + g, {hidden_, 1});
    expect(std::string("gru.u_") + g, {hidden_, hidden_});
    expect(std::string("gru.b_") + g, {hidden_});
  }
  expect("readout.weight", {hidden_, 1});
  expect("readout.bias", {1});
  if (params_.size() != 11) throw ConfigError("att_y checkpoint has unexpected extra parameters");
}

LabelAttention::Bound LabelAttention::bind(Tape& tape) const {
  auto p = [&](const char* name) { return tape.parameter(params_.at(name)); };
  Bound b;
  b.gru = ops::GruWeights{p("gru.w_z"), p("gru.u_z"), p("gru.b_z"), p("gru.w_r"), p("gru.u_r"),
                          p("gru.b_r"), p("gru.w_h"), p("gru.u_h"), p("gru.b_h")};
  b.readout_w = p("readout.weight");
  b.readout_b = p("readout.bias");
  return b;
}

Var LabelAttention::score(Tape& tape, const Bound& bound, const Array& difference) const {
  if (difference.rank() != 1) {
    throw DimensionError("att_y: difference must be a vector, got " + to_string(difference.shape()));
  }
  Var h = tape.constant(Array({hidden_}));
  for (std::size_t i = 0; i < difference.size(); ++i) {
    h = ops::gru_cell(tape.constant(Array::scalar(difference[i])), h, bound.gru);
  }
  const Var row = ops::reshape(h, {1, hidden_});
  return ops::reshape(ops::add_row_bias(ops::matmul(row, bound.readout_w), bound.readout_b), {1});
}

double LabelAttention::score(const Array& y, const Array& m_y) const {
  const Array diff = label_difference(y, m_y);
  Tape tape(false);
  const Bound b = bind(tape);
  return score(tape, b, diff).value()[0];
}

Array label_difference(const Array& y, const Array& m_y) {
  if (y.rank() != 1 || m_y.rank() != 1 || y.size() != m_y.size()) {
    throw DimensionError("att_y: label lengths differ: " + to_string(y.shape()) + " vs " + to_string(m_y.shape()));
  }
  Array d = y;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= m_y[i];
  return d;
}

}  // namespace cmem
