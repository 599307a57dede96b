#pragma once

#include <span>
#include <vector>

#include "conceptmem/tape.hpp"

/// Differentiable kernels. Every op checks shapes at its boundary and throws
/// DimensionError naming the offending shapes; nothing broadcasts.
namespace cmem::ops {

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// [B x F] + [F] added to every row.
Var add_row_bias(Var x, Var bias);

/// max(0, x); the subgradient at 0 is 0.
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);

/// Sum of all entries, shape [1].
Var sum(Var x);
Var reshape(Var x, Shape shape);
/// Slice `index` along the first axis: [B x ...] -> [...]; a rank-1 input
/// yields shape [1].
Var row(Var x, std::size_t index);
/// Entry `index` of a flat view, shape [1].
Var select(Var x, std::size_t index);
/// Concatenates single-value nodes into a vector [n].
Var stack(std::span<const Var> scalars);

/// 3x3 cross-correlation, stride 1, zero padding 1. Input [C_in x H x W] or a
/// batch [B x C_in x H x W]; kernels [C_out x C_in x 3 x 3]; bias [C_out].
Var conv2d_3x3(Var input, Var kernels, Var bias);
/// 2x2 max pooling, stride 2, over [C x H x W] or [B x C x H x W]. Gradient
/// goes to the first maximal element in row-major order.
Var maxpool2(Var input);

enum class NormMode { Train, Eval };

struct BatchStats {
  Array mean;
  Array var;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Batch normalization over [B x F] (per feature) or [B x C x H x W] (per
/// channel). Train mode uses biased batch statistics and, when `stats` is
/// non-null, reports them so the caller can fold them into running averages.
/// Eval mode uses `running_mean` / `running_var`.
Var batchnorm(Var x, Var gamma, Var beta, NormMode mode, const Array& running_mean, const Array& running_var,
              BatchStats* stats = nullptr);
/// running <- momentum * running + (1 - momentum) * batch
void update_running_stats(Array& running_mean, Array& running_var, const BatchStats& stats);

/// Weights of one GRU layer. W_* are [d_h x d_in], U_* are [d_h x d_h] and
/// biases [d_h].
struct GruWeights {
  Var w_z, u_z, b_z;
  Var w_r, u_r, b_r;
  Var w_h, u_h, b_h;
};

/// z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r),
/// c = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * c + z * h.
Var gru_cell(Var x, Var h, const GruWeights& w);

Var softmax(Var logits);
Var log_softmax(Var logits);
/// (mean * count + x) / (count + 1), evaluated exactly like Memory::write.
Var running_mean(Var mean, Var x, std::size_t count);

/// ||a - b||_2 as shape [1]; the gradient at zero distance is 0.
Var euclidean_distance(Var a, Var b);

}  // namespace cmem::ops
