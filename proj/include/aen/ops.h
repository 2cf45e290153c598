#pragma once

#include <utility>
#include <vector>

#include "aen/rng.h"
#include "aen/tensor.h"

namespace aen {

// Differentiable operator layer. Every function here computes its result
// eagerly and, when a tape is active and some input requires gradients,
// records a closure that propagates d(out) back to the inputs.
//
// Layout conventions:
//   images    [B, C, H, W]   row-major
//   sequences [B, T, F]
//   matrices  [B, F] or [Out, In] for weights

// ---- elementwise ----
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);   // same shape
Tensor sub(const Tensor& a, const Tensor& b);   // same shape
Tensor mul(const Tensor& a, const Tensor& b);   // Hadamard, same shape
Tensor scale(const Tensor& x, double s);
Tensor sum(const Tensor& x);                    // total -> scalar
Tensor reshape(const Tensor& x, std::vector<int> new_shape);  // same numel

// Softmax over one axis of up to 3-d tensors; numerically stabilised by
// per-slice max subtraction.
Tensor softmax(const Tensor& x, int axis);

// ---- neural-net building blocks ----

// input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout]; zero padding on
// all four spatial edges, stride 1. Output [B,Cout,H+2p-kh+1,W+2p-kw+1].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int padding);

// 2x2 window, stride 2, no padding: truncates odd trailing row/column.
Tensor maxpool2d(const Tensor& input);

// input [B,In], weight [Out,In], bias [Out] -> [B,Out]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Per-channel batch normalisation over (B,H,W). In training mode the batch
// statistics are used (and running stats updated in place, momentum 0.1);
// in inference mode the running stats are used. gamma/beta/running_* are
// [C]. The running buffers are plain state, never differentiated through.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, bool training, double eps = 1e-5,
                   double momentum = 0.1);

// Inverted dropout: training mode zeroes each element with probability p
// and scales survivors by 1/(1-p); inference mode is the identity. `rng`
// may be null only when the call cannot draw (p == 0 or !training).
Tensor dropout(const Tensor& x, double p, bool training, Rng* rng);

// ---- recurrent ----

// One LSTM direction's parameters; gate order [i, f, g, o] stacked along
// the output dimension. Two bias vectors (input-side and hidden-side) are
// kept separate; they are redundant in exact arithmetic but standard in
// the framework convention this mirrors, and they count as parameters.
struct LstmParams {
  Tensor w_ih;  // [4H, In]
  Tensor w_hh;  // [4H, H]
  Tensor b_ih;  // [4H]
  Tensor b_hh;  // [4H]
};

// Single step: x [B,In], h/c [B,H] -> (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev,
                                    const LstmParams& p);

// ---- shape plumbing ----

// [B,C,H,W] -> [B,W,C*H]: reinterprets each image column (all channels) as
// the feature vector of one time step.
Tensor to_frames(const Tensor& x);

// [B,T,F] -> [B,F], picks one time step.
Tensor time_slice(const Tensor& seq, int t);

// T tensors of [B,F] -> [B,T,F].
Tensor stack_time(const std::vector<Tensor>& steps);

// [B,N] -> [B, hi-lo), column range [lo, hi).
Tensor slice_cols(const Tensor& x, int lo, int hi);

// [B,Na] ++ [B,Nb] -> [B,Na+Nb]
Tensor concat_cols(const Tensor& a, const Tensor& b);

// Attention pooling: weights [B,T], sequence [B,T,F] -> [B,F], the
// alpha-weighted sum over time.
Tensor attend(const Tensor& alpha, const Tensor& seq);

// Mean cross-entropy between logits [B,C] and integer labels, computed via
// a numerically stable log-sum-exp. Labels must lie in [0, C).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace aen
