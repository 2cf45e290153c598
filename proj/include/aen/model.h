#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aen/ops.h"
#include "aen/rng.h"
#include "aen/tensor.h"

namespace aen {

// Hyperparameters of the emotion classifier.  Defaults reproduce the
// reference architecture: three 2-D conv stages (32/64/128 filters) with
// batchnorm + max-pooling, a per-frame FC projection to 128, a 2-layer
// bidirectional LSTM with 64 units per direction, additive attention
// pooling, and a linear classification head.
struct ModelConfig {
  int kernel_size = 7;  // square conv kernels; one of {3,5,7,9,11}
  std::array<int, 3> conv_filters{32, 64, 128};
  int fc_dim = 128;
  int lstm_hidden = 64;  // per direction
  int lstm_layers = 2;
  double dropout = 0.3;
  int n_mels = 128;  // must be divisible by 8 (three 2x2 poolings)
  int num_classes = 5;

  // "Same" padding for the odd square kernel.
  int padding() const { return (kernel_size - 1) / 2; }

  void validate() const;  // throws ConfigError on any bad field
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool learnable = true;  // false for batchnorm running stats
};

struct ForwardResult {
  Tensor logits;     // [B, num_classes]
  Tensor attention;  // [B, T'], each row sums to 1
};

class ArabEmoNet {
 public:
  // Builds and initializes all parameters from `rng`: conv/linear weights
  // uniform +-sqrt(1/fan_in), LSTM weights uniform +-sqrt(1/hidden),
  // batchnorm gamma 1 / beta 0, all biases 0.  The draw order is fixed, so
  // equal seeds give bitwise-identical models.
  ArabEmoNet(const ModelConfig& cfg, Rng& rng);

  ArabEmoNet(const ArabEmoNet&) = delete;
  ArabEmoNet& operator=(const ArabEmoNet&) = delete;
  ArabEmoNet(ArabEmoNet&&) = default;
  ArabEmoNet& operator=(ArabEmoNet&&) = default;

  const ModelConfig& config() const { return cfg_; }

  // batch: [B, 1, n_mels, T] with T >= 8.  In training mode, dropout is
  // active (requires rng) and batchnorm uses batch statistics while updating
  // its running averages; in eval mode the forward pass is deterministic.
  ForwardResult forward(const Tensor& batch, bool training, Rng* rng = nullptr);

  std::vector<Tensor> parameters() const;  // learnable tensors only
  const std::vector<NamedTensor>& named_tensors() const { return registry_; }
  void zero_grad();

  std::int64_t count_params() const;  // learnable scalar count
  // (group name, scalar count) in network order, e.g. ("conv1", 1600).
  std::vector<std::pair<std::string, std::int64_t>> param_breakdown() const;

  // Binary checkpoint: magic "AEN1", format version, named tensor entries,
  // trailing CRC32.  Includes batchnorm running statistics.
  void save_weights(const std::string& path) const;
  static ArabEmoNet load_weights(const std::string& path,
                                 const ModelConfig& cfg);

  // In-memory copy of every named tensor's values (for best-epoch restore).
  std::vector<std::vector<double>> state_snapshot() const;
  void load_state(const std::vector<std::vector<double>>& state);

  // Frames remaining after the three 2x2 poolings: floor(floor(floor(t/2)/2)/2).
  static int output_frames(int t);

 private:
  struct ConvStage {
    Tensor w, b, gamma, beta, running_mean, running_var;
  };

  Tensor make_param(const std::string& name, const std::vector<int>& shape,
                    double bound, Rng& rng);
  Tensor make_const(const std::string& name, const std::vector<int>& shape,
                    double fill, bool learnable);

  ModelConfig cfg_;
  std::array<ConvStage, 3> stages_;
  Tensor fc_w_, fc_b_;
  // lstm_[layer][direction]; direction 0 runs left-to-right, 1 right-to-left.
  std::vector<std::array<LstmParams, 2>> lstm_;
  Tensor attn_w_, attn_b_;
  Tensor head_w_, head_b_;
  std::vector<NamedTensor> registry_;
};

}  // namespace aen
