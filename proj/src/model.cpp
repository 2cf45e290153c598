#include "aen/model.h"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "aen/error.h"
#include "detail/bytes.h"
#include "detail/crc32.h"

namespace aen {

namespace {

constexpr char kMagic[4] = {'A', 'E', 'N', '1'};
constexpr std::uint16_t kFormatVersion = 1;

}  // namespace

void ModelConfig::validate() const {
  bool known_kernel = false;
  for (int k : {3, 5, 7, 9, 11}) {
    known_kernel = known_kernel || kernel_size == k;
  }
  if (!known_kernel) {
    throw ConfigError("model.kernel_size must be one of {3,5,7,9,11}, got " +
                      std::to_string(kernel_size));
  }
  for (int f : conv_filters) {
    if (f < 1) {
      throw ConfigError("model.conv_filters entries must be >= 1");
    }
  }
  if (fc_dim < 1) {
    throw ConfigError("model.fc_dim must be >= 1");
  }
  if (lstm_hidden < 1) {
    throw ConfigError("model.lstm_hidden must be >= 1");
  }
  if (lstm_layers < 1) {
    throw ConfigError("model.lstm_layers must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("model.dropout must be in [0,1), got " +
                      std::to_string(dropout));
  }
  if (n_mels < 8 || n_mels % 8 != 0) {
    throw ConfigError("model.n_mels must be a positive multiple of 8, got " +
                      std::to_string(n_mels));
  }
  if (num_classes < 1) {
    throw ConfigError("model.num_classes must be >= 1, got " +
                      std::to_string(num_classes));
  }
}

Tensor ArabEmoNet::make_param(const std::string& name,
                              const std::vector<int>& shape, double bound,
                              Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.mutable_values()) {
    v = rng.uniform(-bound, bound);
  }
  t.set_requires_grad(true);
  registry_.push_back({name, t, true});
  return t;
}

Tensor ArabEmoNet::make_const(const std::string& name,
                              const std::vector<int>& shape, double fill,
                              bool learnable) {
  Tensor t = Tensor::full(shape, fill);
  if (learnable) {
    t.set_requires_grad(true);
  }
  registry_.push_back({name, t, learnable});
  return t;
}

ArabEmoNet::ArabEmoNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int k = cfg_.kernel_size;
  int cin = 1;
  for (int s = 0; s < 3; ++s) {
    const int cout = cfg_.conv_filters[static_cast<std::size_t>(s)];
    const std::string conv = "conv" + std::to_string(s + 1);
    const std::string bn = "bn" + std::to_string(s + 1);
    const double bound = std::sqrt(1.0 / (static_cast<double>(cin) * k * k));
    auto& st = stages_[static_cast<std::size_t>(s)];
    st.w = make_param(conv + ".weight", {cout, cin, k, k}, bound, rng);
    st.b = make_const(conv + ".bias", {cout}, 0.0, true);
    st.gamma = make_const(bn + ".gamma", {cout}, 1.0, true);
    st.beta = make_const(bn + ".beta", {cout}, 0.0, true);
    st.running_mean = make_const(bn + ".running_mean", {cout}, 0.0, false);
    st.running_var = make_const(bn + ".running_var", {cout}, 1.0, false);
    cin = cout;
  }

  const int feat = cfg_.conv_filters[2] * (cfg_.n_mels / 8);
  fc_w_ = make_param("fc.weight", {cfg_.fc_dim, feat},
                     std::sqrt(1.0 / feat), rng);
  fc_b_ = make_const("fc.bias", {cfg_.fc_dim}, 0.0, true);

  const int h = cfg_.lstm_hidden;
  const double lstm_bound = std::sqrt(1.0 / h);
  lstm_.resize(static_cast<std::size_t>(cfg_.lstm_layers));
  int in_dim = cfg_.fc_dim;
  for (int l = 0; l < cfg_.lstm_layers; ++l) {
    for (int d = 0; d < 2; ++d) {
      const std::string base =
          "lstm" + std::to_string(l + 1) + (d == 0 ? ".fwd" : ".bwd");
      LstmParams& p = lstm_[static_cast<std::size_t>(l)]
                           [static_cast<std::size_t>(d)];
      p.w_ih = make_param(base + ".w_ih", {4 * h, in_dim}, lstm_bound, rng);
      p.w_hh = make_param(base + ".w_hh", {4 * h, h}, lstm_bound, rng);
      p.b_ih = make_const(base + ".b_ih", {4 * h}, 0.0, true);
      p.b_hh = make_const(base + ".b_hh", {4 * h}, 0.0, true);
    }
    in_dim = 2 * h;
  }

  const int ctx = 2 * h;
  attn_w_ = make_param("attention.weight", {1, ctx},
                       std::sqrt(1.0 / ctx), rng);
  attn_b_ = make_const("attention.bias", {1}, 0.0, true);
  head_w_ = make_param("head.weight", {cfg_.num_classes, ctx},
                       std::sqrt(1.0 / ctx), rng);
  head_b_ = make_const("head.bias", {cfg_.num_classes}, 0.0, true);
}

int ArabEmoNet::output_frames(int t) { return ((t / 2) / 2) / 2; }

ForwardResult ArabEmoNet::forward(const Tensor& batch, bool training,
                                  Rng* rng) {
  if (!batch.defined() || batch.ndim() != 4 || batch.dim(1) != 1) {
    throw ShapeError("forward: expected input [B,1,n_mels,T], got " +
                     (batch.defined() ? shape_str(batch.shape())
                                      : std::string("undefined")));
  }
  if (batch.dim(2) != cfg_.n_mels) {
    throw ShapeError("forward: input has " + std::to_string(batch.dim(2)) +
                     " mel bands, model expects " +
                     std::to_string(cfg_.n_mels));
  }
  if (batch.dim(3) < 8) {
    throw ValueError("forward: need at least 8 frames, got " +
                     std::to_string(batch.dim(3)));
  }
  if (training && cfg_.dropout > 0.0 && rng == nullptr) {
    throw ValueError("forward: training mode requires an rng for dropout");
  }

  const int b = batch.dim(0);
  Tensor x = batch;
  for (auto& st : stages_) {
    x = conv2d(x, st.w, st.b, cfg_.padding());
    x = batchnorm2d(x, st.gamma, st.beta, st.running_mean, st.running_var,
                    training);
    x = relu(x);
    x = maxpool2d(x);
    x = dropout(x, cfg_.dropout, training, rng);
  }

  Tensor frames = to_frames(x);  // [B, T', C*H]
  const int tp = frames.dim(1);
  const int feat = frames.dim(2);
  Tensor flat = reshape(frames, {b * tp, feat});
  Tensor fc = dropout(relu(linear(flat, fc_w_, fc_b_)), cfg_.dropout, training,
                      rng);
  Tensor seq = reshape(fc, {b, tp, cfg_.fc_dim});

  const int h = cfg_.lstm_hidden;
  for (int l = 0; l < cfg_.lstm_layers; ++l) {
    std::vector<Tensor> fw(static_cast<std::size_t>(tp));
    std::vector<Tensor> bw(static_cast<std::size_t>(tp));
    Tensor hf = Tensor::zeros({b, h});
    Tensor cf = Tensor::zeros({b, h});
    for (int t = 0; t < tp; ++t) {
      auto [nh, nc] = lstm_cell(time_slice(seq, t), hf, cf,
                                lstm_[static_cast<std::size_t>(l)][0]);
      hf = nh;
      cf = nc;
      fw[static_cast<std::size_t>(t)] = nh;
    }
    Tensor hb = Tensor::zeros({b, h});
    Tensor cb = Tensor::zeros({b, h});
    for (int t = tp - 1; t >= 0; --t) {
      auto [nh, nc] = lstm_cell(time_slice(seq, t), hb, cb,
                                lstm_[static_cast<std::size_t>(l)][1]);
      hb = nh;
      cb = nc;
      bw[static_cast<std::size_t>(t)] = nh;
    }
    std::vector<Tensor> joined(static_cast<std::size_t>(tp));
    for (int t = 0; t < tp; ++t) {
      joined[static_cast<std::size_t>(t)] =
          concat_cols(fw[static_cast<std::size_t>(t)],
                      bw[static_cast<std::size_t>(t)]);
    }
    seq = stack_time(joined);  // [B, T', 2H]
    if (l + 1 < cfg_.lstm_layers) {
      seq = dropout(seq, cfg_.dropout, training, rng);
    }
  }

  Tensor scores =
      reshape(linear(reshape(seq, {b * tp, 2 * h}), attn_w_, attn_b_),
              {b, tp});
  Tensor alpha = softmax(tanh(scores), 1);
  Tensor ctx = attend(alpha, seq);
  Tensor logits = linear(ctx, head_w_, head_b_);
  return {logits, alpha};
}

std::vector<Tensor> ArabEmoNet::parameters() const {
  std::vector<Tensor> out;
  out.reserve(registry_.size());
  for (const auto& nt : registry_) {
    if (nt.learnable) {
      out.push_back(nt.tensor);
    }
  }
  return out;
}

void ArabEmoNet::zero_grad() {
  for (auto& nt : registry_) {
    if (nt.learnable) {
      nt.tensor.zero_grad();
    }
  }
}

std::int64_t ArabEmoNet::count_params() const {
  std::int64_t total = 0;
  for (const auto& nt : registry_) {
    if (nt.learnable) {
      total += nt.tensor.numel();
    }
  }
  return total;
}

std::vector<std::pair<std::string, std::int64_t>>
ArabEmoNet::param_breakdown() const {
  std::vector<std::pair<std::string, std::int64_t>> groups;
  for (const auto& nt : registry_) {
    if (!nt.learnable) {
      continue;
    }
    const std::string group = nt.name.substr(0, nt.name.find('.'));
    if (groups.empty() || groups.back().first != group) {
      groups.emplace_back(group, 0);
    }
    groups.back().second += nt.tensor.numel();
  }
  return groups;
}

void ArabEmoNet::save_weights(const std::string& path) const {
  std::vector<std::uint8_t> body;
  detail::put_u32(body, static_cast<std::uint32_t>(registry_.size()));
  for (const auto& nt : registry_) {
    detail::put_u32(body, static_cast<std::uint32_t>(nt.name.size()));
    body.insert(body.end(), nt.name.begin(), nt.name.end());
    detail::put_u32(body, static_cast<std::uint32_t>(nt.tensor.ndim()));
    for (int d = 0; d < nt.tensor.ndim(); ++d) {
      detail::put_u32(body, static_cast<std::uint32_t>(nt.tensor.dim(d)));
    }
    for (double v : nt.tensor.values()) {
      detail::put_f64(body, v);
    }
  }
  std::vector<std::uint8_t> out;
  out.reserve(body.size() + 10);
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::put_u16(out, kFormatVersion);
  out.insert(out.end(), body.begin(), body.end());
  detail::put_u32(out, detail::crc32(body.data(), body.size()));
  detail::write_file_bytes(path, out);
}

ArabEmoNet ArabEmoNet::load_weights(const std::string& path,
                                    const ModelConfig& cfg) {
  const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  if (bytes.size() < 10) {
    throw FormatError("weight file too short: " + path);
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a weight file (bad magic): " + path);
  }
  const std::uint16_t version =
      static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kFormatVersion) {
    throw FormatError("unsupported weight format version " +
                      std::to_string(version) + " in " + path);
  }
  const std::uint8_t* body = bytes.data() + 6;
  const std::size_t body_len = bytes.size() - 10;
  const std::uint8_t* crc_bytes = bytes.data() + bytes.size() - 4;
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(crc_bytes[0]) |
      (static_cast<std::uint32_t>(crc_bytes[1]) << 8) |
      (static_cast<std::uint32_t>(crc_bytes[2]) << 16) |
      (static_cast<std::uint32_t>(crc_bytes[3]) << 24);
  if (detail::crc32(body, body_len) != stored_crc) {
    throw FormatError("weight file checksum mismatch (corrupt or truncated): " +
                      path);
  }

  Rng init_rng(0);
  ArabEmoNet model(cfg, init_rng);

  std::unordered_map<std::string, NamedTensor*> by_name;
  for (auto& nt : model.registry_) {
    by_name[nt.name] = &nt;
  }

  detail::ByteReader r(body, body_len, path);
  const std::uint32_t count = r.u32();
  if (count != model.registry_.size()) {
    throw FormatError("weight file holds " + std::to_string(count) +
                      " tensors, model expects " +
                      std::to_string(model.registry_.size()) + ": " + path);
  }
  std::unordered_map<std::string, bool> filled;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError("weight file names unknown tensor '" + name + "': " +
                        path);
    }
    if (filled[name]) {
      throw FormatError("weight file repeats tensor '" + name + "': " + path);
    }
    filled[name] = true;
    Tensor& t = it->second->tensor;
    const std::uint32_t rank = r.u32();
    std::vector<int> dims(rank);
    for (auto& d : dims) {
      d = static_cast<int>(r.u32());
    }
    if (dims != t.shape()) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_str(dims) +
                       " in file, model expects " + shape_str(t.shape()) +
                       ": " + path);
    }
    auto& values = t.mutable_values();
    for (double& v : values) {
      v = r.f64();
    }
  }
  if (r.remaining() != 0) {
    throw FormatError("weight file has " + std::to_string(r.remaining()) +
                      " trailing bytes: " + path);
  }
  return model;
}

std::vector<std::vector<double>> ArabEmoNet::state_snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(registry_.size());
  for (const auto& nt : registry_) {
    out.push_back(nt.tensor.values());
  }
  return out;
}

void ArabEmoNet::load_state(const std::vector<std::vector<double>>& state) {
  if (state.size() != registry_.size()) {
    throw ShapeError("state snapshot holds " + std::to_string(state.size()) +
                     " tensors, model has " + std::to_string(registry_.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto& values = registry_[i].tensor.mutable_values();
    if (state[i].size() != values.size()) {
      throw ShapeError("state snapshot entry " + std::to_string(i) +
                       " has wrong element count");
    }
    values = state[i];
  }
}

}  // namespace aen
