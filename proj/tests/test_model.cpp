#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

#include "aen/error.h"
#include "aen/model.h"
#include "aen/ops.h"
#include "aen/rng.h"
#include "aen/tensor.h"
#include "support/gradcheck.h"
#include "support/tempdir.h"

using namespace aen;
using testsupport::TempDir;

namespace {

Tensor rand_input(int b, int n_mels, int t, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(b) * n_mels * t);
  for (double& x : v) x = rng.uniform(-40.0, 0.0);  // dB-scale features
  return Tensor::from_values({b, 1, n_mels, t}, std::move(v));
}

// Small configuration used where the full-size network would be wasteful.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.kernel_size = 3;
  cfg.n_mels = 16;
  cfg.num_classes = 3;
  cfg.dropout = 0.0;
  return cfg;
}

Tensor find_tensor(const ArabEmoNet& model, const std::string& name) {
  for (const auto& nt : model.named_tensors()) {
    if (nt.name == name) return nt.tensor;
  }
  throw std::runtime_error("no tensor named " + name);
}

std::vector<unsigned char> detail_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

void detail_write(const std::string& path,
                  const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(static_cast<bool>(out));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("config validation rejects bad fields") {
  ModelConfig ok;
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.padding() == 3);

  ModelConfig bad = ok;
  bad.kernel_size = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.kernel_size = 13;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.num_classes = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.n_mels = 100;  // not divisible by 8
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.lstm_layers = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter counts match the hand-computed totals per kernel size") {
  // Derived by hand from the layer shapes: conv stages (Cout*Cin*k^2 + Cout),
  // batchnorm 2*C each, FC 128*2048+128, LSTM 2 layers x 2 directions of
  // (256*in + 256*64 + 2*256), attention 128+1, head 5*128+5.
  const std::vector<std::pair<int, std::int64_t>> expected = {
      {3, 554822},  {5, 719174},   {7, 965702},
      {9, 1294406}, {11, 1705286},
  };
  std::int64_t prev = 0;
  for (auto [k, total] : expected) {
    ModelConfig cfg;
    cfg.kernel_size = k;
    Rng rng(1);
    ArabEmoNet model(cfg, rng);
    CHECK(model.count_params() == total);
    CHECK(model.count_params() > prev);  // strictly increasing in k
    prev = model.count_params();

    std::int64_t from_breakdown = 0;
    for (const auto& [group, n] : model.param_breakdown()) {
      from_breakdown += n;
    }
    CHECK(from_breakdown == total);
  }

  // Spot-check the per-group numbers for the default kernel.
  ModelConfig cfg;
  Rng rng(1);
  ArabEmoNet model(cfg, rng);
  for (const auto& [group, n] : model.param_breakdown()) {
    if (group == "conv1") CHECK(n == 32 * 49 + 32);
    if (group == "conv2") CHECK(n == 64 * 32 * 49 + 64);
    if (group == "conv3") CHECK(n == 128 * 64 * 49 + 128);
    if (group == "bn1") CHECK(n == 64);
    if (group == "fc") CHECK(n == 128 * 2048 + 128);
    if (group == "lstm1") CHECK(n == 2 * (256 * 128 + 256 * 64 + 512));
    if (group == "lstm2") CHECK(n == 2 * (256 * 128 + 256 * 64 + 512));
    if (group == "attention") CHECK(n == 129);
    if (group == "head") CHECK(n == 5 * 128 + 5);
  }
}

TEST_CASE("all-zero parameters give zero logits and uniform attention") {
  ModelConfig cfg = tiny_config();
  Rng rng(3);
  ArabEmoNet model(cfg, rng);
  // Zero every learnable tensor; running stats stay mean 0 / var 1.
  for (const auto& nt : model.named_tensors()) {
    if (nt.learnable) {
      Tensor t = nt.tensor;
      for (double& v : t.mutable_values()) v = 0.0;
    }
  }
  Rng in_rng(4);
  Tensor input = rand_input(2, cfg.n_mels, 64, in_rng);
  ForwardResult out = model.forward(input, /*training=*/false);

  CHECK(out.logits.shape() == std::vector<int>{2, 3});
  for (double v : out.logits.values()) CHECK(v == 0.0);

  // 64 frames -> 8 after three poolings; 1/8 is exact in binary.
  CHECK(out.attention.shape() == std::vector<int>{2, 8});
  CHECK(ArabEmoNet::output_frames(64) == 8);
  for (double a : out.attention.values()) CHECK(a == 0.125);
}

TEST_CASE("frame count law and input validation") {
  CHECK(ArabEmoNet::output_frames(8) == 1);
  CHECK(ArabEmoNet::output_frames(63) == 7);
  CHECK(ArabEmoNet::output_frames(64) == 8);
  CHECK(ArabEmoNet::output_frames(100) == 12);

  ModelConfig cfg = tiny_config();
  Rng rng(5);
  ArabEmoNet model(cfg, rng);
  Rng in_rng(6);

  Tensor short_input = rand_input(1, cfg.n_mels, 7, in_rng);
  CHECK_THROWS_AS(model.forward(short_input, false), ValueError);

  Tensor wrong_mels = rand_input(1, cfg.n_mels * 2, 32, in_rng);
  CHECK_THROWS_AS(model.forward(wrong_mels, false), ShapeError);

  Tensor rank3 = Tensor::zeros({1, cfg.n_mels, 32});
  CHECK_THROWS_AS(model.forward(rank3, false), ShapeError);

  Tensor ok = rand_input(3, cfg.n_mels, 17, in_rng);
  ForwardResult out = model.forward(ok, false);
  CHECK(out.attention.dim(1) == ArabEmoNet::output_frames(17));
  CHECK(out.logits.dim(0) == 3);
}

TEST_CASE("same seed gives bitwise-identical models and eval forwards") {
  ModelConfig cfg = tiny_config();
  Rng rng_a(11);
  Rng rng_b(11);
  ArabEmoNet a(cfg, rng_a);
  ArabEmoNet b(cfg, rng_b);

  auto sa = a.state_snapshot();
  auto sb = b.state_snapshot();
  REQUIRE(sa.size() == sb.size());
  for (size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);

  Rng in_rng(12);
  Tensor input = rand_input(2, cfg.n_mels, 24, in_rng);
  ForwardResult ra = a.forward(input, false);
  ForwardResult rb = b.forward(input, false);
  CHECK(ra.logits.values() == rb.logits.values());
  CHECK(ra.attention.values() == rb.attention.values());

  // Eval mode leaves the model untouched: repeating gives identical bytes.
  ForwardResult ra2 = a.forward(input, false);
  CHECK(ra.logits.values() == ra2.logits.values());

  // A different seed changes the weights.
  Rng rng_c(12);
  ArabEmoNet c(cfg, rng_c);
  CHECK(c.state_snapshot() != sa);
}

TEST_CASE("attention rows are a distribution on random models") {
  ModelConfig cfg = tiny_config();
  Rng rng(21);
  ArabEmoNet model(cfg, rng);
  Rng in_rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor input = rand_input(4, cfg.n_mels, 16 + 13 * trial, in_rng);
    ForwardResult out = model.forward(input, false);
    const int tp = out.attention.dim(1);
    for (int r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int t = 0; t < tp; ++t) {
        const double a = out.attention.at({r, t});
        CHECK(a >= 0.0);
        sum += a;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("identical sequence steps pool to the common vector") {
  // Attention scores of identical steps are equal, so softmax is exactly
  // uniform; with T a power of two the weights are exact binary fractions
  // and the weighted sum reproduces the common row bit for bit.
  const int t = 4, f = 6;
  std::vector<double> row = {0.75, -1.5, 2.0, 0.125, -0.25, 3.0};
  std::vector<double> seq_v;
  for (int i = 0; i < t; ++i) seq_v.insert(seq_v.end(), row.begin(), row.end());
  Tensor seq = Tensor::from_values({1, t, f}, std::move(seq_v));
  Tensor scores = Tensor::full({1, t}, 0.37);
  Tensor alpha = softmax(tanh(scores), 1);
  for (double a : alpha.values()) CHECK(a == 0.25);
  Tensor ctx = attend(alpha, seq);
  for (int j = 0; j < f; ++j) CHECK(ctx.at({0, j}) == row[static_cast<size_t>(j)]);

  // Arbitrary (non-dyadic) rows still match to rounding error.
  Rng rng(31);
  std::vector<double> row2(f);
  for (double& x : row2) x = rng.uniform(-2.0, 2.0);
  std::vector<double> seq2_v;
  for (int i = 0; i < t; ++i)
    seq2_v.insert(seq2_v.end(), row2.begin(), row2.end());
  Tensor seq2 = Tensor::from_values({1, t, f}, std::move(seq2_v));
  Tensor ctx2 = attend(softmax(tanh(Tensor::full({1, t}, -0.8)), 1), seq2);
  for (int j = 0; j < f; ++j)
    CHECK(ctx2.at({0, j}) ==
          doctest::Approx(row2[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("finite differences confirm gradients through the whole network") {
  ModelConfig cfg = tiny_config();
  Rng rng(41);
  ArabEmoNet model(cfg, rng);
  Rng in_rng(42);
  Tensor input = rand_input(2, cfg.n_mels, 16, in_rng);

  auto build = [&]() {
    ForwardResult out = model.forward(input, /*training=*/true);
    return sum(mul(out.logits, out.logits));
  };

  // Attention weight, classifier head, and the first conv kernel cover the
  // three distinct depths of the graph (post-LSTM, output, input stage).
  std::vector<Tensor> probes = {
      find_tensor(model, "attention.weight"),
      find_tensor(model, "head.weight"),
      find_tensor(model, "conv1.weight"),
      find_tensor(model, "bn1.gamma"),
      find_tensor(model, "lstm1.fwd.w_hh"),
  };
  Rng pick(43);
  auto res = gradcheck::check_graph_sampled(build, probes, 64, pick);
  INFO(res.where);
  CHECK(res.max_err < 1e-4);
}

TEST_CASE("weights survive a save/load round trip bit for bit") {
  TempDir tmp;
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  Rng rng(51);
  ArabEmoNet model(cfg, rng);

  // Run one training-mode forward so running stats move off their init.
  Rng in_rng(52);
  Rng drop_rng(53);
  Tensor input = rand_input(2, cfg.n_mels, 16, in_rng);
  {
    Tape tape;
    TapeScope scope(tape);
    model.forward(input, true, &drop_rng);
  }

  const std::string path = tmp.file("model.aen");
  model.save_weights(path);
  ArabEmoNet loaded = ArabEmoNet::load_weights(path, cfg);

  const auto& a = model.named_tensors();
  const auto& b = loaded.named_tensors();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].tensor.values() == b[i].tensor.values());
  }

  ForwardResult ra = model.forward(input, false);
  ForwardResult rb = loaded.forward(input, false);
  CHECK(ra.logits.values() == rb.logits.values());

  // Saving the loaded model reproduces the same bytes.
  const std::string path2 = tmp.file("model2.aen");
  loaded.save_weights(path2);
  CHECK(detail_read(path) == detail_read(path2));
}

TEST_CASE("weight file corruption and mismatches are rejected") {
  TempDir tmp;
  ModelConfig cfg = tiny_config();
  Rng rng(61);
  ArabEmoNet model(cfg, rng);
  const std::string path = tmp.file("model.aen");
  model.save_weights(path);

  SUBCASE("wrong class count fails with a shape error") {
    ModelConfig other = cfg;
    other.num_classes = cfg.num_classes + 1;
    CHECK_THROWS_AS(ArabEmoNet::load_weights(path, other), ShapeError);
  }

  SUBCASE("truncated file is rejected") {
    auto bytes = detail_read(path);
    bytes.resize(bytes.size() - 5);
    const std::string cut = tmp.file("cut.aen");
    detail_write(cut, bytes);
    CHECK_THROWS_AS(ArabEmoNet::load_weights(cut, cfg), FormatError);
  }

  SUBCASE("a single flipped payload byte trips the checksum") {
    auto bytes = detail_read(path);
    bytes[bytes.size() / 2] ^= 0x01;
    const std::string flipped = tmp.file("flip.aen");
    detail_write(flipped, bytes);
    CHECK_THROWS_AS(ArabEmoNet::load_weights(flipped, cfg), FormatError);
  }

  SUBCASE("bad magic and unsupported version are rejected") {
    auto bytes = detail_read(path);
    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    const std::string m = tmp.file("magic.aen");
    detail_write(m, wrong_magic);
    CHECK_THROWS_AS(ArabEmoNet::load_weights(m, cfg), FormatError);

    auto wrong_version = bytes;
    wrong_version[4] = 2;
    const std::string v = tmp.file("version.aen");
    detail_write(v, wrong_version);
    CHECK_THROWS_AS(ArabEmoNet::load_weights(v, cfg), FormatError);
  }

  SUBCASE("missing file throws an io error") {
    CHECK_THROWS_AS(ArabEmoNet::load_weights(tmp.file("nope.aen"), cfg),
                    IoError);
  }
}

TEST_CASE("state snapshots restore the exact previous weights") {
  ModelConfig cfg = tiny_config();
  Rng rng(71);
  ArabEmoNet model(cfg, rng);
  auto before = model.state_snapshot();

  for (const auto& nt : model.named_tensors()) {
    Tensor t = nt.tensor;
    for (double& v : t.mutable_values()) v += 0.5;
  }
  CHECK(model.state_snapshot() != before);

  model.load_state(before);
  CHECK(model.state_snapshot() == before);

  auto bad = before;
  bad.pop_back();
  CHECK_THROWS_AS(model.load_state(bad), ShapeError);
}
