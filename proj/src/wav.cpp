#include "aen/wav.h"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "aen/error.h"

namespace aen {

namespace {

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

}  // namespace

Waveform load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failure on " + path);
  }

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(path + ": not a RIFF/WAVE file");
  }

  FmtChunk fmt;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::uint32_t data_len = 0;

  // Walk the chunk list; chunks are word-aligned.
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t size = read_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + size > bytes.size()) {
      throw FormatError(path + ": truncated chunk '" + std::string(id, 4) +
                        "'");
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) {
        throw FormatError(path + ": fmt chunk too small");
      }
      const std::uint8_t* p = bytes.data() + pos;
      fmt.format = read_u16(p);
      fmt.channels = read_u16(p + 2);
      fmt.sample_rate = read_u32(p + 4);
      fmt.bits = read_u16(p + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + pos;
      data_len = size;
    }
    pos += size + (size & 1);  // pad byte on odd sizes
  }

  if (!have_fmt) {
    throw FormatError(path + ": missing fmt chunk");
  }
  if (data == nullptr) {
    throw FormatError(path + ": missing data chunk");
  }
  if (fmt.channels != 1 && fmt.channels != 2) {
    throw UnsupportedError(path + ": " + std::to_string(fmt.channels) +
                           " channels (only mono/stereo handled)");
  }
  if (fmt.sample_rate == 0) {
    throw FormatError(path + ": zero sample rate");
  }

  const bool pcm16 = fmt.format == 1 && fmt.bits == 16;
  const bool f32 = fmt.format == 3 && fmt.bits == 32;
  if (!pcm16 && !f32) {
    throw UnsupportedError(path + ": codec format " +
                           std::to_string(fmt.format) + "/" +
                           std::to_string(fmt.bits) +
                           "-bit (only PCM16 and float32 handled)");
  }

  const std::uint32_t bytes_per_sample = pcm16 ? 2 : 4;
  const std::uint32_t frame_size = bytes_per_sample * fmt.channels;
  if (data_len % frame_size != 0) {
    throw FormatError(path + ": data chunk size " + std::to_string(data_len) +
                      " not a multiple of the frame size " +
                      std::to_string(frame_size));
  }
  const std::uint32_t n_frames = data_len / frame_size;

  Waveform w;
  w.sample_rate = static_cast<int>(fmt.sample_rate);
  w.samples.resize(n_frames);
  for (std::uint32_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t ch = 0; ch < fmt.channels; ++ch) {
      const std::uint8_t* p = data + (static_cast<size_t>(i) * fmt.channels +
                                      ch) * bytes_per_sample;
      if (pcm16) {
        const std::int16_t s = static_cast<std::int16_t>(read_u16(p));
        acc += static_cast<double>(s) / 32768.0;
      } else {
        float f;
        std::memcpy(&f, p, 4);
        if (!std::isfinite(f)) {
          throw FormatError(path + ": non-finite float sample");
        }
        acc += static_cast<double>(f);
      }
    }
    w.samples[i] = acc / fmt.channels;
  }
  return w;
}

void write_wav_pcm16(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0) {
    throw ValueError("write_wav: sample rate must be positive");
  }
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_len = n * 2;

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  auto push_tag = [&out](const char* tag) {
    out.insert(out.end(), tag, tag + 4);
  };
  auto push_u32 = [&out](std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
  };
  auto push_u16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  };

  push_tag("RIFF");
  push_u32(36 + data_len);
  push_tag("WAVE");
  push_tag("fmt ");
  push_u32(16);
  push_u16(1);  // PCM
  push_u16(1);  // mono
  push_u32(static_cast<std::uint32_t>(w.sample_rate));
  push_u32(static_cast<std::uint32_t>(w.sample_rate) * 2);  // byte rate
  push_u16(2);   // block align
  push_u16(16);  // bits
  push_tag("data");
  push_u32(data_len);
  for (double s : w.samples) {
    double x = std::max(-1.0, std::min(1.0, s)) * 32768.0;
    const double r = std::nearbyint(x);
    const std::int16_t q = static_cast<std::int16_t>(
        std::max(-32768.0, std::min(32767.0, r)));
    push_u16(static_cast<std::uint16_t>(q));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw IoError("cannot create " + path);
  }
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw IoError("write failure on " + path);
  }
}

}  // namespace aen
