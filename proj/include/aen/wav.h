#pragma once

#include <string>

#include "aen/audio.h"

namespace aen {

// Reads a RIFF/WAVE file. Handles PCM 16-bit and IEEE float 32-bit, mono
// or stereo (stereo is downmixed by channel mean). 16-bit samples are
// scaled by 1/32768. The sample rate comes straight from the header; no
// resampling happens anywhere in the pipeline.
//
// Throws IoError (unreadable file), FormatError (malformed or truncated
// container), UnsupportedError (codec/layout we do not handle).
Waveform load_wav(const std::string& path);

// Writes mono PCM 16-bit. Samples are clamped to [-1, 1] and scaled by
// 32768 (the inverse of the load scaling), saturating at int16 limits.
void write_wav_pcm16(const std::string& path, const Waveform& w);

}  // namespace aen
