#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avsync/features/clip.hpp"
#include "avsync/features/mfcc.hpp"

namespace avsync::features {

// On-disk corpus: a JSON manifest plus one binary blob.
//
// Manifest (UTF-8 JSON):
//   { "format": "AVKP", "version": 1, "blob": "<file next to manifest>",
//     "clips": [ { "clip_id": str, "identity_id": str, "frames": T,
//                  "audio_frames": L, "keypoints_offset": bytes,
//                  "audio_offset": bytes }, ... ] }
//
// Blob:
//   offset 0  4 bytes  magic "AVKP"
//          4  1 byte   version (1)
//          5  3 bytes  zero padding
//          8  ...      f64 little-endian arrays; keypoints are T x 60 and
//                      audio L x 26, row-major, at the manifest offsets.
inline constexpr char kCorpusMagic[4] = {'A', 'V', 'K', 'P'};
inline constexpr std::uint8_t kCorpusVersion = 1;

struct LoadResult {
  std::vector<AvClip> clips;
  /// One entry per rejected record: "<clip_id>: <reason>".
  std::vector<std::string> rejected;
  std::vector<std::string> warnings;
};

/// Writes `<manifest_path>` and a sibling blob named after it with ".bin".
void write_corpus(const std::string& manifest_path, const std::vector<AvClip>& clips);

/// Reads and validates every record; invalid ones are skipped and reported.
LoadResult load_clips(const std::string& manifest_path);

/// 16-bit PCM mono WAV reader (samples scaled to [-1, 1)).
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wave);

/// Plain-text matrix: one row per line, comma or whitespace separated.
std::vector<std::vector<double>> read_matrix_text(const std::string& path);

}  // namespace avsync::features
