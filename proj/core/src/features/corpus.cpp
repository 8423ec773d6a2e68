#include "avsync/features/corpus.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace avsync::features {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kBlobHeader = 8;

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto u = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

fs::path blob_path_for(const fs::path& manifest) {
  fs::path p = manifest;
  p.replace_extension(".bin");
  return p;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("corpus: cannot open " + p.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_corpus(const std::string& manifest_path, const std::vector<AvClip>& clips) {
  const fs::path manifest(manifest_path);
  const fs::path blob = blob_path_for(manifest);
  std::vector<std::uint8_t> bytes(std::begin(kCorpusMagic), std::end(kCorpusMagic));
  bytes.push_back(kCorpusVersion);
  bytes.resize(kBlobHeader, 0);

  json j;
  j["format"] = "AVKP";
  j["version"] = kCorpusVersion;
  j["blob"] = blob.filename().string();
  j["clips"] = json::array();
  for (const auto& c : clips) {
    json rec;
    rec["clip_id"] = c.clip_id;
    rec["identity_id"] = c.identity_id;
    rec["frames"] = c.keypoints.frames();
    rec["audio_frames"] = c.audio.frames();
    rec["keypoints_offset"] = bytes.size();
    for (double v : c.keypoints.values()) put_f64(bytes, v);
    rec["audio_offset"] = bytes.size();
    for (double v : c.audio.values()) put_f64(bytes, v);
    j["clips"].push_back(rec);
  }
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  {
    std::ofstream os(blob, std::ios::binary);
    if (!os) throw DataError("corpus: cannot write " + blob.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream os(manifest);
  if (!os) throw DataError("corpus: cannot write " + manifest.string());
  os << j.dump(2) << '\n';
}

LoadResult load_clips(const std::string& manifest_path) {
  const fs::path manifest(manifest_path);
  std::ifstream is(manifest);
  if (!is) throw DataError("corpus: cannot open manifest " + manifest_path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("corpus: malformed manifest " + manifest_path + ": " + e.what());
  }
  if (j.value("format", "") != "AVKP") throw DataError("corpus: manifest format is not AVKP");
  if (j.value("version", 0) != kCorpusVersion) {
    throw DataError("corpus: unsupported manifest version " + j.value("version", json()).dump());
  }

  LoadResult result;
  const auto& recs = j.value("clips", json::array());
  if (recs.empty()) {
    result.warnings.push_back("corpus " + manifest_path + " lists no clips");
    return result;
  }

  const fs::path blob = manifest.parent_path() / j.at("blob").get<std::string>();
  const auto bytes = slurp(blob);
  if (bytes.size() < kBlobHeader || std::memcmp(bytes.data(), kCorpusMagic, 4) != 0) {
    throw DataError("corpus: blob " + blob.string() + " lacks AVKP magic");
  }
  if (bytes[4] != kCorpusVersion) {
    throw DataError("corpus: blob version " + std::to_string(bytes[4]) + " unsupported");
  }

  std::size_t index = 0;
  for (const auto& rec : recs) {
    const std::string id = rec.value("clip_id", "#" + std::to_string(index));
    ++index;
    try {
      const auto T = rec.at("frames").get<std::size_t>();
      const auto L = rec.at("audio_frames").get<std::size_t>();
      const auto ko = rec.at("keypoints_offset").get<std::size_t>();
      const auto ao = rec.at("audio_offset").get<std::size_t>();
      if (ko + T * kKeypointDim * 8 > bytes.size() || ao + L * kMfccDim * 8 > bytes.size()) {
        result.rejected.push_back(id + ": array extends past end of blob");
        continue;
      }
      AvClip clip;
      clip.clip_id = id;
      clip.identity_id = rec.value("identity_id", "");
      std::vector<double> kp(T * kKeypointDim), au(L * kMfccDim);
      for (std::size_t i = 0; i < kp.size(); ++i) kp[i] = get_f64(bytes.data() + ko + 8 * i);
      for (std::size_t i = 0; i < au.size(); ++i) au[i] = get_f64(bytes.data() + ao + 8 * i);
      clip.keypoints = KeypointSequence(T, std::move(kp));
      clip.audio = AudioFeatSequence(L, std::move(au));
      const auto errors = validate(clip);
      if (!errors.empty()) {
        std::string msg = id + ":";
        for (const auto& e : errors) msg += " " + e + ";";
        result.rejected.push_back(msg);
        continue;
      }
      result.clips.push_back(std::move(clip));
    } catch (const json::exception& e) {
      result.rejected.push_back(id + ": malformed record (" + e.what() + ")");
    }
  }
  return result;
}

Waveform read_wav(const std::string& path) {
  const auto b = slurp(path);
  auto u32 = [&](std::size_t o) {
    return static_cast<std::uint32_t>(b[o] | (b[o + 1] << 8) | (b[o + 2] << 16) |
                                      (static_cast<std::uint32_t>(b[o + 3]) << 24));
  };
  auto u16 = [&](std::size_t o) { return static_cast<std::uint16_t>(b[o] | (b[o + 1] << 8)); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw DataError("wav: " + path + " is not a RIFF/WAVE file");
  }
  Waveform w;
  int channels = 0, bits = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = u32(pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw DataError("wav: truncated chunk in " + path);
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (u16(body) != 1) throw DataError("wav: only PCM is supported");
      channels = u16(body + 2);
      w.sample_rate = static_cast<int>(u32(body + 4));
      bits = u16(body + 14);
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (channels != 1 || bits != 16) throw DataError("wav: expected 16-bit mono PCM");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(u16(body + 2 * i)) / 32768.0;
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw DataError("wav: no data chunk in " + path);
}

void write_wav(const std::string& path, const Waveform& wave) {
  std::vector<std::uint8_t> b;
  auto p32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto p16 = [&](std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  p32(36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  p32(16);
  p16(1);
  p16(1);
  p32(static_cast<std::uint32_t>(wave.sample_rate));
  p32(static_cast<std::uint32_t>(wave.sample_rate * 2));
  p16(2);
  p16(16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  p32(data_bytes);
  for (double s : wave.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    p16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("wav: cannot write " + path);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::vector<double>> read_matrix_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("matrix: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        row.push_back(std::stod(tok));
      } catch (const std::exception&) {
        if (rows.empty() && row.empty()) break;  // header line
        throw DataError("matrix: bad number '" + tok + "' at " + path + ":" + std::to_string(lineno));
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace avsync::features
