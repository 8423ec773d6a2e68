#pragma once

#include "avsync/syncer/syncer.hpp"
#include "avsync/synthgen/synthgen.hpp"
#include "avsync/training/training.hpp"
#include "json.hpp"

namespace avsync::tools {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const synthgen::SynthSpec& s);
/// Missing keys keep the values in `base`.
synthgen::SynthSpec synth_from_json(const json& j, synthgen::SynthSpec base = {});

ordered_json to_json(const syncer::SyncerTrainConfig& c);
syncer::SyncerTrainConfig syncer_from_json(const json& j, syncer::SyncerTrainConfig base);

/// Reads a JSON object from `path`; an empty path gives an empty object.
json read_json(const std::string& path);
void write_json(const std::string& path, const ordered_json& j);

std::vector<std::size_t> parse_levels(const std::string& csv);

}  // namespace avsync::tools
