#include "config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace avsync::tools {

namespace {

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

const char* objective_name(syncer::Objective o) { return o == syncer::Objective::InfoNce ? "infonce" : "triplet"; }

}  // namespace

ordered_json to_json(const synthgen::SynthSpec& s) {
  ordered_json j;
  j["n_clips"] = s.n_clips;
  j["frames"] = s.frames;
  j["lip_keypoints"] = s.lip_keypoints;
  j["g_lip"] = s.g_lip;
  j["g_head"] = s.g_head;
  j["noise"] = s.noise;
  j["lip_band_hz"] = s.lip_band_hz;
  j["head_band_hz"] = s.head_band_hz;
  j["identity_jitter"] = s.identity_jitter;
  j["seed"] = s.seed;
  j["id_prefix"] = s.id_prefix;
  return j;
}

synthgen::SynthSpec synth_from_json(const json& j, synthgen::SynthSpec s) {
  take(j, "n_clips", s.n_clips);
  take(j, "frames", s.frames);
  take(j, "lip_keypoints", s.lip_keypoints);
  take(j, "g_lip", s.g_lip);
  take(j, "g_head", s.g_head);
  take(j, "noise", s.noise);
  take(j, "lip_band_hz", s.lip_band_hz);
  take(j, "head_band_hz", s.head_band_hz);
  take(j, "identity_jitter", s.identity_jitter);
  take(j, "seed", s.seed);
  take(j, "id_prefix", s.id_prefix);
  return s;
}

ordered_json to_json(const syncer::SyncerTrainConfig& c) {
  ordered_json j;
  j["embed_dim"] = c.model.embed_dim;
  j["conv_channels"] = c.model.conv_channels;
  j["center_keypoints"] = c.model.center_keypoints;
  j["positions_only"] = c.model.positions_only;
  j["logit_scale_init"] = c.model.logit_scale_init;
  j["objective"] = objective_name(c.objective);
  j["literal_infonce"] = c.literal_infonce;
  j["margin"] = c.margin;
  j["learning_rate"] = c.learning_rate;
  j["batch"] = c.batch;
  j["max_steps"] = c.max_steps;
  j["min_steps"] = c.min_steps;
  j["eval_every"] = c.eval_every;
  j["patience"] = c.patience;
  j["warmup"] = c.warmup;
  j["val_batches"] = c.val_batches;
  j["mining"] = !c.mining ? "default" : (*c.mining == syncer::Mining::Hard ? "hard" : "cross_sample");
  j["negatives"] = c.negatives ? ordered_json(*c.negatives) : ordered_json("default");
  j["seed"] = c.seed;
  return j;
}

syncer::SyncerTrainConfig syncer_from_json(const json& j, syncer::SyncerTrainConfig c) {
  take(j, "embed_dim", c.model.embed_dim);
  take(j, "conv_channels", c.model.conv_channels);
  take(j, "center_keypoints", c.model.center_keypoints);
  take(j, "positions_only", c.model.positions_only);
  take(j, "logit_scale_init", c.model.logit_scale_init);
  if (j.contains("objective")) {
    const auto o = j.at("objective").get<std::string>();
    if (o == "infonce") c.objective = syncer::Objective::InfoNce;
    else if (o == "triplet") c.objective = syncer::Objective::Triplet;
    else throw std::invalid_argument("objective must be infonce or triplet, got " + o);
  }
  take(j, "literal_infonce", c.literal_infonce);
  take(j, "margin", c.margin);
  take(j, "learning_rate", c.learning_rate);
  take(j, "batch", c.batch);
  take(j, "max_steps", c.max_steps);
  take(j, "min_steps", c.min_steps);
  take(j, "eval_every", c.eval_every);
  take(j, "patience", c.patience);
  take(j, "warmup", c.warmup);
  take(j, "val_batches", c.val_batches);
  if (j.contains("mining")) {
    const auto m = j.at("mining").get<std::string>();
    if (m == "default") c.mining.reset();
    else if (m == "hard") c.mining = syncer::Mining::Hard;
    else if (m == "cross_sample") c.mining = syncer::Mining::CrossSample;
    else throw std::invalid_argument("mining must be default, hard or cross_sample, got " + m);
  }
  if (j.contains("negatives")) {
    if (j.at("negatives").is_number()) c.negatives = j.at("negatives").get<std::size_t>();
    else c.negatives.reset();
  }
  take(j, "seed", c.seed);
  return c;
}

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config " + path + ": expected a JSON object");
  return j;
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << "\n";
}

std::vector<std::size_t> parse_levels(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const unsigned long v = std::stoul(item, &pos);
    if (pos != item.size() || v < 1 || v > 4) throw std::invalid_argument("level list entries must be 1..4: " + csv);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty level list");
  return out;
}

}  // namespace avsync::tools
