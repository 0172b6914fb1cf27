#include "zoomdet/records.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace zoomdet {

namespace {

using nlohmann::json;

json box_to_json(const BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("bad box record");
  return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
              j[3].get<double>()};
}

json detection_to_json(const Detection& d) {
  json j;
  j["box"] = box_to_json(d.box);
  j["score"] = d.score;
  j["source"] = d.source == Source::coarse ? "coarse" : "fine";
  j["feature"] = d.feature;
  return j;
}

Detection detection_from_json(const json& j) {
  Detection d;
  d.box = box_from_json(j.at("box"));
  d.score = j.at("score").get<double>();
  d.source = j.at("source").get<std::string>() == "fine" ? Source::fine : Source::coarse;
  d.feature = j.at("feature").get<std::vector<double>>();
  return d;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return is;
}

}  // namespace

void write_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  auto os = open_out(path);
  for (const auto& scene : scenes) {
    json j;
    j["width"] = scene.width;
    j["height"] = scene.height;
    j["seed"] = scene.seed;
    j["objects"] = json::array();
    for (const auto& obj : scene.objects) {
      json o;
      o["box"] = box_to_json(obj.box);
      o["class"] = obj.object_class;
      j["objects"].push_back(o);
    }
    os << j.dump() << "\n";
  }
}

std::vector<Scene> read_scenes(const std::string& path) {
  auto is = open_in(path);
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Scene scene;
    scene.width = j.at("width").get<int>();
    scene.height = j.at("height").get<int>();
    scene.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("objects")) {
      GroundTruthObject gt;
      gt.box = box_from_json(o.at("box"));
      gt.object_class = o.at("class").get<std::string>();
      scene.objects.push_back(std::move(gt));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

void write_detections(const std::string& path, const std::vector<Detection>& dets) {
  auto os = open_out(path);
  for (const auto& d : dets) os << detection_to_json(d).dump() << "\n";
}

std::vector<Detection> read_detections(const std::string& path) {
  auto is = open_in(path);
  std::vector<Detection> dets;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    dets.push_back(detection_from_json(json::parse(line)));
  }
  return dets;
}

void write_correspondences(const std::string& path,
                           const std::vector<Correspondence>& corr) {
  auto os = open_out(path);
  for (const auto& c : corr) {
    json j;
    j["coarse"] = detection_to_json(c.coarse);
    if (c.fine) j["fine"] = detection_to_json(*c.fine);
    j["label"] = c.label_g;
    j["gain_target"] = c.gain_target;
    os << j.dump() << "\n";
  }
}

std::vector<Correspondence> read_correspondences(const std::string& path) {
  auto is = open_in(path);
  std::vector<Correspondence> corr;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Correspondence c;
    c.coarse = detection_from_json(j.at("coarse"));
    if (j.contains("fine")) c.fine = detection_from_json(j.at("fine"));
    c.label_g = j.at("label").get<int>();
    c.gain_target = j.at("gain_target").get<double>();
    corr.push_back(std::move(c));
  }
  return corr;
}

void write_episode_traces(const std::string& path,
                          const std::vector<EpisodeResult>& episodes) {
  auto os = open_out(path);
  for (const auto& ep : episodes) {
    json j;
    j["actions"] = json::array();
    for (const auto& a : ep.zoom_trail) j["actions"].push_back(box_to_json(a.box));
    j["rewards"] = ep.rewards;
    j["pixels"] = ep.ledger.pixels_processed;
    j["sim_time"] = ep.ledger.wall_time;
    j["steps"] = ep.ledger.steps;
    os << j.dump() << "\n";
  }
}

}  // namespace zoomdet
