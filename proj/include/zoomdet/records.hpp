#pragma once

#include <string>
#include <vector>

#include "zoomdet/match.hpp"
#include "zoomdet/policy.hpp"
#include "zoomdet/sim.hpp"

namespace zoomdet {

// Line-oriented JSON record files: one object per line. Used for scenes,
// detections, regressor training sets and episode traces.

void write_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::string& path);

void write_detections(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections(const std::string& path);

void write_correspondences(const std::string& path,
                           const std::vector<Correspondence>& corr);
std::vector<Correspondence> read_correspondences(const std::string& path);

void write_episode_traces(const std::string& path,
                          const std::vector<EpisodeResult>& episodes);

}  // namespace zoomdet
