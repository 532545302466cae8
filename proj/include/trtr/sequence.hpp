#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "trtr/image.hpp"
#include "trtr/localize.hpp"

namespace trtr {

inline constexpr const char* kGroundTruthFile = "groundtruth_rect.txt";

/// Parses one "x,y,w,h" line (top-left corner); tabs or spaces also separate.
inline BoundingBox parse_box_line(const std::string& line) {
  std::string s = line;
  std::replace_if(s.begin(), s.end(), [](char c) { return c == ',' || c == '\t'; }, ' ');
  std::istringstream is(s);
  double x, y, w, h;
  if (!(is >> x >> y >> w >> h)) throw InputError("malformed box line: '" + line + "'");
  return BoundingBox::from_top_left(x, y, w, h);
}

inline std::vector<BoundingBox> read_boxes(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  std::vector<BoundingBox> boxes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    boxes.push_back(parse_box_line(line));
  }
  return boxes;
}

inline void write_boxes(const std::string& path, const std::vector<BoundingBox>& boxes) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os.precision(17);
  for (const auto& b : boxes) os << b.left() << ',' << b.top() << ',' << b.w << ',' << b.h << '\n';
}

using FrameLoader = std::function<Frame(const std::string& path, std::size_t index)>;

inline Frame load_pnm_frame(const std::string& path, std::size_t index) { return read_pnm(path, index); }

struct Sequence {
  std::vector<std::string> frame_paths;
  std::vector<BoundingBox> truth;  // may be empty
  FrameLoader loader = load_pnm_frame;

  std::size_t size() const { return frame_paths.size(); }
  Frame frame(std::size_t i) const { return loader(frame_paths.at(i), i); }
};

/// Image files in lexicographic order plus groundtruth_rect.txt when present.
inline Sequence open_sequence(const std::string& dir, FrameLoader loader = load_pnm_frame,
                              const std::vector<std::string>& extensions = {".ppm", ".pgm"}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw InputError("sequence directory not found: " + dir);
  Sequence seq;
  seq.loader = std::move(loader);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end())
      seq.frame_paths.push_back(entry.path().string());
  }
  std::sort(seq.frame_paths.begin(), seq.frame_paths.end());
  if (seq.frame_paths.empty()) throw InputError("no frames in " + dir);
  const fs::path gt = fs::path(dir) / kGroundTruthFile;
  if (fs::exists(gt)) {
    seq.truth = read_boxes(gt.string());
    if (seq.truth.size() != seq.frame_paths.size())
      throw InputError(gt.string() + " has " + std::to_string(seq.truth.size()) + " boxes for " +
                       std::to_string(seq.frame_paths.size()) + " frames");
  }
  return seq;
}

/// Writes frames as 00001.ppm, 00002.ppm, ... and the annotation file.
inline void write_sequence(const std::string& dir, const std::vector<Frame>& frames,
                           const std::vector<BoundingBox>& truth) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.ppm", i + 1);
    write_ppm((fs::path(dir) / name).string(), frames[i].pixels);
  }
  write_boxes((fs::path(dir) / kGroundTruthFile).string(), truth);
}

}  // namespace trtr
