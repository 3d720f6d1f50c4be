#pragma once

// Scene ingestion and persistence: camera text files, PFM depth maps,
// PNG/PPM/PGM images, pair lists, the scene directory layout and the JSON
// run configuration. README.md describes each format.

#include <png.h>

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "epiflow/binary.hpp"
#include "epiflow/error.hpp"
#include "epiflow/fuse3d.hpp"
#include "epiflow/geom.hpp"
#include "epiflow/pipeline.hpp"
#include "epiflow/raster.hpp"

namespace epiflow {

namespace fs = std::filesystem;

// Rotations read from text may carry rounding noise up to this tolerance;
// they are projected back onto SO(3).
inline constexpr double kCameraFileRotationTolerance = 1e-5;

// ---------------------------------------------------------------------------
// Camera files

namespace detail {

struct LineReader {
  std::istream& in;
  std::string path;
  int line_no = 0;

  // Next non-blank line, split into tokens; nullopt at end of file.
  std::optional<std::vector<std::string>> next() {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      std::istringstream ls(line);
      std::vector<std::string> tokens;
      for (std::string t; ls >> t;) tokens.push_back(t);
      if (!tokens.empty()) return tokens;
    }
    return std::nullopt;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::kParse, path + ":" + std::to_string(line_no) + ": " + what);
  }

  std::vector<double> numbers(std::size_t count, const std::string& what) {
    auto tokens = next();
    if (!tokens) fail("unexpected end of file, expected " + what);
    if (tokens->size() != count) fail("expected " + std::to_string(count) + " numbers for " + what);
    return parse(*tokens, what);
  }

  std::vector<double> parse(const std::vector<std::string>& tokens, const std::string& what) const {
    std::vector<double> out;
    for (const auto& t : tokens) {
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(t, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != t.size() || !std::isfinite(v)) fail("bad number '" + t + "' in " + what);
      out.push_back(v);
    }
    return out;
  }

  void keyword(const std::string& word) {
    auto tokens = next();
    if (!tokens || tokens->size() != 1 || (*tokens)[0] != word) fail("expected '" + word + "'");
  }
};

inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace detail

inline CameraView read_camera(std::istream& in, const std::string& path = "<camera>") {
  detail::LineReader reader{in, path};
  CameraView cam;
  reader.keyword("extrinsic");
  Eigen::Matrix4d E;
  for (int r = 0; r < 4; ++r) {
    const auto row = reader.numbers(4, "extrinsic row " + std::to_string(r));
    for (int c = 0; c < 4; ++c) E(r, c) = row[c];
  }
  if (E(3, 0) != 0.0 || E(3, 1) != 0.0 || E(3, 2) != 0.0 || E(3, 3) != 1.0)
    reader.fail("extrinsic last row must be 0 0 0 1");
  const int rotation_line = reader.line_no - 1;
  const Mat3 R = E.block<3, 3>(0, 0);
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > kCameraFileRotationTolerance ||
      std::abs(R.determinant() - 1.0) > kCameraFileRotationTolerance)
    throw Error(ErrorCode::kParse, path + ":" + std::to_string(rotation_line - 2) + ": extrinsic rotation is not orthonormal");
  cam.R = detail::nearest_rotation(R);
  cam.T = E.block<3, 1>(0, 3);

  reader.keyword("intrinsic");
  for (int r = 0; r < 3; ++r) {
    const auto row = reader.numbers(3, "intrinsic row " + std::to_string(r));
    for (int c = 0; c < 3; ++c) cam.K(r, c) = row[c];
  }
  if (cam.K(1, 0) != 0.0 || cam.K(2, 0) != 0.0 || cam.K(2, 1) != 0.0 || cam.K(2, 2) != 1.0)
    reader.fail("intrinsic matrix must be upper-triangular with K[2][2] = 1");
  if (!(cam.K(0, 0) > 0.0 && cam.K(1, 1) > 0.0)) reader.fail("focal lengths must be positive");

  auto range = reader.next();
  if (!range) reader.fail("missing depth range line");
  const auto values = reader.parse(*range, "depth range");
  if (values.size() == 2) {
    cam.depth_min = values[0];
    cam.depth_max = values[1];
  } else if (values.size() == 4) {
    cam.depth_min = values[0];
    cam.depth_max = values[3];
  } else {
    reader.fail("depth range line needs 'd_min d_max' or 'd_min d_interval n_bins d_max'");
  }
  if (!(cam.depth_min > 0.0 && cam.depth_min < cam.depth_max)) reader.fail("depth range must satisfy 0 < d_min < d_max");

  if (auto tokens = reader.next()) {
    if (tokens->size() != 1 || (*tokens)[0] != "image_size") reader.fail("unexpected content after depth range");
    const auto size = reader.numbers(2, "image size");
    if (size[0] < 1 || size[1] < 1 || size[0] != std::floor(size[0]) || size[1] != std::floor(size[1]))
      reader.fail("image size must be positive integers");
    cam.width = static_cast<int>(size[0]);
    cam.height = static_cast<int>(size[1]);
    if (reader.next()) reader.fail("unexpected content after image size");
  }
  cam.validate();
  return cam;
}

inline CameraView load_camera_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_camera(in, path);
}

inline void write_camera(std::ostream& out, const CameraView& cam) {
  out << std::setprecision(17);
  out << "extrinsic\n";
  for (int r = 0; r < 3; ++r) out << cam.R(r, 0) << ' ' << cam.R(r, 1) << ' ' << cam.R(r, 2) << ' ' << cam.T(r) << '\n';
  out << "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) out << cam.K(r, 0) << ' ' << cam.K(r, 1) << ' ' << cam.K(r, 2) << '\n';
  out << '\n' << cam.depth_min << ' ' << cam.depth_max << '\n';
  if (cam.width > 0 && cam.height > 0) out << "\nimage_size\n" << cam.width << ' ' << cam.height << '\n';
}

inline void save_camera_file(const CameraView& cam, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  write_camera(out, cam);
}

// ---------------------------------------------------------------------------
// PFM depth maps. Rows are stored bottom-up; a negative scale means
// little-endian data. Invalid pixels are written as 0; on read, zero,
// negative and non-finite values are masked.

inline void write_depth_pfm(const DepthField& field, const std::string& path, bool little_endian = true) {
  auto out = binary::open_out(path);
  out << "Pf\n" << field.width << ' ' << field.height << '\n' << (little_endian ? "-1.0" : "1.0") << '\n';
  for (int y = field.height - 1; y >= 0; --y) {
    for (int x = 0; x < field.width; ++x) {
      const std::size_t i = field.index(x, y);
      float v = field.valid[i] ? static_cast<float>(field.depth[i]) : 0.0f;
      if (little_endian != (std::endian::native == std::endian::little)) v = binary::byteswap(v);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

inline DepthField read_depth_pfm(const std::string& path) {
  auto in = binary::open_in(path);
  std::string magic;
  int w = 0, h = 0;
  std::string scale_text;
  in >> magic;
  if (magic != "Pf") throw Error(ErrorCode::kParse, path + ": expected grayscale PFM magic 'Pf'");
  if (!(in >> w >> h) || w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16))
    throw Error(ErrorCode::kParse, path + ": bad PFM dimensions");
  if (!(in >> scale_text)) throw Error(ErrorCode::kParse, path + ": missing PFM scale");
  double scale;
  try {
    scale = std::stod(scale_text);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, path + ": bad PFM scale '" + scale_text + "'");
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw Error(ErrorCode::kParse, path + ": PFM scale must be non-zero");
  in.get();  // single whitespace byte before the raster
  const bool little = scale < 0.0;
  DepthField field(w, h);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      if (!in) throw Error(ErrorCode::kParse, path + ": truncated PFM raster");
      if (little != (std::endian::native == std::endian::little)) v = binary::byteswap(v);
      const std::size_t i = field.index(x, y);
      if (std::isfinite(v) && v > 0.0f) {
        field.depth[i] = v;
        field.valid[i] = 1;
      }
    }
  }
  return field;
}

// ---------------------------------------------------------------------------
// Images, decoded to 8-bit RGB.

namespace detail {

inline RgbImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error(ErrorCode::kParse, path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height), 3);
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::kParse, path + ": " + message);
  }
  return out;
}

inline RgbImage read_pnm(const std::string& path) {
  auto in = binary::open_in(path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw Error(ErrorCode::kParse, path + ": only binary PGM (P5) / PPM (P6) supported");
  const auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw Error(ErrorCode::kParse, path + ": truncated PNM header");
  };
  int w, h, maxval;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::kParse, path + ": bad PNM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(ErrorCode::kParse, path + ": bad PNM header values");
  in.get();
  const int src_c = magic == "P6" ? 3 : 1;
  const int bytes = maxval > 255 ? 2 : 1;
  RgbImage out(w, h, 3);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * src_c * bytes);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw Error(ErrorCode::kParse, path + ": truncated PNM raster");
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t k = (static_cast<std::size_t>(x) * src_c + (src_c == 3 ? c : 0)) * bytes;
        const unsigned v = bytes == 2 ? (row[k] << 8 | row[k + 1]) : row[k];
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
      }
    }
  }
  return out;
}

inline std::string lower_extension(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace detail

inline RgbImage read_image(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "missing image " + path);
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return detail::read_pnm(path);
  throw Error(ErrorCode::kParse, path + ": unsupported image type (PNG, PPM or PGM expected)");
}

inline void write_png(const RgbImage& image, const std::string& path) {
  require(image.channels == 3 || image.channels == 1, ErrorCode::kInvalidInput, "PNG writer needs 1 or 3 channels");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.data.data(), 0, nullptr))
    throw Error(ErrorCode::kIo, path + ": " + png.message);
}

inline void write_ppm(const RgbImage& image, const std::string& path) {
  require(image.channels == 3, ErrorCode::kInvalidInput, "PPM writer needs 3 channels");
  auto out = binary::open_out(path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// pair.txt: view count, then per reference "<ref id>" and
// "<n> <src id> <score> ...".

using PairList = std::map<int, std::vector<int>>;

inline PairList read_pair_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  detail::LineReader reader{in, path};
  const auto count_line = reader.next();
  if (!count_line || count_line->size() != 1) reader.fail("expected the view count");
  const int count = static_cast<int>(reader.parse(*count_line, "view count")[0]);
  if (count < 1) reader.fail("view count must be positive");
  PairList pairs;
  for (int v = 0; v < count; ++v) {
    const auto ref_line = reader.next();
    if (!ref_line || ref_line->size() != 1) reader.fail("expected a reference view id");
    const int ref = static_cast<int>(reader.parse(*ref_line, "reference id")[0]);
    const auto src_line = reader.next();
    if (!src_line || src_line->empty()) reader.fail("expected the source list of view " + std::to_string(ref));
    const auto values = reader.parse(*src_line, "source list");
    const int n = static_cast<int>(values[0]);
    if (n < 0 || values.size() != static_cast<std::size_t>(1 + 2 * n))
      reader.fail("source list must hold n followed by n (id, score) pairs");
    std::vector<int> sources;
    for (int k = 0; k < n; ++k) sources.push_back(static_cast<int>(values[1 + 2 * k]));
    if (pairs.count(ref)) reader.fail("duplicate reference view " + std::to_string(ref));
    pairs[ref] = sources;
  }
  return pairs;
}

inline void write_pair_file(const PairList& pairs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << pairs.size() << '\n';
  for (const auto& [ref, sources] : pairs) {
    out << ref << '\n' << sources.size();
    for (std::size_t k = 0; k < sources.size(); ++k) out << ' ' << sources[k] << ' ' << (sources.size() - k);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Run configuration (JSON).

struct PipelineConfig {
  int num_sources = 4;
  StageParams coarse = default_stage_params(Stage::kCoarse);
  StageParams fine = default_stage_params(Stage::kFine);
  std::string update = "deterministic";
  std::uint64_t seed = 0;
  ConsistencyParams fusion;
  std::vector<int> views;  // empty = all

  void validate() const {
    require(num_sources >= 1, ErrorCode::kInvalidConfig, "num_sources must be at least 1");
    for (const auto* s : {&coarse, &fine}) {
      require(s->iterations >= 1, ErrorCode::kInvalidConfig, "stage iterations must be at least 1");
      require(s->levels >= 1, ErrorCode::kInvalidConfig, "m_s must be at least 1");
      require(s->samples >= 1 && s->samples % 2 == 1, ErrorCode::kInvalidConfig, "m_p must be odd");
      require(s->temperature > 0.0, ErrorCode::kInvalidConfig, "stage temperature must be positive");
    }
    require(update == "deterministic" || update.rfind("gru:", 0) == 0, ErrorCode::kInvalidConfig,
            "update must be 'deterministic' or 'gru:<path>[,<path>]'");
    fusion.validate();
  }

  // GRU weight paths (coarse, fine) from "gru:<coarse>[,<fine>]".
  std::pair<std::string, std::string> gru_paths() const {
    if (update.rfind("gru:", 0) != 0) return {};
    const std::string spec = update.substr(4);
    const auto comma = spec.find(',');
    if (comma == std::string::npos) return {spec, spec};
    return {spec.substr(0, comma), spec.substr(comma + 1)};
  }
};

inline PipelineConfig parse_config(const nlohmann::json& j) {
  PipelineConfig c;
  const std::set<std::string> known{"num_sources", "coarse", "fine", "update", "seed", "fusion", "views"};
  try {
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + key + "'");
    if (j.contains("num_sources")) c.num_sources = j.at("num_sources").get<int>();
    const auto stage = [](const nlohmann::json& s, StageParams& p) {
      for (const auto& [key, _] : s.items())
        if (key != "iterations" && key != "m_s" && key != "m_p" && key != "temperature")
          throw Error(ErrorCode::kInvalidConfig, "unknown stage key '" + key + "'");
      if (s.contains("iterations")) p.iterations = s.at("iterations").get<int>();
      if (s.contains("m_s")) p.levels = s.at("m_s").get<int>();
      if (s.contains("m_p")) p.samples = s.at("m_p").get<int>();
      if (s.contains("temperature")) p.temperature = s.at("temperature").get<double>();
    };
    if (j.contains("coarse")) stage(j.at("coarse"), c.coarse);
    if (j.contains("fine")) stage(j.at("fine"), c.fine);
    if (j.contains("update")) c.update = j.at("update").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("views")) c.views = j.at("views").get<std::vector<int>>();
    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      for (const auto& [key, _] : f.items())
        if (key != "max_reproj_error" && key != "max_rel_depth_diff" && key != "min_consistent_views" &&
            key != "enforce_range")
          throw Error(ErrorCode::kInvalidConfig, "unknown fusion key '" + key + "'");
      if (f.contains("max_reproj_error")) c.fusion.max_reproj_error = f.at("max_reproj_error").get<double>();
      if (f.contains("max_rel_depth_diff")) c.fusion.max_rel_depth_diff = f.at("max_rel_depth_diff").get<double>();
      if (f.contains("min_consistent_views")) c.fusion.min_consistent_views = f.at("min_consistent_views").get<int>();
      if (f.contains("enforce_range")) c.fusion.enforce_range = f.at("enforce_range").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  const auto stage = [](const StageParams& p) {
    return nlohmann::json{{"iterations", p.iterations}, {"m_s", p.levels}, {"m_p", p.samples}, {"temperature", p.temperature}};
  };
  return {{"num_sources", c.num_sources},
          {"coarse", stage(c.coarse)},
          {"fine", stage(c.fine)},
          {"update", c.update},
          {"seed", c.seed},
          {"views", c.views},
          {"fusion",
           {{"max_reproj_error", c.fusion.max_reproj_error},
            {"max_rel_depth_diff", c.fusion.max_rel_depth_diff},
            {"min_consistent_views", c.fusion.min_consistent_views},
            {"enforce_range", c.fusion.enforce_range}}}};
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Scene directories:
//   <root>/images/<id:08>.png|.ppm|.pgm
//   <root>/cams/<id:08>_cam.txt
//   <root>/pair.txt

struct SceneBundle {
  std::string name;
  std::string root;
  std::vector<int> ids;
  std::vector<std::string> image_paths;
  std::vector<CameraView> cameras;
  std::vector<RgbImage> images;
  // Per view, source view indices (into the vectors above), best first.
  std::vector<std::vector<int>> pairs;

  int size() const { return static_cast<int>(ids.size()); }
  int index_of(int id) const {
    const auto it = std::find(ids.begin(), ids.end(), id);
    return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
  }
};

inline std::string view_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08d", id);
  return buf;
}

inline std::string find_image(const fs::path& dir, int id) {
  for (const char* ext : {".png", ".ppm", ".pgm", ".PNG"}) {
    const fs::path p = dir / (view_stem(id) + ext);
    if (fs::exists(p)) return p.string();
  }
  throw Error(ErrorCode::kIo, "no image for view " + std::to_string(id) + " in " + dir.string());
}

// Loads every view listed in pair.txt. Source lists longer than num_sources
// are truncated; shorter ones are kept as they are.
inline SceneBundle load_scene(const std::string& root_dir, const PipelineConfig& config = {}) {
  const fs::path root(root_dir);
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIo, "scene directory " + root_dir + " does not exist");
  const PairList pairs = read_pair_file((root / "pair.txt").string());

  SceneBundle scene;
  scene.root = root_dir;
  scene.name = root.filename().string();
  if (scene.name.empty()) scene.name = root.parent_path().filename().string();
  for (const auto& [id, _] : pairs) {
    const fs::path cam_path = root / "cams" / (view_stem(id) + "_cam.txt");
    if (!fs::exists(cam_path)) throw Error(ErrorCode::kIo, "missing camera file " + cam_path.string());
    CameraView cam = load_camera_file(cam_path.string());
    const std::string image_path = find_image(root / "images", id);
    RgbImage image = read_image(image_path);
    if (cam.width == 0 && cam.height == 0) {
      cam.width = image.width;
      cam.height = image.height;
    } else if (cam.width != image.width || cam.height != image.height) {
      throw Error(ErrorCode::kInvalidInput, image_path + " is " + std::to_string(image.width) + "x" +
                                                std::to_string(image.height) + " but its camera declares " +
                                                std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
    scene.ids.push_back(id);
    scene.image_paths.push_back(image_path);
    scene.cameras.push_back(cam);
    scene.images.push_back(std::move(image));
  }
  for (const auto& [id, sources] : pairs) {
    std::vector<int> indices;
    for (int s : sources) {
      const int idx = scene.index_of(s);
      if (idx < 0) throw Error(ErrorCode::kInvalidInput, "pair.txt lists unknown source view " + std::to_string(s));
      if (s == id) throw Error(ErrorCode::kInvalidInput, "view " + std::to_string(id) + " lists itself as a source");
      if (static_cast<int>(indices.size()) < config.num_sources) indices.push_back(idx);
    }
    if (indices.empty()) throw Error(ErrorCode::kInvalidInput, "view " + std::to_string(id) + " has no source views");
    scene.pairs.push_back(std::move(indices));
  }
  return scene;
}

inline void write_scene(const std::string& root_dir, const std::vector<RgbImage>& images,
                        const std::vector<CameraView>& cameras, const std::vector<std::vector<int>>& sources) {
  require(images.size() == cameras.size() && images.size() == sources.size(), ErrorCode::kInvalidInput,
          "scene needs one image, camera and source list per view");
  const fs::path root(root_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "cams");
  PairList pairs;
  for (std::size_t v = 0; v < images.size(); ++v) {
    const int id = static_cast<int>(v);
    write_png(images[v], (root / "images" / (view_stem(id) + ".png")).string());
    save_camera_file(cameras[v], (root / "cams" / (view_stem(id) + "_cam.txt")).string());
    pairs[id] = sources[v];
  }
  write_pair_file(pairs, (root / "pair.txt").string());
}

// ---------------------------------------------------------------------------
// Upsampling weights: "EUPW", u32 width, u32 height, u32 9, then
// width * height * 9 little-endian float32 in row-major pixel order.

inline void write_upsample_weights(const ConvexWeights& w, const std::string& path) {
  auto out = binary::open_out(path);
  out.write("EUPW", 4);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.width));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.height));
  binary::write_le<std::uint32_t>(out, 9u);
  for (double v : w.weights) binary::write_le<float>(out, static_cast<float>(v));
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

inline ConvexWeights read_upsample_weights(const std::string& path) {
  auto in = binary::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "EUPW") throw Error(ErrorCode::kParse, path + ": not an upsampling weight file");
  ConvexWeights w;
  w.width = static_cast<int>(binary::read_le<std::uint32_t>(in, path));
  w.height = static_cast<int>(binary::read_le<std::uint32_t>(in, path));
  if (binary::read_le<std::uint32_t>(in, path) != 9u) throw Error(ErrorCode::kParse, path + ": expected 9 weights per pixel");
  if (w.width <= 0 || w.height <= 0 || w.width > (1 << 16) || w.height > (1 << 16))
    throw Error(ErrorCode::kParse, path + ": bad dimensions");
  w.weights.resize(static_cast<std::size_t>(w.width) * w.height * 9);
  for (double& v : w.weights) v = binary::read_le<float>(in, path);
  return w;
}

}  // namespace epiflow
