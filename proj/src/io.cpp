#include "nrsfm/io.hpp"

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nrsfm/errors.hpp"

namespace nrsfm {

namespace {

nlohmann::json readJsonFile(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(std::string(what) + ": cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string(what) + ": parse error in " + path + ": " +
                    e.what());
  }
  return j;
}

std::ofstream openForWrite(const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) throw DataError(std::string(what) + ": cannot write " + path);
  out.precision(17);
  return out;
}

std::string stripSpace(const std::string& line) {
  std::string s;
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) s += c;
  return s;
}

}  // namespace

Intrinsics loadIntrinsicsJson(const std::string& path) {
  nlohmann::json j = readJsonFile(path, "intrinsics");
  if (!j.is_object())
    throw DataError("intrinsics: " + path + " is not a JSON object");
  static const char* known[] = {"fx", "fy",    "skew",  "cx",
                                "cy", "width", "height"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw DataError("intrinsics: unknown key '" + key + "' in " + path);
    if (!value.is_number())
      throw DataError("intrinsics: field '" + key + "' in " + path +
                      " is not a number");
  }
  for (const char* k : {"fx", "fy", "cx", "cy"})
    if (!j.contains(k))
      throw DataError("intrinsics: missing field '" + std::string(k) + "' in " +
                      path);
  Intrinsics K;
  K.fx = j["fx"].get<double>();
  K.fy = j["fy"].get<double>();
  K.skew = j.value("skew", 0.0);
  K.cx = j["cx"].get<double>();
  K.cy = j["cy"].get<double>();
  K.imageWidth = j.value("width", 0.0);
  K.imageHeight = j.value("height", 0.0);
  K.validate();
  return K;
}

void saveIntrinsicsJson(const Intrinsics& K, const std::string& path) {
  nlohmann::json j;
  j["fx"] = K.fx;
  j["fy"] = K.fy;
  j["skew"] = K.skew;
  j["cx"] = K.cx;
  j["cy"] = K.cy;
  j["width"] = K.imageWidth;
  j["height"] = K.imageHeight;
  openForWrite(path, "intrinsics") << j.dump(2) << '\n';
}

Eigen::MatrixXd loadDepthsCsv(const std::string& path, int numViews,
                              int numPoints) {
  std::ifstream in(path);
  if (!in) throw DataError("depths: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("depths: empty file " + path);
  if (stripSpace(line) != "view,point,lambda")
    throw DataError("depths: bad header in " + path +
                    ": expected 'view,point,lambda', got '" + line + "'");
  struct Row {
    int view, point;
    double lambda;
  };
  std::vector<Row> rows;
  int maxView = numViews - 1, maxPoint = numPoints - 1;
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (stripSpace(line).empty()) continue;
    std::istringstream ls(line);
    Row r;
    char comma;
    if (!(ls >> r.view >> comma >> r.point >> comma >> r.lambda))
      throw DataError("depths: parse error at " + path + ":" +
                      std::to_string(lineNo));
    if (r.view < 0 || r.point < 0)
      throw DataError("depths: negative index at " + path + ":" +
                      std::to_string(lineNo));
    maxView = std::max(maxView, r.view);
    maxPoint = std::max(maxPoint, r.point);
    rows.push_back(r);
  }
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(
      maxView + 1, maxPoint + 1, std::numeric_limits<double>::quiet_NaN());
  for (const Row& r : rows) lambda(r.view, r.point) = r.lambda;
  return lambda;
}

void saveDepthsCsv(const Eigen::MatrixXd& lambda, const std::string& path) {
  std::ofstream out = openForWrite(path, "depths");
  out << "view,point,lambda\n";
  for (int l = 0; l < lambda.rows(); ++l)
    for (int i = 0; i < lambda.cols(); ++i)
      if (std::isfinite(lambda(l, i)))
        out << l << ',' << i << ',' << lambda(l, i) << '\n';
}

void savePly(const std::string& path,
             const std::vector<Eigen::Vector3d>& points) {
  std::ofstream out = openForWrite(path, "ply");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "end_header\n";
  for (const Eigen::Vector3d& p : points)
    out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

std::vector<Eigen::Vector3d> loadPly(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("ply: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || stripSpace(line) != "ply")
    throw DataError("ply: " + path + " does not start with 'ply'");
  long long count = -1;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (tok == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex")
        throw DataError("ply: unsupported element '" + name + "' in " + path);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!ascii) throw DataError("ply: " + path + " is not ascii format");
  if (count < 0) throw DataError("ply: missing vertex element in " + path);
  std::vector<Eigen::Vector3d> points;
  points.reserve(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    Eigen::Vector3d p;
    if (!(in >> p.x() >> p.y() >> p.z()))
      throw DataError("ply: truncated vertex data in " + path);
    points.push_back(p);
  }
  return points;
}

std::vector<std::string> saveReconstructionPlys(const Reconstruction& recon,
                                                const std::string& dir,
                                                const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (int l = 0; l < recon.tracks.numViews(); ++l) {
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < recon.tracks.numPoints(); ++i)
      if (recon.tracks.visible(l, i) && recon.depths.defined(l, i))
        pts.push_back(recon.point(l, i));
    std::ostringstream name;
    name << prefix;
    name.width(3);
    name.fill('0');
    name << l;
    std::string path = (std::filesystem::path(dir) / (name.str() + ".ply")).string();
    savePly(path, pts);
    paths.push_back(path);
  }
  return paths;
}

void saveSceneBundle(const TrackSet& tracks, const Intrinsics& K,
                     const Eigen::MatrixXd& gtDepth,
                     const EdgeLengths& templateLengths,
                     const std::string& manifestJson, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::path d(dir);
  tracks.saveCsv((d / "tracks.csv").string());
  saveIntrinsicsJson(K, (d / "intrinsics.json").string());
  if (gtDepth.size() > 0) saveDepthsCsv(gtDepth, (d / "gt_depths.csv").string());
  if (templateLengths.size() > 0)
    templateLengths.saveCsv((d / "template.csv").string());
  if (!manifestJson.empty())
    openForWrite((d / "manifest.json").string(), "manifest") << manifestJson;
}

SceneBundle loadSceneBundle(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path d(dir);
  SceneBundle b;
  b.tracks = TrackSet::loadCsv((d / "tracks.csv").string());
  b.K = loadIntrinsicsJson((d / "intrinsics.json").string());
  if (fs::exists(d / "gt_depths.csv"))
    b.gtDepth = loadDepthsCsv((d / "gt_depths.csv").string(),
                              b.tracks.numViews(), b.tracks.numPoints());
  if (fs::exists(d / "template.csv"))
    b.templateLengths = EdgeLengths::loadCsv((d / "template.csv").string());
  if (fs::exists(d / "manifest.json")) {
    std::ifstream in(d / "manifest.json");
    std::ostringstream ss;
    ss << in.rdbuf();
    b.manifestJson = ss.str();
  }
  return b;
}

std::string contentHashHex(const std::vector<std::string>& paths) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const char* data, std::streamsize n) {
    for (std::streamsize k = 0; k < n; ++k) {
      h ^= static_cast<unsigned char>(data[k]);
      h *= 1099511628211ull;
    }
  };
  for (const std::string& p : paths) {
    mix(p.data(), static_cast<std::streamsize>(p.size()));
    mix("\0", 1);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("hash: cannot open " + p);
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) mix(buf, in.gcount());
  }
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << h;
  return ss.str();
}

}  // namespace nrsfm
