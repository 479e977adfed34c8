#include "service_checks.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "miq3d/errors.hpp"
#include "miq3d/rle.hpp"
#include "miq3d/service.hpp"
#include "miq3d/synthdata.hpp"

namespace miq3d::testing {

namespace {

using nlohmann::json;

std::string base64_decode(const std::string& in) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  unsigned buf = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const auto pos = alphabet.find(c);
    if (pos == std::string::npos) throw std::runtime_error("invalid base64");
    buf = (buf << 6) | static_cast<unsigned>(pos);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buf >> bits) & 0xffu));
    }
  }
  return out;
}

// Mask voxel closest to the instance centroid.
Point3 center_of(const BinaryMask& m) {
  double c[3] = {0, 0, 0};
  std::size_t n = 0;
  for (std::size_t d = 0; d < m.shape[0]; ++d)
    for (std::size_t h = 0; h < m.shape[1]; ++h)
      for (std::size_t w = 0; w < m.shape[2]; ++w)
        if (m.at(d, h, w)) {
          c[0] += double(d), c[1] += double(h), c[2] += double(w);
          ++n;
        }
  for (auto& x : c) x /= double(n);
  Point3 best;
  double best_d = INFINITY;
  for (std::size_t d = 0; d < m.shape[0]; ++d)
    for (std::size_t h = 0; h < m.shape[1]; ++h)
      for (std::size_t w = 0; w < m.shape[2]; ++w)
        if (m.at(d, h, w)) {
          const double dist = std::pow(double(d) - c[0], 2) + std::pow(double(h) - c[1], 2) + std::pow(double(w) - c[2], 2);
          if (dist < best_d) best_d = dist, best = {double(d), double(h), double(w)};
        }
  return best;
}

class Failures {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failed_.size() < 8) failed_.push_back(what);
    all_ok_ = all_ok_ && ok;
  }
  CheckResult result(const std::string& summary) const {
    std::ostringstream os;
    os << checks_ << " checks, " << summary;
    for (const auto& f : failed_) os << "; FAILED " << f;
    return {all_ok_, os.str()};
  }

 private:
  bool all_ok_ = true;
  std::size_t checks_ = 0;
  std::vector<std::string> failed_;
};

bool is_error_body(const httplib::Result& r) {
  if (!r) return false;
  try {
    const auto j = json::parse(r->body);
    return j.is_object() && j.contains("error") && j["error"].is_string();
  } catch (...) {
    return false;
  }
}

}  // namespace

CheckResult service_contract(std::shared_ptr<const Model<float>> model, const std::filesystem::path& data_dir,
                             bool require_instances) {
  std::vector<std::pair<std::string, VolumeSample>> volumes;
  for (const auto& e : std::filesystem::directory_iterator(data_dir))
    if (e.path().extension() == ".vol") volumes.emplace_back(e.path().stem().string(), read_vol(e.path()));
  std::sort(volumes.begin(), volumes.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const PredictionService service(std::move(model), data_dir);
  httplib::Server server;
  mount_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) return {false, "could not bind a localhost port"};
  std::thread th([&server] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(120, 0);

  Failures f;
  std::size_t predicted_instances = 0, prompts = 0;
  try {
    auto get_json = [&](const std::string& path, int status) {
      const auto r = cli.Get(path);
      f.expect(r && r->status == status, "GET " + path + " -> " + (r ? std::to_string(r->status) : "no response"));
      return r ? json::parse(r->body) : json();
    };
    auto post = [&](const std::string& body) { return cli.Post("/api/predict", body, "application/json"); };
    auto expect_status = [&](const httplib::Result& r, int status, const std::string& what) {
      f.expect(r && r->status == status && is_error_body(r),
               what + " -> " + (r ? std::to_string(r->status) : "no response") + " (want " + std::to_string(status) + ")");
    };

    const auto health = get_json("/api/health", 200);
    f.expect(health == json{{"status", "ok"}}, "health body");

    const auto list = get_json("/api/volumes", 200);
    f.expect(list.is_array() && list.size() == volumes.size(), "volume list has one entry per .vol file");
    for (std::size_t i = 0; i < std::min(list.size(), volumes.size()); ++i) {
      const auto& item = list[i];
      const auto& [id, s] = volumes[i];
      f.expect(item.is_object() && item.size() == 3, "volume entry has exactly id, shape, n_instances");
      f.expect(item.value("id", "") == id, "volume id " + id);
      f.expect(item["shape"] == json{s.shape[0], s.shape[1], s.shape[2]}, "volume shape " + id);
      f.expect(item["n_instances"] == s.n_instances(), "volume n_instances " + id);
    }

    for (const auto& [id, s] : volumes) {
      const auto [nd, nh, nw] = s.shape;
      const std::size_t dims[3][2] = {{nh, nw}, {nd, nw}, {nd, nh}};
      for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t k = s.shape[axis] / 2;
        const auto j = get_json("/api/volumes/" + id + "/slice?axis=" + std::to_string(axis) + "&index=" + std::to_string(k), 200);
        f.expect(j.is_object() && j["shape"] == json{dims[axis][0], dims[axis][1]}, "slice shape axis " + std::to_string(axis));
        const auto pixels = base64_decode(j.value("data", ""));
        f.expect(pixels.size() == dims[axis][0] * dims[axis][1], "slice payload size axis " + std::to_string(axis));
        bool values_ok = pixels.size() == dims[axis][0] * dims[axis][1];
        for (std::size_t r = 0; values_ok && r < dims[axis][0]; ++r)
          for (std::size_t c = 0; c < dims[axis][1]; ++c) {
            const std::size_t d = axis == 0 ? k : r;
            const std::size_t h = axis == 0 ? r : axis == 1 ? k : c;
            const std::size_t w = axis == 2 ? k : c;
            const auto expected = std::lround(s.intensities[(d * nh + h) * nw + w] * 255.0f);
            if (static_cast<unsigned char>(pixels[r * dims[axis][1] + c]) != expected) values_ok = false;
          }
        f.expect(values_ok, "slice pixel values axis " + std::to_string(axis));
      }
      expect_status(cli.Get("/api/volumes/" + id + "/slice?axis=3&index=0"), 400, "slice axis 3");
      expect_status(cli.Get("/api/volumes/" + id + "/slice?axis=0&index=abc"), 400, "slice index abc");
      expect_status(cli.Get("/api/volumes/" + id + "/slice?axis=0"), 400, "slice without index");
      expect_status(cli.Get("/api/volumes/" + id + "/slice?axis=1&index=" + std::to_string(nh)), 422, "slice index at extent");
      expect_status(cli.Get("/api/volumes/" + id + "/slice?axis=2&index=-1"), 422, "slice index -1");

      const auto p = center_of(s.masks.front());
      const json body = {{"volume_id", id}, {"point", {p.d, p.h, p.w}}};
      const auto r = post(body.dump());
      f.expect(r && r->status == 200, "predict " + id + " -> " + (r ? std::to_string(r->status) : "no response"));
      if (!r || r->status != 200) continue;
      const auto j = json::parse(r->body);
      f.expect(j.value("volume_id", "") == id, "predict echoes volume_id");
      f.expect(j["point"] == body["point"], "predict echoes point");
      f.expect(j["shape"] == json{nd, nh, nw}, "predict shape");
      f.expect(j.contains("instances") && j["instances"].is_array(), "predict instances array");
      std::vector<int> owner(nd * nh * nw, 0);
      double prev = 2.0;
      for (const auto& inst : j["instances"]) {
        const double score = inst.value("score", -1.0);
        f.expect(score > 0.5 && score <= 1.0 && score <= prev, "instance score in (0.5, 1], descending");
        prev = score;
        f.expect(inst.contains("query") && inst["query"].is_number_unsigned(), "instance query index");
        const auto runs = inst.value("rle", std::vector<std::uint64_t>{});
        try {
          const auto m = rle_decode(runs, s.shape);
          f.expect(!m.empty(), "instance mask nonempty");
          for (std::size_t v = 0; v < m.size(); ++v) owner[v] += m.voxels[v];
        } catch (const Error& e) {
          f.expect(false, std::string("instance rle decodes: ") + e.what());
        }
      }
      f.expect(std::all_of(owner.begin(), owner.end(), [](int o) { return o <= 1; }), "instance masks disjoint");
      ++prompts;
      predicted_instances += j["instances"].size();
      if (require_instances) f.expect(!j["instances"].empty(), "center-of-instance prompt on " + id + " yields an instance");
    }

    const std::string first = volumes.empty() ? "none" : volumes.front().first;
    expect_status(cli.Get("/api/volumes/nope/slice?axis=0&index=0"), 404, "slice unknown volume");
    expect_status(post(R"({"volume_id": "nope", "point": [1, 1, 1]})"), 404, "predict unknown volume");
    expect_status(post("{not json"), 400, "predict malformed JSON");
    expect_status(post("[1, 2, 3]"), 400, "predict non-object body");
    expect_status(post(json{{"point", {1, 1, 1}}}.dump()), 400, "predict missing volume_id");
    expect_status(post(json{{"volume_id", first}}.dump()), 400, "predict missing point");
    expect_status(post(json{{"volume_id", first}, {"point", {1, 1}}}.dump()), 400, "predict 2-d point");
    expect_status(post(json{{"volume_id", first}, {"point", {1, "a", 1}}}.dump()), 400, "predict non-numeric point");
    if (!volumes.empty()) {
      const auto& s = volumes.front().second;
      expect_status(post(json{{"volume_id", first}, {"point", {double(s.shape[0]), 0, 0}}}.dump()), 422, "predict point at extent");
      expect_status(post(json{{"volume_id", first}, {"point", {0, -0.5, 0}}}.dump()), 422, "predict negative point");
    }
  } catch (const std::exception& e) {
    f.expect(false, std::string("exception: ") + e.what());
  }
  server.stop();
  th.join();
  std::ostringstream os;
  os << volumes.size() << " volumes, " << predicted_instances << " instances from " << prompts << " prompts";
  return f.result(os.str());
}

CheckResult rle_roundtrip(std::size_t masks, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t bad = 0, voxels = 0;
  for (std::size_t t = 0; t < masks; ++t) {
    const Extent3 shape{1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(9)};
    const double density = t % 10 == 0 ? 0.0 : t % 10 == 1 ? 1.0 : rng.uniform();
    const auto m = random_binary_mask(shape, rng, density);
    voxels += m.size();
    const auto runs = rle_encode(m);
    std::vector<std::uint64_t> scan;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.voxels[i] && (i == 0 || !m.voxels[i - 1]))
        scan.push_back(i), scan.push_back(1);
      else if (m.voxels[i])
        ++scan.back();
    if (runs != scan || !(rle_decode(runs, shape) == m)) ++bad;
  }
  std::ostringstream os;
  os << masks << " masks (" << voxels << " voxels), " << bad << " mismatches";
  return {bad == 0, os.str()};
}

}  // namespace miq3d::testing
