#include "miq3d/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>

#include "miq3d/errors.hpp"
#include "miq3d/inference.hpp"
#include "miq3d/rle.hpp"

namespace miq3d {
namespace {

using nlohmann::json;

ServiceResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool parse_index(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

}  // namespace

PredictionService::PredictionService(std::shared_ptr<const Model<float>> model,
                                     std::filesystem::path data_dir)
    : model_(std::move(model)) {
  if (!std::filesystem::is_directory(data_dir))
    throw UsageError("data directory " + data_dir.string() + " does not exist");
  for (const auto& entry : std::filesystem::directory_iterator(data_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".vol")
      paths_[entry.path().stem().string()] = entry.path();
}

std::shared_ptr<const VolumeSample> PredictionService::volume(const std::string& id) const {
  const auto it = paths_.find(id);
  if (it == paths_.end()) throw NotFound("unknown volume id '" + id + "'");
  std::lock_guard lock(cache_mutex_);
  auto& slot = cache_[id];
  if (!slot) slot = std::make_shared<const VolumeSample>(read_vol(it->second));
  return slot;
}

ServiceResponse PredictionService::health() const { return {200, {{"status", "ok"}}}; }

ServiceResponse PredictionService::list_volumes() const {
  json out = json::array();
  for (const auto& [id, path] : paths_) {
    try {
      const auto v = volume(id);
      out.push_back({{"id", id}, {"shape", {v->shape[0], v->shape[1], v->shape[2]}}, {"n_instances", v->n_instances()}});
    } catch (const FormatError& e) {
      return error(500, "volume '" + id + "' is unreadable: " + e.what());
    }
  }
  return {200, out};
}

ServiceResponse PredictionService::slice(const std::string& id, const std::string& axis_text,
                                         const std::string& index_text) const {
  std::shared_ptr<const VolumeSample> v;
  try {
    v = volume(id);
  } catch (const NotFound& e) {
    return error(404, e.what());
  }
  long long axis = 0, index = 0;
  if (!parse_index(axis_text, axis) || axis < 0 || axis > 2)
    return error(400, "axis must be 0, 1 or 2");
  if (!parse_index(index_text, index)) return error(400, "index must be an integer");
  const auto a = static_cast<std::size_t>(axis);
  if (index < 0 || static_cast<std::size_t>(index) >= v->shape[a])
    return error(422, "slice index " + std::to_string(index) + " outside [0, " + std::to_string(v->shape[a]) + ")");
  const auto k = static_cast<std::size_t>(index);
  const auto [nd, nh, nw] = v->shape;
  const std::size_t rows = a == 0 ? nh : nd;
  const std::size_t cols = a == 2 ? nh : nw;
  std::string pixels(rows * cols, '\0');
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t d = 0, h = 0, w = 0;
      if (a == 0) {
        d = k, h = r, w = c;
      } else if (a == 1) {
        d = r, h = k, w = c;
      } else {
        d = r, h = c, w = k;
      }
      const float x = v->intensities[(d * nh + h) * nw + w];
      const long q = std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f);
      pixels[r * cols + c] = static_cast<char>(static_cast<unsigned char>(q));
    }
  return {200, {{"shape", {rows, cols}}, {"data", httplib::detail::base64_encode(pixels)}}};
}

ServiceResponse PredictionService::predict(const std::string& request_body) const {
  json req;
  try {
    req = json::parse(request_body);
  } catch (const json::parse_error& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("volume_id") || !req["volume_id"].is_string())
    return error(400, "body must be an object with a string volume_id");
  if (!req.contains("point") || !req["point"].is_array() || req["point"].size() != 3)
    return error(400, "point must be an array [d, h, w]");
  double coords[3];
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& c = req["point"][i];
    if (!c.is_number()) return error(400, "point coordinates must be numbers");
    coords[i] = c.get<double>();
    if (!std::isfinite(coords[i])) return error(400, "point coordinates must be finite");
  }
  std::shared_ptr<const VolumeSample> v;
  try {
    v = volume(req["volume_id"].get<std::string>());
  } catch (const NotFound& e) {
    return error(404, e.what());
  }
  const PointPrompt prompt{{coords[0], coords[1], coords[2]}};
  std::vector<PredictedInstance> instances;
  try {
    instances = miq3d::predict(*model_, *v, prompt);
  } catch (const PromptError& e) {
    return error(422, e.what());
  } catch (const ConfigError& e) {
    return error(422, std::string("volume incompatible with model: ") + e.what());
  }
  json list = json::array();
  for (const auto& inst : instances)
    list.push_back({{"score", inst.score}, {"query", inst.query}, {"rle", rle_encode(inst.mask)}});
  return {200, {{"volume_id", req["volume_id"]}, {"point", {coords[0], coords[1], coords[2]}},
                {"shape", {v->shape[0], v->shape[1], v->shape[2]}}, {"instances", list}}};
}

void mount_routes(httplib::Server& server, const PredictionService& service) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get("/api/health", [&, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
  server.Get("/api/volumes",
             [&, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.list_volumes()); });
  server.Get(R"(/api/volumes/([^/]+)/slice)", [&, reply](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("axis") || !req.has_param("index")) {
      reply(res, error(400, "axis and index query parameters are required"));
      return;
    }
    reply(res, service.slice(req.matches[1], req.get_param_value("axis"), req.get_param_value("index")));
  });
  server.Post("/api/predict", [&, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.predict(req.body));
  });
  server.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, error(500, e.what()));
    }
  });
}

void serve(const PredictionService& service, const std::string& host, int port) {
  httplib::Server server;
  mount_routes(server, service);
  if (!server.listen(host, port)) throw UsageError("cannot bind " + host + ":" + std::to_string(port));
}

}  // namespace miq3d
