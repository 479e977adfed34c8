#pragma once

// HTTP prediction service (JSON):
//   GET  /api/health                         -> {status:"ok"}
//   GET  /api/volumes                        -> [{id, shape, n_instances}]
//   GET  /api/volumes/{id}/slice?axis&index  -> {shape:[a,b], data: base64 u8}
//   POST /api/predict {volume_id, point}     -> {instances:[{score, rle}]}
// Errors are {error: message} with 400 (malformed request), 404 (unknown
// volume) or 422 (prompt or slice index out of bounds).

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>

#include "miq3d/model.hpp"
#include "miq3d/synthdata.hpp"

namespace httplib {
class Server;
}

namespace miq3d {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

// Transport-independent request handling; every method is safe to call
// concurrently (the model is only read, volumes are cached under a lock).
class PredictionService {
 public:
  PredictionService(std::shared_ptr<const Model<float>> model, std::filesystem::path data_dir);

  ServiceResponse health() const;
  ServiceResponse list_volumes() const;
  ServiceResponse slice(const std::string& id, const std::string& axis, const std::string& index) const;
  ServiceResponse predict(const std::string& request_body) const;

  std::size_t volume_count() const { return paths_.size(); }

 private:
  std::shared_ptr<const VolumeSample> volume(const std::string& id) const;

  std::shared_ptr<const Model<float>> model_;
  std::map<std::string, std::filesystem::path> paths_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const VolumeSample>> cache_;
};

// Registers the routes of `service` on `server`.
void mount_routes(httplib::Server& server, const PredictionService& service);

// Blocks serving on host:port until the server is stopped.
void serve(const PredictionService& service, const std::string& host, int port);

}  // namespace miq3d
