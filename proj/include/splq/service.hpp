#pragma once

#include "splq/deformation.hpp"
#include "splq/io.hpp"
#include "splq/rasterizer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace splq {

/// Immutable state shared by all request handlers.
struct ServiceData {
  std::map<std::string, Model> variants;
  CameraModel camera;
  std::vector<Pose> poses;
  std::vector<double> timestamps;
  Vec3 background = Vec3::Zero();
  RasterConfig raster;

  /// Camera, poses and timestamps come from the first checkpoint; every
  /// checkpoint must hold a trained model with the same frame count.
  static ServiceData from_checkpoints(const std::map<std::string, std::filesystem::path> &checkpoints);
};

struct HttpResponse {
  int status = 200;
  std::string content_type;
  std::string body;
  /// Quoted strong validator, empty when not cacheable.
  std::string etag;
};

using QueryParams = std::multimap<std::string, std::string>;

/// Request handlers, independent of the HTTP transport.
class RenderService {
public:
  explicit RenderService(ServiceData data);

  HttpResponse info() const;
  /// Query: variant (optional, defaults to "full" or the first variant), t,
  /// pose index or explicit R (9 comma-separated values, row-major) and b (3),
  /// optional width and height.
  HttpResponse render(const QueryParams &query, const std::string &if_none_match = {}) const;
  /// Query: variant, t. A ZIP of frame_%04d.png for every pose.
  HttpResponse freeze(const QueryParams &query, const std::string &if_none_match = {}) const;

  const ServiceData &data() const { return data_; }

private:
  ServiceData data_;
};

/// Blocks serving /api/* (and `static_dir` at / when non-empty) until the
/// process is stopped. The SPLQ_PORT environment variable overrides `port`.
/// Throws IoError when the address cannot be bound.
void serve(const RenderService &service, const std::string &host, int port,
           const std::filesystem::path &static_dir = {});

/// Port after applying the SPLQ_PORT override.
int resolve_port(int port);

} // namespace splq
