#include "splq/service.hpp"

#include "splq/error.hpp"
#include "splq/metrics.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>

namespace splq {

ServiceData ServiceData::from_checkpoints(const std::map<std::string, std::filesystem::path> &checkpoints) {
  if (checkpoints.empty()) throw ArgumentError("serve: at least one checkpoint is required");
  ServiceData data;
  bool first = true;
  for (const auto &[name, path] : checkpoints) {
    const SceneFile file = load_scene(path, false);
    if (first) {
      data.camera = file.camera;
      data.background = file.background;
      for (const auto &f : file.frames) {
        data.poses.push_back(f.pose);
        data.timestamps.push_back(f.timestamp);
      }
      if (file.truth) data.raster = file.truth->raster;
      first = false;
    } else if (file.frames.size() != data.poses.size()) {
      throw ArgumentError("serve: checkpoint '" + name + "' has a different frame count");
    }
    data.variants.emplace(name, file.model());
  }
  if (data.poses.empty()) throw ArgumentError("serve: checkpoints carry no frame poses");
  return data;
}

namespace {

struct BadRequest {
  int status;
  std::string message;
};

HttpResponse json_error(int status, const std::string &message) {
  return HttpResponse{status, "application/json", nlohmann::json{{"error", message}}.dump(), {}};
}

std::optional<std::string> param(const QueryParams &q, const std::string &key) {
  const auto it = q.find(key);
  if (it == q.end()) return std::nullopt;
  return it->second;
}

double parse_number(const std::string &key, const std::string &text) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v))
    throw BadRequest{400, "parameter '" + key + "' is not a number"};
  return v;
}

long parse_integer(const std::string &key, const std::string &text) {
  long v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw BadRequest{400, "parameter '" + key + "' is not an integer"};
  return v;
}

std::vector<double> parse_list(const std::string &key, const std::string &text, std::size_t count) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    out.push_back(parse_number(key, text.substr(start, comma - start)));
    start = comma + 1;
  }
  if (out.size() != count)
    throw BadRequest{400, "parameter '" + key + "' needs " + std::to_string(count) + " values"};
  return out;
}

double parse_time(const QueryParams &q) {
  const auto text = param(q, "t");
  if (!text) throw BadRequest{400, "missing parameter 't'"};
  const double t = parse_number("t", *text);
  if (t < 0.0 || t > 1.0) throw BadRequest{400, "parameter 't' must lie in [0, 1]"};
  return t;
}

const Model &pick_variant(const ServiceData &data, const QueryParams &q) {
  const auto name = param(q, "variant");
  if (!name) {
    const auto full = data.variants.find("full");
    return full != data.variants.end() ? full->second : data.variants.begin()->second;
  }
  const auto it = data.variants.find(*name);
  if (it == data.variants.end()) throw BadRequest{404, "unknown variant '" + *name + "'"};
  return it->second;
}

bool matches(const std::string &if_none_match, const std::string &etag) {
  if (if_none_match.empty()) return false;
  if (if_none_match == "*") return true;
  std::size_t start = 0;
  while (start < if_none_match.size()) {
    const std::size_t comma = std::min(if_none_match.find(',', start), if_none_match.size());
    std::string tag = if_none_match.substr(start, comma - start);
    const auto first = tag.find_first_not_of(' '), last = tag.find_last_not_of(' ');
    if (first != std::string::npos && tag.substr(first, last - first + 1) == etag) return true;
    start = comma + 1;
  }
  return false;
}

HttpResponse binary(std::string content_type, const Bytes &bytes, const std::string &if_none_match) {
  const std::string etag = "\"" + sha256_hex(bytes) + "\"";
  if (matches(if_none_match, etag)) return HttpResponse{304, content_type, {}, etag};
  return HttpResponse{200, std::move(content_type), std::string(bytes.begin(), bytes.end()), etag};
}

} // namespace

RenderService::RenderService(ServiceData data) : data_(std::move(data)) {
  if (data_.variants.empty()) throw ArgumentError("RenderService: no variants loaded");
}

HttpResponse RenderService::info() const {
  nlohmann::ordered_json j;
  j["N"] = data_.poses.size();
  j["timestamps"] = data_.timestamps;
  std::vector<std::string> names;
  for (const auto &[name, model] : data_.variants) names.push_back(name);
  j["variants"] = names;
  j["width"] = data_.camera.width;
  j["height"] = data_.camera.height;
  return HttpResponse{200, "application/json", j.dump(), {}};
}

HttpResponse RenderService::render(const QueryParams &q, const std::string &if_none_match) const {
  try {
    const double t = parse_time(q);
    Pose pose;
    const auto index = param(q, "pose");
    const auto r_text = param(q, "R"), b_text = param(q, "b");
    if (index) {
      const long n = parse_integer("pose", *index);
      if (n < 0) throw BadRequest{400, "parameter 'pose' must be >= 0"};
      if (static_cast<std::size_t>(n) >= data_.poses.size())
        throw BadRequest{404, "pose " + std::to_string(n) + " does not exist"};
      pose = data_.poses[n];
    } else if (r_text && b_text) {
      const auto r = parse_list("R", *r_text, 9), b = parse_list("b", *b_text, 3);
      for (int i = 0; i < 9; ++i) pose.rotation(i / 3, i % 3) = r[i];
      pose.translation = Vec3(b[0], b[1], b[2]);
      if (!(pose.rotation * pose.rotation.transpose() - Mat3::Identity()).isZero(1e-6))
        throw BadRequest{400, "parameter 'R' is not a rotation"};
    } else {
      throw BadRequest{400, "missing parameter 'pose' (or 'R' and 'b')"};
    }

    CameraModel camera = data_.camera;
    const auto w = param(q, "width"), h = param(q, "height");
    if (w || h) {
      const long width = w ? parse_integer("width", *w) : camera.width;
      const long height = h ? parse_integer("height", *h) : camera.height;
      if (width < 8 || height < 8 || width > 4096 || height > 4096)
        throw BadRequest{400, "output size must lie in [8, 4096]"};
      const double sx = static_cast<double>(width) / camera.width, sy = static_cast<double>(height) / camera.height;
      camera.fx *= sx;
      camera.cx *= sx;
      camera.fy *= sy;
      camera.cy *= sy;
      camera.width = static_cast<int>(width);
      camera.height = static_cast<int>(height);
    }
    const Model &model = pick_variant(data_, q);
    const GaussianCloud state = deform(model.net, model.canonical, t).state;
    const Image img = splq::render(state, camera, pose, data_.background, data_.raster).image.pixels;
    return binary("image/png", encode_png(img), if_none_match);
  } catch (const BadRequest &e) {
    return json_error(e.status, e.message);
  }
}

HttpResponse RenderService::freeze(const QueryParams &q, const std::string &if_none_match) const {
  try {
    const double t = parse_time(q);
    const Model &model = pick_variant(data_, q);
    const std::vector<Image> frames = freeze_frames(model, data_.camera, data_.poses, data_.background, t, data_.raster);
    std::vector<ZipEntry> entries;
    char name[32];
    for (std::size_t n = 0; n < frames.size(); ++n) {
      std::snprintf(name, sizeof name, "frame_%04zu.png", n);
      entries.push_back(ZipEntry{name, encode_png(frames[n])});
    }
    return binary("application/zip", make_zip(entries), if_none_match);
  } catch (const BadRequest &e) {
    return json_error(e.status, e.message);
  }
}

int resolve_port(int port) {
  if (const char *env = std::getenv("SPLQ_PORT")) {
    const std::string text(env);
    int v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || v < 0 || v > 65535)
      throw ConfigError("SPLQ_PORT is not a valid port: " + text);
    return v;
  }
  return port;
}

void serve(const RenderService &service, const std::string &host, int port, const std::filesystem::path &static_dir) {
  httplib::Server server;
  auto reply = [](httplib::Response &res, const HttpResponse &r) {
    res.status = r.status;
    if (!r.etag.empty()) {
      res.set_header("ETag", r.etag);
      res.set_header("Cache-Control", "no-cache");
    }
    if (r.status != 304) res.set_content(r.body, r.content_type);
  };
  auto query = [](const httplib::Request &req) { return QueryParams(req.params.begin(), req.params.end()); };

  server.Get("/api/info", [&](const httplib::Request &, httplib::Response &res) { reply(res, service.info()); });
  server.Get("/api/render", [&](const httplib::Request &req, httplib::Response &res) {
    reply(res, service.render(query(req), req.get_header_value("If-None-Match")));
  });
  server.Get("/api/freeze", [&](const httplib::Request &req, httplib::Response &res) {
    reply(res, service.freeze(query(req), req.get_header_value("If-None-Match")));
  });
  server.set_exception_handler([](const httplib::Request &, httplib::Response &res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception &e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(nlohmann::json{{"error", what}}.dump(), "application/json");
  });
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir.string()))
    throw IoError("serve: static directory not found: " + static_dir.string());

  const int resolved = resolve_port(port);
  if (!server.bind_to_port(host, resolved))
    throw IoError("serve: cannot bind " + host + ":" + std::to_string(resolved));
  std::fprintf(stderr, "serving on http://%s:%d\n", host.c_str(), resolved);
  server.listen_after_bind();
}

} // namespace splq
