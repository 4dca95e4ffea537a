#pragma once

#include "splq/deformation.hpp"
#include "splq/scenegen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace splq {

using Bytes = std::vector<std::uint8_t>;

/// 8-bit RGB PNG encoding; values are clamped to [0, 1] and rounded.
/// The output depends only on the pixel values.
Bytes encode_png(const Image &image);
Image decode_png(const Bytes &bytes);
void write_png(const std::filesystem::path &path, const Image &image);
Image read_png(const std::filesystem::path &path);

/// Uncompressed ZIP archive with fixed timestamps, entries in the given order.
struct ZipEntry {
  std::string name;
  Bytes data;
};
Bytes make_zip(const std::vector<ZipEntry> &entries);

/// Lowercase hex SHA-256.
std::string sha256_hex(const Bytes &bytes);

Bytes read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, const Bytes &bytes);

inline constexpr std::uint32_t kSceneFileVersion = 1;

/// Contents of a scene file. Any part may be absent except the camera.
///
/// Layout: "SPLQ1", u32 version, then tagged blocks (4-byte tag, u64 length,
/// payload), all little-endian, terminated by an "END " block. Frame images
/// live next to the file as PNGs referenced by relative path.
struct SceneFile {
  CameraModel camera;
  double scene_extent = 1.0;
  Vec3 background = Vec3::Zero();
  std::optional<GaussianCloud> cloud;
  std::optional<DeformationNet> net;
  /// Poses and timestamps of the training frames; images may be empty.
  std::vector<FrameRecord> frames;
  std::optional<GroundTruth> truth;
  /// Free-form JSON echo of the configuration that produced the file.
  std::string config;

  std::size_t primitive_count() const { return cloud ? cloud->size() : 0; }
  Dataset dataset() const;
  Model model() const;
  bool operator==(const SceneFile &other) const = default;
};

/// Writes `path` and, when frames carry images, `<stem>_frames/frame_%04d.png`.
/// Throws IoError on write failure.
void save_scene(const std::filesystem::path &path, const SceneFile &scene);
/// Throws IoError (unreadable file), FormatError (bad magic or block, with
/// byte offset), VersionError, TruncationError (with byte offset).
/// Images are loaded unless `load_images` is false.
SceneFile load_scene(const std::filesystem::path &path, bool load_images = true);

SceneFile scene_from_generated(const GeneratedScene &scene);

} // namespace splq
