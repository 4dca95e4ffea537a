#include "splq/io.hpp"

#include "splq/error.hpp"

#include <openssl/evp.h>
#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace splq {

static_assert(std::endian::native == std::endian::little, "scene files are written in host byte order");

namespace {

void png_append(png_structp png, png_bytep data, png_size_t length) {
  auto *out = static_cast<Bytes *>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

struct ReadCursor {
  const Bytes *bytes;
  std::size_t pos;
};

void png_consume(png_structp png, png_bytep data, png_size_t length) {
  auto *cur = static_cast<ReadCursor *>(png_get_io_ptr(png));
  if (cur->pos + length > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(data, cur->bytes->data() + cur->pos, length);
  cur->pos += length;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace

Bytes encode_png(const Image &image) {
  if (image.width <= 0 || image.height <= 0) throw ArgumentError("encode_png: empty image");
  std::vector<std::uint8_t> pixels(image.data.size());
  std::transform(image.data.begin(), image.data.end(), pixels.begin(), to_byte);
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * image.width * 3;
  Bytes out;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("encode_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("encode_png: libpng write failed");
  }
  png_set_write_fn(png, &out, png_append, nullptr);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(const Bytes &bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("decode_png: not a PNG", 0);
  ReadCursor cursor{&bytes, 0};
  Image img;
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("decode_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("decode_png: corrupt PNG stream", cursor.pos);
  }
  png_set_read_fn(png, &cursor, png_consume);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = Image(w, h);
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
  return img;
}

Bytes read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return out;
}

void write_file(const std::filesystem::path &path, const Bytes &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_png(const std::filesystem::path &path, const Image &image) { write_file(path, encode_png(image)); }
Image read_png(const std::filesystem::path &path) { return decode_png(read_file(path)); }

namespace {

void put_u16(Bytes &b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}
void put_u32(Bytes &b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

} // namespace

Bytes make_zip(const std::vector<ZipEntry> &entries) {
  constexpr std::uint16_t kDate = (0 << 9) | (1 << 5) | 1; // 1980-01-01
  Bytes out, central;
  for (const auto &e : entries) {
    if (e.data.size() > 0xffffffffu || e.name.size() > 0xffff) throw ArgumentError("make_zip: entry too large");
    const auto crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), e.data.data(), static_cast<uInt>(e.data.size())));
    const auto size = static_cast<std::uint32_t>(e.data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());
    put_u32(out, 0x04034b50);
    put_u16(out, 20);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, kDate);
    put_u32(out, crc);
    put_u32(out, size);
    put_u32(out, size);
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    put_u16(out, 0);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());

    put_u32(central, 0x02014b50);
    put_u16(central, 20);
    put_u16(central, 20);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, kDate);
    put_u32(central, crc);
    put_u32(central, size);
    put_u32(central, size);
    put_u16(central, static_cast<std::uint16_t>(e.name.size()));
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u32(central, 0);
    put_u32(central, offset);
    central.insert(central.end(), e.name.begin(), e.name.end());
  }
  const auto central_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put_u32(out, 0x06054b50);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, static_cast<std::uint16_t>(entries.size()));
  put_u16(out, static_cast<std::uint16_t>(entries.size()));
  put_u32(out, static_cast<std::uint32_t>(central.size()));
  put_u32(out, central_offset);
  put_u16(out, 0);
  return out;
}

std::string sha256_hex(const Bytes &bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256: digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

namespace {

class Writer {
public:
  Bytes bytes;

  void raw(const void *p, std::size_t n) {
    const auto *c = static_cast<const std::uint8_t *>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  template <class T> void put(T v) { raw(&v, sizeof v); }
  void vec3(const Vec3 &v) {
    for (int i = 0; i < 3; ++i) put<double>(v[i]);
  }
  void string(const std::string &s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void cloud(const GaussianCloud &c) {
    put<std::uint64_t>(c.size());
    for (double v : pack_cloud(c)) put<double>(v);
  }
  void pose(const Pose &p) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put<double>(p.rotation(r, c));
    vec3(p.translation);
  }
  void block(const char tag[4], const Writer &payload) {
    raw(tag, 4);
    put<std::uint64_t>(payload.bytes.size());
    raw(payload.bytes.data(), payload.bytes.size());
  }
};

class Reader {
public:
  Reader(const Bytes &b, std::size_t begin, std::size_t end) : bytes_(b), pos_(begin), end_(end) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == end_; }
  void raw(void *p, std::size_t n) {
    if (n > end_ - pos_) throw TruncationError("scene file: unexpected end of data", pos_);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <class T> T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  /// Element count that must fit in the remaining bytes at `unit` bytes each.
  std::size_t count(std::size_t unit) {
    const std::size_t at = pos_;
    const auto n = get<std::uint64_t>();
    if (unit > 0 && n > (end_ - pos_) / unit) throw TruncationError("scene file: array exceeds its block", at);
    return static_cast<std::size_t>(n);
  }
  Vec3 vec3() {
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = get<double>();
    return v;
  }
  std::string string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  GaussianCloud cloud() {
    const std::size_t at = pos_;
    const std::size_t k = count(layout::kStride * sizeof(double));
    if (k == 0) throw FormatError("scene file: empty cloud", at);
    std::vector<double> params(k * layout::kStride);
    raw(params.data(), params.size() * sizeof(double));
    return unpack_cloud(params);
  }
  Pose pose() {
    Pose p;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = get<double>();
    p.translation = vec3();
    return p;
  }

private:
  const Bytes &bytes_;
  std::size_t pos_;
  std::size_t end_;
};

constexpr char kMagic[5] = {'S', 'P', 'L', 'Q', '1'};

std::string frame_path(const std::filesystem::path &scene_path, std::size_t n) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%04zu.png", n);
  return scene_path.stem().string() + "_frames/" + name;
}

} // namespace

Dataset SceneFile::dataset() const {
  Dataset ds;
  ds.frames = frames;
  ds.camera = camera;
  ds.scene_extent = scene_extent;
  ds.background = background;
  return ds;
}

Model SceneFile::model() const {
  if (!cloud || !net) throw ArgumentError("scene file holds no trained model");
  return Model{*cloud, *net};
}

void save_scene(const std::filesystem::path &path, const SceneFile &scene) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kSceneFileVersion);

  Writer cam;
  const CameraModel &c = scene.camera;
  for (double v : {c.fx, c.fy, c.cx, c.cy}) cam.put<double>(v);
  cam.put<std::int32_t>(c.width);
  cam.put<std::int32_t>(c.height);
  cam.put<double>(c.near);
  cam.put<double>(c.far);
  cam.put<double>(scene.scene_extent);
  cam.vec3(scene.background);
  w.block("CAMR", cam);

  if (scene.cloud) {
    Writer b;
    b.cloud(*scene.cloud);
    w.block("CLOD", b);
  }
  if (scene.net) {
    Writer b;
    b.put<std::uint64_t>(scene.net->weights.size());
    for (double v : scene.net->weights) b.put<double>(v);
    w.block("DEFN", b);
  }

  const bool has_images = std::any_of(scene.frames.begin(), scene.frames.end(),
                                      [](const FrameRecord &f) { return !f.image.data.empty(); });
  if (!scene.frames.empty()) {
    Writer b;
    b.put<std::uint64_t>(scene.frames.size());
    for (std::size_t n = 0; n < scene.frames.size(); ++n) {
      const auto &f = scene.frames[n];
      b.put<std::uint64_t>(f.index);
      b.put<double>(f.timestamp);
      b.pose(f.pose);
      b.string(f.image.data.empty() ? std::string() : frame_path(path, n));
    }
    w.block("FRMS", b);
  }

  if (scene.truth) {
    const GroundTruth &gt = *scene.truth;
    Writer b;
    b.cloud(gt.canonical);
    for (const auto &d : gt.directions) b.vec3(d);
    for (double p : gt.phases) b.put<double>(p);
    b.put<double>(gt.amplitude);
    b.put<double>(gt.frequency);
    b.put<std::uint64_t>(gt.subjects.size());
    for (const auto &s : gt.subjects) {
      b.put<std::uint64_t>(s.size());
      for (std::size_t k : s) b.put<std::uint64_t>(k);
    }
    b.put<std::uint64_t>(gt.poses.size());
    for (const auto &p : gt.poses) b.pose(p);
    const RasterConfig &r = gt.raster;
    b.put<std::int32_t>(r.tile_size);
    for (double v : {r.blur, r.alpha_cap, r.alpha_skip, r.transmittance_min, r.cutoff_sigma}) b.put<double>(v);
    w.block("GTRU", b);
  }

  if (!scene.config.empty()) {
    Writer b;
    b.raw(scene.config.data(), scene.config.size());
    w.block("CONF", b);
  }
  w.block("END ", Writer{});

  if (has_images) {
    std::filesystem::create_directories(path.parent_path() / (path.stem().string() + "_frames"));
    for (std::size_t n = 0; n < scene.frames.size(); ++n)
      if (!scene.frames[n].image.data.empty())
        write_png(path.parent_path() / frame_path(path, n), scene.frames[n].image);
  }
  write_file(path, w.bytes);
}

SceneFile load_scene(const std::filesystem::path &path, bool load_images) {
  const Bytes bytes = read_file(path);
  Reader head(bytes, 0, bytes.size());
  char magic[5];
  head.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("scene file: bad magic", 0);
  const auto version = head.get<std::uint32_t>();
  if (version != kSceneFileVersion)
    throw VersionError("scene file: unsupported version " + std::to_string(version));

  SceneFile scene;
  bool have_camera = false, ended = false;
  std::vector<std::string> image_paths;
  std::size_t pos = head.pos();
  while (!ended) {
    Reader hdr(bytes, pos, bytes.size());
    char tag[4];
    hdr.raw(tag, 4);
    const std::size_t len_at = hdr.pos();
    const auto len = hdr.get<std::uint64_t>();
    if (len > bytes.size() - hdr.pos()) throw TruncationError("scene file: block exceeds file", len_at);
    const std::size_t begin = hdr.pos(), end = begin + static_cast<std::size_t>(len);
    Reader r(bytes, begin, end);
    const std::string name(tag, 4);

    if (name == "CAMR") {
      CameraModel &c = scene.camera;
      c.fx = r.get<double>();
      c.fy = r.get<double>();
      c.cx = r.get<double>();
      c.cy = r.get<double>();
      c.width = r.get<std::int32_t>();
      c.height = r.get<std::int32_t>();
      c.near = r.get<double>();
      c.far = r.get<double>();
      scene.scene_extent = r.get<double>();
      scene.background = r.vec3();
      have_camera = true;
    } else if (name == "CLOD") {
      scene.cloud = r.cloud();
    } else if (name == "DEFN") {
      const std::size_t at = r.pos();
      DeformationNet net;
      net.weights.resize(r.count(sizeof(double)));
      if (net.weights.size() != DeformationNet::parameter_count())
        throw FormatError("scene file: deformation weight count mismatch", at);
      r.raw(net.weights.data(), net.weights.size() * sizeof(double));
      scene.net = std::move(net);
    } else if (name == "FRMS") {
      const std::size_t n = r.count(8 + 8 + 12 * 8 + 4);
      scene.frames.resize(n);
      image_paths.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        scene.frames[i].index = r.get<std::uint64_t>();
        scene.frames[i].timestamp = r.get<double>();
        scene.frames[i].pose = r.pose();
        image_paths[i] = r.string();
      }
    } else if (name == "GTRU") {
      GroundTruth gt;
      gt.canonical = r.cloud();
      const std::size_t k = gt.canonical.size();
      gt.directions.resize(k);
      gt.phases.resize(k);
      for (auto &d : gt.directions) d = r.vec3();
      for (auto &p : gt.phases) p = r.get<double>();
      gt.amplitude = r.get<double>();
      gt.frequency = r.get<double>();
      gt.subjects.resize(r.count(8));
      for (auto &s : gt.subjects) {
        s.resize(r.count(8));
        for (auto &i : s) {
          const std::size_t at = r.pos();
          i = r.get<std::uint64_t>();
          if (i >= k) throw FormatError("scene file: subject index out of range", at);
        }
      }
      gt.poses.resize(r.count(12 * 8));
      for (auto &p : gt.poses) p = r.pose();
      gt.raster.tile_size = r.get<std::int32_t>();
      gt.raster.blur = r.get<double>();
      gt.raster.alpha_cap = r.get<double>();
      gt.raster.alpha_skip = r.get<double>();
      gt.raster.transmittance_min = r.get<double>();
      gt.raster.cutoff_sigma = r.get<double>();
      scene.truth = std::move(gt);
    } else if (name == "CONF") {
      scene.config.resize(static_cast<std::size_t>(len));
      r.raw(scene.config.data(), scene.config.size());
    } else if (name == "END ") {
      ended = true;
    } else {
      throw FormatError("scene file: unknown block '" + name + "'", pos);
    }
    if (!r.done()) throw FormatError("scene file: block '" + name + "' has trailing bytes", r.pos());
    pos = end;
  }
  if (pos != bytes.size()) throw FormatError("scene file: data after END block", pos);
  if (!have_camera) throw FormatError("scene file: missing camera block", pos);

  if (scene.truth) {
    scene.truth->camera = scene.camera;
    scene.truth->background = scene.background;
  }
  if (load_images)
    for (std::size_t i = 0; i < scene.frames.size(); ++i)
      if (!image_paths[i].empty()) scene.frames[i].image = read_png(path.parent_path() / image_paths[i]);
  return scene;
}

SceneFile scene_from_generated(const GeneratedScene &generated) {
  SceneFile f;
  f.camera = generated.dataset.camera;
  f.scene_extent = generated.dataset.scene_extent;
  f.background = generated.dataset.background;
  f.frames = generated.dataset.frames;
  f.cloud = generated.initial;
  f.truth = generated.truth;
  return f;
}

} // namespace splq
