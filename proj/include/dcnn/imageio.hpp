#pragma once

// Raster and dataset I/O: PNG/PGM intensities, PFM disparities, calib.txt
// metadata and Middlebury-2014-style scene directories.

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/image.hpp"
#include "dcnn/parallel.hpp"

namespace dcnn::imageio {

using Bytes = std::vector<std::uint8_t>;

struct CalibInfo {
  int ndisp = 1;
  int width = 1;
  int height = 1;
  std::string dataset_name;

  friend bool operator==(const CalibInfo&, const CalibInfo&) = default;
};

struct StereoPairRecord {
  GrayImage left;
  GrayImage right;
  std::optional<DisparityMap> gt;
  std::optional<Mask> nonocc_mask;
  CalibInfo calib;
};

enum class Resolution { full = 1, half = 2, quarter = 4 };

inline int factor(Resolution r) { return static_cast<int>(r); }

inline Resolution parse_resolution(std::string_view s) {
  if (s == "full" || s == "F") return Resolution::full;
  if (s == "half" || s == "H") return Resolution::half;
  if (s == "quarter" || s == "Q") return Resolution::quarter;
  throw ParameterError("unknown resolution '" + std::string(s) + "' (expected full|half|quarter)");
}

// ---------------------------------------------------------------------------
// Files.

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Intensity images.

inline std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  // Integer form of round(0.299R + 0.587G + 0.114B), ties away from zero.
  int scaled = 299 * r + 587 * g + 114 * b;
  return static_cast<std::uint8_t>((scaled + 500) / 1000);
}

namespace detail {

// Netpbm header tokenizer that tracks the byte offset for error messages.
class PnmCursor {
 public:
  PnmCursor(const Bytes& b, std::size_t start) : bytes_(b), pos_(start) {}

  std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long integer(const char* field) {
    skip_space_and_comments();
    std::size_t start = pos_;
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1000000000) throw ParseError(std::string("PGM: ") + field + " too large at offset " + std::to_string(start));
      ++pos_;
    }
    if (pos_ == start)
      throw ParseError(std::string("PGM: expected ") + field + " at offset " + std::to_string(start));
    return v;
  }

  // Exactly one whitespace byte separates the header from binary samples.
  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw ParseError("PGM: expected whitespace after header at offset " + std::to_string(pos_));
    ++pos_;
  }

 private:
  const Bytes& bytes_;
  std::size_t pos_;
};

inline GrayImage decode_pgm(const Bytes& bytes) {
  const bool binary = bytes[1] == '5';
  PnmCursor h(bytes, 2);
  long width = h.integer("width");
  long height = h.integer("height");
  long maxval = h.integer("maxval");
  if (width < 1 || height < 1)
    throw ParseError("PGM: non-positive dimensions at offset " + std::to_string(h.offset()));
  if (maxval < 1 || maxval > 255)
    throw UnsupportedFormat("PGM: maxval " + std::to_string(maxval) + " is not 8-bit");
  const std::size_t count = static_cast<std::size_t>(width) * height;
  std::vector<float> data(count);
  auto scale = [&](long v) {
    if (v > maxval) throw ParseError("PGM: sample exceeds maxval");
    long level = maxval == 255 ? v : std::lround(v * 255.0 / maxval);
    return static_cast<float>(level) / 255.0f;
  };
  if (binary) {
    h.single_space();
    std::size_t start = h.offset();
    if (bytes.size() - start < count)
      throw ParseError("PGM: payload truncated at offset " + std::to_string(bytes.size()) +
                       ", expected " + std::to_string(count) + " samples from offset " +
                       std::to_string(start));
    for (std::size_t i = 0; i < count; ++i) data[i] = scale(bytes[start + i]);
  } else {
    for (std::size_t i = 0; i < count; ++i) data[i] = scale(h.integer("sample"));
  }
  return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

inline GrayImage decode_png(const Bytes& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw ParseError(std::string("PNG: ") + image.message);
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw UnsupportedFormat("PNG: only 8-bit samples are supported");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  Bytes raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ParseError("PNG: " + msg);
  }
  std::vector<std::uint8_t> levels(static_cast<std::size_t>(w) * h);
  if (color) {
    for (std::size_t i = 0; i < levels.size(); ++i)
      levels[i] = luminance(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]);
  } else {
    levels.assign(raw.begin(), raw.end());
  }
  return GrayImage::from_levels(w, h, levels);
}

}  // namespace detail

/// Decodes PNG (8-bit gray or color) or PGM (P5/P2) into [0,1] intensities.
/// Color input is reduced to 8-bit luminance before scaling.
inline GrayImage decode_image(const Bytes& bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, bytes.begin()))
    return detail::decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2'))
    return detail::decode_pgm(bytes);
  throw ParseError("image: unrecognized signature at offset 0");
}

inline GrayImage load_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

/// Binary PGM (P5) of the 8-bit levels.
inline Bytes encode_pgm(const std::vector<std::uint8_t>& levels, int width, int height) {
  std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), levels.begin(), levels.end());
  return out;
}

inline Bytes encode_pgm(const GrayImage& img) { return encode_pgm(img.levels(), img.width(), img.height()); }

inline Bytes encode_png(const std::vector<std::uint8_t>& levels, int width, int height) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, levels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + image.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, levels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + image.message);
  out.resize(size);
  return out;
}

inline Bytes encode_png(const GrayImage& img) { return encode_png(img.levels(), img.width(), img.height()); }

inline Mask decode_mask(const Bytes& bytes) {
  GrayImage g = decode_image(bytes);
  Mask m(g.width(), g.height());
  auto lv = g.levels();
  for (std::size_t i = 0; i < lv.size(); ++i) m.data[i] = lv[i] != 0 ? 1 : 0;
  return m;
}

inline Bytes encode_mask_png(const Mask& m) {
  std::vector<std::uint8_t> lv(m.data.size());
  for (std::size_t i = 0; i < lv.size(); ++i) lv[i] = m.data[i] ? 255 : 0;
  return encode_png(lv, m.width, m.height);
}

// ---------------------------------------------------------------------------
// PFM.

namespace detail {

inline std::string pfm_token(const Bytes& b, std::size_t& pos) {
  while (pos < b.size() && std::isspace(b[pos])) ++pos;
  std::size_t start = pos;
  while (pos < b.size() && !std::isspace(b[pos])) ++pos;
  if (start == pos) throw ParseError("PFM: header truncated at offset " + std::to_string(start));
  return std::string(b.begin() + static_cast<long>(start), b.begin() + static_cast<long>(pos));
}

}  // namespace detail

/// Raw PFM samples, rows flipped to top-to-bottom. Non-finite values are kept
/// as stored; callers decide their meaning.
struct FloatRaster {
  int width = 0;
  int height = 0;
  std::vector<float> data;
};

inline FloatRaster read_pfm_raster(const Bytes& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != 'f')
    throw FormatError("PFM: header is not \"Pf\" (only single-channel maps are supported)");
  std::size_t pos = 2;
  std::string ws = detail::pfm_token(bytes, pos);
  std::string hs = detail::pfm_token(bytes, pos);
  std::string ss = detail::pfm_token(bytes, pos);
  int w = 0, h = 0;
  auto parse_int = [](const std::string& s, int& v) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
  };
  if (!parse_int(ws, w) || !parse_int(hs, h) || w < 1 || h < 1)
    throw ParseError("PFM: bad dimensions '" + ws + " " + hs + "'");
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(ss, &used);
    if (used != ss.size()) throw std::invalid_argument(ss);
  } catch (const std::exception&) {
    throw ParseError("PFM: bad scale '" + ss + "'");
  }
  if (scale == 0.0) throw ParseError("PFM: scale must be nonzero");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw LengthError("PFM: missing payload");
  ++pos;  // single whitespace byte ends the header
  const bool little = scale < 0.0;
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos < count * 4)
    throw LengthError("PFM: payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(count * 4));
  FloatRaster r{w, h, std::vector<float>(count)};
  for (int row = 0; row < h; ++row) {
    const int dst_row = h - 1 - row;
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* p = bytes.data() + pos + (static_cast<std::size_t>(row) * w + x) * 4;
      std::uint32_t u = little ? (p[0] | p[1] << 8 | p[2] << 16 | static_cast<std::uint32_t>(p[3]) << 24)
                               : (p[3] | p[2] << 8 | p[1] << 16 | static_cast<std::uint32_t>(p[0]) << 24);
      r.data[static_cast<std::size_t>(dst_row) * w + x] = std::bit_cast<float>(u);
    }
  }
  return r;
}

inline Bytes write_pfm_raster(int width, int height, const std::vector<float>& data) {
  std::string header = "Pf\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + data.size() * 4);
  for (int row = height - 1; row >= 0; --row) {
    for (int x = 0; x < width; ++x) {
      std::uint32_t u = std::bit_cast<std::uint32_t>(data[static_cast<std::size_t>(row) * width + x]);
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
    }
  }
  return out;
}

/// Reads a PFM disparity map; non-finite samples become invalid cells.
inline DisparityMap read_pfm(const Bytes& bytes) {
  FloatRaster r = read_pfm_raster(bytes);
  for (float v : r.data)
    if (std::isfinite(v) && v < 0.0f) throw FormatError("PFM: negative disparity sample");
  return DisparityMap(r.width, r.height, std::move(r.data));
}

/// Little-endian PFM with invalid cells written as +inf.
inline Bytes write_pfm(const DisparityMap& map) {
  return write_pfm_raster(map.width(), map.height(), map.data());
}

inline Bytes write_pfm(const ConfidenceMap& conf) {
  std::vector<float> d(conf.values.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = conf.valid[i] ? conf.values[i] : kInvalidDisparity;
  return write_pfm_raster(conf.width, conf.height, d);
}

inline ConfidenceMap read_confidence_pfm(const Bytes& bytes) {
  FloatRaster r = read_pfm_raster(bytes);
  ConfidenceMap c(r.width, r.height);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    if (std::isfinite(r.data[i])) {
      c.values[i] = r.data[i];
      c.valid[i] = 1;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Metadata.

/// Parses `key=value` lines. ndisp, width and height are required; other keys
/// are ignored apart from an optional `dataset=` name.
inline CalibInfo parse_calib(std::string_view text) {
  std::optional<long> ndisp, width, height;
  CalibInfo info;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    auto trim = [](std::string_view s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
      return s;
    };
    std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    auto as_int = [&](std::optional<long>& dst) {
      long v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size())
        throw MetadataError("calib: line " + std::to_string(line_no) + ": '" + std::string(key) +
                            "' is not an integer");
      dst = v;
    };
    if (key == "ndisp") as_int(ndisp);
    else if (key == "width") as_int(width);
    else if (key == "height") as_int(height);
    else if (key == "dataset") info.dataset_name = std::string(value);
  }
  if (!ndisp) throw MetadataError("calib: missing ndisp");
  if (!width) throw MetadataError("calib: missing width");
  if (!height) throw MetadataError("calib: missing height");
  if (*ndisp < 1) throw MetadataError("calib: ndisp must be >= 1");
  if (*width < 1 || *height < 1) throw MetadataError("calib: width and height must be >= 1");
  info.ndisp = static_cast<int>(*ndisp);
  info.width = static_cast<int>(*width);
  info.height = static_cast<int>(*height);
  return info;
}

inline std::string format_calib(const CalibInfo& c) {
  std::string s = "ndisp=" + std::to_string(c.ndisp) + "\nwidth=" + std::to_string(c.width) +
                  "\nheight=" + std::to_string(c.height) + "\n";
  if (!c.dataset_name.empty()) s += "dataset=" + c.dataset_name + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Resampling.

inline int ceil_div(int a, int k) { return (a + k - 1) / k; }

/// k x k box average; edge blocks average only their in-bounds pixels.
inline GrayImage downsample(const GrayImage& img, int k) {
  if (k == 1) return img;
  const int w = ceil_div(img.width(), k), h = ceil_div(img.height(), k);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = 0; dy < k && y * k + dy < img.height(); ++dy)
        for (int dx = 0; dx < k && x * k + dx < img.width(); ++dx, ++n) sum += img(x * k + dx, y * k + dy);
      out(x, y) = static_cast<float>(sum / n);
    }
  return out;
}

/// Top-left sample of each block, divided by k; invalid cells stay invalid.
inline DisparityMap downsample(const DisparityMap& d, int k) {
  if (k == 1) return d;
  const int w = ceil_div(d.width(), k), h = ceil_div(d.height(), k);
  DisparityMap out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = d(x * k, y * k);
      out(x, y) = is_valid_disparity(v) ? v / static_cast<float>(k) : kInvalidDisparity;
    }
  return out;
}

inline Mask downsample(const Mask& m, int k) {
  if (k == 1) return m;
  Mask out(ceil_div(m.width, k), ceil_div(m.height, k));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out(x, y) = m(x * k, y * k);
  return out;
}

// ---------------------------------------------------------------------------
// Datasets.

struct DatasetOptions {
  Resolution resolution = Resolution::half;
  std::string left_name = "im0";
  std::string right_name = "im1";  // e.g. "im1E" or "im1L" for the lighting variants
};

struct SceneFailure {
  std::string scene;
  std::string reason;
};

struct Dataset {
  std::vector<StereoPairRecord> records;
  std::vector<SceneFailure> skipped;
};

namespace detail {

inline std::optional<std::filesystem::path> find_image(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".pgm"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

}  // namespace detail

/// Loads one scene directory (`im0`, `im1`, optional `disp0GT.pfm` and
/// `mask0nocc`, required `calib.txt`) and rescales it.
inline StereoPairRecord load_scene(const std::filesystem::path& dir, const DatasetOptions& opt = {}) {
  const int k = factor(opt.resolution);
  auto left_path = detail::find_image(dir, opt.left_name);
  auto right_path = detail::find_image(dir, opt.right_name);
  if (!left_path) throw IoError("missing " + opt.left_name + ".png/.pgm");
  if (!right_path) throw IoError("missing " + opt.right_name + ".png/.pgm");
  if (!std::filesystem::exists(dir / "calib.txt")) throw IoError("missing calib.txt");

  StereoPairRecord rec;
  auto calib_bytes = read_file(dir / "calib.txt");
  rec.calib = parse_calib(std::string_view(reinterpret_cast<const char*>(calib_bytes.data()), calib_bytes.size()));
  rec.calib.dataset_name = dir.filename().string();
  rec.left = downsample(load_image(*left_path), k);
  rec.right = downsample(load_image(*right_path), k);
  if (rec.left.width() != rec.right.width() || rec.left.height() != rec.right.height())
    throw ParameterError("left/right dimensions differ");
  if (std::filesystem::exists(dir / "disp0GT.pfm")) {
    rec.gt = downsample(read_pfm(read_file(dir / "disp0GT.pfm")), k);
    if (rec.gt->width() != rec.left.width() || rec.gt->height() != rec.left.height())
      throw ParameterError("ground-truth dimensions differ from images");
  }
  if (auto mask_path = detail::find_image(dir, "mask0nocc")) {
    rec.nonocc_mask = downsample(decode_mask(read_file(*mask_path)), k);
    if (rec.nonocc_mask->width != rec.left.width() || rec.nonocc_mask->height != rec.left.height())
      throw ParameterError("mask dimensions differ from images");
  }
  rec.calib.ndisp = ceil_div(rec.calib.ndisp, k);
  rec.calib.width = rec.left.width();
  rec.calib.height = rec.left.height();
  return rec;
}

/// Every subdirectory of `root`, in lexicographic order. Scenes that fail to
/// load are reported in `skipped` rather than aborting the whole load.
inline Dataset load_dataset(const std::filesystem::path& root, const DatasetOptions& opt = {}) {
  Dataset ds;
  if (!std::filesystem::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<std::filesystem::path> scenes;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory()) scenes.push_back(entry.path());
  std::sort(scenes.begin(), scenes.end());

  std::vector<std::optional<StereoPairRecord>> loaded(scenes.size());
  std::vector<std::string> errors(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), [&](int i) {
    try {
      loaded[i] = load_scene(scenes[i], opt);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (loaded[i]) ds.records.push_back(std::move(*loaded[i]));
    else ds.skipped.push_back({scenes[i].filename().string(), errors[i]});
  }
  return ds;
}

/// Writes a record in the layout `load_scene` reads (PNG images and mask).
inline void save_scene(const std::filesystem::path& dir, const StereoPairRecord& rec) {
  std::filesystem::create_directories(dir);
  write_file(dir / "im0.png", encode_png(rec.left));
  write_file(dir / "im1.png", encode_png(rec.right));
  if (rec.gt) write_file(dir / "disp0GT.pfm", write_pfm(*rec.gt));
  if (rec.nonocc_mask) write_file(dir / "mask0nocc.png", encode_mask_png(*rec.nonocc_mask));
  CalibInfo c = rec.calib;
  c.dataset_name.clear();
  write_text(dir / "calib.txt", format_calib(c));
}

}  // namespace dcnn::imageio
