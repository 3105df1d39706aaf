#include "tssg/dataio.hpp"

#include "tssg/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace tssg {

// ---- mask codec ------------------------------------------------------------

int MaskCodec::classify(int r, int g, int b) {
  for (std::size_t c = 0; c < kColors.size(); ++c) {
    const auto& ref = kColors[c];
    if (std::abs(r - ref[0]) <= kTolerance && std::abs(g - ref[1]) <= kTolerance && std::abs(b - ref[2]) <= kTolerance) {
      return static_cast<int>(c);
    }
  }
  return -1;
}

namespace {

int to8(const Raster& r, std::uint16_t v) { return r.bit_depth == 16 ? (v + 128) / 257 : v; }

}  // namespace

LabelMask decode_multiclass(const Raster& rgb) {
  if (rgb.channels != 3) {
    throw DataError("multiclass mask must be RGB, got " + std::to_string(rgb.channels) + " channel(s)");
  }
  LabelMask mask(rgb.height, rgb.width);
  std::map<std::array<int, 3>, std::size_t> unknown;
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      const std::array<int, 3> px{to8(rgb, rgb.at(y, x, 0)), to8(rgb, rgb.at(y, x, 1)), to8(rgb, rgb.at(y, x, 2))};
      const int cls = MaskCodec::classify(px[0], px[1], px[2]);
      if (cls < 0) {
        ++unknown[px];
      } else {
        mask(y, x) = cls;
      }
    }
  }
  if (!unknown.empty()) {
    std::ostringstream msg;
    msg << "unknown mask color(s) beyond tolerance " << MaskCodec::kTolerance << ":";
    for (const auto& [c, n] : unknown) msg << " (" << c[0] << "," << c[1] << "," << c[2] << ") x" << n;
    throw DataError(msg.str());
  }
  return mask;
}

Raster encode_multiclass(const LabelMask& mask) {
  Raster out;
  out.width = mask.width;
  out.height = mask.height;
  out.channels = 3;
  out.bit_depth = 8;
  out.samples.resize(mask.size() * 3);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const int cls = mask.labels[i];
    if (cls < 0 || cls >= static_cast<int>(MaskCodec::kColors.size())) {
      throw DataError("encode_multiclass: label " + std::to_string(cls) + " has no color");
    }
    for (int c = 0; c < 3; ++c) {
      out.samples[i * 3 + static_cast<std::size_t>(c)] =
          static_cast<std::uint16_t>(MaskCodec::kColors[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

LabelMask decode_binary(const Raster& raster) {
  const ImagePlane plane = raster_to_plane(raster);
  LabelMask mask(raster.height, raster.width);
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x < raster.width; ++x) mask(y, x) = plane(y, x) >= 0.5f ? 1 : 0;
  }
  return mask;
}

Raster encode_binary(const LabelMask& mask) {
  Raster out;
  out.width = mask.width;
  out.height = mask.height;
  out.samples.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out.samples[i] = mask.labels[i] != 0 ? 255 : 0;
  return out;
}

LabelMask load_binary_mask(const std::filesystem::path& path) { return decode_binary(read_png(path)); }

LabelMask load_multiclass_mask(const std::filesystem::path& path) {
  try {
    return decode_multiclass(read_png(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---- manifest --------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string relative_or_absolute(const std::filesystem::path& p, const std::filesystem::path& base) {
  std::error_code ec;
  const auto rel = std::filesystem::relative(p, base, ec);
  if (ec || rel.empty() || rel.native().starts_with("..")) return p.string();
  return rel.generic_string();
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  DatasetManifest manifest;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw DataError(where + ": expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    auto resolve = [&](const std::string& f, const char* what) -> std::optional<std::filesystem::path> {
      if (f == "-") return std::nullopt;
      std::filesystem::path p(f);
      if (p.is_relative()) p = base / p;
      if (!std::filesystem::exists(p)) throw DataError(where + ": " + what + " file not found: " + p.string());
      return p;
    };
    ManifestRecord rec;
    const auto image = resolve(fields[0], "image");
    if (!image) throw DataError(where + ": image path is required");
    rec.image = *image;
    rec.roi = resolve(fields[1], "roi");
    rec.binary = resolve(fields[2], "binary");
    rec.multiclass = resolve(fields[3], "multiclass");
    if (!rec.roi && !rec.binary && !rec.multiclass) throw DataError(where + ": record has no mask");
    if (fields[4] == "train") {
      rec.split = Split::train;
    } else if (fields[4] == "test") {
      rec.split = Split::test;
    } else {
      throw DataError(where + ": split must be 'train' or 'test', got '" + fields[4] + "'");
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const auto base = path.parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  auto field = [&](const std::optional<std::filesystem::path>& p) { return p ? relative_or_absolute(*p, base) : "-"; };
  for (const auto& r : manifest.records) {
    out << relative_or_absolute(r.image, base) << '\t' << field(r.roi) << '\t' << field(r.binary) << '\t'
        << field(r.multiclass) << '\t' << (r.split == Split::train ? "train" : "test") << '\n';
  }
  if (!out) throw DataError("short write to manifest " + path.string());
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::optional<Split> split) {
  std::vector<Sample> out;
  for (const auto& r : manifest.records) {
    if (split && r.split != *split) continue;
    Sample s;
    s.name = r.image.stem().string();
    s.image = load_image(r.image);
    auto check = [&](const LabelMask& m, const std::filesystem::path& p) {
      if (m.height != s.image.rows() || m.width != s.image.cols()) {
        throw DataError(p.string() + ": mask size differs from image " + r.image.string());
      }
      return m;
    };
    if (r.roi) s.roi = check(load_binary_mask(*r.roi), *r.roi);
    if (r.binary) s.binary = check(load_binary_mask(*r.binary), *r.binary);
    if (r.multiclass) s.multiclass = check(load_multiclass_mask(*r.multiclass), *r.multiclass);
    out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t dataset_fingerprint(const std::vector<Sample>& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : samples) {
    mix(s.image.data(), static_cast<std::size_t>(s.image.size()) * sizeof(float));
    for (const auto* m : {&s.roi, &s.binary, &s.multiclass}) {
      const std::uint8_t present = m->has_value();
      mix(&present, 1);
      if (*m) mix((*m)->labels.data(), (*m)->labels.size() * sizeof(std::int32_t));
    }
  }
  return h;
}

// ---- checkpoints -----------------------------------------------------------
//
// "TSSG" | u16 version | u32 meta_len | meta | u32 n_tensors | tensors
// meta:   13 x u32 config | u64 net_seed | u64 seed | u64 fingerprint |
//         str stage | u32 n_extra | (str key, str value)*
// tensor: str name | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] |
//         u64 payload_bytes | payload
// str:    u16 length | bytes. Everything little-endian.

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    if (s.size() > 0xFFFF) throw DataError("checkpoint string too long");
    le<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  void need(std::size_t n, const char* what) const {
    if (n > size_ - pos_) {
      throw DataError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const auto n = le<std::uint16_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t skip(std::size_t n, const char* what) {
    need(n, what);
    const std::size_t at = pos_;
    pos_ += n;
    return at;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

struct TensorEntry {
  std::string name;
  Shape shape;
  std::size_t offset;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const NetworkParams<float>& params, const CheckpointMeta& meta) {
  Writer meta_w;
  const auto& cfg = params.config;
  meta_w.le<std::uint32_t>(static_cast<std::uint32_t>(cfg.input_channels_a));
  meta_w.le<std::uint32_t>(static_cast<std::uint32_t>(cfg.input_channels_b));
  meta_w.le<std::uint32_t>(static_cast<std::uint32_t>(cfg.num_classes));
  for (int w : cfg.encoder_widths) meta_w.le<std::uint32_t>(static_cast<std::uint32_t>(w));
  for (int c : cfg.convs_per_block) meta_w.le<std::uint32_t>(static_cast<std::uint32_t>(c));
  meta_w.le<std::uint64_t>(params.seed);
  meta_w.le<std::uint64_t>(meta.seed);
  meta_w.le<std::uint64_t>(meta.data_fingerprint);
  meta_w.str(meta.stage);
  meta_w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.extra.size()));
  for (const auto& [k, v] : meta.extra) {
    meta_w.str(k);
    meta_w.str(v);
  }

  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint16_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta_w.buffer().size()));
  w.bytes(meta_w.buffer().data(), meta_w.buffer().size());

  std::uint32_t count = 0;
  params.for_each_tensor([&](const std::string&, const TensorF&, bool) { ++count; });
  w.le<std::uint32_t>(count);
  params.for_each_tensor([&](const std::string& name, const TensorF& t, bool) {
    w.str(name);
    w.le<std::uint8_t>(0);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.le<std::uint64_t>(t.size() * 4);
    for (float v : t.data()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  });
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes.data(), bytes.size());
  r.need(4, "magic");
  if (!std::equal(bytes.begin(), bytes.begin() + 4, kCheckpointMagic)) throw DataError("not a checkpoint (bad magic)");
  r.skip(4, "magic");
  const auto version = r.le<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  const std::size_t meta_end = r.pos() + meta_len;
  r.need(meta_len, "metadata");

  NetworkConfig cfg;
  cfg.input_channels_a = static_cast<int>(r.le<std::uint32_t>("config"));
  cfg.input_channels_b = static_cast<int>(r.le<std::uint32_t>("config"));
  cfg.num_classes = static_cast<int>(r.le<std::uint32_t>("config"));
  for (int& v : cfg.encoder_widths) v = static_cast<int>(r.le<std::uint32_t>("config"));
  for (int& v : cfg.convs_per_block) v = static_cast<int>(r.le<std::uint32_t>("config"));
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint holds an invalid network config: ") + e.what());
  }
  const auto net_seed = r.le<std::uint64_t>("seed");
  CheckpointMeta meta;
  meta.seed = r.le<std::uint64_t>("seed");
  meta.data_fingerprint = r.le<std::uint64_t>("fingerprint");
  meta.stage = r.str("stage");
  const auto n_extra = r.le<std::uint32_t>("metadata");
  for (std::uint32_t i = 0; i < n_extra; ++i) {
    auto k = r.str("metadata key");
    meta.extra[k] = r.str("metadata value");
  }
  if (r.pos() != meta_end) throw DataError("checkpoint metadata length mismatch");

  // Expected layout from the config.
  std::vector<std::pair<std::string, Shape>> expected;
  const auto skeleton = build_network<float>(cfg, net_seed);
  skeleton.for_each_tensor([&](const std::string& n, const TensorF& t, bool) { expected.emplace_back(n, t.shape()); });

  const auto count = r.le<std::uint32_t>("tensor count");
  if (count != expected.size()) {
    throw DataError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                    std::to_string(expected.size()));
  }
  std::vector<TensorEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    e.name = r.str("tensor name");
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype != 0) throw DataError("tensor " + e.name + ": unsupported dtype " + std::to_string(dtype));
    const auto rank = r.le<std::uint8_t>("rank");
    for (int d = 0; d < rank; ++d) e.shape.push_back(static_cast<int>(r.le<std::uint32_t>("shape")));
    const auto payload = r.le<std::uint64_t>("payload length");
    if (e.name != expected[i].first || e.shape != expected[i].second) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " is " + e.name + " " + to_string(e.shape) +
                      ", expected " + expected[i].first + " " + to_string(expected[i].second));
    }
    if (payload != element_count(e.shape) * 4) {
      throw DataError("tensor " + e.name + ": payload of " + std::to_string(payload) + " bytes does not match shape " +
                      to_string(e.shape));
    }
    e.offset = r.skip(payload, "tensor payload");
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw DataError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");

  Checkpoint ck{skeleton, meta};
  std::size_t i = 0;
  ck.params.for_each_tensor([&](const std::string&, TensorF& t, bool) {
    const std::uint8_t* p = bytes.data() + entries[i++].offset;
    for (std::size_t j = 0; j < t.size(); ++j, p += 4) {
      const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                              (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      t[j] = std::bit_cast<float>(u);
    }
  });
  return ck;
}

void save_checkpoint(const NetworkParams<float>& params, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---- synthetic data --------------------------------------------------------

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;

  // < 1 inside, 1 on the boundary.
  double level(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
    return u * u + v * v;
  }
};

double smoothstep_edge(double level, double width) {
  // 1 inside, 0 outside, linear ramp of the given width across the boundary.
  return std::clamp((1.0 - level) / width + 0.5, 0.0, 1.0);
}

}  // namespace

SyntheticSample synthesize_sample(std::uint64_t seed, int index) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  constexpr int n = kSyntheticSize;
  SyntheticSample s{ImagePlane(n, n), LabelMask(n, n), LabelMask(n, n), LabelMask(n, n)};

  const Ellipse body{31.5 + rng.uniform(-1, 1), 31.5 + rng.uniform(-1, 1), 29 + rng.uniform(-1, 1),
                     27 + rng.uniform(-1, 1), 0.0};
  std::array<Ellipse, 2> lungs;
  for (int side = 0; side < 2; ++side) {
    const double cx = (side == 0 ? 20.0 : 44.0) + rng.uniform(-2, 2);
    lungs[static_cast<std::size_t>(side)] = {cx, 32.0 + rng.uniform(-3, 3), rng.uniform(8, 11), rng.uniform(14, 20),
                                             rng.uniform(-0.12, 0.12)};
  }

  const double body_level = rng.uniform(0.55, 0.65);
  const double lung_level = rng.uniform(0.18, 0.28);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double v = 0.05 + (body_level - 0.05) * smoothstep_edge(body.level(x, y), 0.15);
      // Fine tissue texture over the body.
      v += 0.04 * std::sin(2.2 * x + phase) * std::sin(2.2 * y) * smoothstep_edge(body.level(x, y), 0.15);
      for (const auto& l : lungs) {
        const double inside = smoothstep_edge(l.level(x, y), 0.3);
        v = v * (1 - inside) + lung_level * inside;
        if (l.level(x, y) <= 1.0) s.roi(y, x) = 1;
      }
      s.image(y, x) = static_cast<float>(v);
    }
  }

  // 1-3 lesions, each fully inside one lung and apart from the others.
  const int count = rng.uniform_int(1, 3);
  std::vector<Ellipse> placed;
  for (int k = 0; k < count; ++k) {
    const int cls = rng.bernoulli(0.5) ? 1 : 2;
    for (int attempt = 0; attempt < 50; ++attempt) {
      const auto& lung = lungs[static_cast<std::size_t>(rng.uniform_int(0, 1))];
      Ellipse blob;
      blob.cx = lung.cx + rng.uniform(-lung.a, lung.a);
      blob.cy = lung.cy + rng.uniform(-lung.b, lung.b);
      blob.theta = rng.uniform(0, std::numbers::pi);
      if (cls == 1) {
        blob.a = blob.b = 3.5;
      } else {
        blob.a = 6.0;
        blob.b = 2.0;
      }
      const double reach = std::max(blob.a, blob.b);
      bool ok = true;
      for (const auto& other : placed) {
        if (std::hypot(other.cx - blob.cx, other.cy - blob.cy) < reach + std::max(other.a, other.b) + 2) ok = false;
      }
      // Every pixel of the blob, plus a one-pixel margin, inside the ROI.
      for (int y = 0; ok && y < n; ++y) {
        for (int x = 0; ok && x < n; ++x) {
          if (blob.level(x, y) <= 1.4 && (y < 1 || x < 1 || y >= n - 1 || x >= n - 1 || !s.roi(y, x))) ok = false;
        }
      }
      if (!ok) continue;
      placed.push_back(blob);
      const double intensity = rng.uniform(0.75, 0.9);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          if (blob.level(x, y) <= 1.0) {
            s.binary(y, x) = 1;
            s.multiclass(y, x) = cls;
            s.image(y, x) = static_cast<float>(intensity);
          }
        }
      }
      break;
    }
  }

  for (Eigen::Index i = 0; i < s.image.size(); ++i) {
    s.image.data()[i] = std::clamp(s.image.data()[i] + static_cast<float>(0.02 * rng.normal()), 0.0f, 1.0f);
  }
  return s;
}

DatasetManifest generate_synthetic_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                           int test_count) {
  if (n < 1) throw std::invalid_argument("generate_synthetic_dataset needs n >= 1");
  if (test_count < 0 || test_count > n) throw std::invalid_argument("test_count must lie in [0, n]");
  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  for (int i = 0; i < n; ++i) {
    const auto s = synthesize_sample(seed, i);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%04d", i);
    ManifestRecord rec;
    rec.image = out_dir / ("img_" + std::string(stem) + ".png");
    rec.roi = out_dir / ("roi_" + std::string(stem) + ".png");
    rec.binary = out_dir / ("bin_" + std::string(stem) + ".png");
    rec.multiclass = out_dir / ("mc_" + std::string(stem) + ".png");
    rec.split = i >= n - test_count ? Split::test : Split::train;
    save_image(s.image, rec.image);
    write_png(encode_binary(s.roi), *rec.roi);
    write_png(encode_binary(s.binary), *rec.binary);
    write_png(encode_multiclass(s.multiclass), *rec.multiclass);
    manifest.records.push_back(std::move(rec));
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace tssg
