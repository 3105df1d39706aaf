#include <doctest.h>

#include "tssg/dataio.hpp"
#include "tssg/random.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>

using namespace tssg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tssg_test_dataio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Raster rgb_raster(int w, int h, std::array<int, 3> color) {
  Raster r;
  r.width = w;
  r.height = h;
  r.channels = 3;
  for (int i = 0; i < w * h; ++i) {
    for (int c : color) r.samples.push_back(static_cast<std::uint16_t>(c));
  }
  return r;
}

}  // namespace

TEST_CASE("8-bit and 16-bit PNG round trips stay within half a quantization step") {
  const auto dir = scratch("png");
  Rng rng(1);
  ImagePlane plane(13, 17);
  for (Eigen::Index i = 0; i < plane.size(); ++i) plane.data()[i] = static_cast<float>(rng.uniform());
  save_image(plane, dir / "a8.png", 8);
  save_image(plane, dir / "a16.png", 16);
  const ImagePlane back8 = load_image(dir / "a8.png");
  const ImagePlane back16 = load_image(dir / "a16.png");
  REQUIRE(back8.rows() == 13);
  REQUIRE(back8.cols() == 17);
  CHECK((back8 - plane).abs().maxCoeff() <= 1.0 / 255 / 2 + 1e-7);
  CHECK((back16 - plane).abs().maxCoeff() <= 1.0 / 65535 / 2 + 1e-7);
  CHECK(read_png(dir / "a16.png").bit_depth == 16);
}

TEST_CASE("RGB input becomes luminance unless color is requested") {
  const auto dir = scratch("rgb");
  write_png(rgb_raster(4, 3, {255, 0, 0}), dir / "red.png");
  const ImagePlane gray = load_image(dir / "red.png");
  CHECK(gray(0, 0) == doctest::Approx(0.299).epsilon(1e-6));
  const RgbImage color = load_rgb_image(dir / "red.png");
  CHECK(color.channels[0](1, 1) == 1.0f);
  CHECK(color.channels[1](1, 1) == 0.0f);
}

TEST_CASE("truncated or foreign files fail cleanly") {
  const auto dir = scratch("trunc");
  ImagePlane plane = ImagePlane::Constant(32, 32, 0.5f);
  save_image(plane, dir / "ok.png");
  auto bytes = file_bytes(dir / "ok.png");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "cut.png", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_image(dir / "cut.png"), ImageIoError);
  std::ofstream(dir / "text.png") << "hello";
  CHECK_THROWS_AS(load_image(dir / "text.png"), ImageIoError);
  CHECK_THROWS_AS(load_image(dir / "missing.png"), ImageIoError);
  try {
    load_image(dir / "cut.png");
  } catch (const ImageIoError& e) {
    CHECK(std::string(e.what()).find("cut.png") != std::string::npos);
  }
}

TEST_CASE("multiclass color codec") {
  CHECK(decode_multiclass(rgb_raster(3, 3, {255, 0, 0})).labels == std::vector<std::int32_t>(9, 1));
  CHECK(decode_multiclass(rgb_raster(2, 2, {240, 10, 5})).labels == std::vector<std::int32_t>(4, 1));
  CHECK(decode_multiclass(rgb_raster(2, 2, {5, 230, 20})).labels == std::vector<std::int32_t>(4, 2));
  CHECK(MaskCodec::classify(225, 0, 0) == 1);
  CHECK(MaskCodec::classify(224, 0, 0) == -1);
  try {
    decode_multiclass(rgb_raster(4, 4, {128, 128, 0}));
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(128,128,0) x16") != std::string::npos);
  }
  Raster gray;
  gray.width = gray.height = 2;
  gray.samples.assign(4, 0);
  CHECK_THROWS_AS(decode_multiclass(gray), DataError);

  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    LabelMask m(rng.uniform_int(1, 12), rng.uniform_int(1, 12));
    for (auto& v : m.labels) v = rng.uniform_int(0, 2);
    CHECK(decode_multiclass(encode_multiclass(m)) == m);
  }
  LabelMask bad(1, 1, 3);
  CHECK_THROWS_AS(encode_multiclass(bad), DataError);
}

TEST_CASE("binary mask codec") {
  LabelMask m(3, 5);
  m(1, 2) = m(2, 4) = 1;
  const Raster r = encode_binary(m);
  CHECK(r.samples[1 * 5 + 2] == 255);
  CHECK(decode_binary(r) == m);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  auto net = build_network<float>(NetworkConfig::miniature(3), 5);
  Rng rng(3);
  net.for_each_tensor([&](const std::string&, TensorF& t, bool) {
    for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  });
  // A few awkward bit patterns.
  net.decoder[0].back().bias[0] = -0.0f;
  net.decoder[0].back().bias[1] = std::numeric_limits<float>::denorm_min();
  CheckpointMeta meta{"multiclass", 42, 0x0123456789abcdefULL, {{"epochs", "20"}, {"lr", "0.001"}}};

  const auto bytes = serialize_checkpoint(net, meta);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "TSSG"));
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.params == net);
  CHECK(back.meta == meta);
  CHECK(std::signbit(back.params.decoder[0].back().bias[0]));
  CHECK(serialize_checkpoint(back.params, back.meta) == bytes);

  const auto dir = scratch("ckpt");
  save_checkpoint(net, meta, dir / "m.tssg");
  const auto loaded = load_checkpoint(dir / "m.tssg");
  CHECK(loaded.params == net);
}

TEST_CASE("corrupt checkpoints are refused") {
  const auto net = build_network<float>(NetworkConfig::miniature(), 5);
  const auto good = serialize_checkpoint(net, {"roi", 1, 2, {}});

  auto flipped = good;
  flipped[0] ^= 0x01;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(flipped), doctest::Contains("magic"), DataError);

  auto version = good;
  version[4] = 2;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(version), doctest::Contains("version"), DataError);

  auto truncated = good;
  truncated.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), DataError);

  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), DataError);

  // Locate the first payload-length field (name "a.enc0.conv0.kernel") and
  // make it disagree with the shape.
  const std::string name = "a.enc0.conv0.kernel";
  const auto it = std::search(good.begin(), good.end(), name.begin(), name.end());
  REQUIRE(it != good.end());
  auto pos = static_cast<std::size_t>(it - good.begin()) + name.size();
  pos += 1 + 1 + 4 * 4;  // dtype, rank, dims
  auto bad_len = good;
  bad_len[pos] = static_cast<std::uint8_t>(bad_len[pos] + 4);
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad_len), doctest::Contains("payload"), DataError);

  auto bad_shape = good;
  bad_shape[pos - 4] = 5;  // last kernel dim 3 -> 5
  CHECK_THROWS_AS(deserialize_checkpoint(bad_shape), DataError);
}

TEST_CASE("manifest round trip and validation") {
  const auto dir = scratch("manifest");
  const auto m = generate_synthetic_dataset(3, 9, dir, 1);
  const auto back = load_manifest(dir / "manifest.tsv");
  REQUIRE(back.records.size() == 3);
  CHECK(back.records[2].split == Split::test);
  CHECK(fs::equivalent(back.records[0].image, m.records[0].image));
  CHECK(fs::equivalent(*back.records[1].multiclass, *m.records[1].multiclass));

  std::ofstream(dir / "bad1.tsv") << "img_0000.png\t-\t-\t-\ttrain\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir / "bad1.tsv"), doctest::Contains("no mask"), DataError);
  std::ofstream(dir / "bad2.tsv") << "img_0000.png\troi_9999.png\t-\t-\ttrain\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir / "bad2.tsv"), doctest::Contains("roi_9999.png"), DataError);
  std::ofstream(dir / "bad3.tsv") << "img_0000.png\troi_0000.png\t-\t-\tval\n";
  CHECK_THROWS_AS(load_manifest(dir / "bad3.tsv"), DataError);
  std::ofstream(dir / "bad4.tsv") << "img_0000.png roi_0000.png\n";
  CHECK_THROWS_AS(load_manifest(dir / "bad4.tsv"), DataError);

  const auto train = load_samples(back, Split::train);
  const auto test = load_samples(back, Split::test);
  CHECK(train.size() == 2);
  CHECK(test.size() == 1);
  CHECK(dataset_fingerprint(train) != dataset_fingerprint(test));
  CHECK(dataset_fingerprint(train) == dataset_fingerprint(load_samples(back, Split::train)));
}

TEST_CASE("synthetic dataset is deterministic and self-consistent") {
  const auto d1 = scratch("synth1"), d2 = scratch("synth2");
  generate_synthetic_dataset(4, 77, d1);
  generate_synthetic_dataset(4, 77, d2);
  int files = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    CHECK(file_bytes(e.path()) == file_bytes(d2 / e.path().filename()));
    ++files;
  }
  CHECK(files == 4 * 4 + 1);

  // Stored masks decode back to the in-memory ones.
  const auto samples = load_samples(load_manifest(d1 / "manifest.tsv"));
  for (int i = 0; i < 4; ++i) {
    const auto s = synthesize_sample(77, i);
    CHECK(*samples[static_cast<std::size_t>(i)].roi == s.roi);
    CHECK(*samples[static_cast<std::size_t>(i)].multiclass == s.multiclass);
  }
  CHECK_THROWS_AS(generate_synthetic_dataset(0, 1, d1), std::invalid_argument);
}

TEST_CASE("synthetic masks nest and the lesion classes are balanced") {
  long class1 = 0, class2 = 0;
  for (int i = 0; i < 500; ++i) {
    const auto s = synthesize_sample(42, i);
    bool nested = true, consistent = true;
    int lesions = 0;
    for (int y = 0; y < kSyntheticSize; ++y) {
      for (int x = 0; x < kSyntheticSize; ++x) {
        if (s.binary(y, x) && !s.roi(y, x)) nested = false;
        if ((s.multiclass(y, x) != 0) != (s.binary(y, x) != 0)) consistent = false;
        lesions += s.binary(y, x);
        class1 += s.multiclass(y, x) == 1;
        class2 += s.multiclass(y, x) == 2;
      }
    }
    CHECK(nested);
    CHECK(consistent);
    CHECK(lesions > 0);
  }
  const double share = static_cast<double>(class1) / static_cast<double>(class1 + class2);
  CHECK(share >= 0.45);
  CHECK(share <= 0.55);
}
