#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "tlpatch/data_io.hpp"
#include "tlpatch/evaluator.hpp"
#include "test_support.hpp"

using namespace tlpatch;
namespace fs = std::filesystem;

namespace {

const ClassMap kRedGreen({"red", "green"}, "red_green");

fs::path fresh_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("tlpatch_test_data_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<GroundTruth> parse(const std::string& text, int w = 640, int h = 480)
{
    std::istringstream in(text);
    return parse_annotations(in, w, h, kRedGreen, "labels.txt");
}

std::string error_of(const std::string& text)
{
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

std::vector<unsigned char> read_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Annotations, CentreFormatExample)
{
    const auto boxes = parse("0 0.5 0.5 0.1 0.2\n");
    ASSERT_EQ(boxes.size(), 1u);
    EXPECT_EQ(boxes[0].class_id, 0);
    EXPECT_EQ(boxes[0].box, (BBox{288, 192, 352, 288}));
}

TEST(Annotations, EmptyFileHasNoBoxes)
{
    EXPECT_TRUE(parse("").empty());
    EXPECT_TRUE(parse("\n\n").empty());
}

TEST(Annotations, MalformedLinesAreRejectedWithLocation)
{
    const std::string wrong_fields = error_of("0 0.5 0.5 0.1 0.2\n1 0.5 0.5 0.1\n");
    EXPECT_NE(wrong_fields.find("labels.txt"), std::string::npos);
    EXPECT_NE(wrong_fields.find("2"), std::string::npos);
    EXPECT_FALSE(error_of("7 0.5 0.5 0.1 0.2\n").empty());
    EXPECT_FALSE(error_of("0 0.5 abc 0.1 0.2\n").empty());
    EXPECT_FALSE(error_of("0 1.5 0.5 0.1 0.2\n").empty());
}

TEST(Annotations, BoxesPastTheBorderAreClipped)
{
    const auto boxes = parse("1 0.99 0.5 0.1 0.1\n");
    ASSERT_EQ(boxes.size(), 1u);
    EXPECT_EQ(boxes[0].box.x_max, 640.0);
}

TEST(Annotations, FormatParseRoundTripWithinHalfPixel)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double x0 = 600 * u(rng), y0 = 440 * u(rng);
        const GroundTruth g{BBox{x0, y0, x0 + 1 + 39 * u(rng), y0 + 1 + 39 * u(rng)}, trial % 2};
        const auto back = parse(format_annotations(std::span(&g, 1), 640, 480));
        ASSERT_EQ(back.size(), 1u);
        EXPECT_EQ(back[0].class_id, g.class_id);
        EXPECT_NEAR(back[0].box.x_min, g.box.x_min, 0.5);
        EXPECT_NEAR(back[0].box.y_min, g.box.y_min, 0.5);
        EXPECT_NEAR(back[0].box.x_max, g.box.x_max, 0.5);
        EXPECT_NEAR(back[0].box.y_max, g.box.y_max, 0.5);
    }
}

TEST(Dataset, SaveLoadRoundTripIsExact)
{
    std::mt19937_64 rng(5);
    SceneOptions o;
    o.width = 160;
    o.height = 120;
    o.max_box_width = 20;
    const auto scenes = render_synthetic(5, o, rng);
    const fs::path dir = fresh_dir("dataset");
    save_dataset(scenes, dir, synthetic_class_map());
    EXPECT_TRUE(fs::exists(dir / "classes.txt"));
    const auto loaded = load_dataset(dir, load_class_map(dir / "classes.txt"));
    ASSERT_EQ(loaded.size(), scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        EXPECT_EQ(loaded[i].image_id, scenes[i].image_id);
        EXPECT_EQ(loaded[i].image, scenes[i].image);
        EXPECT_EQ(loaded[i].gt, scenes[i].gt);
    }
}

TEST(Dataset, MissingAnnotationIsAnError)
{
    const fs::path dir = fresh_dir("missing");
    write_image(Image(8, 8, 3, 0.5), dir / "a.png");
    EXPECT_THROW(load_dataset(dir, kRedGreen), DataError);
    EXPECT_THROW(load_dataset(dir / "nope", kRedGreen), DataError);
}

TEST(ClassMapFile, RoundTrip)
{
    const fs::path dir = fresh_dir("classes");
    save_class_map(kRedGreen, dir / "classes.txt");
    const ClassMap back = load_class_map(dir / "classes.txt");
    EXPECT_EQ(back.names(), kRedGreen.names());
}

TEST(Npy, RoundTripAndHeader)
{
    std::mt19937_64 rng(2);
    const Image img = tlpatch::testing::random_image(5, 4, 3, rng);
    const auto bytes = encode_npy(img);
    EXPECT_EQ(bytes[0], 0x93);
    EXPECT_EQ(std::string(bytes.begin() + 1, bytes.begin() + 6), "NUMPY");
    EXPECT_EQ(bytes.size() % 64, (5u * 4u * 3u * 8u) % 64);
    EXPECT_EQ(decode_npy(bytes), img);
    std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 8);
    EXPECT_THROW(decode_npy(cut), DataError);
}

TEST(Sha256, KnownDigest)
{
    const std::string abc = "abc";
    EXPECT_EQ(sha256_hex(std::span(reinterpret_cast<const unsigned char*>(abc.data()), abc.size())),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(PatchBundle, RoundTripIsBitIdentical)
{
    std::mt19937_64 rng(9);
    PatchBundle b{Patch(tlpatch::testing::random_image(16, 16, 3, rng)), {}};
    b.metadata.class_map = kRedGreen.map_name();
    b.metadata.class_names = kRedGreen.names();
    b.metadata.mapping = TargetClassMapping::parse("red:green", kRedGreen);
    b.metadata.config = physical_profile();
    b.metadata.training_set = "train";
    b.metadata.created_utc = utc_timestamp();
    const fs::path dir = fresh_dir("bundle");
    save_patch(b, dir);
    EXPECT_EQ(b.metadata.pixels_sha256.size(), 64u);
    EXPECT_TRUE(fs::exists(dir / "patch_preview.png"));

    const PatchBundle back = load_patch(dir);
    EXPECT_EQ(back.patch.pixels(), b.patch.pixels());
    EXPECT_EQ(back.metadata.config, b.metadata.config);
    EXPECT_EQ(back.metadata.config.pgd_steps, 10);
    EXPECT_EQ(back.metadata.config.learning_rate, 0.05);
    EXPECT_EQ(back.metadata.mapping.to_string(kRedGreen), "red:green");
    EXPECT_EQ(back.metadata.schema_version, kPatchSchemaVersion);
    EXPECT_EQ(back.metadata.pixels_sha256, sha256_hex(read_bytes(dir / "patch.npy")));
}

TEST(PatchBundle, TamperedPixelsAreDetected)
{
    PatchBundle b{Patch(8, 0.25), {}};
    b.metadata.class_names = kRedGreen.names();
    const fs::path dir = fresh_dir("tamper");
    save_patch(b, dir);
    auto bytes = read_bytes(dir / "patch.npy");
    bytes.back() ^= 0x01;
    std::ofstream(dir / "patch.npy", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                             static_cast<std::streamsize>(bytes.size()));
    EXPECT_THROW(load_patch(dir), IntegrityError);
}

TEST(PatchBundle, UnsupportedSchemaIsRejected)
{
    PatchBundle b{Patch(4, 0.5), {}};
    const fs::path dir = fresh_dir("schema");
    save_patch(b, dir);
    nlohmann::json j = metadata_json(b.metadata);
    j["schema_version"] = 99;
    std::ofstream(dir / "patch.json") << j.dump();
    EXPECT_THROW(load_patch(dir), DataError);
}

TEST(PrintPlan, SizesForStandardLightWidth)
{
    for (const auto& [factor, cm] : {std::pair{1.5, 45.0}, {2.0, 60.0}, {2.5, 75.0}}) {
        const PrintPlan p = plan_print(0.30, factor, 150);
        EXPECT_NEAR(p.side_m, 0.30 * factor, 1e-15);
        EXPECT_EQ(p.side_cm, cm);
        EXPECT_EQ(p.side_px, static_cast<int>(std::lround(0.30 * factor / 0.0254 * 150)));
    }
    EXPECT_EQ(plan_print(0.30, 2.0, 150).file_stem, "patch_print_60x60cm_150dpi");
    EXPECT_THROW(plan_print(0.30, 7.0, 150), ConfigError);
    EXPECT_THROW(plan_print(0.30, 2.0, 50), ConfigError);
}

TEST(PrintPlan, ExportWritesRasterAndSidecar)
{
    const fs::path dir = fresh_dir("print");
    const PrintPlan p = export_print(Patch(8, 0.5), 0.10, 2.0, 72, dir);
    const Image raster = read_image(dir / (p.file_stem + ".png"));
    EXPECT_EQ(raster.width(), p.side_px);
    EXPECT_EQ(raster.height(), p.side_px);
    std::ifstream sidecar(dir / (p.file_stem + ".json"));
    const auto j = nlohmann::json::parse(sidecar);
    EXPECT_EQ(j["side_cm"], 20.0);
}

TEST(Images, EightBitRoundTrip)
{
    Image img(3, 2, 3);
    for (std::size_t i = 0; i < img.values().size(); ++i) img.values()[i] = static_cast<double>(i * 13 % 256) / 255.0;
    const fs::path dir = fresh_dir("png");
    write_image(img, dir / "x.png");
    EXPECT_EQ(read_image(dir / "x.png"), img);
    EXPECT_THROW(read_image(dir / "absent.png"), DataError);
}
