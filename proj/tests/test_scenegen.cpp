#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tinyema/errors.hpp"
#include "tinyema/image_io.hpp"
#include "tinyema/manifest.hpp"
#include "tinyema/random.hpp"
#include "tinyema/scenegen.hpp"

using namespace tinyema;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tinyema_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Scene, EmptySpecIsConstantBackground) {
    SceneSpec s;
    s.width = 32;
    s.height = 24;
    s.n_objects = 0;
    s.background_level = 0.45;
    const auto scene = generate_scene(s);
    EXPECT_TRUE(scene.annotations.empty());
    for (double v : scene.image.pixels()) EXPECT_DOUBLE_EQ(v, 0.45);
}

TEST(Scene, DeterministicForSameSpec) {
    SceneSpec s;
    s.width = 128;
    s.height = 128;
    s.n_objects = 20;
    s.texture = {0.1, 16.0, 3};
    s.sensor_noise = 0.02;
    s.distractors = 5;
    s.seed = 9;
    const auto a = generate_scene(s);
    const auto b = generate_scene(s);
    EXPECT_EQ(a.image, b.image);
    ASSERT_EQ(a.annotations.size(), b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) {
        EXPECT_EQ(a.annotations[i].center.x, b.annotations[i].center.x);
        EXPECT_EQ(a.annotations[i].box, b.annotations[i].box);
    }
}

TEST(Scene, HundredObjectsRespectSeparation) {
    SceneSpec s;
    s.n_objects = 100;
    s.min_separation = 10.0;
    s.seed = 3;
    const auto scene = generate_scene(s);
    ASSERT_EQ(scene.annotations.size(), 100u);
    for (std::size_t a = 0; a < 100; ++a) {
        const auto& p = scene.annotations[a];
        EXPECT_GE(p.center.x, 0.0);
        EXPECT_LT(p.center.x, 512.0);
        EXPECT_NEAR(p.box.w, 2 * p.radius, 1e-12);
        for (std::size_t b = a + 1; b < 100; ++b) {
            const auto& q = scene.annotations[b].center;
            EXPECT_GE(std::hypot(p.center.x - q.x, p.center.y - q.y), 10.0);
        }
    }
    for (double v : scene.image.pixels()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Scene, ObjectsAreDarkerThanBackground) {
    SceneSpec s;
    s.width = 64;
    s.height = 64;
    s.n_objects = 3;
    s.seed = 4;
    const auto scene = generate_scene(s);
    for (const auto& a : scene.annotations) {
        EXPECT_LT(scene.image.at(int(a.center.x), int(a.center.y)), s.background_level - 0.1);
    }
}

TEST(Scene, ImpossiblePackingAndBadSpecsThrow) {
    SceneSpec s;
    s.width = 16;
    s.height = 16;
    s.n_objects = 50;
    s.min_separation = 10.0;
    EXPECT_THROW(generate_scene(s), GenerationError);
    SceneSpec bad;
    bad.n_objects = -1;
    EXPECT_THROW(generate_scene(bad), ArgumentError);
}

TEST(Scene, ValueNoiseStaysInRange) {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
        const double v = value_noise(rng.uniform(0, 500), rng.uniform(0, 500), 24.0, 4, 77);
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Tiers, UnknownTierThrows) {
    EXPECT_THROW(tier_scene_spec("foggy", DatasetConfig{}, 1), ArgumentError);
    for (const auto& t : default_tiers()) EXPECT_NO_THROW(tier_scene_spec(t, DatasetConfig{}, 1));
}

TEST(Dataset, FourImagesOnePerTier) {
    DatasetConfig c;
    c.n_images = 4;
    c.width = 96;
    c.height = 96;
    c.mean_objects = 10;
    const auto dir = scratch_dir("four");
    const auto m = generate_dataset(c, dir);
    ASSERT_EQ(m.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(m.records[i].tier, default_tiers()[i]);
        EXPECT_TRUE(fs::exists(m.image_path(i)));
    }
    EXPECT_TRUE(fs::exists(dir / "manifest.jsonl"));
}

TEST(Dataset, ObjectCountWithinJitterBounds) {
    DatasetConfig c;
    c.n_images = 250;
    c.width = 512;
    c.height = 512;
    const auto mem = render_dataset(c);
    const double count = static_cast<double>(mem.manifest.object_count());
    EXPECT_GE(count, 90.0 * 250 * 0.9);
    EXPECT_LE(count, 110.0 * 250 * 1.1);
}

TEST(Dataset, RerunGivesByteIdenticalManifestAndMatchesMemory) {
    DatasetConfig c;
    c.n_images = 3;
    c.width = 64;
    c.height = 64;
    c.mean_objects = 8;
    const auto a = scratch_dir("rerun_a");
    const auto b = scratch_dir("rerun_b");
    generate_dataset(c, a);
    generate_dataset(c, b);
    EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
    const auto mem = render_dataset(c);
    const auto disk = read_manifest(a / "manifest.jsonl");
    ASSERT_EQ(disk.size(), mem.manifest.size());
    for (std::size_t i = 0; i < disk.size(); ++i) {
        EXPECT_EQ(disk.records[i], mem.manifest.records[i]);
        const auto img = read_pgm(disk.image_path(i));
        ASSERT_EQ(img.size(), mem.images[i].size());
        for (std::size_t p = 0; p < img.size(); ++p) EXPECT_NEAR(img.pixels()[p], mem.images[i].pixels()[p], 1e-12);
    }
}

TEST(Pgm, RoundTripAtBothDepths) {
    Rng rng(1);
    ImageBuffer img(13, 7);
    for (double& v : img.pixels()) v = rng.uniform();
    const auto dir = scratch_dir("pgm");
    for (int depth : {8, 16}) {
        const auto path = dir / ("img" + std::to_string(depth) + ".pgm");
        write_pgm(path, img, depth);
        const auto back = read_pgm(path);
        ASSERT_EQ(back.width(), 13);
        ASSERT_EQ(back.height(), 7);
        const double step = depth == 8 ? 1.0 / 255 : 1.0 / 65535;
        for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back.pixels()[i] - img.pixels()[i]), 0.5 * step + 1e-12);
    }
    EXPECT_THROW(write_pgm(dir / "x.pgm", img, 12), IoError);
    EXPECT_THROW(read_pgm(dir / "missing.pgm"), IoError);
    std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
    EXPECT_THROW(read_pgm(dir / "bad.pgm"), IoError);
}

TEST(Png, WritesSignature) {
    const auto dir = scratch_dir("png");
    write_png(dir / "a.png", ImageBuffer(8, 8, 0.5), 8);
    write_png(dir / "b.png", ImageBuffer(8, 8, 0.5), 16);
    for (const char* n : {"a.png", "b.png"}) EXPECT_EQ(slurp(dir / n).substr(1, 3), "PNG");
}

TEST(Manifest, LineRoundTrip) {
    ManifestRecord r;
    r.image = "images/img_0001.pgm";
    r.width = 512;
    r.height = 256;
    r.objects = {{1.5, 2.25, 6, 6}, {100.125, 7, 5.5, 5.5}};
    r.tier = "low_contrast";
    r.seed = 18446744073709551615ULL;
    const auto line = manifest_line(r);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    EXPECT_EQ(line.rfind("{\"image\"", 0), 0u);
    EXPECT_EQ(parse_manifest_line(line), r);
    EXPECT_THROW(parse_manifest_line("{\"image\":1}"), std::exception);
    EXPECT_THROW(read_manifest(scratch_dir("nomf") / "manifest.jsonl"), IoError);
}
