#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tlpatch/compositor.hpp"
#include "tlpatch/data_io.hpp"
#include "tlpatch/evaluator.hpp"

using namespace tlpatch;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "tlpatch_test_cli";

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

CliResult run_cli(const std::string& args)
{
    const fs::path out = kRoot / "stdout.txt";
    const fs::path err = kRoot / "stderr.txt";
    const std::string cmd = std::string(TLPATCH_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

nlohmann::json read_json(const fs::path& p)
{
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

class CliWorkflow : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        ASSERT_EQ(run_cli("render-synthetic --n 12 --seed 1 --out-dir " + (kRoot / "train").string()).code, 0);
        ASSERT_EQ(run_cli("render-synthetic --n 6 --seed 2 --out-dir " + (kRoot / "test").string()).code, 0);
        const CliResult r = run_cli("train --dataset " + (kRoot / "train").string() +
                                    " --patch-side 16 --max-updates 100 --seed 3 --out-dir " + (kRoot / "run").string());
        ASSERT_EQ(r.code, 0) << r.err;
    }

    static fs::path dir(const std::string& name) { return kRoot / name; }
};

}  // namespace

TEST(CliErrors, MissingDatasetIsConfigError)
{
    fs::create_directories(kRoot);
    const CliResult r = run_cli("train --out-dir " + (kRoot / "missing").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--dataset"), std::string::npos) << r.err;
}

TEST(CliErrors, UnknownConfigKeyIsConfigError)
{
    fs::create_directories(kRoot);
    const fs::path cfg = kRoot / "bad.ini";
    std::ofstream(cfg) << "dataset = nowhere\nmomentum = 0.9\n";
    const CliResult r = run_cli("train --config " + cfg.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("momentum"), std::string::npos) << r.err;
}

TEST(CliErrors, UnknownCommandAndBadValues)
{
    fs::create_directories(kRoot);
    EXPECT_EQ(run_cli("sharpen").code, 2);
    EXPECT_EQ(run_cli("").code, 2);
    EXPECT_EQ(run_cli("train --dataset x --profile hybrid").code, 2);
    EXPECT_EQ(run_cli("export-print --patch " + (kRoot / "nope").string()).code, 3);
    const CliResult help = run_cli("train --help");
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("--pgd-steps"), std::string::npos);
}

TEST_F(CliWorkflow, TrainWritesBundleLogAndConfig)
{
    EXPECT_TRUE(fs::exists(dir("run") / "patch" / "patch.npy"));
    EXPECT_TRUE(fs::exists(dir("run") / "train_config.ini"));
    const auto summary = read_json(dir("run") / "train_summary.json");
    EXPECT_EQ(summary["steps"], 100);
    EXPECT_EQ(summary["truncated"], true);
    std::ifstream log(dir("run") / "train_log.ndjson");
    int lines = 0;
    for (std::string line; std::getline(log, line);) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["step"], lines);
        ++lines;
    }
    EXPECT_EQ(lines, 100);
    const auto meta = read_json(dir("run") / "patch" / "patch.json");
    EXPECT_EQ(meta["attack_config"]["gamma"], 0.8);
    EXPECT_EQ(meta["attack_config"]["pgd_steps"], 10);
}

TEST_F(CliWorkflow, ProfileFlagsAndConfigFileResolve)
{
    const fs::path cfg = dir("phys.ini");
    std::ofstream(cfg) << "profile = physical\ngamma = 2.5\nmax-updates = 5\n";
    const CliResult r = run_cli("train --dataset " + dir("train").string() + " --config " + cfg.string() +
                                " --delta 0.001 --patch-side 8 --out-dir " + dir("phys").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto c = read_json(dir("phys") / "patch" / "patch.json")["attack_config"];
    EXPECT_EQ(c["alpha"], 1.0);
    EXPECT_EQ(c["beta"], 2.0);
    EXPECT_EQ(c["gamma"], 2.5);
    EXPECT_EQ(c["delta"], 0.001);
    EXPECT_EQ(c["eot"]["enabled"], true);
    EXPECT_EQ(c["max_updates"], 5);
}

TEST_F(CliWorkflow, CleanBaselineAndPatchedReports)
{
    const CliResult clean = run_cli("evaluate --dataset " + dir("test").string() + " --out-dir " + dir("eval_clean").string());
    ASSERT_EQ(clean.code, 0) << clean.err;
    const auto c = read_json(dir("eval_clean") / "report.json");
    EXPECT_EQ(c["flip_rate"], 0.0);
    EXPECT_TRUE(c["patched"].is_null());

    const std::string patched_args =
        "evaluate --dataset " + dir("test").string() + " --patch " + (dir("run") / "patch").string() + " --overlays";
    ASSERT_EQ(run_cli(patched_args + " --out-dir " + dir("eval_a").string()).code, 0);
    ASSERT_EQ(run_cli(patched_args + " --out-dir " + dir("eval_b").string()).code, 0);
    const auto a = read_json(dir("eval_a") / "report.json");
    EXPECT_EQ(a["clean"], c["clean"]);
    EXPECT_TRUE(a["patched"].is_object());
    EXPECT_EQ(slurp(dir("eval_a") / "report.json"), slurp(dir("eval_b") / "report.json"));
    EXPECT_TRUE(fs::exists(dir("eval_a") / "overlays" / "scene_00000_patched.png"));
}

TEST_F(CliWorkflow, TamperedPatchIsDataError)
{
    fs::copy(dir("run") / "patch", dir("tampered"), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    std::string npy = slurp(dir("tampered") / "patch.npy");
    npy.back() = static_cast<char>(npy.back() ^ 0x10);
    std::ofstream(dir("tampered") / "patch.npy", std::ios::binary) << npy;
    const CliResult r = run_cli("evaluate --dataset " + dir("test").string() + " --patch " + dir("tampered").string() +
                                " --out-dir " + dir("eval_t").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("hash"), std::string::npos) << r.err;
}

TEST_F(CliWorkflow, ExportPrintNamesPhysicalSize)
{
    const CliResult r = run_cli("export-print --patch " + (dir("run") / "patch").string() + " --dpi 72 --out-dir " +
                                dir("print").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("60x60cm"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(dir("print") / "patch_print_60x60cm_72dpi.png"));
}

TEST_F(CliWorkflow, ApplyOnlyTouchesPatchFootprints)
{
    const CliResult r = run_cli("apply --dataset " + dir("test").string() + " --patch " + (dir("run") / "patch").string() +
                                " --scale 2 --out-dir " + dir("applied_run").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto data = load_dataset(dir("test"), synthetic_class_map());
    for (const auto& sample : data) {
        const Image out = read_image(dir("applied_run") / "applied" / (sample.image_id + ".png"));
        std::vector<BBox> rects;
        for (const auto& g : sample.gt) {
            if (g.class_id != 0) continue;
            if (const auto p = placement_for(g.box, out.width(), out.height(), 2.0)) rects.push_back(p->rect);
        }
        bool changed = false;
        for (int y = 0; y < out.height(); ++y) {
            for (int x = 0; x < out.width(); ++x) {
                const bool inside = std::any_of(rects.begin(), rects.end(),
                                                [&](const BBox& b) {
                                                    return x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
                                                });
                for (int c = 0; c < 3; ++c) {
                    if (inside) {
                        changed = changed || out.at(x, y, c) != sample.image.at(x, y, c);
                    } else {
                        ASSERT_EQ(out.at(x, y, c), sample.image.at(x, y, c)) << sample.image_id;
                    }
                }
            }
        }
        EXPECT_EQ(changed, !rects.empty()) << sample.image_id;
    }
}

TEST(CliRender, HundredScenes)
{
    fs::create_directories(kRoot);
    const fs::path out = kRoot / "render100";
    fs::remove_all(out);
    const CliResult r = run_cli("render-synthetic --n 100 --seed 4 --out-dir " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    int png = 0, txt = 0;
    for (const auto& e : fs::directory_iterator(out)) {
        png += e.path().extension() == ".png";
        txt += e.path().extension() == ".txt" && e.path().filename() != "classes.txt";
    }
    EXPECT_EQ(png, 100);
    EXPECT_EQ(txt, 100);
    EXPECT_TRUE(fs::exists(out / "render-synthetic_config.ini"));
}
