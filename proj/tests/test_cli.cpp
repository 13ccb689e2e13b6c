#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    std::string cmd = std::string(INFOSEG_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("infoseg-cli-" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("end-to-end: synth, train, eval, segment") {
    fs::path work = fresh_dir("e2e");
    fs::path data = work / "data";
    fs::path run_dir = work / "run";

    REQUIRE(run("synth --out " + data.string() + " --train 16 --eval 4 --size 16 --seed 3") ==
            0);
    CHECK(fs::exists(data / "meta.json"));
    CHECK(fs::exists(data / "splits.json"));
    CHECK(fs::exists(data / "images" / "synth-0.png"));
    CHECK(fs::exists(data / "labels" / "synth-0.png"));

    // Refuses to overwrite without --force.
    CHECK(run("synth --out " + data.string() + " --train 1 --eval 1 --size 16") == 3);

    REQUIRE(run("train --data " + data.string() + " --run-dir " + run_dir.string() +
                " --steps 2 --batch-size 4 --feature-dim 8 --block-a 4 6 6 8 --block-b 8 8" +
                " --checkpoint-every 2 --seed 1") == 0);
    CHECK(fs::exists(run_dir / "manifest.json"));
    CHECK(fs::exists(run_dir / "metrics.jsonl"));
    fs::path ckpt = run_dir / "step-2.ckpt";
    REQUIRE(fs::exists(ckpt));

    fs::path eval_dir = work / "eval";
    REQUIRE(run("eval --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " +
                eval_dir.string()) == 0);
    CHECK(fs::exists(eval_dir / "metrics.json"));
    CHECK(fs::exists(eval_dir / "confusion.csv"));
    CHECK(fs::exists(eval_dir / "segmentations" / "synth-16.png"));

    fs::path seg = work / "seg.png";
    REQUIRE(run("segment --checkpoint " + ckpt.string() + " --image " +
                (data / "images" / "synth-0.png").string() + " --out " + seg.string()) == 0);
    CHECK(fs::exists(seg));
}

TEST_CASE("exit codes distinguish error classes") {
    fs::path work = fresh_dir("errors");
    // Missing dataset root -> data error.
    CHECK(run("train --data " + (work / "nope").string() + " --run-dir " +
              (work / "r").string() + " --steps 1") == 3);
    // Unknown subcommand -> CLI parse failure (generic nonzero).
    CHECK(run("frobnicate") != 0);

    fs::path data = work / "data";
    REQUIRE(run("synth --out " + data.string() + " --train 8 --eval 2 --size 16") == 0);
    // Invalid hyperparameter -> config error.
    CHECK(run("train --data " + data.string() + " --run-dir " + (work / "r2").string() +
              " --steps 1 --batch-size 1") == 2);
    CHECK(run("train --data " + data.string() + " --run-dir " + (work / "r3").string() +
              " --steps 1 --batch-size 4 --tau -1") == 2);
}
