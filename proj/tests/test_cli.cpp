#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "cvsa/image.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kBin = CVSA_BIN;

struct RunResult {
  int exit_code;
  std::string output;  // stdout+stderr
};

RunResult run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "cvsa_cli_out.txt";
  const std::string cmd = kBin + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::string output((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  int code = -1;
#ifdef WIFEXITED
  if (WIFEXITED(status)) code = WEXITSTATUS(status);
#else
  code = status;
#endif
  return {code, output};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return cvsa::read_file(a) == cvsa::read_file(b);
}

}  // namespace

TEST_CASE("gen-synth and boxfind") {
  const fs::path dir = fresh_dir("cvsa_cli_synth");
  RunResult r = run("gen-synth --n 6 --classes 2 --size 32 --seed 5 --out-dir " +
                    (dir / "corpus").string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "corpus" / "annotations.jsonl"));
  CHECK(fs::exists(dir / "corpus" / "labels.jsonl"));
  CHECK(fs::exists(dir / "corpus" / "config.resolved.json"));

  RunResult box = run("boxfind --in " + (dir / "corpus" / "img_00000.png").string() +
                      " --mode gt --annotations " + (dir / "corpus" / "annotations.jsonl").string());
  CHECK(box.exit_code == 0);
  CHECK(box.output.find("\"box\"") != std::string::npos);

  RunResult excess = run("boxfind --in " + (dir / "corpus" / "img_00000.png").string() +
                         " --mode excess");
  CHECK(excess.exit_code == 0);

  // a grayscale file is treated as a ready saliency map
  {
    cvsa::RawImage8 gray{12, 12, 1, std::vector<std::uint8_t>(144, 0)};
    for (std::size_t y = 3; y < 8; ++y)
      for (std::size_t x = 2; x < 6; ++x) gray.pixels[y * 12 + x] = 255;
    cvsa::save_gray8(gray, dir / "map.pgm");
    RunResult from_map = run("boxfind --in " + (dir / "map.pgm").string() + " --mode excess");
    CHECK(from_map.exit_code == 0);
    CHECK(from_map.output.find("[2,3,4,5]") != std::string::npos);
  }
}

TEST_CASE("saliency command") {
  const fs::path dir = fresh_dir("cvsa_cli_sal");
  run("gen-synth --n 2 --classes 2 --size 32 --seed 6 --out-dir " + (dir / "c").string());
  const std::string img = (dir / "c" / "img_00000.png").string();

  SUBCASE("spectral source writes the map and prints a box") {
    RunResult r = run("saliency --in " + img + " --source spectral --out " +
                      (dir / "map.png").string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("\"box\"") != std::string::npos);
    const cvsa::RawImage8 raw = cvsa::load_gray8(dir / "map.png");
    CHECK(raw.width == 32);
    CHECK(raw.height == 32);
  }
  SUBCASE("gt source without annotations exits 2") {
    RunResult r = run("saliency --in " + img + " --source gt");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("cvsa-error:") != std::string::npos);
  }
  SUBCASE("missing input file is a runtime error") {
    RunResult r = run("saliency --in " + (dir / "nope.png").string() + " --source spectral");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("cvsa-error:") != std::string::npos);
  }
}

TEST_CASE("augment command writes view pairs deterministically") {
  const fs::path dir = fresh_dir("cvsa_cli_aug");
  run("gen-synth --n 4 --classes 2 --size 32 --seed 8 --out-dir " + (dir / "c").string());
  const std::string base = "augment --input-dir " + (dir / "c").string() +
                           " --mode same --lambda 0.5 --seed 3 --out-dir ";
  CHECK(run(base + (dir / "o1").string()).exit_code == 0);
  CHECK(run(base + (dir / "o2").string()).exit_code == 0);
  for (const char* suffix : {"_q.png", "_k.png", "_mq.png", "_mk.png"}) {
    const std::string name = std::string("img_00000") + suffix;
    CHECK(fs::exists(dir / "o1" / name));
    CHECK(same_bytes(dir / "o1" / name, dir / "o2" / name));
  }
  CHECK(fs::exists(dir / "o1" / "config.resolved.json"));
}

TEST_CASE("pretrain command") {
  const fs::path dir = fresh_dir("cvsa_cli_train");
  run("gen-synth --n 6 --classes 2 --size 16 --seed 9 --out-dir " + (dir / "c").string());
  const std::string tiny_model = " --channels 4 --channels 6 --embed-dim 4 --mlp-hidden 16 "
                                 "--conv-hidden 5 --align-stage 2 --batch-size 2";

  SUBCASE("stage 2 without --init is guarded") {
    RunResult r = run("pretrain --stage 2 --data " + (dir / "c").string() + " --out " +
                      (dir / "x").string() + tiny_model + " --total-steps 1");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("allow-scratch") != std::string::npos);
  }
  SUBCASE("zero steps produce the initialization; identical runs are byte-identical") {
    const std::string cmd = "pretrain --stage 1 --data " + (dir / "c").string() + tiny_model +
                            " --total-steps 0 --seed 4 --out ";
    CHECK(run(cmd + (dir / "a").string()).exit_code == 0);
    CHECK(run(cmd + (dir / "b").string()).exit_code == 0);
    CHECK(same_bytes(dir / "a" / "ckpt.bin", dir / "b" / "ckpt.bin"));
    CHECK(same_bytes(dir / "a" / "ckpt.json", dir / "b" / "ckpt.json"));
  }
  SUBCASE("config file merge honors explicit flags and rejects unknown keys") {
    {
      std::ofstream cfg(dir / "run.json");
      cfg << R"({"stage": 1, "total-steps": 1, "seed": 12, "batch-size": 2,
                 "channels": [4, 6], "embed-dim": 4, "mlp-hidden": 16,
                 "conv-hidden": 5, "align-stage": 2})";
    }
    RunResult r = run("pretrain --config " + (dir / "run.json").string() + " --data " +
                      (dir / "c").string() + " --out " + (dir / "cfg_run").string() + " --seed 13");
    CHECK(r.exit_code == 0);
    const auto resolved = cvsa::read_file(dir / "cfg_run" / "config.resolved.json");
    const std::string text(resolved.begin(), resolved.end());
    CHECK(text.find("\"seed\": 13") != std::string::npos);       // flag wins
    CHECK(text.find("\"total-steps\": 1") != std::string::npos); // file value applied

    {
      std::ofstream cfg(dir / "bad.json");
      cfg << R"({"stage": 1, "no-such-key": 5})";
    }
    RunResult bad = run("pretrain --config " + (dir / "bad.json").string() + " --data " +
                        (dir / "c").string() + " --out " + (dir / "y").string());
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("no-such-key") != std::string::npos);
  }
  SUBCASE("stop-at plus resume equals the uninterrupted run") {
    const std::string common = " --data " + (dir / "c").string() + tiny_model +
                               " --total-steps 4 --seed 21 ";
    CHECK(run("pretrain --stage 1" + common + "--out " + (dir / "full").string()).exit_code == 0);
    CHECK(run("pretrain --stage 1" + common + "--stop-at 2 --out " + (dir / "half").string())
              .exit_code == 0);
    CHECK(run("pretrain --resume --init " + (dir / "half").string() + common + "--out " +
              (dir / "res").string())
              .exit_code == 0);
    CHECK(same_bytes(dir / "full" / "ckpt.bin", dir / "res" / "ckpt.bin"));
  }
}

TEST_CASE("eval command errors") {
  const fs::path dir = fresh_dir("cvsa_cli_eval");
  run("gen-synth --n 4 --classes 2 --size 16 --seed 10 --out-dir " + (dir / "c").string());
  run("pretrain --stage 1 --data " + (dir / "c").string() +
      " --channels 4 --channels 6 --embed-dim 4 --mlp-hidden 16 --conv-hidden 5 --align-stage 2 "
      "--batch-size 2 --total-steps 0 --seed 4 --out " + (dir / "ck").string());

  SUBCASE("localize works and prints a value") {
    RunResult r = run("eval --task localize --ckpt " + (dir / "ck").string() + " --data " +
                      (dir / "c").string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("box_acc") != std::string::npos);
  }
  SUBCASE("single-class corpus fails the linear task") {
    // rewrite labels to one class
    std::ofstream labels(dir / "c" / "labels.jsonl", std::ios::trunc);
    for (int i = 0; i < 4; ++i) {
      labels << "{\"image\": \"img_0000" << i << ".png\", \"label\": 0}\n";
    }
    labels.close();
    RunResult r = run("eval --task linear --ckpt " + (dir / "ck").string() + " --data " +
                      (dir / "c").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("cvsa-error:") != std::string::npos);
  }
  SUBCASE("unknown task exits 2") {
    RunResult r = run("eval --task frobnicate --ckpt x --data y");
    CHECK(r.exit_code == 2);
  }
}

TEST_CASE("selfcheck") {
  SUBCASE("fresh build passes") {
    RunResult r = run("selfcheck");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("FAIL") == std::string::npos);
  }
  SUBCASE("an injected sigmoid-gradient fault is caught and named") {
    RunResult r = run("selfcheck --inject-sigmoid-fault");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("grad/sigmoid") != std::string::npos);
    CHECK(r.output.find("FAIL") != std::string::npos);
  }
  SUBCASE("seed varies inputs but not outcomes") {
    CHECK(run("selfcheck --seed 41").exit_code == 0);
    CHECK(run("selfcheck --seed 42").exit_code == 0);
  }
}
