#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "nbed/checkpoint.hpp"
#include "nbed/data.hpp"
#include "nbed/eval.hpp"
#include "nbed/image_io.hpp"
#include "test_support.hpp"

using namespace nbed;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

Run run_cli(const std::string& args, const fs::path& scratch, const std::string& env = "") {
  const fs::path log = scratch / "cli_output.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + quote(NBED_CLI_PATH) + " " + args + " > " + quote(log) + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.output.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_tiny_config(const fs::path& p) {
  std::ofstream(p) << "# tiny model\n"
                      "model.location_channels = 2,4\n"
                      "model.semantic_stage_blocks = 1,2,2\n"
                      "model.semantic_stage_channels = 12,24,48\n"
                      "model.decoder_base_channels = 4\n"
                      "model.attention_head_dim = 4\n"
                      "train.batch_size = 2\n";
}

// A synthetic dataset and a tiny config inside a fresh directory.
struct Workspace {
  testing::TempDir dir{"cli"};
  fs::path list, config;

  Workspace() {
    const Run r = run_cli("synth --out " + quote(dir / "data") + " --count 3 --size 32 --seed 2", dir.path());
    REQUIRE(r.code == 0);
    list = dir / "data" / "data.lst";
    config = dir / "tiny.cfg";
    write_tiny_config(config);
  }
};

}  // namespace

TEST_CASE("help exits zero for every command") {
  testing::TempDir dir("cli");
  for (const char* cmd : {"", "train ", "infer ", "eval ", "flops ", "synth "}) {
    const Run r = run_cli(std::string(cmd) + "--help", dir.path());
    CHECK(r.code == 0);
    CHECK(r.output.find("Usage") != std::string::npos);
  }
  CHECK(run_cli("bogus", dir.path()).code == 2);
  CHECK(run_cli("", dir.path()).code == 2);
}

TEST_CASE("train writes a checkpoint, a log and its config") {
  Workspace ws;
  const fs::path out = ws.dir / "run";
  const Run r = run_cli("train --config " + quote(ws.config) + " --set train.max_iterations=3 --data " + quote(ws.list) +
                         " --out " + quote(out),
                     ws.dir.path());
  REQUIRE(r.code == 0);
  const Checkpoint ckpt = load_checkpoint(out / "ckpt.nbed");
  CHECK(ckpt.iteration == 3);
  CHECK(ckpt.model_config.decoder_base_channels == 4);
  std::ifstream log(out / "log.csv");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 4);

  // The dumped config reproduces the run.
  const fs::path again = ws.dir / "again";
  REQUIRE(run_cli("train --config " + quote(out / "config.cfg") + " --out " + quote(again), ws.dir.path()).code == 0);
  CHECK(read_file(again / "config.cfg") == read_file(out / "config.cfg"));
  CHECK(read_file(again / "ckpt.nbed") == read_file(out / "ckpt.nbed"));
  CHECK(read_file(again / "log.csv") == read_file(out / "log.csv"));
}

TEST_CASE("zero iterations save the initial weights") {
  Workspace ws;
  const fs::path out = ws.dir / "init";
  REQUIRE(run_cli("train --config " + quote(ws.config) + " --set train.max_iterations=0 --set model.seed=11 --data " +
                   quote(ws.list) + " --out " + quote(out),
               ws.dir.path())
              .code == 0);
  const Checkpoint ckpt = load_checkpoint(out / "ckpt.nbed");
  ModelConfig mc = tiny_config();
  mc.seed = 11;
  CHECK(ckpt.params == checkpoint_from_params(build_model(mc)).params);
}

TEST_CASE("config errors exit with status 2") {
  Workspace ws;
  const Run unknown = run_cli("train --set train.nonsense=1 --data " + quote(ws.list) + " --out " + quote(ws.dir / "x"),
                           ws.dir.path());
  CHECK(unknown.code == 2);
  CHECK(unknown.output.find("train.nonsense") != std::string::npos);
  const Run bad = run_cli("train --set train.batch_size=zero --data " + quote(ws.list) + " --out " + quote(ws.dir / "x"),
                       ws.dir.path());
  CHECK(bad.code == 2);
  std::ofstream(ws.dir / "broken.cfg") << "model.seed = 1\nmodel.stem_kernel\n";
  const Run line = run_cli("train --config " + quote(ws.dir / "broken.cfg") + " --out " + quote(ws.dir / "x"),
                        ws.dir.path());
  CHECK(line.code == 2);
  CHECK(line.output.find("broken.cfg:2") != std::string::npos);
}

TEST_CASE("NBED_SEED overrides the configured seeds") {
  Workspace ws;
  const fs::path out = ws.dir / "seeded";
  REQUIRE(run_cli("train --config " + quote(ws.config) + " --set train.max_iterations=0 --data " + quote(ws.list) +
                   " --out " + quote(out),
               ws.dir.path(), "NBED_SEED=23")
              .code == 0);
  const std::string cfg = read_file(out / "config.cfg");
  CHECK(cfg.find("model.seed = 23") != std::string::npos);
  CHECK(cfg.find("train.seed = 23") != std::string::npos);

  REQUIRE(run_cli("synth --out " + quote(ws.dir / "s1") + " --count 1 --size 32 --seed 23", ws.dir.path()).code == 0);
  REQUIRE(run_cli("synth --out " + quote(ws.dir / "s2") + " --count 1 --size 32 --seed 4", ws.dir.path(), "NBED_SEED=23")
              .code == 0);
  CHECK(read_file(ws.dir / "s1" / "images" / "synth_0.png") == read_file(ws.dir / "s2" / "images" / "synth_0.png"));
}

TEST_CASE("infer over a directory, single and multi-scale") {
  Workspace ws;
  const fs::path run = ws.dir / "run";
  REQUIRE(run_cli("train --config " + quote(ws.config) + " --set train.max_iterations=1 --data " + quote(ws.list) +
                   " --out " + quote(run),
               ws.dir.path())
              .code == 0);
  const fs::path images = ws.dir / "data" / "images";
  const Run ss = run_cli("infer --ckpt " + quote(run / "ckpt.nbed") + " --input " + quote(images) + " --out " +
                          quote(ws.dir / "ss") + " --raw",
                      ws.dir.path());
  REQUIRE(ss.code == 0);
  for (int i = 0; i < 3; ++i) {
    const fs::path png = ws.dir / "ss" / ("synth_" + std::to_string(i) + ".png");
    REQUIRE(fs::exists(png));
    const Image8 map = read_image(png, 1);
    CHECK(map.height == 32);
    CHECK(map.width == 32);
    const Tensor raw = load_prediction(ws.dir / "ss" / ("synth_" + std::to_string(i) + ".nbed"));
    for (double v : raw.values()) CHECK((v >= 0.0 && v <= 1.0));
  }

  const Run ms = run_cli("infer --ckpt " + quote(run / "ckpt.nbed") + " --input " + quote(images) + " --out " +
                          quote(ws.dir / "ms") + " --ms --scales 1",
                      ws.dir.path());
  REQUIRE(ms.code == 0);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "synth_" + std::to_string(i) + ".png";
    CHECK(read_file(ws.dir / "ms" / name) == read_file(ws.dir / "ss" / name));
  }
  const Run ms3 = run_cli("infer --ckpt " + quote(run / "ckpt.nbed") + " --input " + quote(images / "synth_0.png") +
                           " --out " + quote(ws.dir / "ms3") + " --ms",
                       ws.dir.path());
  CHECK(ms3.code == 0);
  CHECK(fs::exists(ws.dir / "ms3" / "synth_0.png"));
}

TEST_CASE("infer failures") {
  Workspace ws;
  const fs::path bad_dir = ws.dir / "bad";
  fs::create_directories(bad_dir);
  std::ofstream(bad_dir / "broken.png") << "this is not a png";
  const Run missing = run_cli("infer --ckpt " + quote(ws.dir / "none.nbed") + " --input " + quote(bad_dir) + " --out " +
                               quote(ws.dir / "o"),
                           ws.dir.path());
  CHECK(missing.code == 2);

  save_checkpoint(checkpoint_from_params(build_model(tiny_config())), ws.dir / "ckpt.nbed");
  const Run corrupt = run_cli("infer --ckpt " + quote(ws.dir / "ckpt.nbed") + " --input " + quote(bad_dir) + " --out " +
                               quote(ws.dir / "o"),
                           ws.dir.path());
  CHECK(corrupt.code != 0);
  CHECK(corrupt.output.find("broken.png") != std::string::npos);
}

TEST_CASE("eval scores ground truth against itself") {
  Workspace ws;
  const fs::path pred = ws.dir / "pred";
  fs::create_directories(pred);
  for (int i = 0; i < 3; ++i) {
    const std::string id = "synth_" + std::to_string(i);
    fs::copy_file(ws.dir / "data" / "gt" / (id + "_0.png"), pred / (id + ".png"));
  }
  const Run r = run_cli("eval --pred " + quote(pred) + " --list " + quote(ws.list) + " --no-nms --out " +
                         quote(ws.dir / "report" / "pr.csv"),
                     ws.dir.path());
  REQUIRE(r.code == 0);
  CHECK(r.output.find("ODS=1.0000 OIS=1.0000") != std::string::npos);
  CHECK(fs::exists(ws.dir / "report" / "pr.csv"));
  CHECK(fs::exists(ws.dir / "report" / "pr.svg"));

  fs::remove(pred / "synth_1.png");
  const Run missing = run_cli("eval --pred " + quote(pred) + " --list " + quote(ws.list) + " --out " +
                               quote(ws.dir / "report" / "pr.csv"),
                           ws.dir.path());
  CHECK(missing.code == 2);
  CHECK(missing.output.find("synth_1") != std::string::npos);
}

TEST_CASE("flops reports the default profile") {
  testing::TempDir dir("cli");
  const Run r = run_cli("flops", dir.path());
  REQUIRE(r.code == 0);
  CHECK(r.output.find("parameters: 37128129") != std::string::npos);
  CHECK(r.output.find("location branch parameters: 5088") != std::string::npos);
  CHECK(r.output.find("GFLOPs at 481x321: 85.566") != std::string::npos);
}
