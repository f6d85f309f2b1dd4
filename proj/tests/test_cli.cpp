#include "elastica/identify.hpp"
#include "elastica/io.hpp"
#include "elastica/renderer.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>

using namespace elastica;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "elastica-cli";

struct Run {
  int exit = -1;
  std::string out, err;
};

Run cli(const std::string& args) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = "cd " + kWork.string() + " && " + ELASTICA_CLI + " " + args + " > " + out.string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::string file(const std::string& name) { return read_text_file(kWork / name); }

struct Fresh {
  Fresh() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

const std::string kGen = "gen --objects 3 --samples 2 --seed 7 --anchors 24 --gaussians 96 --res 24 --jobs 2 --out ";

}  // namespace

TEST_CASE_FIXTURE(Fresh, "gen counts bundles and rows") {
  const auto r = cli("gen --objects 2 --samples 1 --out d --seed 7 --anchors 32 --gaussians 64 --res 16");
  REQUIRE(r.exit == 0);
  const auto manifest = json::parse(file("d/manifest.json"));
  CHECK(manifest.size() == 2u);
  int bundles = 0;
  for (const auto& e : fs::recursive_directory_iterator(kWork / "d")) bundles += e.path().filename() == "bundle.json";
  CHECK(bundles == 2);
}

TEST_CASE_FIXTURE(Fresh, "simulate then render") {
  REQUIRE(cli("gen --objects 1 --samples 1 --out d --seed 3 --anchors 32 --gaussians 128 --no-views").exit == 0);
  const std::string bundle = "d/" + json::parse(file("d/manifest.json"))[0]["path"].get<std::string>();
  REQUIRE(cli("simulate --bundle " + bundle + " --frames 12 --out t.bin").exit == 0);
  CHECK(load_trajectory(kWork / "t.bin").size() == 12u);
  REQUIRE(cli("render --bundle " + bundle + " --traj t.bin --view +x --out frames --res 32").exit == 0);
  int count = 0;
  for (const auto& e : fs::directory_iterator(kWork / "frames")) {
    ++count;
    const Image img = read_png(e.path());
    CHECK(img.channels[0].maxCoeff() > 0.0);  // not all background
  }
  CHECK(count == 12);
}

TEST_CASE_FIXTURE(Fresh, "identify is exact at the true parameters and reproducible") {
  REQUIRE(cli("gen --objects 1 --samples 1 --out d --seed 5 --anchors 24 --gaussians 64 --no-views").exit == 0);
  const std::string bundle = "d/" + json::parse(file("d/manifest.json"))[0]["path"].get<std::string>();
  save_attributes(kWork / "mid.json", PhysicalAttributes::FromVector(ParameterRanges{}.midpoint()));
  REQUIRE(cli("simulate --bundle " + bundle + " --frames 21 --params mid.json --out obs.json").exit == 0);
  REQUIRE(cli("identify --bundle " + bundle + " --observed obs.json --iters 3 --seed 1 --out p.json --dump-grads g.json").exit == 0);
  const std::string csv = file("p_loss.csv");
  const auto row = csv.substr(csv.find('\n') + 1);
  CHECK(std::stod(row.substr(row.find(',') + 1)) < 1e-9);
  const auto grads = json::parse(file("g.json"));
  CHECK(grads.contains("final"));
  CHECK(grads["history"].size() >= 1u);

  REQUIRE(cli("simulate --bundle " + bundle + " --frames 21 --out obs2.json").exit == 0);
  REQUIRE(cli("identify --bundle " + bundle + " --observed obs2.json --iters 20 --seed 4 --out a.json").exit == 0);
  REQUIRE(cli("identify --bundle " + bundle + " --observed obs2.json --iters 20 --seed 4 --out b.json").exit == 0);
  CHECK(file("a.json") == file("b.json"));
  CHECK(file("a_loss.csv") == file("b_loss.csv"));
}

TEST_CASE_FIXTURE(Fresh, "gen, train, predict and eval are byte-reproducible") {
  REQUIRE(cli(kGen + "d1").exit == 0);
  REQUIRE(cli(kGen + "d2").exit == 0);
  CHECK(file("d1/manifest.json") == file("d2/manifest.json"));

  const std::string train = "train --manifest d1/manifest.json --epochs 2 --batch 2 --seed 9 --jobs 2 --out ";
  REQUIRE(cli(train + "m1.json").exit == 0);
  REQUIRE(cli(train + "m2.json").exit == 0);
  CHECK(file("m1.json") == file("m2.json"));
  CHECK(file("m1_loss.csv") == file("m2_loss.csv"));

  const std::string bundle = "d1/" + json::parse(file("d1/manifest.json"))[0]["path"].get<std::string>();
  REQUIRE(cli("simulate --bundle " + bundle + " --frames 20 --out obs.json").exit == 0);
  const auto pred = cli("predict --model m1.json --observed obs.json --out pred.json");
  REQUIRE(pred.exit == 0);
  CHECK(json::parse(pred.out).contains("time_ms"));
  CHECK(ParameterRanges{}.contains(load_attributes(kWork / "pred.json")));

  const std::string eval = "eval --manifest d1/manifest.json --model m1.json --no-timing --res 24 --out ";
  REQUIRE(cli(eval + "r1").exit == 0);
  REQUIRE(cli(eval + "r2.json").exit == 0);
  CHECK(file("r1/report.json") == file("r2.json"));
  CHECK(file("r1/report.csv") == file("r2.csv"));
  REQUIRE(cli("eval --manifest d1/manifest.json --mean-baseline --res 24 --out base.json").exit == 0);
  CHECK(cli("eval --manifest d1/manifest.json --out x.json").exit == 1);
}

TEST_CASE_FIXTURE(Fresh, "errors map to exit codes with JSON on stderr") {
  auto check = [](const Run& r, int code, const std::string& name) {
    CHECK(r.exit == code);
    const auto j = json::parse(r.err.substr(r.err.rfind('{')));
    CHECK(j["code"] == name);
    CHECK(j.contains("message"));
    CHECK(j.contains("context"));
  };
  check(cli("gen --objects 1 --samples 1 --out d --seed 1 --bogus"), 1, "usage");
  check(cli("teleport"), 1, "usage");
  check(cli("render --bundle x --traj y --view sideways --out z"), 1, "usage");

  write_text_file(kWork / "bad.json", "{");
  check(cli("simulate --bundle bad.json --frames 3 --out t.json"), 2, "data");

  REQUIRE(cli("gen --objects 1 --samples 1 --out d --seed 1 --anchors 16 --gaussians 32 --no-views").exit == 0);
  const std::string bundle = "d/" + json::parse(file("d/manifest.json"))[0]["path"].get<std::string>();
  write_text_file(kWork / "hot.json", R"({"mass":0.01,"stiffness":1e9,"damping":0,"friction":0.5,"shared":true})");
  check(cli("simulate --bundle " + bundle + " --frames 30 --params hot.json --out t.json"), 3, "divergence");
}

TEST_CASE_FIXTURE(Fresh, "help lists every flag") {
  const auto r = cli("identify --help");
  CHECK(r.exit == 0);
  for (const char* flag : {"--bundle", "--observed", "--iters", "--seed", "--out", "--loss", "--dump-grads"})
    CHECK(r.out.find(flag) != std::string::npos);
  const auto e = cli("eval --help");
  for (const char* flag : {"--manifest", "--model", "--params-dir", "--mean-baseline", "--out", "--jobs", "--no-timing"})
    CHECK(e.out.find(flag) != std::string::npos);
}
