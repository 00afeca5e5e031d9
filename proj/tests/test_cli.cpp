// End-to-end checks of the command-line driver, driven through the real
// binary (its path arrives via SPIKEDIFF_CLI_PATH).

#include <doctest.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "spikediff/dataset.hpp"
#include "testing_util.hpp"

using namespace spikediff;
using namespace spikediff::testing;

namespace {

namespace fs = std::filesystem;

struct CliFixture {
  fs::path dir;
  std::string cli = SPIKEDIFF_CLI_PATH;

  CliFixture() {
    dir = fs::temp_directory_path() / ("spikediff_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    save_idx(file("train.idx"), make_blob_dataset(48, 16, 91));
    std::ofstream cfg(file("run.cfg"));
    cfg << "dataset.path = " << file("train.idx") << "\n"
        << "image.size = 16\nmodel.base_channels = 8\nmodel.levels = 2\n"
        << "snn.steps = 4\ndiffusion.T = 50\ntrain.batch = 16\ntrain.epochs = 1\n"
        << "sample.steps = 5\nseed = 4\n";
  }
  ~CliFixture() { fs::remove_all(dir); }

  std::string file(const std::string& name) const { return (dir / name).string(); }
  int run(const std::string& args) const {
    std::string cmd = cli + " " + args + " > " + file("stdout.txt") + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
  }
  std::string output() const {
    std::ifstream f(file("stdout.txt"));
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }
  std::vector<uint8_t> bytes(const std::string& name) const {
    std::ifstream f(file(name), std::ios::binary);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  }
  Tensor raw(const std::string& name) const {
    std::ifstream f(file(name), std::ios::binary);
    uint32_t rank;
    f.read(reinterpret_cast<char*>(&rank), 4);
    Shape shape(rank);
    for (auto& d : shape) f.read(reinterpret_cast<char*>(&d), 8);
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 4));
    return t;
  }
};

}  // namespace

TEST_CASE("cli: train, deterministic sampling, fusion equivalence, error paths") {
  CliFixture fx;

  REQUIRE(fx.run("train --config " + fx.file("run.cfg") + " --out " + fx.file("run") +
                 " --max-steps 6 --ckpt-every 0 --grid-every 0") == 0);
  REQUIRE(fs::exists(fx.file("run/final.ckpt")));
  std::string ckpt = fx.file("run/final.ckpt");

  SUBCASE("same seed twice gives identical PNG bytes") {
    REQUIRE(fx.run("sample --ckpt " + ckpt +
                   " --pipeline signal --count 4 --steps 5 --seed 9 --out " +
                   fx.file("a.png")) == 0);
    REQUIRE(fx.run("sample --ckpt " + ckpt +
                   " --pipeline signal --count 4 --steps 5 --seed 9 --out " +
                   fx.file("b.png")) == 0);
    CHECK(fx.bytes("a.png") == fx.bytes("b.png"));
  }

  SUBCASE("signal and fused pipelines agree below 1e-4 pre-quantization") {
    REQUIRE(fx.run("sample --ckpt " + ckpt +
                   " --pipeline signal --count 4 --steps 5 --seed 9 --out " + fx.file("s.png") +
                   " --dump-raw " + fx.file("s.f32")) == 0);
    REQUIRE(fx.run("sample --ckpt " + ckpt +
                   " --pipeline fused --count 4 --steps 5 --seed 9 --out " + fx.file("f.png") +
                   " --dump-raw " + fx.file("f.f32")) == 0);
    Tensor s = fx.raw("s.f32"), f = fx.raw("f.f32");
    REQUIRE(s.shape == f.shape);
    CHECK(max_abs_diff(s, f) < 1e-4);
  }

  SUBCASE("fuse writes a loadable checkpoint") {
    CHECK(fx.run("fuse --ckpt " + ckpt + " --out " + fx.file("fused.ckpt") + " --steps 5") == 0);
    CHECK(fs::exists(fx.file("fused.ckpt")));
  }

  SUBCASE("count-ops emits machine-readable key=value lines") {
    REQUIRE(fx.run("count-ops --ckpt " + ckpt + " --mode snn --batch 2 --steps 5") == 0);
    CHECK(fx.output().find("step_muls=") != std::string::npos);
    REQUIRE(fx.run("count-ops --ckpt " + ckpt + " --mode ann --batch 2 --steps 5") == 0);
    CHECK(fx.output().find("mode=ann") != std::string::npos);
  }

  SUBCASE("missing config exits nonzero and names the path") {
    CHECK(fx.run("train --config " + fx.file("nope.cfg")) != 0);
    CHECK(fx.output().find("nope.cfg") != std::string::npos);
  }

  SUBCASE("unknown flags exit nonzero") {
    CHECK(fx.run("sample --ckpt " + ckpt + " --frobnicate 3") != 0);
  }
}
