#include "doctest.h"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hds/image_io.hpp"
#include "hds/util.hpp"
#include "test_util.hpp"

using hds::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run hds_cli(const std::string& args) {
  const std::string cmd = std::string(HDS_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  FAIL("missing column " << name);
  return 0;
}

/// Value of `name` in the metrics.csv row whose source is `source`.
double metric(const fs::path& csv, const std::string& source, const std::string& name) {
  auto rows = read_csv(csv);
  REQUIRE(rows.size() >= 2);
  const std::size_t src = column(rows[0], "source"), col = column(rows[0], name);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][src] == source) return std::stod(rows[i][col]);
  }
  FAIL("no row for source " << source);
  return 0.0;
}

void write_json(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("gen-data writes a deterministic dataset") {
  TempDir dir("hds_cli");
  const std::string flags = " --count 20 --seed 7 --height 256 --width 128";
  REQUIRE(hds_cli("gen-data --out " + q(dir / "a") + flags).code == 0);
  REQUIRE(hds_cli("gen-data --out " + q(dir / "b") + flags).code == 0);
  auto rows = read_csv(dir / "a" / "manifest.csv");
  CHECK(rows.size() == 21);
  CHECK(count_files(dir / "a" / "images") == 20);
  CHECK(count_files(dir / "a" / "masks") == 20);
  for (const std::string sub : {"images", "masks"}) {
    for (const auto& e : fs::directory_iterator(dir / "a" / sub)) {
      CHECK(hds::file_checksum(e.path()) == hds::file_checksum(dir / "b" / sub / e.path().filename()));
    }
  }
  CHECK(hds::file_checksum(dir / "a" / "manifest.csv") == hds::file_checksum(dir / "b" / "manifest.csv"));
  CHECK(fs::exists(dir / "a" / "run_manifest.json"));

  Run again = hds_cli("gen-data --out " + q(dir / "a") + flags);
  CHECK(again.code == 1);
  CHECK(hds_cli("gen-data --force --out " + q(dir / "a") + " --count 2 --seed 7").code == 0);
  CHECK(read_csv(dir / "a" / "manifest.csv").size() == 3);

  REQUIRE(hds_cli("gen-data --count 0 --out " + q(dir / "empty")).code == 0);
  CHECK(read_csv(dir / "empty" / "manifest.csv").size() == 1);
}

TEST_CASE("train dry run prints the architecture ledger") {
  Run r = hds_cli("train --preset paper --dry-run");
  CHECK(r.code == 0);
  CHECK(r.out.find("main-stream 3x3 convolutions: 45") != std::string::npos);
  CHECK(r.out.find("cls map 4x3") != std::string::npos);
}

TEST_CASE("train rejects an invalid config field before computing") {
  TempDir dir("hds_cli");
  REQUIRE(hds_cli("gen-data --count 4 --height 256 --width 128 --out " + q(dir / "d")).code == 0);
  write_json(dir / "bad.json", R"({"train": {"learning_rate": 0.1}})");
  Run r = hds_cli("train --preset desk --data " + q(dir / "d") + " --config " + q(dir / "bad.json") + " --out " +
                  q(dir / "run"));
  CHECK(r.code == 1);
  CHECK(r.out.find("learning_rate") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run" / "train_log.csv"));

  write_json(dir / "neg.json", R"({"train": {"momentum": 1.5}})");
  Run m = hds_cli("train --preset desk --data " + q(dir / "d") + " --config " + q(dir / "neg.json") + " --out " +
                  q(dir / "run2"));
  CHECK(m.code == 1);
  CHECK(m.out.find("momentum") != std::string::npos);
  CHECK(hds_cli("train --bogus-flag").code == 1);
}

TEST_CASE("desk training smoke run, ablation containment, eval and predict") {
  TempDir dir("hds_cli");
  REQUIRE(hds_cli("gen-data --count 20 --seed 2 --height 256 --width 128 --mass-probability 0.5 --out " +
                  q(dir / "d")).code == 0);
  const std::string common = "train --preset desk --data " + q(dir / "d") + " --epochs 3 --val-every 1";
  Run h = hds_cli(common + " --mode hybrid --out " + q(dir / "hybrid"));
  REQUIRE_MESSAGE(h.code == 0, h.out);
  auto log = read_csv(dir / "hybrid" / "train_log.csv");
  CHECK(log.size() == 4);
  for (const char* f : {"config.json", "split.json", "last.hdsw", "last.hdsw.json", "best.hdsw", "run_manifest.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "hybrid" / f), f);
  }

  Run s = hds_cli(common + " --mode seg-only --out " + q(dir / "seg"));
  REQUIRE_MESSAGE(s.code == 0, s.out);
  auto seg_log = read_csv(dir / "seg" / "train_log.csv");
  REQUIRE(seg_log.size() == 4);
  const std::size_t cls = column(seg_log[0], "l_cls");
  for (std::size_t i = 1; i < seg_log.size(); ++i) CHECK(std::stod(seg_log[i][cls]) == 0.0);

  SUBCASE("eval writes metrics and one overlay per image") {
    Run e = hds_cli("eval --checkpoint " + q(dir / "hybrid" / "best.hdsw") + " --data " + q(dir / "d") +
                    " --split test --overlay --out " + q(dir / "eval"));
    REQUIRE_MESSAGE(e.code == 0, e.out);
    const double images = metric(dir / "eval" / "metrics.csv", "cls", "images");
    CHECK(images == 4);
    CHECK(count_files(dir / "eval" / "overlays") == 4);
  }

  SUBCASE("eval rejects weights from another architecture") {
    write_json(dir / "narrow.json", R"({"arch": {"base_channels": 4}})");
    REQUIRE(hds_cli("train --preset desk --epochs 1 --data " + q(dir / "d") + " --config " + q(dir / "narrow.json") +
                    " --out " + q(dir / "narrow")).code == 0);
    fs::copy_file(dir / "narrow" / "last.hdsw", dir / "hybrid" / "last.hdsw", fs::copy_options::overwrite_existing);
    Run e = hds_cli("eval --checkpoint " + q(dir / "hybrid" / "last.hdsw") + " --data " + q(dir / "d") + " --out " +
                    q(dir / "eval_bad"));
    CHECK(e.code == 1);
    CHECK(e.out.find("fingerprint") != std::string::npos);
  }

  SUBCASE("predict reports 8x4 maps for a 1024x512 image") {
    REQUIRE(hds_cli("gen-data --count 1 --height 1024 --width 512 --out " + q(dir / "big")).code == 0);
    Run p = hds_cli("predict --checkpoint " + q(dir / "hybrid" / "last.hdsw") + " --image " +
                    q(dir / "big" / "images" / "syn_00000.png") + " --out " + q(dir / "pred"));
    REQUIRE_MESSAGE(p.code == 0, p.out);
    CHECK(p.out.find("level 0: seg 1024x512, cls map 8x4") != std::string::npos);
    CHECK(p.out.find("mass probability: ") != std::string::npos);
    hds::Mask m = hds::read_png_mask(dir / "pred" / "syn_00000_mask.png");
    CHECK(m.rows() == 1024);
    CHECK(m.cols() == 512);
    CHECK(fs::exists(dir / "pred" / "prediction.json"));
  }

  SUBCASE("predict pads odd extents and crops the mask back") {
    hds::Image img = hds::Image::Random(300, 200).array().abs().matrix();
    hds::write_png_gray16(dir / "odd.png", img);
    Run p = hds_cli("predict --checkpoint " + q(dir / "hybrid" / "last.hdsw") + " --image " + q(dir / "odd.png") +
                    " --out " + q(dir / "odd"));
    REQUIRE_MESSAGE(p.code == 0, p.out);
    CHECK(p.out.find("padded 300x200 to 384x256") != std::string::npos);
    hds::Mask m = hds::read_png_mask(dir / "odd" / "odd_mask.png");
    CHECK(m.rows() == 300);
    CHECK(m.cols() == 200);
  }
}

TEST_CASE("an overfit checkpoint segments its own image and rejects the background") {
  TempDir dir("hds_cli");
  // Seed 7 yields one massy and one mass-free 128 x 128 image.
  REQUIRE(hds_cli("gen-data --count 2 --seed 7 --height 128 --width 128 --mass-probability 0.5 --out " +
                  q(dir / "d")).code == 0);
  auto manifest = read_csv(dir / "d" / "manifest.csv");
  REQUIRE(manifest[1][3] == "1");
  REQUIRE(manifest[2][3] == "0");
  Run t = hds_cli("train --preset desk --epochs 200 --folds 1 --data " + q(dir / "d") + " --out " + q(dir / "run"));
  REQUIRE_MESSAGE(t.code == 0, t.out);
  Run e = hds_cli("eval --checkpoint " + q(dir / "run" / "last.hdsw") + " --data " + q(dir / "d") +
                  " --split all --out " + q(dir / "eval"));
  REQUIRE_MESSAGE(e.code == 0, e.out);
  CHECK(metric(dir / "eval" / "metrics.csv", "cls", "dsc") > 0.9);
  CHECK(metric(dir / "eval" / "metrics.csv", "cls", "acc") == 1.0);

  Run p = hds_cli("predict --checkpoint " + q(dir / "run" / "last.hdsw") + " --image " + q(dir / "d" / manifest[2][1]) +
                  " --out " + q(dir / "pred"));
  REQUIRE_MESSAGE(p.code == 0, p.out);
  const auto at = p.out.find("mass probability: ");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(p.out.substr(at + 18)) < 0.5);
}

TEST_CASE("untrained models score at chance on average") {
  TempDir dir("hds_cli");
  REQUIRE(hds_cli("gen-data --count 150 --seed 3 --height 256 --width 128 --mass-probability 0.5 --out " +
                  q(dir / "d")).code == 0);
  write_json(dir / "frozen.json", R"({"train": {"lr0": 0.0}})");
  double sum = 0.0;
  const int inits = 4;
  for (int s = 0; s < inits; ++s) {
    const fs::path run = dir / ("run" + std::to_string(s));
    REQUIRE(hds_cli("train --preset desk --epochs 1 --folds 3 --seed " + std::to_string(s) + " --config " +
                    q(dir / "frozen.json") + " --data " + q(dir / "d") + " --out " + q(run)).code == 0);
    Run e = hds_cli("eval --checkpoint " + q(run / "last.hdsw") + " --data " + q(dir / "d") + " --split test --out " +
                    q(run / "eval"));
    REQUIRE_MESSAGE(e.code == 0, e.out);
    const double auc = metric(run / "eval" / "metrics.csv", "cls", "auc");
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
    sum += auc;
  }
  const double mean = sum / inits;
  CHECK(mean >= 0.3);
  CHECK(mean <= 0.7);
}

TEST_CASE("verify passes across seeds and catches an injected fault") {
  for (int s = 0; s < 5; ++s) {
    Run r = hds_cli("verify --seed " + std::to_string(s));
    CHECK_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find(", 0 failed") != std::string::npos);
  }
  Run bad = hds_cli("verify --inject-conv-fault");
  CHECK(bad.code != 0);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}
