#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "splice/image.hpp"
#include "splice/serialize.hpp"

using namespace splice;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd =
      env + (env.empty() ? "" : " ") + "\"" SPLICE_CLI_PATH "\" " + args +
      " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  int n = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

/// Shared scratch tree: seeded extractor weights, a handful of 32-px images,
/// and the --set flags every command needs to run at desk scale.
struct Workspace {
  std::string root;
  std::string weights;
  std::string data;
  std::string vit_flags;

  Workspace() {
    root = (fs::temp_directory_path() / "splice_cli_test").string();
    fs::remove_all(root);
    fs::create_directories(root);
    data = root + "/data";
    fs::create_directories(data);
    weights = root + "/vit.spta";

    REQUIRE(run("vit-init --out " + weights +
                " --seed 1 --patch 4 --layers 2 --dim 32 --heads 4"
                " --mlp-ratio 2 --grid 8") == 0);

    for (int i = 0; i < 5; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%d.png", i);
      save_png(data + "/" + name, synth_image(32, 32, 200 + i));
    }
    // Near-duplicate guarantees at least one mutual pair.
    save_png(data + "/img_5.png", synth_image(32, 32, 200));

    vit_flags = " --set vit.weights=" + weights +
                " --set vit.patch_size=4 --set vit.layers=2"
                " --set vit.dim=32 --set vit.heads=4 --set vit.mlp_ratio=2"
                " --set vit.resize=32";
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

// Tiny feed-forward model: five halvings still fit a 32-px input.
const std::string kTinyNet =
    " --set splicenet.stem=8 --set splicenet.channels=8,12,16,24,32"
    " --set splicenet.style_dim=32 --set splicenet.mapping_hidden=32"
    " --set distance.backend=mean-squared";

}  // namespace

TEST_CASE("device env var: only cpu is accepted") {
  CHECK(run("vit-init --out " + ws().root + "/dev.spta", "SPLICE_DEVICE=cuda") ==
        2);
  CHECK(run("vit-init --out " + ws().root + "/dev.spta",
            "SPLICE_DEVICE=cpu") == 0);
}

TEST_CASE("a subcommand is required") {
  CHECK(run("") != 0);
  CHECK(run("--help") == 0);
}

TEST_CASE("vit-init output loads back as an archive") {
  auto a = TensorArchive::load(ws().weights);
  CHECK(a.has("patch_embed.weight"));
}

TEST_CASE("splice: per-pair run writes result, checkpoint, losses, manifest") {
  const std::string out = ws().root + "/splice_out";
  CHECK(run("splice --structure " + ws().data + "/img_0.png --appearance " +
            ws().data + "/img_1.png --out " + out + ws().vit_flags +
            " --set train.iterations=3") == 0);
  CHECK(fs::exists(out + "/result.png"));
  CHECK(fs::exists(out + "/checkpoint.spta"));
  CHECK(fs::exists(out + "/manifest.json"));
  CHECK(count_lines(out + "/losses.csv") == 4);  // header + 3 iterations

  auto ckpt = TensorArchive::load(out + "/checkpoint.spta");
  CHECK(ckpt.get("meta.iteration").item() == 3);
  CHECK(ckpt.has("opt.t"));  // optimizer state travels with the model

  Image result = load_image(out + "/result.png");
  CHECK(result.height() == 32);
  CHECK(result.width() == 32);
}

TEST_CASE("splice: missing input image exits with the i/o code") {
  CHECK(run("splice --structure /nonexistent.png --appearance " + ws().data +
            "/img_1.png --out " + ws().root + "/x" + ws().vit_flags +
            " --set train.iterations=1") == 3);
}

TEST_CASE("splice: unset extractor weights exit with the config code") {
  CHECK(run("splice --structure " + ws().data + "/img_0.png --appearance " +
            ws().data + "/img_1.png --out " + ws().root + "/y" +
            " --set train.iterations=1") == 2);
}

TEST_CASE("distill: pair mining is rerun-stable; oversized K rejected") {
  const std::string o1 = ws().root + "/distill1";
  const std::string o2 = ws().root + "/distill2";
  CHECK(run("distill --data " + ws().data + " --k 2 --out " + o1 +
            ws().vit_flags) == 0);
  CHECK(run("distill --data " + ws().data + " --k 2 --out " + o2 +
            ws().vit_flags) == 0);
  CHECK(count_lines(o1 + "/pairs.tsv") >= 2);  // the planted duplicate pair
  CHECK(slurp(o1 + "/pairs.tsv") == slurp(o2 + "/pairs.tsv"));
  CHECK(slurp(o1 + "/index.spta") == slurp(o2 + "/index.spta"));

  CHECK(run("distill --data " + ws().data + " --k 6 --out " + ws().root +
            "/distill_bad" + ws().vit_flags) == 2);
}

TEST_CASE("splicenet-train: runs, checkpoints, and resumes") {
  const std::string pairs = ws().root + "/distill1/pairs.tsv";
  REQUIRE(fs::exists(pairs));  // produced by the distill case above
  const std::string out = ws().root + "/net_out";
  CHECK(run("splicenet-train --pairs " + pairs + " --data " + ws().data +
            " --out " + out + ws().vit_flags + kTinyNet +
            " --set train.iterations=4 --set train.checkpoint_interval=2") ==
        0);
  CHECK(fs::exists(out + "/checkpoint_2.spta"));
  CHECK(fs::exists(out + "/checkpoint_4.spta"));
  CHECK(count_lines(out + "/losses.csv") == 5);

  // Resume picks up the iteration counter.
  const std::string out2 = ws().root + "/net_resume";
  CHECK(run("splicenet-train --pairs " + pairs + " --data " + ws().data +
            " --out " + out2 + " --resume " + out + "/checkpoint.spta" +
            ws().vit_flags + kTinyNet +
            " --set train.iterations=2 --set train.checkpoint_interval=2") ==
        0);
  auto ckpt = TensorArchive::load(out2 + "/checkpoint.spta");
  CHECK(ckpt.get("meta.iteration").item() == 6);
}

TEST_CASE("splicenet-train: empty pair set is a config error") {
  const std::string empty = ws().root + "/empty_pairs.tsv";
  std::ofstream(empty).close();
  CHECK(run("splicenet-train --pairs " + empty + " --data " + ws().data +
            " --out " + ws().root + "/z" + ws().vit_flags + kTinyNet +
            " --set train.iterations=1") == 2);
}

TEST_CASE("splicenet-run: appearance image or saved token, but not neither") {
  const std::string ckpt = ws().root + "/net_out/checkpoint.spta";
  REQUIRE(fs::exists(ckpt));
  const std::string out = ws().root + "/run.png";
  CHECK(run("splicenet-run --checkpoint " + ckpt + " --structure " +
            ws().data + "/img_0.png --appearance " + ws().data +
            "/img_1.png --out " + out + ws().vit_flags) == 0);
  CHECK(fs::exists(out));
  CHECK(fs::exists(out + ".manifest.json"));

  CHECK(run("splicenet-run --checkpoint " + ckpt + " --structure " +
            ws().data + "/img_0.png --out " + ws().root + "/run2.png" +
            ws().vit_flags) == 2);
}

TEST_CASE("splicenet-run: splice checkpoint is the wrong model kind") {
  CHECK(run("splicenet-run --checkpoint " + ws().root +
            "/splice_out/checkpoint.spta --structure " + ws().data +
            "/img_0.png --appearance " + ws().data + "/img_1.png --out " +
            ws().root + "/run3.png" + ws().vit_flags) == 2);
}

TEST_CASE("modes: kmeans over extracted tokens; centroid token reusable") {
  const std::string out = ws().root + "/modes_out";
  CHECK(run("modes --data " + ws().data + " --k 2 --out " + out +
            ws().vit_flags) == 0);
  auto a = TensorArchive::load(out + "/modes.spta");
  CHECK(a.get("centroids").shape() == Shape{2, 32});

  // K beyond the image count is rejected.
  CHECK(run("modes --data " + ws().data + " --k 99 --out " + ws().root +
            "/modes_bad" + ws().vit_flags) == 2);

  // A discovered centroid feeds back into the feed-forward model.
  CHECK(run("splicenet-run --checkpoint " + ws().root +
            "/net_out/checkpoint.spta --structure " + ws().data +
            "/img_0.png --token " + out + "/modes.spta --token-index 1" +
            " --out " + ws().root + "/mode_run.png" + ws().vit_flags) == 0);
  CHECK(run("splicenet-run --checkpoint " + ws().root +
            "/net_out/checkpoint.spta --structure " + ws().data +
            "/img_0.png --token " + out + "/modes.spta --token-index 9" +
            " --out " + ws().root + "/mode_run2.png" + ws().vit_flags) == 2);
}

TEST_CASE("interpolate: one frame per alpha") {
  const std::string out = ws().root + "/interp_out";
  CHECK(run("interpolate --checkpoint " + ws().root +
            "/net_out/checkpoint.spta --structure " + ws().data +
            "/img_0.png --appearance " + ws().data + "/img_1.png" +
            " --alphas 0,0.5,1 --out " + out + ws().vit_flags) == 0);
  CHECK(fs::exists(out + "/alpha_0.00.png"));
  CHECK(fs::exists(out + "/alpha_0.50.png"));
  CHECK(fs::exists(out + "/alpha_1.00.png"));
}

TEST_CASE("eval-recon: per-image rows plus a mean row") {
  const std::string csv = ws().root + "/recon.csv";
  CHECK(run("eval-recon --checkpoint " + ws().root +
            "/net_out/checkpoint.spta --data " + ws().data + " --out " + csv +
            ws().vit_flags + " --set distance.backend=mean-squared") == 0);
  CHECK(count_lines(csv) == 8);  // header + 6 images + mean
  std::ifstream f(csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "image,mse,perceptual");
}

TEST_CASE("invert: writes the image and its loss trace") {
  const std::string out = ws().root + "/invert_out";
  CHECK(run("invert --target " + ws().data + "/img_0.png --selector cls" +
            " --out " + out + ws().vit_flags +
            " --set invert.steps=5 --set invert.size=32") == 0);
  CHECK(fs::exists(out + "/result.png"));
  CHECK(count_lines(out + "/result_trace.csv") == 7);  // header + 6 steps

  // Layer sweep names outputs per layer; a bad layer only warns.
  const std::string out2 = ws().root + "/invert_layers";
  CHECK(run("invert --target " + ws().data + "/img_0.png --layers 1,2,9" +
            " --out " + out2 + ws().vit_flags +
            " --set invert.steps=2 --set invert.size=32") == 0);
  CHECK(fs::exists(out2 + "/layer_1.png"));
  CHECK(fs::exists(out2 + "/layer_2.png"));
  CHECK(!fs::exists(out2 + "/layer_9.png"));
}

TEST_CASE("pca: one grayscale map per component at pixel resolution") {
  const std::string out = ws().root + "/pca_out";
  CHECK(run("pca --image " + ws().data + "/img_0.png --k 2 --out " + out +
            ws().vit_flags) == 0);
  Image c1 = load_image(out + "/component_1.png");
  CHECK(c1.height() == 32);
  CHECK(c1.width() == 32);
  CHECK(fs::exists(out + "/component_2.png"));
  CHECK(!fs::exists(out + "/component_3.png"));
}

TEST_CASE("config file and --set merge; malformed --set rejected") {
  const std::string cfg_path = ws().root + "/run.cfg";
  {
    std::ofstream f(cfg_path);
    f << "vit.weights=" << ws().weights << "\n"
      << "vit.patch_size=4\nvit.layers=2\nvit.dim=32\nvit.heads=4\n"
      << "vit.mlp_ratio=2\nvit.resize=32\ninvert.size=32\n";
  }
  const std::string out = ws().root + "/cfg_out";
  CHECK(run("invert --target " + ws().data + "/img_0.png --config " +
            cfg_path + " --set invert.steps=1 --out " + out) == 0);
  CHECK(fs::exists(out + "/result.png"));

  CHECK(run("invert --target " + ws().data + "/img_0.png --config " +
            cfg_path + " --set no_equals_sign --out " + ws().root +
            "/cfg_bad") == 2);
  CHECK(run("invert --target " + ws().data + "/img_0.png --config " +
            ws().root + "/missing.cfg --out " + ws().root + "/cfg_bad2") == 3);
}
