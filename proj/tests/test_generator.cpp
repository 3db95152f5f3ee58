#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include "stnet/core/errors.hpp"
#include "stnet/data/synthetic.hpp"
#include "stnet/model/generator.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace stnet;
using namespace stnet::nn;
using namespace stnet::model;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny_backbone_config() {
  BackboneConfig cfg;
  cfg.resolution = 16;
  cfg.d_z = 16;
  cfg.d_w = 16;
  cfg.mapping_hidden = 32;
  cfg.mapping_layers = 2;
  cfg.ch_base = 8;
  cfg.ch_max = 16;
  return cfg;
}

DstConfig tiny_dst_config() {
  DstConfig cfg;
  cfg.resolution = 16;
  cfg.base_ch = 4;
  cfg.d_f = 32;
  cfg.d_t = 16;
  return cfg;
}

EncoderConfig tiny_encoder_config() {
  EncoderConfig cfg;
  cfg.resolution = 16;
  cfg.d_w = 16;
  cfg.ch_base = 8;
  cfg.ch_max = 16;
  return cfg;
}

TrainConfig tiny_train_config(uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.steps = 10;
  cfg.seed = seed;
  cfg.encoder_ch_base = 8;
  cfg.encoder_ch_max = 16;
  cfg.critic_hidden = 32;
  cfg.checkpoint_interval = 10;
  cfg.sample_grid = 2;
  return cfg;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("stnet_generator_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<data::ImageRecord> upper_corpus(const fs::path& dir, int n) {
  data::SyntheticSpec spec;
  spec.out_dir = dir.string();
  spec.n_per_domain = n;
  spec.resolution = 16;
  spec.seed = 9;
  spec.force = true;
  data::make_synthetic_corpus(spec);
  return data::load_dataset((dir / "upper").string(), data::Domain::source, 16);
}

Image random_image(Rng& rng, int res) {
  Image im = Image::blank(res, res);
  for (int64_t i = 0; i < im.chw.size(); ++i) im.chw[i] = rng.uniform();
  return im;
}

}  // namespace

TEST_CASE("encoding is deterministic, finite, and batch-consistent") {
  Rng rng(70);
  Encoder enc(tiny_encoder_config(), rng);

  Tensor w0 = enc.encode(Image::blank(16, 16));
  CHECK(w0.numel() == 16);
  CHECK(w0.all_finite());

  Rng drng(71);
  Image x = random_image(drng, 16);
  Tensor w1 = enc.encode(x);
  Tensor w2 = enc.encode(x);
  CHECK((w1.data == w2.data).all());

  std::vector<Image> imgs{random_image(drng, 16), random_image(drng, 16), random_image(drng, 16)};
  Tensor batch = enc.encode_eval(batch_from_images(imgs, {0, 1, 2}));
  for (int b = 0; b < 3; ++b) {
    Tensor one = enc.encode(imgs[static_cast<size_t>(b)]);
    CHECK(testutil::rel_err(one, Tensor({16}, batch.data.segment(b * 16, 16))) < 1e-12);
  }

  CHECK_THROWS_AS(enc.encode(Image::blank(8, 8)), std::invalid_argument);
}

TEST_CASE("translation composes encoding with frozen synthesis") {
  Rng rng(72);
  Backbone backbone(tiny_backbone_config(), rng);
  Encoder enc(tiny_encoder_config(), rng);
  Rng drng(73);
  Image x = random_image(drng, 16);

  CHECK_THROWS_AS(translate(enc, backbone, x), std::invalid_argument);  // not frozen yet
  backbone.freeze();

  Image y = translate(enc, backbone, x);
  Image manual = backbone.synthesize(enc.encode(x));
  CHECK(y.h == 16);
  CHECK(y.w == 16);
  CHECK((y.chw == manual.chw).all());

  for (int trial = 0; trial < 100; ++trial) {
    Image out = translate(enc, backbone, random_image(drng, 16));
    CHECK(out.chw.minCoeff() >= 0.0);
    CHECK(out.chw.maxCoeff() <= 1.0);
  }
}

TEST_CASE("total loss is the weighted sum of its parts") {
  Rng rng(74);
  DstModel dst(tiny_dst_config(), rng);
  dst.freeze();
  Rng drng(75);
  Image x = random_image(drng, 16);
  Image y = random_image(drng, 16);

  // dropping the compatibility weight leaves only the adversarial terms
  CHECK(total_loss(dst, x, y, 0.3, 0.7, 0.0) ==
        doctest::Approx(-std::log(0.3) + std::log(0.7)).epsilon(1e-12));

  // identical pair at indifferent scores costs nothing
  CHECK(std::abs(total_loss(dst, x, x, 0.5, 0.5, 1.7)) < 1e-9);

  for (int trial = 0; trial < 20; ++trial) {
    double s1 = drng.uniform(0.05, 0.95), s2 = drng.uniform(0.05, 0.95);
    double lam = drng.uniform(0.0, 2.0);
    double want = lam * style_distance(dst, x, y) - std::log(s1) + std::log(s2);
    CHECK(total_loss(dst, x, y, s1, s2, lam) == doctest::Approx(want).epsilon(1e-8));
    CHECK(total_loss(dst, x, y, s1, s2, lam, true) ==
          doctest::Approx(want + 1.0).epsilon(1e-8));
  }
}

TEST_CASE("training steps move the players but never the frozen models") {
  fs::path dir = fresh_dir("steps");
  auto data = upper_corpus(dir / "corpus", 16);

  Rng brng(76);
  Backbone backbone(tiny_backbone_config(), brng);
  backbone.freeze();
  Rng drng(77);
  DstModel dst(tiny_dst_config(), drng);
  dst.freeze();

  TrainConfig cfg = tiny_train_config(30);
  cfg.lambda_st = 0.7;
  TrainSession session(cfg, data, backbone, dst);

  uint64_t b0 = backbone.checksum(), d0 = dst.checksum();
  uint64_t e0 = session.encoder().checksum();
  uint64_t c0 = session.d1().params().checksum();
  for (int i = 0; i < 5; ++i) {
    StepLogs s = session.step();
    CHECK(std::abs(s.total - (0.7 * s.l_st + s.adversarial)) <= 1e-8);
    CHECK(std::isfinite(s.critic));
  }
  CHECK(backbone.checksum() == b0);
  CHECK(dst.checksum() == d0);
  CHECK(session.encoder().checksum() != e0);
  CHECK(session.d1().params().checksum() != c0);
  CHECK(session.step_count() == 5);

  fs::remove_all(dir);
}

TEST_CASE("with both ablations the encoder receives zero gradient") {
  fs::path dir = fresh_dir("ablate");
  auto data = upper_corpus(dir / "corpus", 16);

  Rng brng(78);
  Backbone backbone(tiny_backbone_config(), brng);
  backbone.freeze();
  Rng drng(79);
  DstModel dst(tiny_dst_config(), drng);
  dst.freeze();

  TrainConfig cfg = tiny_train_config(31);
  cfg.ablate_l_st = true;
  cfg.ablate_dual = true;
  TrainSession session(cfg, data, backbone, dst);
  uint64_t e0 = session.encoder().checksum();
  for (int i = 0; i < 3; ++i) {
    StepLogs s = session.step();
    CHECK(s.l_st == 0.0);
    CHECK(s.adversarial == 0.0);
    CHECK(s.critic == 0.0);
    CHECK(s.total == 0.0);
  }
  CHECK(session.encoder().checksum() == e0);

  fs::remove_all(dir);
}

TEST_CASE("loss trajectories are a pure function of the seed") {
  fs::path dir = fresh_dir("seeded");
  auto data = upper_corpus(dir / "corpus", 16);

  Rng brng(80);
  Backbone backbone(tiny_backbone_config(), brng);
  backbone.freeze();
  Rng drng(81);
  DstModel dst(tiny_dst_config(), drng);
  dst.freeze();

  auto run = [&](uint64_t seed) {
    TrainConfig cfg = tiny_train_config(seed);
    TrainSession session(cfg, data, backbone, dst);
    std::vector<StepLogs> logs;
    for (int i = 0; i < 50; ++i) logs.push_back(session.step());
    return logs;
  };

  auto a = run(42), b = run(42), c = run(43);
  bool same_seed_equal = true, other_seed_equal = true;
  for (int i = 0; i < 50; ++i) {
    same_seed_equal = same_seed_equal && a[static_cast<size_t>(i)].total == b[static_cast<size_t>(i)].total &&
                      a[static_cast<size_t>(i)].l_st == b[static_cast<size_t>(i)].l_st &&
                      a[static_cast<size_t>(i)].adversarial == b[static_cast<size_t>(i)].adversarial &&
                      a[static_cast<size_t>(i)].critic == b[static_cast<size_t>(i)].critic;
    other_seed_equal = other_seed_equal && a[static_cast<size_t>(i)].total == c[static_cast<size_t>(i)].total;
  }
  CHECK(same_seed_equal);
  CHECK_FALSE(other_seed_equal);

  fs::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts naming the offending batch") {
  fs::path dir = fresh_dir("abort");
  auto data = upper_corpus(dir / "corpus", 16);

  Rng brng(82);
  Backbone backbone(tiny_backbone_config(), brng);
  backbone.freeze();
  Rng drng(83);
  DstModel dst(tiny_dst_config(), drng);
  dst.freeze();

  TrainConfig cfg = tiny_train_config(32);
  cfg.ablate_dual = true;  // route the poison through the compatibility term
  TrainSession session(cfg, data, backbone, dst);
  session.encoder().params().all()[0]->value.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(session.step(), doctest::Contains("batch ids"), NumericalError);

  fs::remove_all(dir);
}

TEST_CASE("training rejects missing prerequisites and bad hyperparameters") {
  fs::path dir = fresh_dir("prereq");
  auto data = upper_corpus(dir / "corpus", 16);

  Rng brng(84);
  Backbone backbone(tiny_backbone_config(), brng);
  Rng drng(85);
  DstModel dst(tiny_dst_config(), drng);

  TrainConfig cfg = tiny_train_config(33);
  CHECK_THROWS_WITH_AS(TrainSession(cfg, data, backbone, dst), doctest::Contains("pretrain-gan"),
                       MissingDependencyError);
  backbone.freeze();
  CHECK_THROWS_WITH_AS(TrainSession(cfg, data, backbone, dst), doctest::Contains("train-dst"),
                       MissingDependencyError);
  dst.freeze();

  CHECK_THROWS_AS(TrainSession(cfg, {}, backbone, dst), std::invalid_argument);

  TrainConfig bad = cfg;
  bad.lambda_st = -0.1;
  CHECK_THROWS_AS(TrainSession(bad, data, backbone, dst), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(TrainSession(bad, data, backbone, dst), ConfigError);

  fs::remove_all(dir);
}

TEST_CASE("pair sheets tile inputs beside outputs") {
  Rng rng(86);
  std::vector<Image> ins, outs;
  for (int i = 0; i < 3; ++i) {
    ins.push_back(random_image(rng, 8));
    outs.push_back(random_image(rng, 8));
  }
  Image sheet = tile_pairs(ins, outs, 2);
  CHECK(sheet.h == 16);
  CHECK(sheet.w == 32);
  CHECK(sheet.at(0, 3, 5) == ins[0].at(0, 3, 5));
  CHECK(sheet.at(2, 3, 8 + 5) == outs[0].at(2, 3, 5));
  CHECK(sheet.at(1, 8 + 2, 2) == ins[2].at(1, 2, 2));
  CHECK(sheet.at(0, 8 + 1, 16 + 1) == 0.0);  // fourth cell stays blank

  outs.pop_back();
  CHECK_THROWS_AS(tile_pairs(ins, outs, 2), std::invalid_argument);
  CHECK_THROWS_AS(tile_pairs({}, {}, 2), std::invalid_argument);
}

TEST_CASE("a full run writes its artifacts and resumes bit-identically") {
  fs::path dir = fresh_dir("resume");
  auto data = upper_corpus(dir / "corpus", 16);

  Rng brng(87);
  Backbone backbone(tiny_backbone_config(), brng);
  backbone.freeze();
  Rng drng(88);
  DstModel dst(tiny_dst_config(), drng);
  dst.freeze();

  TrainConfig cfg_full = tiny_train_config(44);
  cfg_full.steps = 30;
  cfg_full.checkpoint_interval = 10;
  cfg_full.run_dir = (dir / "full").string();
  TrainResult full = train(cfg_full, data, backbone, dst);
  CHECK(full.session.step_count() == 30);
  CHECK(fs::exists(dir / "full" / "loss.tsv"));
  CHECK(fs::exists(dir / "full" / "train_000010.ckpt"));
  CHECK(fs::exists(dir / "full" / "train_000020.ckpt"));
  CHECK(fs::exists(dir / "full" / "train_final.ckpt"));
  CHECK(fs::exists(dir / "full" / "train_000010_samples.png"));
  CHECK(fs::exists(dir / "full" / "train_final_samples.png"));
  CHECK(fs::exists(dir / "full" / "train_000010_metrics.kv"));
  CHECK(full.final_checkpoint == (dir / "full" / "train_final.ckpt").string());

  // every logged row decomposes into its parts
  std::ifstream log(dir / "full" / "loss.tsv");
  std::string line;
  std::getline(log, line);
  CHECK(line == "step\tl_st\tadversarial\tcritic\ttotal");
  std::vector<std::string> full_rows;
  while (std::getline(log, line)) {
    std::istringstream ss(line);
    int step;
    double l_st, adv, critic, total;
    REQUIRE((ss >> step >> l_st >> adv >> critic >> total));
    CHECK(std::abs(total - (cfg_full.lambda_st * l_st + adv)) <= 1e-8);
    full_rows.push_back(line);
  }
  REQUIRE(full_rows.size() == 30);

  // first half in a separate run, then resume from its final checkpoint
  TrainConfig cfg_half = cfg_full;
  cfg_half.steps = 15;
  cfg_half.run_dir = (dir / "half").string();
  TrainResult half = train(cfg_half, data, backbone, dst);

  TrainConfig cfg_rest = cfg_full;
  cfg_rest.run_dir = (dir / "rest").string();
  TrainResult rest = train(cfg_rest, data, backbone, dst, half.final_checkpoint);
  CHECK(rest.session.step_count() == 30);

  std::ifstream rest_log(dir / "rest" / "loss.tsv");
  std::vector<std::string> rest_rows;
  while (std::getline(rest_log, line)) rest_rows.push_back(line);
  REQUIRE(rest_rows.size() == 15);
  for (int i = 0; i < 15; ++i) {
    CHECK(rest_rows[static_cast<size_t>(i)] == full_rows[static_cast<size_t>(15 + i)]);
  }

  // the resumed run lands on exactly the uninterrupted parameters
  CHECK(rest.session.encoder().checksum() == full.session.encoder().checksum());
  CHECK(rest.session.d1().params().checksum() == full.session.d1().params().checksum());
  CHECK(rest.session.d2().params().checksum() == full.session.d2().params().checksum());

  fs::remove_all(dir);
}
