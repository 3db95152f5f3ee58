#include "stnet/core/checkpoint.hpp"
#include "stnet/core/errors.hpp"
#include "stnet/core/kv.hpp"
#include "stnet/data/synthetic.hpp"
#include "stnet/model/backbone.hpp"
#include "stnet/model/metrics.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace stnet;

namespace {

struct Globals {
  uint64_t seed = 0;
  bool force = false;
  std::string run_dir;
};

fs::path run_root(const Globals& g) {
  if (!g.run_dir.empty()) return g.run_dir;
  const char* env = std::getenv("STNET_RUN_ROOT");
  if (env && *env) return env;
  return "runs";
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Per-stage provenance record; refuses to report success while any listed
/// output is missing from disk.
struct StageRun {
  std::string stage;
  std::string config_path;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started = now_utc();
};

void finish_stage(const fs::path& stage_dir, const StageRun& run, uint64_t seed) {
  for (const auto& o : run.outputs) {
    if (!fs::exists(o)) throw std::runtime_error(run.stage + ": declared output missing: " + o);
  }
  kv_write_file((stage_dir / "manifest.kv").string(),
                {{"run_id", run.stage + "-seed" + std::to_string(seed)},
                 {"stage", run.stage},
                 {"config", run.config_path},
                 {"seed", std::to_string(seed)},
                 {"inputs", join(run.inputs, ",")},
                 {"outputs", join(run.outputs, ",")},
                 {"started_at", run.started},
                 {"finished_at", now_utc()},
                 {"exit_status", "0"}});
}

KvFile open_config(const std::string& path) {
  if (path.empty()) return KvFile::parse_string("", "<defaults>");
  return KvFile::parse_file(path);
}

void need(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p)) {
    throw MissingDependencyError(what + " not found at " + p.string() + "; run the " + producer +
                                 " stage first");
  }
}

data::Domain domain_for_sub(const std::string& sub) {
  return sub == "upper" ? data::Domain::source : data::Domain::target;
}

/// Loads one corpus subdirectory filtered to one side of its split manifest.
std::vector<data::ImageRecord> load_split(const fs::path& corpus, const std::string& sub,
                                          int resolution, const fs::path& manifest_path,
                                          bool train_side) {
  need(corpus / sub, "corpus domain directory", "make-synthetic");
  need(manifest_path, "split manifest", "prepare-data");
  auto all = data::load_dataset((corpus / sub).string(), domain_for_sub(sub), resolution);
  data::SplitManifest man = data::load_split_manifest(manifest_path.string());
  const auto& ids = train_side ? man.train_ids : man.test_ids;
  std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<data::ImageRecord> out;
  for (auto& r : all) {
    if (keep.count(r.id)) out.push_back(std::move(r));
  }
  if (out.empty()) {
    throw MissingDependencyError("split manifest " + manifest_path.string() +
                                 " selects no images under " + (corpus / sub).string());
  }
  return out;
}

std::string source_sub(model::Direction d) {
  return d == model::Direction::upper_to_lower ? "upper" : "lower";
}
std::string target_sub(model::Direction d) {
  return d == model::Direction::upper_to_lower ? "lower" : "upper";
}

std::string variant_label(bool ablate_l_st, bool ablate_dual) {
  if (ablate_l_st && ablate_dual) return "wo_l_st_wo_dual";
  if (ablate_l_st) return "wo_l_st";
  if (ablate_dual) return "wo_dual";
  return "full";
}

/// Rebuilds the frozen backbone and the trained encoder from a training
/// checkpoint, following the backbone path recorded at save time unless
/// overridden.
struct LoadedGenerator {
  model::Backbone backbone;
  model::Encoder encoder;
  nlohmann::json meta;
};

LoadedGenerator load_generator(const fs::path& ckpt_path, const std::string& backbone_override) {
  need(ckpt_path, "training checkpoint", "train");
  Checkpoint cp = load_checkpoint(ckpt_path.string());
  if (cp.meta.value("module", "") != "train") {
    throw MissingDependencyError("not a training checkpoint: " + ckpt_path.string());
  }
  std::string bb_path =
      backbone_override.empty() ? cp.meta.value("backbone_ref", "") : backbone_override;
  if (bb_path.empty()) {
    throw MissingDependencyError("checkpoint records no backbone path; pass --backbone");
  }
  need(bb_path, "backbone checkpoint", "pretrain-gan");
  model::Backbone backbone = model::load_backbone(bb_path);
  backbone.freeze();

  model::EncoderConfig ecfg;
  ecfg.resolution = backbone.config().resolution;
  ecfg.d_w = backbone.config().d_w;
  ecfg.ch_base = cp.meta.at("config").value("encoder_ch_base", 16);
  ecfg.ch_max = cp.meta.at("config").value("encoder_ch_max", 64);
  Rng scratch(0);
  model::Encoder encoder(ecfg, scratch);
  encoder.params().load_state(cp.group("encoder"));
  return LoadedGenerator{std::move(backbone), std::move(encoder), std::move(cp.meta)};
}

int cmd_make_synthetic(const Globals& g, const std::string& cfg_path, CLI::App* sub,
                       std::string out, int n, int resolution, int near_dups) {
  KvFile kv = open_config(cfg_path);
  if (!sub->count("--out")) out = kv.get_string("out", out);
  if (!sub->count("--n")) n = static_cast<int>(kv.get_int("n", n));
  if (!sub->count("--resolution")) resolution = static_cast<int>(kv.get_int("resolution", resolution));
  if (!sub->count("--near-duplicates")) {
    near_dups = static_cast<int>(kv.get_int("near_duplicates", near_dups));
  }
  kv.require_all_consumed();

  data::SyntheticSpec spec;
  spec.out_dir = out.empty() ? (run_root(g) / "corpus").string() : out;
  spec.n_per_domain = n;
  spec.resolution = resolution;
  spec.seed = g.seed;
  spec.near_duplicates = near_dups;
  spec.force = g.force;
  data::make_synthetic_corpus(spec);

  StageRun run;
  run.stage = "make-synthetic";
  run.config_path = cfg_path;
  run.outputs = {(fs::path(spec.out_dir) / "upper").string(),
                 (fs::path(spec.out_dir) / "lower").string(),
                 (fs::path(spec.out_dir) / "pairs.txt").string()};
  finish_stage(spec.out_dir, run, g.seed);
  std::cout << "make-synthetic: wrote " << n << " images per domain to " << spec.out_dir << "\n";
  return 0;
}

int cmd_prepare_data(const Globals& g, const std::string& cfg_path, CLI::App* sub,
                     std::string root, double ratio, double threshold, int resolution) {
  KvFile kv = open_config(cfg_path);
  if (!sub->count("--root")) root = kv.get_string("root", root);
  if (!sub->count("--ratio")) ratio = kv.get_double("ratio", ratio);
  if (!sub->count("--threshold")) threshold = kv.get_double("threshold", threshold);
  if (!sub->count("--resolution")) resolution = static_cast<int>(kv.get_int("resolution", resolution));
  kv.require_all_consumed();

  fs::path corpus = root.empty() ? run_root(g) / "corpus" : fs::path(root);
  fs::path data_dir = run_root(g) / "data";
  fs::create_directories(data_dir);

  StageRun run;
  run.stage = "prepare-data";
  run.config_path = cfg_path;
  run.inputs = {corpus.string()};

  std::vector<std::pair<std::string, std::string>> stats;
  stats.emplace_back("ratio", format_double(ratio));
  stats.emplace_back("threshold", format_double(threshold));
  for (const std::string& sub_name : {std::string("upper"), std::string("lower")}) {
    need(corpus / sub_name, "corpus domain directory", "make-synthetic");
    auto records = data::load_dataset((corpus / sub_name).string(), domain_for_sub(sub_name),
                                      resolution);
    data::SimilarityGraph graph =
        data::build_similarity_graph(records, data::downsampled_mean_abs_distance, threshold);
    Rng rng = Rng::derive(g.seed, "split." + sub_name);
    data::SplitManifest man = data::split_dataset(graph, ratio, rng);
    man.ratio = ratio;
    man.threshold = threshold;
    fs::path man_path = data_dir / ("split_" + sub_name + ".kv");
    data::save_split_manifest(man_path.string(), man);
    run.outputs.push_back(man_path.string());
    stats.emplace_back(sub_name + "_train", std::to_string(man.train_ids.size()));
    stats.emplace_back(sub_name + "_test", std::to_string(man.test_ids.size()));
    stats.emplace_back(sub_name + "_edges", std::to_string(graph.edges.size()));
    const double realized =
        static_cast<double>(man.train_ids.size()) /
        static_cast<double>(man.train_ids.size() + man.test_ids.size());
    stats.emplace_back(sub_name + "_realized_ratio", format_double(realized));
  }
  fs::path stats_path = data_dir / "stats.kv";
  kv_write_file(stats_path.string(), stats);
  run.outputs.push_back(stats_path.string());
  finish_stage(data_dir, run, g.seed);
  std::cout << "prepare-data: split manifests written to " << data_dir << "\n";
  return 0;
}

int cmd_pretrain_gan(const Globals& g, const std::string& cfg_path, CLI::App* sub,
                     std::string data_root, int steps_flag) {
  KvFile kv = open_config(cfg_path);
  model::BackboneConfig mcfg;
  mcfg.resolution = static_cast<int>(kv.get_int("resolution", mcfg.resolution));
  mcfg.d_z = static_cast<int>(kv.get_int("d_z", mcfg.d_z));
  mcfg.d_w = static_cast<int>(kv.get_int("d_w", mcfg.d_w));
  mcfg.mapping_hidden = static_cast<int>(kv.get_int("mapping_hidden", mcfg.mapping_hidden));
  mcfg.mapping_layers = static_cast<int>(kv.get_int("mapping_layers", mcfg.mapping_layers));
  mcfg.ch_base = static_cast<int>(kv.get_int("ch_base", mcfg.ch_base));
  mcfg.ch_max = static_cast<int>(kv.get_int("ch_max", mcfg.ch_max));
  model::PretrainConfig pcfg;
  pcfg.steps = static_cast<int>(kv.get_int("steps", pcfg.steps));
  pcfg.batch = static_cast<int>(kv.get_int("batch", pcfg.batch));
  pcfg.lr = kv.get_double("lr", pcfg.lr);
  pcfg.beta1 = kv.get_double("beta1", pcfg.beta1);
  pcfg.beta2 = kv.get_double("beta2", pcfg.beta2);
  pcfg.r1_gamma = kv.get_double("r1_gamma", pcfg.r1_gamma);
  pcfg.r1_interval = static_cast<int>(kv.get_int("r1_interval", pcfg.r1_interval));
  std::string domain = kv.get_string("domain", "lower");
  if (!sub->count("--data")) data_root = kv.get_string("data", data_root);
  kv.require_all_consumed();
  if (sub->count("--steps")) pcfg.steps = steps_flag;
  if (domain != "upper" && domain != "lower") {
    throw ConfigError("pretrain-gan: domain must be upper or lower, got " + domain);
  }
  pcfg.seed = g.seed;

  fs::path corpus = data_root.empty() ? run_root(g) / "corpus" : fs::path(data_root);
  fs::path stage_dir = run_root(g) / "gan";
  fs::create_directories(stage_dir);
  auto train_set = load_split(corpus, domain, mcfg.resolution,
                              run_root(g) / "data" / ("split_" + domain + ".kv"), true);

  pcfg.log_path = (stage_dir / "loss.tsv").string();
  model::Backbone backbone = model::pretrain_backbone(train_set, mcfg, pcfg);
  fs::path ckpt = stage_dir / "backbone.ckpt";
  model::save_backbone(backbone, ckpt.string());

  StageRun run;
  run.stage = "pretrain-gan";
  run.config_path = cfg_path;
  run.inputs = {(corpus / domain).string()};
  run.outputs = {ckpt.string(), pcfg.log_path};
  finish_stage(stage_dir, run, g.seed);
  std::cout << "pretrain-gan: " << pcfg.steps << " steps on " << train_set.size()
            << " images; checkpoint at " << ckpt << "\n";
  return 0;
}

int cmd_train_dst(const Globals& g, const std::string& cfg_path, CLI::App* sub,
                  std::string data_root, int steps_flag) {
  KvFile kv = open_config(cfg_path);
  model::DstConfig mcfg;
  mcfg.resolution = static_cast<int>(kv.get_int("resolution", mcfg.resolution));
  mcfg.base_ch = static_cast<int>(kv.get_int("base_ch", mcfg.base_ch));
  mcfg.d_f = static_cast<int>(kv.get_int("d_f", mcfg.d_f));
  mcfg.d_t = static_cast<int>(kv.get_int("d_t", mcfg.d_t));
  mcfg.L = static_cast<int>(kv.get_int("bins", mcfg.L));
  mcfg.reverse_kl = kv.get_bool("reverse_kl", mcfg.reverse_kl);
  model::DstTrainConfig tcfg;
  tcfg.steps = static_cast<int>(kv.get_int("steps", tcfg.steps));
  tcfg.batch = static_cast<int>(kv.get_int("batch", tcfg.batch));
  tcfg.patch = static_cast<int>(kv.get_int("patch", tcfg.patch));
  tcfg.lr = kv.get_double("lr", tcfg.lr);
  tcfg.beta1 = kv.get_double("beta1", tcfg.beta1);
  tcfg.beta2 = kv.get_double("beta2", tcfg.beta2);
  tcfg.lambda_sty = kv.get_double("lambda_sty", tcfg.lambda_sty);
  tcfg.lambda_tex = kv.get_double("lambda_tex", tcfg.lambda_tex);
  if (!sub->count("--data")) data_root = kv.get_string("data", data_root);
  kv.require_all_consumed();
  if (sub->count("--steps")) tcfg.steps = steps_flag;
  tcfg.seed = g.seed;

  fs::path corpus = data_root.empty() ? run_root(g) / "corpus" : fs::path(data_root);
  fs::path stage_dir = run_root(g) / "dst";
  fs::create_directories(stage_dir);
  auto dataset = load_split(corpus, "upper", mcfg.resolution,
                            run_root(g) / "data" / "split_upper.kv", true);
  auto lower = load_split(corpus, "lower", mcfg.resolution,
                          run_root(g) / "data" / "split_lower.kv", true);
  dataset.insert(dataset.end(), std::make_move_iterator(lower.begin()),
                 std::make_move_iterator(lower.end()));

  tcfg.log_path = (stage_dir / "loss.tsv").string();
  model::DstModel dst = model::train_dst(dataset, mcfg, tcfg);
  fs::path ckpt = stage_dir / "dst.ckpt";
  model::save_dst(dst, ckpt.string());

  StageRun run;
  run.stage = "train-dst";
  run.config_path = cfg_path;
  run.inputs = {corpus.string()};
  run.outputs = {ckpt.string(), tcfg.log_path};
  finish_stage(stage_dir, run, g.seed);
  std::cout << "train-dst: " << tcfg.steps << " steps on " << dataset.size()
            << " images; checkpoint at " << ckpt << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& cfg_path, CLI::App* sub, std::string data_root,
              int steps_flag, const std::string& direction_flag, const std::string& resume,
              bool ablate_l_st_flag, bool ablate_dual_flag) {
  KvFile kv = open_config(cfg_path);
  model::TrainConfig tcfg;
  std::string dir_str = kv.get_string("direction", direction_name(tcfg.direction));
  tcfg.lambda_st = kv.get_double("lambda_st", tcfg.lambda_st);
  tcfg.learning_rate = kv.get_double("learning_rate", tcfg.learning_rate);
  tcfg.adam_beta1 = kv.get_double("adam_beta1", tcfg.adam_beta1);
  tcfg.adam_beta2 = kv.get_double("adam_beta2", tcfg.adam_beta2);
  tcfg.batch_size = static_cast<int>(kv.get_int("batch_size", tcfg.batch_size));
  tcfg.steps = static_cast<int>(kv.get_int("steps", tcfg.steps));
  tcfg.ablate_l_st = kv.get_bool("ablate_l_st", tcfg.ablate_l_st);
  tcfg.ablate_dual = kv.get_bool("ablate_dual", tcfg.ablate_dual);
  tcfg.literal_adversarial = kv.get_bool("literal_adversarial", tcfg.literal_adversarial);
  tcfg.encoder_ch_base = static_cast<int>(kv.get_int("encoder_ch_base", tcfg.encoder_ch_base));
  tcfg.encoder_ch_max = static_cast<int>(kv.get_int("encoder_ch_max", tcfg.encoder_ch_max));
  tcfg.critic_hidden = static_cast<int>(kv.get_int("critic_hidden", tcfg.critic_hidden));
  tcfg.checkpoint_interval =
      static_cast<int>(kv.get_int("checkpoint_interval", tcfg.checkpoint_interval));
  tcfg.sample_grid = static_cast<int>(kv.get_int("sample_grid", tcfg.sample_grid));
  std::string backbone_path = kv.get_string("backbone", (run_root(g) / "gan" / "backbone.ckpt").string());
  std::string dst_path = kv.get_string("dst", (run_root(g) / "dst" / "dst.ckpt").string());
  if (!sub->count("--data")) data_root = kv.get_string("data", data_root);
  kv.require_all_consumed();
  if (sub->count("--steps")) tcfg.steps = steps_flag;
  if (sub->count("--direction")) dir_str = direction_flag;
  if (ablate_l_st_flag) tcfg.ablate_l_st = true;
  if (ablate_dual_flag) tcfg.ablate_dual = true;
  tcfg.direction = model::parse_direction(dir_str);
  tcfg.seed = g.seed;

  need(backbone_path, "backbone checkpoint", "pretrain-gan");
  need(dst_path, "style/texture discriminator checkpoint", "train-dst");
  model::Backbone backbone = model::load_backbone(backbone_path);
  backbone.freeze();
  model::DstModel dst = model::load_dst(dst_path);
  if (!dst.frozen()) dst.freeze();
  if (dst.config().resolution != backbone.config().resolution) {
    throw ConfigError("train: discriminator resolution " +
                      std::to_string(dst.config().resolution) + " != backbone resolution " +
                      std::to_string(backbone.config().resolution));
  }

  fs::path corpus = data_root.empty() ? run_root(g) / "corpus" : fs::path(data_root);
  fs::path stage_dir = run_root(g) / "train";
  fs::create_directories(stage_dir);
  const std::string src = source_sub(tcfg.direction);
  auto train_set = load_split(corpus, src, backbone.config().resolution,
                              run_root(g) / "data" / ("split_" + src + ".kv"), true);

  tcfg.run_dir = stage_dir.string();
  tcfg.backbone_ref = backbone_path;
  tcfg.dst_ref = dst_path;

  fs::path snapshot = stage_dir / "config.kv";
  kv_write_file(snapshot.string(),
                {{"direction", direction_name(tcfg.direction)},
                 {"variant", variant_label(tcfg.ablate_l_st, tcfg.ablate_dual)},
                 {"lambda_st", format_double(tcfg.lambda_st)},
                 {"learning_rate", format_double(tcfg.learning_rate)},
                 {"adam_beta1", format_double(tcfg.adam_beta1)},
                 {"adam_beta2", format_double(tcfg.adam_beta2)},
                 {"batch_size", std::to_string(tcfg.batch_size)},
                 {"steps", std::to_string(tcfg.steps)},
                 {"seed", std::to_string(g.seed)},
                 {"ablate_l_st", tcfg.ablate_l_st ? "true" : "false"},
                 {"ablate_dual", tcfg.ablate_dual ? "true" : "false"},
                 {"literal_adversarial", tcfg.literal_adversarial ? "true" : "false"},
                 {"encoder_ch_base", std::to_string(tcfg.encoder_ch_base)},
                 {"encoder_ch_max", std::to_string(tcfg.encoder_ch_max)},
                 {"critic_hidden", std::to_string(tcfg.critic_hidden)},
                 {"backbone", backbone_path},
                 {"dst", dst_path}});

  model::TrainResult result = model::train(tcfg, train_set, backbone, dst, resume);

  StageRun run;
  run.stage = "train";
  run.config_path = cfg_path;
  run.inputs = {backbone_path, dst_path, (corpus / src).string()};
  run.outputs = {result.final_checkpoint, (stage_dir / "loss.tsv").string(), snapshot.string()};
  finish_stage(stage_dir, run, g.seed);
  std::cout << "train: " << tcfg.steps << " steps ("
            << variant_label(tcfg.ablate_l_st, tcfg.ablate_dual) << "); final checkpoint at "
            << result.final_checkpoint << "\n";
  return 0;
}

int cmd_synthesize(const Globals& g, const std::string& cfg_path, CLI::App* sub,
                   std::string ckpt, const std::string& input_dir, std::string out_dir,
                   const std::string& backbone_override) {
  KvFile kv = open_config(cfg_path);
  if (!sub->count("--checkpoint")) {
    ckpt = kv.get_string("checkpoint", ckpt);
  }
  if (!sub->count("--out")) out_dir = kv.get_string("out", out_dir);
  kv.require_all_consumed();
  if (ckpt.empty()) ckpt = (run_root(g) / "train" / "train_final.ckpt").string();
  if (out_dir.empty()) out_dir = (run_root(g) / "synth").string();
  if (input_dir.empty()) throw ConfigError("synthesize: --input directory is required");

  LoadedGenerator gen = load_generator(ckpt, backbone_override);
  const int res = gen.backbone.config().resolution;
  need(input_dir, "input image directory", "make-synthetic");
  auto records = data::load_dataset(input_dir, data::Domain::source, res);
  if (records.empty()) {
    throw ConfigError("synthesize: no decodable images under " + input_dir);
  }

  fs::create_directories(out_dir);
  std::vector<Image> inputs, outputs;
  StageRun run;
  run.stage = "synthesize";
  run.config_path = cfg_path;
  run.inputs = {ckpt, input_dir};
  for (const auto& rec : records) {
    Image out = model::translate(gen.encoder, gen.backbone, rec.pixels);
    fs::path path = fs::path(out_dir) / (rec.id + "_out.png");
    save_image(path.string(), out);
    inputs.push_back(rec.pixels);
    outputs.push_back(out);
    run.outputs.push_back(path.string());
  }
  const int grid_n = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(records.size()))));
  Image grid = model::tile_pairs(inputs, outputs, grid_n);
  fs::path grid_path = fs::path(out_dir) / "grid.png";
  save_image(grid_path.string(), grid);
  run.outputs.push_back(grid_path.string());
  finish_stage(out_dir, run, g.seed);
  std::cout << "synthesize: " << records.size() << " images translated into " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& cfg_path, CLI::App* sub, std::string ckpt,
                 std::string data_root, std::string embedder_name,
                 const std::string& backbone_override, const std::string& dst_override) {
  KvFile kv = open_config(cfg_path);
  if (!sub->count("--checkpoint")) ckpt = kv.get_string("checkpoint", ckpt);
  if (!sub->count("--data")) data_root = kv.get_string("data", data_root);
  if (!sub->count("--embedder")) embedder_name = kv.get_string("embedder", embedder_name);
  const int pca_rank = static_cast<int>(kv.get_int("pca_rank", 16));
  kv.require_all_consumed();
  if (embedder_name != "dst_backbone" && embedder_name != "pixel_pca") {
    throw ConfigError("evaluate: embedder must be dst_backbone or pixel_pca, got " + embedder_name);
  }

  fs::path ckpt_path = ckpt.empty() ? run_root(g) / "train" : fs::path(ckpt);
  std::vector<fs::path> checkpoints;
  if (fs::is_directory(ckpt_path)) {
    for (const auto& e : fs::directory_iterator(ckpt_path)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("train_", 0) == 0 && name.size() > 5 &&
          name.substr(name.size() - 5) == ".ckpt") {
        checkpoints.push_back(e.path());
      }
    }
    std::sort(checkpoints.begin(), checkpoints.end());
    // numbered snapshots first, the final checkpoint last
    auto final_it = std::find_if(checkpoints.begin(), checkpoints.end(), [](const fs::path& p) {
      return p.filename() == "train_final.ckpt";
    });
    if (final_it != checkpoints.end()) {
      fs::path f = *final_it;
      checkpoints.erase(final_it);
      checkpoints.push_back(f);
    }
    if (checkpoints.empty()) {
      throw MissingDependencyError("no training checkpoints under " + ckpt_path.string() +
                                   "; run the train stage first");
    }
  } else {
    need(ckpt_path, "training checkpoint", "train");
    checkpoints.push_back(ckpt_path);
  }

  // direction and discriminator come from the first checkpoint's record
  Checkpoint head = load_checkpoint(checkpoints.front().string());
  if (head.meta.value("module", "") != "train") {
    throw MissingDependencyError("not a training checkpoint: " + checkpoints.front().string());
  }
  model::Direction direction =
      model::parse_direction(head.meta.at("config").value("direction", "upper_to_lower"));
  std::string dst_path = dst_override.empty() ? head.meta.value("dst_ref", "") : dst_override;
  if (dst_path.empty()) {
    throw MissingDependencyError("checkpoint records no discriminator path; pass --dst");
  }
  need(dst_path, "style/texture discriminator checkpoint", "train-dst");
  model::DstModel dst = model::load_dst(dst_path);
  if (!dst.frozen()) dst.freeze();

  fs::path corpus = data_root.empty() ? run_root(g) / "corpus" : fs::path(data_root);
  const std::string src = source_sub(direction);
  const std::string tgt = target_sub(direction);
  const int res = dst.config().resolution;
  auto source_test =
      load_split(corpus, src, res, run_root(g) / "data" / ("split_" + src + ".kv"), false);
  auto target_test =
      load_split(corpus, tgt, res, run_root(g) / "data" / ("split_" + tgt + ".kv"), false);

  std::unique_ptr<model::ImageEmbedder> embedder;
  if (embedder_name == "dst_backbone") {
    embedder = std::make_unique<model::DstEmbedder>(dst);
  } else {
    // fit on the target train split so test features never shape the basis
    auto fit_set =
        load_split(corpus, tgt, res, run_root(g) / "data" / ("split_" + tgt + ".kv"), true);
    std::vector<Image> fit_images;
    for (const auto& r : fit_set) fit_images.push_back(r.pixels);
    const int k = std::min(pca_rank, static_cast<int>(fit_images.size()) - 1);
    embedder = std::make_unique<model::PixelPcaEmbedder>(fit_images, std::max(1, k));
  }

  fs::path eval_dir = run_root(g) / "eval";
  fs::create_directories(eval_dir);
  fs::path config_ref = run_root(g) / "train" / "config.kv";

  StageRun run;
  run.stage = "evaluate";
  run.config_path = cfg_path;
  run.inputs = {dst_path};

  std::vector<std::string> summary_rows;
  std::printf("%-24s %10s %12s %18s %8s\n", "checkpoint", "step", "fid", "compat_proxy_mean",
              "n_eval");
  for (const fs::path& cp_path : checkpoints) {
    LoadedGenerator gen = load_generator(cp_path, backbone_override);
    const int64_t step = gen.meta.value("step", int64_t{0});
    model::MetricReport report =
        model::evaluate(gen.encoder, gen.backbone, dst, *embedder, source_test, target_test,
                        direction, fs::exists(config_ref) ? config_ref.string() : "");
    const std::string stem = cp_path.stem().string();
    fs::path report_path = eval_dir / ("report_" + stem + ".kv");
    model::save_metric_report(report_path.string(), report);
    run.inputs.push_back(cp_path.string());
    run.outputs.push_back(report_path.string());
    summary_rows.push_back(stem + "\t" + std::to_string(step) + "\t" + format_double(report.fid) +
                           "\t" + format_double(report.compat_proxy_mean) + "\t" +
                           std::to_string(report.n_eval));
    std::printf("%-24s %10lld %12.6f %18.6f %8d\n", stem.c_str(),
                static_cast<long long>(step), report.fid, report.compat_proxy_mean,
                report.n_eval);
  }

  fs::path summary_path = eval_dir / "summary.tsv";
  {
    std::string text = "checkpoint\tstep\tfid\tcompat_proxy_mean\tn_eval\n";
    for (const auto& row : summary_rows) text += row + "\n";
    std::ofstream out(summary_path);
    if (!out) throw std::runtime_error("evaluate: cannot write " + summary_path.string());
    out << text;
  }
  run.outputs.push_back(summary_path.string());
  finish_stage(eval_dir, run, g.seed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unpaired image-to-image translation pipeline"};
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "run seed; every stage derives its streams from it");
  app.add_flag("--force", g.force, "overwrite existing outputs");
  app.add_option("--run-dir", g.run_dir, "run directory (default: $STNET_RUN_ROOT or ./runs)");

  // make-synthetic
  auto* mk = app.add_subcommand("make-synthetic", "generate the paired-by-construction corpus");
  std::string mk_cfg, mk_out;
  int mk_n = 96, mk_res = 32, mk_dupes = 0;
  mk->add_option("--config", mk_cfg, "kv config file");
  mk->add_option("--out", mk_out, "corpus directory (default <run-dir>/corpus)");
  mk->add_option("--n", mk_n, "images per domain");
  mk->add_option("--resolution", mk_res, "image side in pixels");
  mk->add_option("--near-duplicates", mk_dupes, "planted near-copies per domain");

  // prepare-data
  auto* pd = app.add_subcommand("prepare-data", "deduplicate-aware train/test split per domain");
  std::string pd_cfg, pd_root;
  double pd_ratio = 0.8, pd_threshold = 0.02;
  int pd_res = 32;
  pd->add_option("--config", pd_cfg, "kv config file");
  pd->add_option("--root", pd_root, "corpus root (default <run-dir>/corpus)");
  pd->add_option("--ratio", pd_ratio, "train fraction");
  pd->add_option("--threshold", pd_threshold, "duplicate distance threshold (strict)");
  pd->add_option("--resolution", pd_res, "image side for distance checks");

  // pretrain-gan
  auto* pg = app.add_subcommand("pretrain-gan", "train the target-domain synthesis network");
  std::string pg_cfg, pg_data;
  int pg_steps = 0;
  pg->add_option("--config", pg_cfg, "kv config file");
  pg->add_option("--data", pg_data, "corpus root (default <run-dir>/corpus)");
  pg->add_option("--steps", pg_steps, "override step count");

  // train-dst
  auto* td = app.add_subcommand("train-dst", "train the style/texture discriminator");
  std::string td_cfg, td_data;
  int td_steps = 0;
  td->add_option("--config", td_cfg, "kv config file");
  td->add_option("--data", td_data, "corpus root (default <run-dir>/corpus)");
  td->add_option("--steps", td_steps, "override step count");

  // train
  auto* tr = app.add_subcommand("train", "train the encoder against the frozen stages");
  std::string tr_cfg, tr_data, tr_direction = "upper_to_lower", tr_resume;
  int tr_steps = 0;
  bool tr_ab_lst = false, tr_ab_dual = false;
  tr->add_option("--config", tr_cfg, "kv config file");
  tr->add_option("--data", tr_data, "corpus root (default <run-dir>/corpus)");
  tr->add_option("--steps", tr_steps, "override step count");
  tr->add_option("--direction", tr_direction, "upper_to_lower or lower_to_upper");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_flag("--ablate-l-st", tr_ab_lst, "drop the style/texture compatibility term");
  tr->add_flag("--ablate-dual", tr_ab_dual, "drop the dual latent adversary");

  // synthesize
  auto* sy = app.add_subcommand("synthesize", "translate a directory of images");
  std::string sy_cfg, sy_ckpt, sy_in, sy_out, sy_backbone;
  sy->add_option("--config", sy_cfg, "kv config file");
  sy->add_option("--checkpoint", sy_ckpt, "training checkpoint (default <run-dir>/train/train_final.ckpt)");
  sy->add_option("--input", sy_in, "directory of input images");
  sy->add_option("--out", sy_out, "output directory (default <run-dir>/synth)");
  sy->add_option("--backbone", sy_backbone, "override the recorded backbone checkpoint path");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score checkpoints on the held-out test split");
  std::string ev_cfg, ev_ckpt, ev_data, ev_embedder = "dst_backbone", ev_backbone, ev_dst;
  ev->add_option("--config", ev_cfg, "kv config file");
  ev->add_option("--checkpoint", ev_ckpt,
                 "training checkpoint file or directory (default <run-dir>/train)");
  ev->add_option("--data", ev_data, "corpus root (default <run-dir>/corpus)");
  ev->add_option("--embedder", ev_embedder, "dst_backbone or pixel_pca");
  ev->add_option("--backbone", ev_backbone, "override the recorded backbone checkpoint path");
  ev->add_option("--dst", ev_dst, "override the recorded discriminator checkpoint path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (mk->parsed()) return cmd_make_synthetic(g, mk_cfg, mk, mk_out, mk_n, mk_res, mk_dupes);
    if (pd->parsed()) return cmd_prepare_data(g, pd_cfg, pd, pd_root, pd_ratio, pd_threshold, pd_res);
    if (pg->parsed()) return cmd_pretrain_gan(g, pg_cfg, pg, pg_data, pg_steps);
    if (td->parsed()) return cmd_train_dst(g, td_cfg, td, td_data, td_steps);
    if (tr->parsed()) {
      return cmd_train(g, tr_cfg, tr, tr_data, tr_steps, tr_direction, tr_resume, tr_ab_lst,
                       tr_ab_dual);
    }
    if (sy->parsed()) return cmd_synthesize(g, sy_cfg, sy, sy_ckpt, sy_in, sy_out, sy_backbone);
    if (ev->parsed()) {
      return cmd_evaluate(g, ev_cfg, ev, ev_ckpt, ev_data, ev_embedder, ev_backbone, ev_dst);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingDependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
