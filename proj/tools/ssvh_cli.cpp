// ssvh: command-line pipeline for self-supervised video hashing.
//
//   ssvh gen-data    --out data/
//   ssvh build-graph --features data/features.bin --out data/graph.bin
//   ssvh train       --features data/features.bin --graph data/graph.bin --out model.ckpt
//   ssvh encode      --checkpoint model.ckpt --features data/features.bin --out codes.bin
//   ssvh retrieve    --codes codes.bin --query-index 0 --topk 10
//   ssvh eval        --codes codes.bin --labels data/labels.bin
//   ssvh sweep       --features data/features.bin --labels data/labels.bin --param lambda
//
// Every command writes a JSON run manifest next to its outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ssvh/ssvh.hpp"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kToolVersion = "0.1.0";

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class Manifest {
 public:
  explicit Manifest(std::string command)
      : command_(std::move(command)), started_(utc_now()), t0_(std::chrono::steady_clock::now()) {}

  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::optional<std::uint64_t> seed;

  json to_json() const {
    json j;
    j["command"] = command_;
    j["tool_version"] = kToolVersion;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["started_at"] = started_;
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    return j;
  }

  // "-" sends the manifest to stderr.
  void write(const std::string& path) const {
    const std::string text = to_json().dump(2) + "\n";
    if (path == "-") {
      std::cerr << text;
      return;
    }
    std::ofstream out(path, std::ios::binary);
    ssvh::require(static_cast<bool>(out), ssvh::ErrorKind::kData,
                  "cannot write manifest " + path);
    out << text;
  }

 private:
  std::string command_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  ssvh::require(static_cast<bool>(out), ssvh::ErrorKind::kData, "cannot write " + path);
  out << text;
  ssvh::require(static_cast<bool>(out), ssvh::ErrorKind::kData, "short write to " + path);
}

std::vector<ssvh::Vector> pooled(const ssvh::Dataset& ds) {
  std::vector<ssvh::Vector> out;
  out.reserve(ds.size());
  for (const auto& v : ds.videos) out.push_back(ssvh::mean_pool(v));
  return out;
}

ssvh::NeighborGraph make_graph(const ssvh::Dataset& ds, std::size_t k1, std::size_t k2,
                               std::size_t shards, std::size_t threads) {
  const auto videos = pooled(ds);
  if (shards <= 1) {
    ssvh::require(k1 < videos.size(), ssvh::ErrorKind::kUsage,
                  "build-graph: K1=" + std::to_string(k1) + " must be smaller than n=" +
                      std::to_string(videos.size()));
    return ssvh::build_graph(videos, k1, k2, threads);
  }
  return ssvh::build_sharded_graph(videos, k1, k2, shards, threads);
}

std::string map_csv(const ssvh::MapReport& rep) {
  std::string csv = "k,map\n";
  for (std::size_t i = 0; i < rep.ks.size(); ++i)
    csv += std::to_string(rep.ks[i]) + "," + fmt_double(rep.map[i]) + "\n";
  return csv;
}

// ---------------------------------------------------------------------------
// Shared training flags

struct TrainFlags {
  std::size_t code_len = 256;
  std::size_t stride = 2;
  std::size_t encoder_hidden = 256;
  std::size_t decoder_hidden = 256;
  std::size_t global_steps = 1;
  std::string activation = "hard_sgn_ste";
  double lambda = 0.001;
  double eta = 0.2;
  double lr = 0.01;
  double lr_decay = 0.1;
  double clip = 5.0;
  std::size_t epochs = 30;
  std::size_t batch = 256;
  std::uint64_t seed = 42;
  std::size_t k1 = 20;
  std::size_t k2 = 10;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--code-len", code_len, "code length L")->capture_default_str();
    cmd->add_option("--stride", stride, "encoder layer-2 stride l")->capture_default_str();
    cmd->add_option("--encoder-hidden", encoder_hidden, "encoder layer-1 width H1")
        ->capture_default_str();
    cmd->add_option("--decoder-hidden", decoder_hidden, "decoder width H2")->capture_default_str();
    cmd->add_option("--global-steps", global_steps, "global decoder steps")->capture_default_str();
    cmd->add_option("--activation", activation, "hard_sgn_ste | tanh_relax | surrogate")
        ->capture_default_str()
        ->check(CLI::IsMember({"hard_sgn_ste", "tanh_relax", "surrogate"}));
    cmd->add_option("--lambda", lambda, "reconstruction weight")->capture_default_str();
    cmd->add_option("--eta", eta, "binary regularizer weight")->capture_default_str();
    cmd->add_option("--lr", lr, "learning rate")->capture_default_str();
    cmd->add_option("--lr-decay", lr_decay, "lr factor per third of training")
        ->capture_default_str();
    cmd->add_option("--clip", clip, "global gradient norm clip")->capture_default_str();
    cmd->add_option("--epochs", epochs, "total epochs")->capture_default_str();
    cmd->add_option("--batch", batch, "mini-batch size (capped at n)")->capture_default_str();
    cmd->add_option("--seed", seed, "initialization and shuffling seed")->capture_default_str();
    cmd->add_option("--k1", k1, "K1 used for the graph")->capture_default_str();
    cmd->add_option("--k2", k2, "K2 used for the graph")->capture_default_str();
  }

  ssvh::TrainConfig resolve(const ssvh::Dataset& ds) const {
    ssvh::TrainConfig cfg;
    cfg.model.input_dim = ds.dim;
    cfg.model.frames = ds.frames;
    cfg.model.stride = stride;
    cfg.model.encoder_hidden = encoder_hidden;
    cfg.model.code_len = code_len;
    cfg.model.decoder_hidden = decoder_hidden;
    cfg.model.global_steps = global_steps;
    cfg.model.binarizer = ssvh::parse_activation(activation);
    cfg.lambda = lambda;
    cfg.eta = eta;
    cfg.learning_rate = lr;
    cfg.lr_decay = lr_decay;
    cfg.clip_norm = clip;
    cfg.epochs = epochs;
    cfg.batch_size = std::min(batch, ds.size());
    cfg.seed = seed;
    cfg.k1 = k1;
    cfg.k2 = k2;
    cfg.validate();
    return cfg;
  }
};

json config_json(const ssvh::TrainConfig& cfg) {
  return json{{"input_dim", cfg.model.input_dim},
              {"frames", cfg.model.frames},
              {"stride", cfg.model.stride},
              {"encoder_hidden", cfg.model.encoder_hidden},
              {"code_len", cfg.model.code_len},
              {"decoder_hidden", cfg.model.decoder_hidden},
              {"global_steps", cfg.model.global_steps},
              {"activation", ssvh::activation_name(cfg.model.binarizer)},
              {"lambda", cfg.lambda},
              {"eta", cfg.eta},
              {"lr", cfg.learning_rate},
              {"lr_decay", cfg.lr_decay},
              {"clip", cfg.clip_norm},
              {"epochs", cfg.epochs},
              {"batch", cfg.batch_size},
              {"seed", cfg.seed},
              {"k1", cfg.k1},
              {"k2", cfg.k2}};
}

std::string loss_csv(const std::vector<ssvh::LossRecord>& history) {
  std::string csv = "epoch,recon,neighbor,total\n";
  for (const auto& r : history)
    csv += std::to_string(r.epoch) + "," + fmt_double(r.recon) + "," + fmt_double(r.neighbor) +
           "," + fmt_double(r.total) + "\n";
  return csv;
}

std::vector<std::size_t> parse_ks(const std::vector<std::size_t>& ks) {
  ssvh::require(!ks.empty(), ssvh::ErrorKind::kUsage, "empty --topk list");
  for (std::size_t k : ks) ssvh::require(k > 0, ssvh::ErrorKind::kUsage, "--topk values must be positive");
  return ks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised video hashing pipeline"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "TOML/INI config file; flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads for graph building and evaluation")
      ->envname("SSVH_THREADS")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  std::string manifest_path;
  app.add_option("--manifest", manifest_path,
                 "manifest path (default: next to the main output; '-' for stderr)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a clustered synthetic video dataset");
  ssvh::SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--n", spec.n_videos, "number of videos")->capture_default_str();
  gen->add_option("--clusters", spec.n_clusters, "number of clusters")->capture_default_str();
  gen->add_option("--m", spec.frames, "frames per video")->capture_default_str();
  gen->add_option("--d", spec.dim, "feature dimension")->capture_default_str();
  gen->add_option("--separation", spec.cluster_separation, "minimum center distance")
      ->capture_default_str();
  gen->add_option("--noise", spec.within_noise, "per-frame noise std")->capture_default_str();
  gen->add_option("--drift", spec.temporal_drift, "random-walk step per frame")->capture_default_str();
  gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // build-graph
  auto* bg = app.add_subcommand("build-graph", "build the K1/K2 neighborhood graph");
  std::string bg_features, bg_out;
  std::size_t bg_k1 = 20, bg_k2 = 10, bg_shards = 1;
  bg->add_option("--features", bg_features, "SSVH-FEAT file")->required()->check(CLI::ExistingFile);
  bg->add_option("--k1", bg_k1, "nearest neighbors per video")->capture_default_str();
  bg->add_option("--k2", bg_k2, "expanded neighbors per video")->capture_default_str();
  bg->add_option("--shards", bg_shards, "contiguous parts with independent graphs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bg->add_option("--out", bg_out, "SSVH-NBRG output file")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the binary auto-encoder");
  TrainFlags tf;
  std::string tr_features, tr_graph, tr_out, tr_resume, tr_csv;
  tr->add_option("--features", tr_features, "SSVH-FEAT file")->required()->check(CLI::ExistingFile);
  tr->add_option("--graph", tr_graph, "SSVH-NBRG file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "SSVH-CKPT output file")->required();
  tr->add_option("--resume", tr_resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--loss-csv", tr_csv, "per-epoch loss CSV (default: <out>.loss.csv)");
  tf.add_to(tr);

  // encode
  auto* en = app.add_subcommand("encode", "hash every video with a trained model");
  std::string en_ckpt, en_features, en_out;
  en->add_option("--checkpoint", en_ckpt, "SSVH-CKPT file")->required()->check(CLI::ExistingFile);
  en->add_option("--features", en_features, "SSVH-FEAT file")->required()->check(CLI::ExistingFile);
  en->add_option("--out", en_out, "SSVH-CODE output file")->required();

  // retrieve
  auto* rt = app.add_subcommand("retrieve", "Hamming-rank the database against one query");
  std::string rt_codes;
  std::size_t rt_query = 0, rt_topk = 10;
  bool rt_exclude = false;
  rt->add_option("--codes", rt_codes, "SSVH-CODE file")->required()->check(CLI::ExistingFile);
  rt->add_option("--query-index", rt_query, "query row in the codes file")->required();
  rt->add_option("--topk", rt_topk, "number of results")->capture_default_str();
  rt->add_flag("--exclude-self", rt_exclude, "drop the query from its own ranking");

  // eval
  auto* ev = app.add_subcommand("eval", "mAP@K with every code as a query");
  std::string ev_codes, ev_labels, ev_csv;
  std::vector<std::size_t> ev_ks{5, 10, 20, 40, 60, 80, 100};
  ev->add_option("--codes", ev_codes, "SSVH-CODE file")->required()->check(CLI::ExistingFile);
  ev->add_option("--labels", ev_labels, "SSVH-LABL file")->required()->check(CLI::ExistingFile);
  ev->add_option("--topk", ev_ks, "comma-separated K list")->delimiter(',')->capture_default_str();
  ev->add_option("--csv", ev_csv, "CSV output (default: <codes>.map.csv)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train and evaluate once per parameter value");
  TrainFlags sf;
  std::string sw_features, sw_labels, sw_param = "lambda", sw_out;
  std::vector<double> sw_values;
  std::vector<std::size_t> sw_ks{5, 10, 20, 40, 60, 80, 100};
  sw->add_option("--features", sw_features, "SSVH-FEAT file")->required()->check(CLI::ExistingFile);
  sw->add_option("--labels", sw_labels, "SSVH-LABL file")->required()->check(CLI::ExistingFile);
  sw->add_option("--param", sw_param, "lambda | k1 | k2")
      ->capture_default_str()
      ->check(CLI::IsMember({"lambda", "k1", "k2"}));
  sw->add_option("--values", sw_values, "comma-separated values (default: the standard grid)")
      ->delimiter(',');
  sw->add_option("--topk", sw_ks, "comma-separated K list")->delimiter(',')->capture_default_str();
  sw->add_option("--out-dir", sw_out, "directory for the table, CSV and per-row manifests")
      ->required();
  sf.add_to(sw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    std::cerr << failed->help();
    return 1;
  }

  try {
    if (*gen) {
      Manifest mf("gen-data");
      mf.seed = spec.seed;
      mf.config = {{"n", spec.n_videos},          {"clusters", spec.n_clusters},
                   {"m", spec.frames},            {"d", spec.dim},
                   {"separation", spec.cluster_separation}, {"noise", spec.within_noise},
                   {"drift", spec.temporal_drift}, {"seed", spec.seed}};
      ssvh::Dataset ds = ssvh::generate(spec);
      fs::create_directories(gen_out);
      const std::string feat = (fs::path(gen_out) / "features.bin").string();
      const std::string labl = (fs::path(gen_out) / "labels.bin").string();
      ssvh::write_features(ds, feat);
      ssvh::write_labels(*ds.labels, labl);
      mf.outputs = {{"features", feat}, {"labels", labl}};
      mf.write(manifest_path.empty() ? (fs::path(gen_out) / "manifest.json").string()
                                     : manifest_path);
      std::cout << "wrote " << ds.size() << " videos to " << gen_out << "\n";
    } else if (*bg) {
      Manifest mf("build-graph");
      mf.config = {{"k1", bg_k1}, {"k2", bg_k2}, {"shards", bg_shards}, {"threads", threads}};
      mf.inputs = {{"features", bg_features}};
      ssvh::Dataset ds = ssvh::read_features(bg_features);
      ssvh::NeighborGraph g = make_graph(ds, bg_k1, bg_k2, bg_shards, threads);
      ssvh::write_graph(g, bg_out);
      mf.outputs = {{"graph", bg_out}};
      mf.write(manifest_path.empty() ? bg_out + ".manifest.json" : manifest_path);
      std::size_t edges = 0;
      for (const auto& a : g.adjacency) edges += a.size();
      std::cout << "graph: " << g.size() << " videos, " << edges / 2 << " edges\n";
    } else if (*tr) {
      Manifest mf("train");
      ssvh::Dataset ds = ssvh::read_features(tr_features);
      ssvh::NeighborGraph g = ssvh::read_graph(tr_graph);
      ssvh::require(ds.size() == g.size(), ssvh::ErrorKind::kData,
                    "train: features have " + std::to_string(ds.size()) + " videos but graph has " +
                        std::to_string(g.size()));
      const ssvh::TrainConfig cfg = tf.resolve(ds);
      std::optional<ssvh::Checkpoint> resume;
      if (!tr_resume.empty()) resume = ssvh::load_checkpoint(tr_resume);
      mf.seed = cfg.seed;
      mf.config = config_json(cfg);
      mf.inputs = {{"features", tr_features}, {"graph", tr_graph}};
      if (resume) mf.inputs["resume"] = tr_resume;

      auto result = ssvh::train(ds, g, cfg, resume ? &*resume : nullptr,
                                [](const ssvh::LossRecord& r) {
                                  std::cerr << "epoch " << r.epoch << " recon " << r.recon
                                            << " neighbor " << r.neighbor << " total " << r.total
                                            << "\n";
                                });
      const std::string csv = tr_csv.empty() ? tr_out + ".loss.csv" : tr_csv;
      ssvh::save_checkpoint(result.checkpoint, tr_out);
      write_text(csv, loss_csv(result.checkpoint.history));
      mf.outputs = {{"checkpoint", tr_out}, {"loss_csv", csv}};
      mf.write(manifest_path.empty() ? tr_out + ".manifest.json" : manifest_path);
    } else if (*en) {
      Manifest mf("encode");
      ssvh::Checkpoint ck = ssvh::load_checkpoint(en_ckpt);
      ssvh::Dataset ds = ssvh::read_features(en_features);
      mf.seed = ck.config.seed;
      mf.config = config_json(ck.config);
      mf.inputs = {{"checkpoint", en_ckpt}, {"features", en_features}};
      ssvh::RetrievalDB db = ssvh::hash_dataset(ck.model, ds);
      ssvh::write_codes(db, en_out);
      mf.outputs = {{"codes", en_out}};
      mf.write(manifest_path.empty() ? en_out + ".manifest.json" : manifest_path);
    } else if (*rt) {
      Manifest mf("retrieve");
      ssvh::RetrievalDB db = ssvh::read_codes(rt_codes);
      ssvh::require(rt_query < db.size(), ssvh::ErrorKind::kUsage,
                    "retrieve: query index " + std::to_string(rt_query) + " out of range for " +
                        std::to_string(db.size()) + " codes");
      mf.config = {{"query_index", rt_query}, {"topk", rt_topk}, {"exclude_self", rt_exclude}};
      mf.inputs = {{"codes", rt_codes}};
      const auto ranked = ssvh::rank(db.packed(rt_query), db,
                                     rt_exclude ? std::optional<std::size_t>(rt_query) : std::nullopt);
      if (rt_topk > ranked.size())
        std::cerr << "warning: --topk " << rt_topk << " exceeds the " << ranked.size()
                  << " candidates; returning all\n";
      const std::size_t k = std::min(rt_topk, ranked.size());
      std::cout << "rank\tindex\tdistance\n";
      for (std::size_t i = 0; i < k; ++i)
        std::cout << i + 1 << "\t" << ranked[i].index << "\t" << ranked[i].distance << "\n";
      mf.write(manifest_path.empty() ? "-" : manifest_path);
    } else if (*ev) {
      Manifest mf("eval");
      ssvh::RetrievalDB db = ssvh::read_codes(ev_codes);
      db.set_labels(ssvh::read_labels(ev_labels));
      const auto ks = parse_ks(ev_ks);
      mf.config = {{"topk", ks}, {"threads", threads}};
      mf.inputs = {{"codes", ev_codes}, {"labels", ev_labels}};
      const ssvh::MapReport rep = ssvh::map_at_k(db, ks, threads);
      std::cout << "K\tmAP@K\n";
      for (std::size_t i = 0; i < rep.ks.size(); ++i)
        std::cout << rep.ks[i] << "\t" << std::fixed << std::setprecision(4) << rep.map[i] << "\n";
      std::cout << "queries " << rep.queries << ", skipped " << rep.skipped << "\n";
      const std::string csv = ev_csv.empty() ? ev_codes + ".map.csv" : ev_csv;
      write_text(csv, map_csv(rep));
      mf.outputs = {{"csv", csv}};
      mf.write(manifest_path.empty() ? csv + ".manifest.json" : manifest_path);
    } else if (*sw) {
      Manifest mf("sweep");
      ssvh::Dataset ds = ssvh::read_features(sw_features);
      const auto labels = ssvh::read_labels(sw_labels);
      ssvh::require(labels.size() == ds.size(), ssvh::ErrorKind::kData,
                    "sweep: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(ds.size()) + " videos");
      ds.labels = labels;
      const auto ks = parse_ks(sw_ks);
      if (sw_values.empty()) {
        if (sw_param == "lambda")
          sw_values = {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
        else
          sw_values = {5, 10, 15, 20, 25, 30};
      }
      if (sw_param != "lambda")
        for (double v : sw_values)
          ssvh::require(v >= 1 && v == std::floor(v), ssvh::ErrorKind::kUsage,
                        "sweep: " + sw_param + " values must be positive integers");
      fs::create_directories(sw_out);

      const ssvh::TrainConfig base = sf.resolve(ds);
      mf.seed = base.seed;
      mf.config = config_json(base);
      mf.config["param"] = sw_param;
      mf.config["values"] = sw_values;
      mf.config["topk"] = ks;
      mf.inputs = {{"features", sw_features}, {"labels", sw_labels}};

      std::optional<ssvh::NeighborGraph> shared;
      if (sw_param == "lambda") shared = make_graph(ds, base.k1, base.k2, 1, threads);

      std::string csv = sw_param;
      for (std::size_t k : ks) csv += ",map@" + std::to_string(k);
      csv += "\n";
      std::cout << sw_param;
      for (std::size_t k : ks) std::cout << "\tmAP@" << k;
      std::cout << "\n";
      json rows = json::array();
      for (std::size_t r = 0; r < sw_values.size(); ++r) {
        Manifest row("sweep-row");
        ssvh::TrainConfig cfg = base;
        const double v = sw_values[r];
        if (sw_param == "lambda") cfg.lambda = v;
        if (sw_param == "k1") cfg.k1 = static_cast<std::size_t>(v);
        if (sw_param == "k2") cfg.k2 = static_cast<std::size_t>(v);
        cfg.validate();
        const ssvh::NeighborGraph g = shared ? *shared : make_graph(ds, cfg.k1, cfg.k2, 1, threads);
        auto result = ssvh::train(ds, g, cfg);
        ssvh::RetrievalDB db = ssvh::hash_dataset(result.checkpoint.model, ds);
        const ssvh::MapReport rep = ssvh::map_at_k(db, ks, threads);

        const std::string stem = (fs::path(sw_out) / ("row" + std::to_string(r))).string();
        write_text(stem + ".loss.csv", loss_csv(result.checkpoint.history));
        row.seed = cfg.seed;
        row.config = config_json(cfg);
        row.config["param"] = sw_param;
        row.config["value"] = v;
        row.inputs = mf.inputs;
        row.outputs = {{"loss_csv", stem + ".loss.csv"}, {"map", rep.map}};
        row.write(stem + ".manifest.json");
        rows.push_back(stem + ".manifest.json");

        std::cout << v;
        csv += fmt_double(v);
        for (double m : rep.map) {
          std::cout << "\t" << std::fixed << std::setprecision(4) << m;
          csv += "," + fmt_double(m);
        }
        std::cout.unsetf(std::ios::floatfield);
        std::cout << std::endl;
        csv += "\n";
      }
      const std::string csv_path = (fs::path(sw_out) / "sweep.csv").string();
      write_text(csv_path, csv);
      mf.outputs = {{"csv", csv_path}, {"rows", rows}};
      mf.write(manifest_path.empty() ? (fs::path(sw_out) / "manifest.json").string()
                                     : manifest_path);
    }
  } catch (const ssvh::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.kind() == ssvh::ErrorKind::kUsage)
      for (auto* sub : app.get_subcommands()) std::cerr << "\n" << sub->help();
    return ssvh::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
