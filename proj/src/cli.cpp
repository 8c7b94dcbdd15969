#include "digen/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "digen/dd.hpp"
#include "digen/metrics.hpp"
#include "digen/synth.hpp"

namespace digen {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Batch scripts can cap worker counts globally without editing every call.
int default_threads() {
  const char* env = std::getenv("DIGEN_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == nullptr || *end != '\0' || v < 1 || v > 1024) return 1;
  return static_cast<int>(v);
}

// Missing inputs are a usage problem (exit 2), not a runtime failure, so
// commands check paths up front instead of letting open() fail later.
void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InvalidParam(what + ": no path given");
  if (!fs::exists(path)) throw InvalidParam(what + ": no such file " + path);
}

ordered_json load_json_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  std::ifstream in(path);
  if (!in) throw IoError(what + ": cannot open " + path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(what + ": " + ex.what(), 0);
  }
}

// Copies j[key] onto `field` when present; absent keys keep the default.
template <typename T>
void overlay(const ordered_json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("config key '") + key + "': " + ex.what(), 0);
  }
}

// Precedence: built-in default < config file < explicit flag. Flags are
// already bound to the target, so the file only fills unflagged fields.
template <typename T>
void pick(const CLI::Option* opt, const ordered_json& j, const char* key, T& target) {
  if (opt == nullptr || opt->count() == 0) overlay(j, key, target);
}

bool usage_error(const Error& e) {
  return dynamic_cast<const InvalidParam*>(&e) != nullptr ||
         dynamic_cast<const InvalidPermutation*>(&e) != nullptr ||
         dynamic_cast<const EmptyDataset*>(&e) != nullptr ||
         dynamic_cast<const UnmappedClass*>(&e) != nullptr ||
         dynamic_cast<const UnlabeledData*>(&e) != nullptr ||
         dynamic_cast<const ShapeMismatch*>(&e) != nullptr ||
         dynamic_cast<const ParseError*>(&e) != nullptr;
}

std::vector<DiGraph> load_graphs(const std::string& path, const std::string& what, int X, int E) {
  require_file(path, what);
  return read_graphs(path, X, E);
}

void create_parent_dirs(const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text_file(const std::string& path, const std::string& text) {
  create_parent_dirs(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

struct DatasetCmd {
  std::string spec_path;
  std::string out_dir;
  bool force = false;
  std::string family;
  std::string name;
  std::uint64_t seed = 1;
  double p = 0.6;
  int n_min = 20, n_max = 80;
  CLI::Option *o_family = nullptr, *o_name = nullptr, *o_seed = nullptr, *o_p = nullptr,
              *o_n_min = nullptr, *o_n_max = nullptr;
};

void print_set_stats(std::ostream& out, const std::vector<DiGraph>& graphs) {
  int n_lo = std::numeric_limits<int>::max(), n_hi = 0;
  long long e_lo = std::numeric_limits<long long>::max(), e_hi = 0;
  double n_sum = 0.0, e_sum = 0.0;
  for (const DiGraph& g : graphs) {
    long long m = g.num_edges();
    n_lo = std::min(n_lo, g.n);
    n_hi = std::max(n_hi, g.n);
    e_lo = std::min(e_lo, m);
    e_hi = std::max(e_hi, m);
    n_sum += g.n;
    e_sum += static_cast<double>(m);
  }
  double count = static_cast<double>(graphs.size());
  out << "nodes min " << n_lo << " max " << n_hi << " avg " << n_sum / count << "\n";
  out << "edges min " << e_lo << " max " << e_hi << " avg " << e_sum / count << "\n";
}

int run_dataset(const DatasetCmd& c, std::ostream& out) {
  DatasetSpec spec;
  if (!c.spec_path.empty()) {
    require_file(c.spec_path, "dataset spec");
    spec = read_dataset_spec(c.spec_path);
  }
  if (c.o_family->count() > 0) spec.family = c.family;
  if (c.o_name->count() > 0) spec.name = c.name;
  if (c.o_seed->count() > 0) spec.seed = c.seed;
  if (c.o_p->count() > 0) spec.p = c.p;
  if (c.o_n_min->count() > 0) spec.n_min = c.n_min;
  if (c.o_n_max->count() > 0) spec.n_max = c.n_max;
  if (spec.family != "er" && spec.family != "er_dag" && spec.family != "price" &&
      spec.family != "sbm")
    throw InvalidParam("dataset: unknown family " + spec.family);
  if (c.out_dir.empty()) throw InvalidParam("dataset: --out is required");

  fs::path manifest_path = fs::path(c.out_dir) / "manifest.json";
  if (fs::exists(manifest_path) && !c.force)
    throw InvalidParam("dataset: " + manifest_path.string() +
                       " already exists; pass --force to regenerate");

  DatasetManifest m = make_dataset(spec, c.out_dir);

  std::vector<DiGraph> all = read_graphs(m.train_path, m.X, m.E);
  std::vector<DiGraph> val = read_graphs(m.val_path, m.X, m.E);
  std::vector<DiGraph> test = read_graphs(m.test_path, m.X, m.E);
  out << "manifest " << manifest_path.string() << "\n";
  out << "train " << all.size() << "  val " << val.size() << "  test " << test.size() << "\n";
  all.insert(all.end(), val.begin(), val.end());
  all.insert(all.end(), test.begin(), test.end());
  print_set_stats(out, all);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
  std::string config;
  std::string manifest, out_dir, resume;
  std::string engine = "dfm";
  std::string noise = "marginal";
  std::string train_distortion = "identity";
  std::uint64_t seed = 1;
  int steps = 1000, batch_size = 16, log_every = 50, val_every = 0;
  int threads = 1;
  double lr = 2e-4, lambda_edge = 5.0, weight_decay = 1e-12;
  int dd_T = 500;
  double dd_s = 0.008;
  // model shape
  int layers = 5, d_x = 64, d_e = 32, d_y = 32, n_heads = 8, ff_x = 128, ff_e = 64, ff_y = 64;
  bool layer_norm = true;
  // structural features
  std::string pe_kind = "rrwp";
  std::vector<double> q;
  int k_eigen = 10, K_walk = 20;
  bool ppr = false, pe_normalized = false;
  std::string walk = "pagerank";
  double teleport = 0.05, p_restart = 0.05;

  CLI::Option *o_manifest = nullptr, *o_out = nullptr, *o_resume = nullptr, *o_engine = nullptr,
              *o_noise = nullptr, *o_tdist = nullptr, *o_seed = nullptr, *o_steps = nullptr,
              *o_batch = nullptr, *o_log_every = nullptr, *o_val_every = nullptr,
              *o_threads = nullptr, *o_lr = nullptr, *o_lambda = nullptr, *o_wd = nullptr,
              *o_dd_T = nullptr, *o_dd_s = nullptr;
  CLI::Option *o_layers = nullptr, *o_d_x = nullptr, *o_d_e = nullptr, *o_d_y = nullptr,
              *o_heads = nullptr, *o_ff_x = nullptr, *o_ff_e = nullptr, *o_ff_y = nullptr,
              *o_layer_norm = nullptr;
  CLI::Option *o_pe = nullptr, *o_q = nullptr, *o_k_eigen = nullptr, *o_K_walk = nullptr,
              *o_ppr = nullptr, *o_pe_normalized = nullptr, *o_walk = nullptr,
              *o_teleport = nullptr, *o_p_restart = nullptr;
};

// Shared by train and sample: the flags that shape the structural features.
PEConfig resolve_pe(const TrainCmd& c, const ordered_json& j) {
  PEConfig pc;
  pc.kind = PEKind::RRWP;
  if (j.contains("pe")) pc = pe_config_from_json(j["pe"].dump());
  if (c.o_pe->count() > 0) pc.kind = pe_kind_from_string(c.pe_kind);
  if (c.o_q->count() > 0) pc.q_list = c.q;
  if (c.o_k_eigen->count() > 0) pc.k_eigen = c.k_eigen;
  if (c.o_K_walk->count() > 0) pc.K_walk = c.K_walk;
  if (c.o_ppr->count() > 0) pc.use_ppr = c.ppr;
  if (c.o_pe_normalized->count() > 0) pc.normalized = c.pe_normalized;
  if (c.o_walk->count() > 0) pc.walk = walk_from_string(c.walk);
  if (c.o_teleport->count() > 0) pc.teleport = c.teleport;
  if (c.o_p_restart->count() > 0) pc.p_restart = c.p_restart;
  if ((pc.kind == PEKind::MAGLAP || pc.kind == PEKind::MULTI_MAGLAP) && pc.q_list.empty())
    pc.q_list = q_preset5();
  pc.validate();
  return pc;
}

// Mean corruption-reconstruction loss over the validation split, with the
// corruption stream pinned to (seed, step) so the trace is comparable
// across runs and thread counts.
double val_loss(const Checkpoint& ckpt, const std::vector<DiGraph>& val, const Corruptor& corrupt,
                double lambda_edge, int threads) {
  std::vector<double> losses(val.size(), 0.0);
  std::atomic<size_t> next{0};
  auto work = [&]() {
    for (size_t i = next.fetch_add(1); i < val.size(); i = next.fetch_add(1)) {
      Rng rng(derive_seed(ckpt.seed, "val",
                          static_cast<std::uint64_t>(ckpt.step) * 0x9E3779B9ull + i));
      auto [noisy, t] = corrupt(val[i], rng);
      PEFeatures pe = pe_features(noisy, ckpt.pe);
      losses[i] =
          loss_and_grad(ckpt.model, ckpt.params, noisy, pe, t, val[i], lambda_edge, nullptr);
    }
  };
  if (threads <= 1 || val.size() <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    int workers = std::min<int>(threads, static_cast<int>(val.size()));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }
  double sum = 0.0;
  for (double v : losses) sum += v;
  return sum / static_cast<double>(val.size());
}

int run_train(const TrainCmd& cmd, std::ostream& out, std::ostream& err) {
  TrainCmd c = cmd;
  ordered_json j =
      c.config.empty() ? ordered_json::object() : load_json_file(c.config, "train config");

  pick(c.o_manifest, j, "manifest", c.manifest);
  pick(c.o_out, j, "out_dir", c.out_dir);
  pick(c.o_resume, j, "resume", c.resume);
  pick(c.o_engine, j, "engine", c.engine);
  pick(c.o_noise, j, "noise", c.noise);
  pick(c.o_tdist, j, "train_distortion", c.train_distortion);
  pick(c.o_seed, j, "seed", c.seed);
  pick(c.o_steps, j, "steps", c.steps);
  pick(c.o_batch, j, "batch_size", c.batch_size);
  pick(c.o_log_every, j, "log_every", c.log_every);
  pick(c.o_val_every, j, "val_every", c.val_every);
  pick(c.o_threads, j, "threads", c.threads);
  pick(c.o_lr, j, "lr", c.lr);
  pick(c.o_lambda, j, "lambda_edge", c.lambda_edge);
  pick(c.o_wd, j, "weight_decay", c.weight_decay);
  ordered_json jd = j.value("dd", ordered_json::object());
  pick(c.o_dd_T, jd, "T", c.dd_T);
  pick(c.o_dd_s, jd, "s", c.dd_s);

  if (c.engine != "dfm" && c.engine != "dd")
    throw InvalidParam("train: engine must be dfm or dd, got " + c.engine);
  if (c.noise != "uniform" && c.noise != "marginal")
    throw InvalidParam("train: noise must be uniform or marginal, got " + c.noise);
  if (c.out_dir.empty()) throw InvalidParam("train: --out is required");
  if (c.val_every < 0) throw InvalidParam("train: --val-every must be >= 0");
  Distortion tdist = distortion_from_string(c.train_distortion);

  require_file(c.manifest, "train manifest");
  DatasetManifest man = read_manifest(c.manifest);
  std::vector<DiGraph> train_graphs = load_graphs(man.train_path, "train split", man.X, man.E);
  std::vector<DiGraph> val_graphs = load_graphs(man.val_path, "val split", man.X, man.E);

  bool resuming = !c.resume.empty();
  Checkpoint ckpt;
  if (resuming) {
    require_file(c.resume, "train resume checkpoint");
    ckpt = load_checkpoint(c.resume);
    if (ckpt.model.X != man.X || ckpt.model.E != man.E)
      throw InvalidParam("train: checkpoint class counts do not match the dataset");
    // The recorded run defines the process; flags may still retune knobs.
    ordered_json meta = ordered_json::parse(ckpt.meta_json, nullptr, false);
    if (meta.is_object()) {
      if (c.o_engine->count() == 0 && !j.contains("engine"))
        c.engine = meta.value("engine", c.engine);
      if (c.o_noise->count() == 0 && !j.contains("noise")) c.noise = meta.value("noise", c.noise);
      if (c.o_tdist->count() == 0 && !j.contains("train_distortion")) {
        c.train_distortion = meta.value("train_distortion", c.train_distortion);
        tdist = distortion_from_string(c.train_distortion);
      }
      ordered_json md = meta.value("dd", ordered_json::object());
      if (c.o_dd_T->count() == 0 && !jd.contains("T")) c.dd_T = md.value("T", c.dd_T);
      if (c.o_dd_s->count() == 0 && !jd.contains("s")) c.dd_s = md.value("s", c.dd_s);
    }
    bool shape_flags = c.o_layers->count() || c.o_d_x->count() || c.o_d_e->count() ||
                       c.o_d_y->count() || c.o_heads->count() || c.o_ff_x->count() ||
                       c.o_ff_e->count() || c.o_ff_y->count() || c.o_layer_norm->count() ||
                       c.o_pe->count() || c.o_q->count() || c.o_k_eigen->count() ||
                       c.o_K_walk->count() || c.o_ppr->count() || c.o_pe_normalized->count() ||
                       c.o_walk->count() || c.o_teleport->count() || c.o_p_restart->count() ||
                       c.o_seed->count();
    if (shape_flags)
      err << "train: resuming; model shape, feature config, and seed come from the checkpoint\n";
  } else {
    PEConfig pc = resolve_pe(c, j);
    ModelConfig mc;
    ordered_json jm = j.value("model", ordered_json::object());
    pick(c.o_layers, jm, "layers", mc.layers);
    pick(c.o_d_x, jm, "d_x", mc.d_x);
    pick(c.o_d_e, jm, "d_e", mc.d_e);
    pick(c.o_d_y, jm, "d_y", mc.d_y);
    pick(c.o_heads, jm, "n_heads", mc.n_heads);
    pick(c.o_ff_x, jm, "ff_x", mc.ff_x);
    pick(c.o_ff_e, jm, "ff_e", mc.ff_e);
    pick(c.o_ff_y, jm, "ff_y", mc.ff_y);
    pick(c.o_layer_norm, jm, "layer_norm", mc.layer_norm);
    if (c.o_layers->count() > 0) mc.layers = c.layers;
    if (c.o_d_x->count() > 0) mc.d_x = c.d_x;
    if (c.o_d_e->count() > 0) mc.d_e = c.d_e;
    if (c.o_d_y->count() > 0) mc.d_y = c.d_y;
    if (c.o_heads->count() > 0) mc.n_heads = c.n_heads;
    if (c.o_ff_x->count() > 0) mc.ff_x = c.ff_x;
    if (c.o_ff_e->count() > 0) mc.ff_e = c.ff_e;
    if (c.o_ff_y->count() > 0) mc.ff_y = c.ff_y;
    if (c.o_layer_norm->count() > 0) mc.layer_norm = c.layer_norm;
    mc.X = man.X;
    mc.E = man.E;
    PEDims dims = pe_dims(pc);
    mc.pe_node = dims.node;
    mc.pe_edge = dims.edge;
    mc.pe_graph = dims.graph;
    mc.validate();

    ckpt.model = mc;
    ckpt.pe = pc;
    ckpt.seed = c.seed;
    ckpt.step = 0;
    Rng prng(derive_seed(c.seed, "init", 0));
    ckpt.params = build_params(mc, prng);
  }

  DiffusionSchedule sched{c.dd_T, c.dd_s};
  if (c.engine == "dd") {
    sched.validate();
    if (tdist != Distortion::IDENTITY)
      err << "train: dd engine draws grid levels; --train-distortion ignored\n";
  }

  NoiseModel nm = c.noise == "uniform" ? NoiseModel::uniform(man.X, man.E)
                                       : NoiseModel::marginal(train_graphs, man.X, man.E);
  Corruptor corrupt =
      c.engine == "dfm" ? make_dfm_corruptor(nm, tdist) : make_dd_corruptor(nm, sched);

  TrainConfig probe;
  probe.steps = c.steps;
  probe.batch_size = c.batch_size;
  probe.lr = c.lr;
  probe.lambda_edge = c.lambda_edge;
  probe.weight_decay = c.weight_decay;
  probe.threads = c.threads;
  probe.log_every = c.log_every;
  probe.validate();

  // Config is fully validated; only now touch the output directory.
  fs::create_directories(c.out_dir);
  std::string loss_path = (fs::path(c.out_dir) / "loss.csv").string();
  std::string val_path = (fs::path(c.out_dir) / "val.csv").string();
  bool append = resuming && fs::exists(loss_path);
  std::ofstream loss_csv(loss_path, append ? std::ios::app : std::ios::trunc);
  if (!loss_csv) throw IoError("train: cannot open " + loss_path);
  if (!append) loss_csv << "step,loss\n";
  bool val_append = resuming && fs::exists(val_path);
  std::ofstream val_csv(val_path, val_append ? std::ios::app : std::ios::trunc);
  if (!val_csv) throw IoError("train: cannot open " + val_path);
  if (!val_append) val_csv << "step,val_loss\n";

  ordered_json meta;
  meta["engine"] = c.engine;
  meta["noise"] = c.noise;
  meta["train_distortion"] = c.train_distortion;
  meta["dd"] = {{"T", c.dd_T}, {"s", c.dd_s}};
  meta["manifest"] = fs::absolute(c.manifest).string();
  ckpt.meta_json = meta.dump();

  int done = 0;
  int chunk = c.val_every > 0 ? c.val_every : c.steps;
  double last_train = 0.0, last_val = 0.0;
  while (done < c.steps) {
    int this_chunk = std::min(chunk, c.steps - done);
    std::int64_t chunk_start = ckpt.step;
    TrainConfig tc = probe;
    tc.steps = this_chunk;
    TrainResult res = train_denoiser(tc, ckpt, train_graphs, corrupt);
    int interval = c.log_every > 0 ? c.log_every : this_chunk;
    for (size_t k = 0; k < res.loss_trace.size(); ++k) {
      std::int64_t end_local =
          std::min<std::int64_t>(static_cast<std::int64_t>(k + 1) * interval, this_chunk);
      loss_csv << (chunk_start + end_local) << ',' << res.loss_trace[k] << "\n";
    }
    last_train = res.last_interval_loss;
    last_val = val_loss(ckpt, val_graphs, corrupt, c.lambda_edge, c.threads);
    val_csv << ckpt.step << ',' << last_val << "\n";
    out << "step " << ckpt.step << " train " << last_train << " val " << last_val << "\n";
    done += this_chunk;
  }
  if (!loss_csv || !val_csv) throw IoError("train: short write to trace CSV");
  loss_csv.close();
  val_csv.close();

  // Write through a temp name so an interrupted run never leaves a file
  // that parses as a complete checkpoint.
  std::string ckpt_path = (fs::path(c.out_dir) / "checkpoint.bin").string();
  save_checkpoint(ckpt_path + ".tmp", ckpt);
  fs::rename(ckpt_path + ".tmp", ckpt_path);

  ordered_json resolved;
  resolved["manifest"] = c.manifest;
  resolved["out_dir"] = c.out_dir;
  resolved["resume"] = c.resume;
  resolved["engine"] = c.engine;
  resolved["noise"] = c.noise;
  resolved["train_distortion"] = c.train_distortion;
  resolved["seed"] = ckpt.seed;
  resolved["steps"] = c.steps;
  resolved["batch_size"] = c.batch_size;
  resolved["lr"] = c.lr;
  resolved["lambda_edge"] = c.lambda_edge;
  resolved["weight_decay"] = c.weight_decay;
  resolved["threads"] = c.threads;
  resolved["log_every"] = c.log_every;
  resolved["val_every"] = c.val_every;
  resolved["dd"] = {{"T", c.dd_T}, {"s", c.dd_s}};
  resolved["model"] = ordered_json::parse(ckpt.model.to_json());
  resolved["pe"] = ordered_json::parse(pe_config_to_json(ckpt.pe));
  write_text_file((fs::path(c.out_dir) / "train_config.json").string(), resolved.dump(2) + "\n");

  out << "checkpoint " << ckpt_path << " at step " << ckpt.step << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleCmd {
  std::string config;
  std::string checkpoint, manifest, out;
  int count = 40;
  std::uint64_t seed = 1;
  std::string engine, noise;  // empty: recorded in the checkpoint
  int steps = 500;
  std::string distortion = "identity";
  double omega = 0.0, eta = 0.0;
  int dd_T = 0;
  double dd_s = -1.0;
  int nodes = 0;  // 0: draw from the training node-count distribution
  int pe_every = 1;
  int threads = 1;
  bool mle = false;

  CLI::Option *o_checkpoint = nullptr, *o_manifest = nullptr, *o_out = nullptr,
              *o_count = nullptr, *o_seed = nullptr, *o_engine = nullptr, *o_noise = nullptr,
              *o_steps = nullptr, *o_distortion = nullptr, *o_omega = nullptr, *o_eta = nullptr,
              *o_dd_T = nullptr, *o_dd_s = nullptr, *o_nodes = nullptr, *o_pe_every = nullptr,
              *o_threads = nullptr, *o_mle = nullptr;
};

int run_sample(const SampleCmd& cmd, std::ostream& out, std::ostream& err) {
  SampleCmd c = cmd;
  ordered_json j =
      c.config.empty() ? ordered_json::object() : load_json_file(c.config, "sample config");
  pick(c.o_checkpoint, j, "checkpoint", c.checkpoint);
  pick(c.o_manifest, j, "manifest", c.manifest);
  pick(c.o_out, j, "out", c.out);
  pick(c.o_count, j, "count", c.count);
  pick(c.o_seed, j, "seed", c.seed);
  pick(c.o_engine, j, "engine", c.engine);
  pick(c.o_noise, j, "noise", c.noise);
  pick(c.o_steps, j, "steps", c.steps);
  pick(c.o_distortion, j, "distortion", c.distortion);
  pick(c.o_omega, j, "omega", c.omega);
  pick(c.o_eta, j, "eta", c.eta);
  ordered_json jd = j.value("dd", ordered_json::object());
  pick(c.o_dd_T, jd, "T", c.dd_T);
  pick(c.o_dd_s, jd, "s", c.dd_s);
  pick(c.o_nodes, j, "nodes", c.nodes);
  pick(c.o_pe_every, j, "pe_every", c.pe_every);
  pick(c.o_threads, j, "threads", c.threads);
  pick(c.o_mle, j, "mle", c.mle);

  if (c.out.empty()) throw InvalidParam("sample: --out is required");
  if (c.count < 1) throw InvalidParam("sample: --count must be >= 1");
  if (c.pe_every < 1) throw InvalidParam("sample: --pe-every must be >= 1");
  if (c.nodes < 0) throw InvalidParam("sample: --nodes must be >= 0");

  bool flagged_dfm_knobs = c.o_steps->count() || c.o_distortion->count() || c.o_omega->count() ||
                           c.o_eta->count() || j.contains("steps") || j.contains("distortion") ||
                           j.contains("omega") || j.contains("eta");

  DatasetManifest man;
  std::vector<DiGraph> train_graphs;
  bool have_manifest = !c.manifest.empty();
  if (have_manifest) {
    require_file(c.manifest, "sample manifest");
    man = read_manifest(c.manifest);
    train_graphs = load_graphs(man.train_path, "train split", man.X, man.E);
  }

  int X = 0, E = 0;
  Checkpoint ckpt;
  MleModel mle_model;
  if (c.mle) {
    if (!have_manifest) throw InvalidParam("sample: --mle needs --manifest for the training split");
    if (!c.checkpoint.empty()) err << "sample: --mle ignores the checkpoint\n";
    X = man.X;
    E = man.E;
    mle_model = mle_fit(train_graphs, X, E);
  } else {
    require_file(c.checkpoint, "sample checkpoint");
    ckpt = load_checkpoint(c.checkpoint);
    X = ckpt.model.X;
    E = ckpt.model.E;
    if (have_manifest && (man.X != X || man.E != E))
      throw InvalidParam("sample: checkpoint class counts do not match the manifest");
    ordered_json meta = ordered_json::parse(ckpt.meta_json, nullptr, false);
    if (meta.is_object()) {
      if (c.engine.empty()) c.engine = meta.value("engine", "");
      if (c.noise.empty()) c.noise = meta.value("noise", "");
      ordered_json md = meta.value("dd", ordered_json::object());
      if (c.dd_T <= 0) c.dd_T = md.value("T", 0);
      if (c.dd_s < 0.0) c.dd_s = md.value("s", -1.0);
    }
  }
  if (c.engine.empty()) c.engine = "dfm";
  if (c.noise.empty()) c.noise = "marginal";
  if (c.dd_T <= 0) c.dd_T = 500;
  if (c.dd_s < 0.0) c.dd_s = 0.008;
  if (c.engine != "dfm" && c.engine != "dd")
    throw InvalidParam("sample: engine must be dfm or dd, got " + c.engine);
  if (c.noise != "uniform" && c.noise != "marginal")
    throw InvalidParam("sample: noise must be uniform or marginal, got " + c.noise);
  if (c.engine == "dd" && flagged_dfm_knobs)
    err << "sample: dd engine ignores --steps/--distortion/--omega/--eta\n";

  NoiseModel nm;
  if (c.noise == "uniform") {
    nm = NoiseModel::uniform(X, E);
  } else {
    if (!have_manifest)
      throw InvalidParam("sample: marginal noise needs --manifest for the training split");
    nm = NoiseModel::marginal(train_graphs, X, E);
  }

  NodeCountSource counts;
  if (c.nodes > 0) {
    counts = NodeCountSource::fixed(c.nodes);
  } else {
    if (!have_manifest)
      throw InvalidParam("sample: need --manifest for the node-count distribution, or --nodes");
    counts = NodeCountSource::from_graphs(train_graphs);
  }

  SamplingKnobs knobs;
  knobs.steps = c.steps;
  knobs.distortion = distortion_from_string(c.distortion);
  knobs.omega = c.omega;
  knobs.eta = c.eta;
  knobs.validate();
  DiffusionSchedule sched{c.dd_T, c.dd_s};
  sched.validate();

  std::vector<DiGraph> samples(static_cast<size_t>(c.count), DiGraph(1));
  std::atomic<int> next{0};
  auto work = [&]() {
    for (int i = next.fetch_add(1); i < c.count; i = next.fetch_add(1)) {
      Rng rng(derive_seed(c.seed, "sample", static_cast<std::uint64_t>(i)));
      if (c.mle) {
        samples[static_cast<size_t>(i)] = mle_sample(mle_model, rng);
        continue;
      }
      // Fresh copy per graph: the feature cache must never carry over from
      // another graph's trajectory, whatever thread picked it up.
      NeuralDenoiser local;
      local.cfg = ckpt.model;
      local.pe_cfg = ckpt.pe;
      local.params = ckpt.params;
      local.pe_every = c.pe_every;
      DenoiserFn fn = [&local](const DiGraph& z_t, double t) { return local(z_t, t); };
      samples[static_cast<size_t>(i)] = c.engine == "dfm"
                                            ? dfm_sample(fn, nm, knobs, counts, rng)
                                            : dd_sample(fn, nm, sched, counts, rng);
    }
  };
  if (c.threads <= 1 || c.count <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    int workers = std::min(c.threads, c.count);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }

  create_parent_dirs(c.out);
  write_graphs(samples, c.out);

  ordered_json side;
  side["engine"] = c.mle ? "mle" : c.engine;
  side["count"] = c.count;
  side["seed"] = c.seed;
  side["noise"] = c.noise;
  side["nodes"] = c.nodes;
  side["pe_every"] = c.pe_every;
  side["checkpoint"] = c.mle ? "" : c.checkpoint;
  side["manifest"] = c.manifest;
  if (!c.mle && c.engine == "dfm") {
    side["steps"] = knobs.steps;
    side["distortion"] = distortion_to_string(knobs.distortion);
    side["omega"] = knobs.omega;
    side["eta"] = knobs.eta;
  }
  if (!c.mle && c.engine == "dd") side["dd"] = {{"T", sched.T}, {"s", sched.s}};
  write_text_file(c.out + ".meta.json", side.dump(2) + "\n");

  out << "wrote " << c.count << " graphs to " << c.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCmd {
  std::string config;
  std::string gen, data, test, train;
  std::string metrics = "mmd,vun";
  std::string validity = "none";
  std::string rules;
  std::string out_prefix;
  double p = 0.6, p_intra = 0.3, p_inter = 0.05, iso_timeout = 5.0;
  int price_m = 0;
  int X = 0, E = 0;
  std::uint64_t seed = 1;
  int threads = 1;

  CLI::Option *o_gen = nullptr, *o_data = nullptr, *o_test = nullptr, *o_train = nullptr,
              *o_metrics = nullptr, *o_validity = nullptr, *o_rules = nullptr, *o_out = nullptr,
              *o_p = nullptr, *o_p_intra = nullptr, *o_p_inter = nullptr, *o_iso = nullptr,
              *o_price_m = nullptr, *o_X = nullptr, *o_E = nullptr, *o_seed = nullptr,
              *o_threads = nullptr;
};

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      if (!cur.empty()) tokens.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

TypedConstraintRules load_rules(const std::string& path) {
  ordered_json j = load_json_file(path, "typed rules");
  TypedConstraintRules rules;
  if (!j.contains("role_of_class") || !j.contains("allowed"))
    throw InvalidParam("typed rules: need role_of_class and allowed");
  for (const auto& [key, value] : j["role_of_class"].items())
    rules.role_of_class[std::stoi(key)] = value.get<int>();
  for (const auto& pair : j["allowed"]) {
    if (!pair.is_array() || pair.size() != 2)
      throw InvalidParam("typed rules: allowed entries are [source_role, target_role] pairs");
    rules.allowed.emplace_back(pair[0].get<int>(), pair[1].get<int>());
  }
  return rules;
}

int run_eval(const EvalCmd& cmd, std::ostream& out) {
  EvalCmd c = cmd;
  ordered_json j =
      c.config.empty() ? ordered_json::object() : load_json_file(c.config, "eval config");
  pick(c.o_gen, j, "gen", c.gen);
  pick(c.o_data, j, "data", c.data);
  pick(c.o_test, j, "test", c.test);
  pick(c.o_train, j, "train", c.train);
  pick(c.o_metrics, j, "metrics", c.metrics);
  pick(c.o_validity, j, "validity", c.validity);
  pick(c.o_rules, j, "rules", c.rules);
  pick(c.o_out, j, "out", c.out_prefix);
  pick(c.o_p, j, "p", c.p);
  pick(c.o_p_intra, j, "p_intra", c.p_intra);
  pick(c.o_p_inter, j, "p_inter", c.p_inter);
  pick(c.o_iso, j, "iso_timeout", c.iso_timeout);
  pick(c.o_price_m, j, "price_m", c.price_m);
  pick(c.o_X, j, "X", c.X);
  pick(c.o_E, j, "E", c.E);
  pick(c.o_seed, j, "seed", c.seed);
  pick(c.o_threads, j, "threads", c.threads);

  require_file(c.gen, "eval generated set");

  ordered_json meta = ordered_json::object();
  if (!c.data.empty()) {
    require_file(c.data, "eval manifest");
    DatasetManifest man = read_manifest(c.data);
    if (c.test.empty()) c.test = man.test_path;
    if (c.train.empty()) c.train = man.train_path;
    if (c.X <= 0) c.X = man.X;
    if (c.E <= 0) c.E = man.E;
    meta = ordered_json::parse(man.meta_json, nullptr, false);
    if (!meta.is_object()) meta = ordered_json::object();
  }
  if (c.X <= 0) c.X = 1;
  if (c.E <= 0) c.E = 2;

  // Dataset metadata supplies the null-model parameters unless flags
  // pin them explicitly.
  if (c.o_p->count() == 0 && !j.contains("p")) c.p = meta.value("p", c.p);
  if (c.o_p_intra->count() == 0 && !j.contains("p_intra")) c.p_intra = meta.value("p_intra", c.p_intra);
  if (c.o_p_inter->count() == 0 && !j.contains("p_inter")) c.p_inter = meta.value("p_inter", c.p_inter);
  if (c.o_price_m->count() == 0 && !j.contains("price_m")) c.price_m = meta.value("m", c.price_m);

  std::set<std::string> selected;
  for (const std::string& token : split_csv(c.metrics)) {
    if (token == "all") {
      selected.insert({"mmd", "vun", "joint"});
    } else if (token == "mmd" || token == "vun" || token == "joint") {
      selected.insert(token);
    } else {
      throw InvalidParam("eval: unknown metric " + token + " (expected mmd, vun, joint, all)");
    }
  }
  if (selected.empty()) throw InvalidParam("eval: no metrics selected");

  bool need_test = selected.count("mmd") > 0 || selected.count("joint") > 0;
  bool need_train = selected.count("mmd") > 0 || selected.count("vun") > 0;
  if (need_test && c.test.empty())
    throw InvalidParam("eval: mmd and joint metrics need --test or --data");
  if (need_train && c.train.empty())
    throw InvalidParam("eval: mmd and vun metrics need --train or --data");
  if (selected.count("joint") > 0 && c.X <= 1 && c.E <= 2)
    throw InvalidParam("eval: joint metrics need labeled data (X > 1 or E > 2)");

  std::vector<DiGraph> gen_graphs = load_graphs(c.gen, "eval generated set", c.X, c.E);
  std::vector<DiGraph> test_graphs, train_graphs;
  if (need_test) test_graphs = load_graphs(c.test, "eval test set", c.X, c.E);
  if (need_train) train_graphs = load_graphs(c.train, "eval train set", c.X, c.E);

  ValidityFn is_valid;
  if (c.validity == "none") {
    is_valid = [](const DiGraph&) { return true; };
  } else if (c.validity == "er" || c.validity == "er_dag") {
    bool dag = c.validity == "er_dag";
    double p = c.p;
    is_valid = [p, dag](const DiGraph& g) { return validity_er(g, p, dag).pass; };
  } else if (c.validity == "sbm") {
    double pi = c.p_intra, pe = c.p_inter;
    is_valid = [pi, pe](const DiGraph& g) { return validity_sbm(g, pi, pe).pass; };
  } else if (c.validity == "price") {
    if (c.price_m < 1)
      throw InvalidParam("eval: price validity needs --price-m (or a price manifest)");
    int m = c.price_m;
    // The checker is called serially, so one shared reference stream keeps
    // the whole evaluation reproducible. A graph whose filtered degree
    // sequence is empty cannot be attachment-like; count it invalid.
    auto rng = std::make_shared<Rng>(derive_seed(c.seed, "price-ref", 0));
    is_valid = [m, rng](const DiGraph& g) {
      try {
        return validity_price(g, m, *rng).pass;
      } catch (const DegenerateSequence&) {
        return false;
      }
    };
  } else if (c.validity == "typed") {
    if (c.rules.empty()) throw InvalidParam("eval: typed validity needs --rules");
    TypedConstraintRules rules = load_rules(c.rules);
    is_valid = [rules](const DiGraph& g) { return validity_typed(g, rules); };
  } else {
    throw InvalidParam("eval: unknown validity kind " + c.validity);
  }

  EvalReport report;
  if (selected.count("mmd") > 0) {
    report.has_ratios = true;
    report.ratios = ratio_summary(gen_graphs, test_graphs, train_graphs, all_descriptors(),
                                  c.threads);
  }
  if (selected.count("vun") > 0) {
    report.has_vun = true;
    report.vun = vun(gen_graphs, train_graphs, is_valid, c.iso_timeout, c.threads);
  }
  if (selected.count("joint") > 0) {
    report.has_joint = true;
    report.joint = joint_metrics(gen_graphs, test_graphs, c.X, c.E, c.seed);
  }

  std::string json_text = report.to_json();
  out << json_text << "\n";
  if (!c.out_prefix.empty()) {
    write_text_file(c.out_prefix + ".json", json_text + "\n");
    write_text_file(c.out_prefix + ".csv", report.to_csv());
    ordered_json resolved;
    resolved["gen"] = c.gen;
    resolved["data"] = c.data;
    resolved["test"] = c.test;
    resolved["train"] = c.train;
    resolved["metrics"] = std::vector<std::string>(selected.begin(), selected.end());
    resolved["validity"] = c.validity;
    resolved["rules"] = c.rules;
    resolved["p"] = c.p;
    resolved["p_intra"] = c.p_intra;
    resolved["p_inter"] = c.p_inter;
    resolved["price_m"] = c.price_m;
    resolved["iso_timeout"] = c.iso_timeout;
    resolved["X"] = c.X;
    resolved["E"] = c.E;
    resolved["seed"] = c.seed;
    write_text_file(c.out_prefix + ".config.json", resolved.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// posenc
// ---------------------------------------------------------------------------

struct PosencCmd {
  std::string input, manifest, split = "train", out;
  int index = 0, X = 0, E = 0;
  std::string pe_kind = "rrwp";
  std::vector<double> q;
  int k_eigen = 10, K_walk = 20;
  bool ppr = false, pe_normalized = false;
  std::string walk = "pagerank";
  double teleport = 0.05, p_restart = 0.05;
};

int run_posenc(const PosencCmd& c, std::ostream& out) {
  DiGraph g(1);
  if (!c.input.empty()) {
    std::vector<DiGraph> graphs = load_graphs(c.input, "posenc input", c.X, c.E);
    if (c.index < 0 || c.index >= static_cast<int>(graphs.size()))
      throw InvalidParam("posenc: --index out of range (file holds " +
                         std::to_string(graphs.size()) + " graphs)");
    g = graphs[static_cast<size_t>(c.index)];
  } else if (!c.manifest.empty()) {
    require_file(c.manifest, "posenc manifest");
    DatasetManifest man = read_manifest(c.manifest);
    std::string path = c.split == "train"  ? man.train_path
                       : c.split == "val"  ? man.val_path
                       : c.split == "test" ? man.test_path
                                           : "";
    if (path.empty()) throw InvalidParam("posenc: --split must be train, val, or test");
    std::vector<DiGraph> graphs = load_graphs(path, "posenc split", man.X, man.E);
    if (c.index < 0 || c.index >= static_cast<int>(graphs.size()))
      throw InvalidParam("posenc: --index out of range (split holds " +
                         std::to_string(graphs.size()) + " graphs)");
    g = graphs[static_cast<size_t>(c.index)];
  } else {
    throw InvalidParam("posenc: need --input or --manifest");
  }

  PEConfig pc;
  pc.kind = pe_kind_from_string(c.pe_kind);
  pc.q_list = c.q;
  pc.k_eigen = c.k_eigen;
  pc.K_walk = c.K_walk;
  pc.use_ppr = c.ppr;
  pc.normalized = c.pe_normalized;
  pc.walk = walk_from_string(c.walk);
  pc.teleport = c.teleport;
  pc.p_restart = c.p_restart;
  if ((pc.kind == PEKind::MAGLAP || pc.kind == PEKind::MULTI_MAGLAP) && pc.q_list.empty())
    pc.q_list = q_preset5();
  pc.validate();

  PEFeatures pe = pe_features(g, pc);
  ordered_json j;
  j["config"] = ordered_json::parse(pe_config_to_json(pc));
  j["n"] = pe.n;
  j["d_node"] = pe.d_node;
  j["d_edge"] = pe.d_edge;
  j["d_graph"] = pe.d_graph;
  j["node"] = pe.node;
  j["edge"] = pe.edge;
  j["graph"] = pe.graph;
  std::string text = j.dump(2) + "\n";
  if (c.out.empty()) {
    out << text;
  } else {
    write_text_file(c.out, text);
    out << "wrote features to " << c.out << "\n";
  }
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"directed-graph generative models: datasets, training, sampling, evaluation"};
  app.require_subcommand(1);

  DatasetCmd ds;
  CLI::App* ds_app = app.add_subcommand("dataset", "generate a synthetic benchmark dataset");
  ds_app->add_option("--spec", ds.spec_path, "dataset spec JSON");
  ds_app->add_option("--out", ds.out_dir, "output directory")->required();
  ds_app->add_flag("--force", ds.force, "regenerate over an existing dataset");
  ds.o_family = ds_app->add_option("--family", ds.family, "er | er_dag | price | sbm");
  ds.o_name = ds_app->add_option("--name", ds.name, "dataset name");
  ds.o_seed = ds_app->add_option("--seed", ds.seed, "generation seed");
  ds.o_p = ds_app->add_option("--p", ds.p, "edge probability (er families)");
  ds.o_n_min = ds_app->add_option("--n-min", ds.n_min, "minimum node count (er families)");
  ds.o_n_max = ds_app->add_option("--n-max", ds.n_max, "maximum node count (er families)");

  TrainCmd tr;
  tr.threads = default_threads();
  CLI::App* tr_app = app.add_subcommand("train", "train a denoiser on a dataset");
  tr_app->add_option("--config", tr.config, "run config JSON; flags override");
  tr.o_manifest = tr_app->add_option("--manifest", tr.manifest, "dataset manifest");
  tr.o_out = tr_app->add_option("--out", tr.out_dir, "output directory");
  tr.o_resume = tr_app->add_option("--resume", tr.resume, "checkpoint to continue from");
  tr.o_engine = tr_app->add_option("--engine", tr.engine, "dfm | dd");
  tr.o_noise = tr_app->add_option("--noise", tr.noise, "uniform | marginal");
  tr.o_tdist = tr_app->add_option("--train-distortion", tr.train_distortion,
                                  "time distortion for corruption draws (dfm)");
  tr.o_seed = tr_app->add_option("--seed", tr.seed, "training seed");
  tr.o_steps = tr_app->add_option("--steps", tr.steps, "optimizer steps");
  tr.o_batch = tr_app->add_option("--batch-size", tr.batch_size, "graphs per step");
  tr.o_log_every = tr_app->add_option("--log-every", tr.log_every, "steps per loss-trace row");
  tr.o_val_every =
      tr_app->add_option("--val-every", tr.val_every, "steps between validation passes (0: end only)");
  tr.o_threads = tr_app->add_option("--threads", tr.threads, "worker threads (env DIGEN_THREADS)");
  tr.o_lr = tr_app->add_option("--lr", tr.lr, "learning rate");
  tr.o_lambda = tr_app->add_option("--lambda-edge", tr.lambda_edge, "edge loss weight");
  tr.o_wd = tr_app->add_option("--weight-decay", tr.weight_decay, "decoupled weight decay");
  tr.o_dd_T = tr_app->add_option("--T", tr.dd_T, "diffusion grid size (dd)");
  tr.o_dd_s = tr_app->add_option("--s", tr.dd_s, "schedule offset (dd)");
  tr.o_layers = tr_app->add_option("--layers", tr.layers, "transformer layers");
  tr.o_d_x = tr_app->add_option("--d-x", tr.d_x, "node stream width");
  tr.o_d_e = tr_app->add_option("--d-e", tr.d_e, "edge stream width");
  tr.o_d_y = tr_app->add_option("--d-y", tr.d_y, "global stream width");
  tr.o_heads = tr_app->add_option("--heads", tr.n_heads, "attention heads");
  tr.o_ff_x = tr_app->add_option("--ff-x", tr.ff_x, "node feed-forward width");
  tr.o_ff_e = tr_app->add_option("--ff-e", tr.ff_e, "edge feed-forward width");
  tr.o_ff_y = tr_app->add_option("--ff-y", tr.ff_y, "global feed-forward width");
  tr.o_layer_norm = tr_app->add_flag("--layer-norm,!--no-layer-norm", tr.layer_norm,
                                     "normalize stream features per layer");
  tr.o_pe = tr_app->add_option("--pe", tr.pe_kind,
                               "structural features: none | lap | dirlap | maglap | multi_maglap | rrwp");
  tr.o_q = tr_app->add_option("--q", tr.q, "potentials for the maglap kinds");
  tr.o_k_eigen = tr_app->add_option("--k-eigen", tr.k_eigen, "eigenpairs kept");
  tr.o_K_walk = tr_app->add_option("--K-walk", tr.K_walk, "walk length (rrwp)");
  tr.o_ppr = tr_app->add_flag("--ppr", tr.ppr, "append personalized-restart features (rrwp)");
  tr.o_pe_normalized =
      tr_app->add_flag("--pe-normalized", tr.pe_normalized, "normalized laplacian variant");
  tr.o_walk = tr_app->add_option("--walk", tr.walk, "plain | lazy | pagerank");
  tr.o_teleport = tr_app->add_option("--teleport", tr.teleport, "teleport mass (pagerank walk)");
  tr.o_p_restart = tr_app->add_option("--p-restart", tr.p_restart, "restart probability (ppr)");

  SampleCmd sm;
  sm.threads = default_threads();
  CLI::App* sm_app = app.add_subcommand("sample", "draw graphs from a trained model");
  sm_app->add_option("--config", sm.config, "run config JSON; flags override");
  sm.o_checkpoint = sm_app->add_option("--checkpoint", sm.checkpoint, "trained checkpoint");
  sm.o_manifest = sm_app->add_option("--manifest", sm.manifest,
                                     "dataset manifest (node counts, marginal noise, mle)");
  sm.o_out = sm_app->add_option("--out", sm.out, "output graph file (JSON lines)");
  sm.o_count = sm_app->add_option("--count", sm.count, "graphs to draw");
  sm.o_seed = sm_app->add_option("--seed", sm.seed, "sampling seed");
  sm.o_engine = sm_app->add_option("--engine", sm.engine, "dfm | dd (default: from checkpoint)");
  sm.o_noise = sm_app->add_option("--noise", sm.noise, "uniform | marginal (default: from checkpoint)");
  sm.o_steps = sm_app->add_option("--steps", sm.steps, "reverse grid steps (dfm)");
  sm.o_distortion = sm_app->add_option("--distortion", sm.distortion,
                                       "identity | polydec | cos | revcos | polyinc (dfm)");
  sm.o_omega = sm_app->add_option("--omega", sm.omega, "target guidance strength (dfm)");
  sm.o_eta = sm_app->add_option("--eta", sm.eta, "stochasticity scale (dfm)");
  sm.o_dd_T = sm_app->add_option("--T", sm.dd_T, "diffusion grid size (dd)");
  sm.o_dd_s = sm_app->add_option("--s", sm.dd_s, "schedule offset (dd)");
  sm.o_nodes = sm_app->add_option("--nodes", sm.nodes, "fixed node count (0: train distribution)");
  sm.o_pe_every = sm_app->add_option("--pe-every", sm.pe_every,
                                     "denoiser calls between structural-feature recomputes");
  sm.o_threads = sm_app->add_option("--threads", sm.threads, "worker threads (env DIGEN_THREADS)");
  sm.o_mle = sm_app->add_flag("--mle", sm.mle, "sample the count-based baseline instead");

  EvalCmd ev;
  ev.threads = default_threads();
  CLI::App* ev_app = app.add_subcommand("eval", "score a generated set against a dataset");
  ev_app->add_option("--config", ev.config, "run config JSON; flags override");
  ev.o_gen = ev_app->add_option("--gen", ev.gen, "generated graph file")->required();
  ev.o_data = ev_app->add_option("--data", ev.data, "dataset manifest supplying test/train");
  ev.o_test = ev_app->add_option("--test", ev.test, "test graph file (overrides --data)");
  ev.o_train = ev_app->add_option("--train", ev.train, "train graph file (overrides --data)");
  ev.o_metrics = ev_app->add_option("--metrics", ev.metrics, "comma list: mmd, vun, joint, all");
  ev.o_validity = ev_app->add_option("--validity", ev.validity,
                                     "none | er | er_dag | sbm | price | typed");
  ev.o_rules = ev_app->add_option("--rules", ev.rules, "typed constraint rules JSON");
  ev.o_out = ev_app->add_option("--out", ev.out_prefix, "report path prefix (.json/.csv)");
  ev.o_p = ev_app->add_option("--p", ev.p, "expected edge rate (er validity)");
  ev.o_p_intra = ev_app->add_option("--p-intra", ev.p_intra, "intra-block rate (sbm validity)");
  ev.o_p_inter = ev_app->add_option("--p-inter", ev.p_inter, "inter-block rate (sbm validity)");
  ev.o_price_m = ev_app->add_option("--price-m", ev.price_m, "attachment out-degree (price validity)");
  ev.o_iso = ev_app->add_option("--iso-timeout", ev.iso_timeout, "isomorphism timeout seconds");
  ev.o_X = ev_app->add_option("--X", ev.X, "node class count when no manifest");
  ev.o_E = ev_app->add_option("--E", ev.E, "edge class count when no manifest");
  ev.o_seed = ev_app->add_option("--seed", ev.seed, "embedder and reference seed");
  ev.o_threads = ev_app->add_option("--threads", ev.threads, "worker threads (env DIGEN_THREADS)");

  PosencCmd pe;
  CLI::App* pe_app = app.add_subcommand("posenc", "dump structural features for one graph");
  pe_app->add_option("--input", pe.input, "graph file (JSON lines)");
  pe_app->add_option("--manifest", pe.manifest, "dataset manifest");
  pe_app->add_option("--split", pe.split, "train | val | test (with --manifest)");
  pe_app->add_option("--index", pe.index, "graph index in the file or split");
  pe_app->add_option("--X", pe.X, "node class count for validation");
  pe_app->add_option("--E", pe.E, "edge class count for validation");
  pe_app->add_option("--kind", pe.pe_kind,
                     "none | lap | dirlap | maglap | multi_maglap | rrwp");
  pe_app->add_option("--q", pe.q, "potentials for the maglap kinds");
  pe_app->add_option("--k-eigen", pe.k_eigen, "eigenpairs kept");
  pe_app->add_option("--K-walk", pe.K_walk, "walk length (rrwp)");
  pe_app->add_flag("--ppr", pe.ppr, "append personalized-restart features (rrwp)");
  pe_app->add_flag("--pe-normalized", pe.pe_normalized, "normalized laplacian variant");
  pe_app->add_option("--walk", pe.walk, "plain | lazy | pagerank");
  pe_app->add_option("--teleport", pe.teleport, "teleport mass (pagerank walk)");
  pe_app->add_option("--p-restart", pe.p_restart, "restart probability (ppr)");
  pe_app->add_option("--out", pe.out, "write features here instead of stdout");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const CLI::App* sub : app.get_subcommands(nullptr))
      if (sub->parsed()) target = sub;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (ds_app->parsed()) return run_dataset(ds, out);
    if (tr_app->parsed()) return run_train(tr, out, err);
    if (sm_app->parsed()) return run_sample(sm, out, err);
    if (ev_app->parsed()) return run_eval(ev, out);
    if (pe_app->parsed()) return run_posenc(pe, out);
    err << "error: no command given\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return usage_error(e) ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace digen
