// energy-attack: train desk models, harvest white-box perturbations into an
// energy basis, run the black-box attack or the square baseline, compare
// bases.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "energy_attack/energy_attack.hpp"

namespace fs = std::filesystem;
using namespace ea;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kFormat = 4 };

struct Options {
  std::string command;
  std::string dataset;
  std::string labels;
  std::string model;
  std::vector<std::string> basis;
  double eps = 0.0;
  std::uint64_t max_queries = 10000;
  std::size_t patch = 5;
  std::size_t stride = 1;
  std::string strategy = "batch";
  std::size_t tau = 1;
  std::string baseline;
  std::uint64_t seed = 0;
  std::string out;
  std::string arch = "mlp";
  std::size_t epochs = 5;
  double lr = 0.1;
  std::size_t batch = 32;
  std::size_t iters = 20;
  std::string whitebox = "fw";
  std::size_t limit = 0;
  std::size_t offset = 0;
  std::size_t synth_size = 1000;
  bool all_stats = false;
  bool signed_cos = false;
  bool with_random = false;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

Dataset load_dataset(const Options& o) {
  require(!o.dataset.empty(), "--dataset is required (synth or an IDX images file)");
  Dataset ds;
  if (o.dataset == "synth") {
    ds = synth_dataset(stage_seed(o.seed, "data"), o.synth_size, 28);
  } else {
    require(fs::exists(o.dataset), "dataset not found: " + o.dataset);
    require(!o.labels.empty(), "--labels is required with an IDX dataset");
    ds = load_idx(o.dataset, o.labels);
  }
  if (o.offset >= ds.images.size()) throw InvalidInput("--offset is past the end of the dataset");
  auto first = ds.images.begin() + static_cast<std::ptrdiff_t>(o.offset);
  auto last = o.limit == 0 || o.offset + o.limit >= ds.images.size()
                  ? ds.images.end()
                  : first + static_cast<std::ptrdiff_t>(o.limit);
  ds.images = std::vector<Image>(first, last);
  return ds;
}

std::shared_ptr<const Model> load_victim(const Options& o) {
  require(!o.model.empty(), "--model is required");
  return std::make_shared<const Model>(load_model(o.model));
}

HopelessStrategy make_strategy(const Options& o) {
  if (o.strategy == "prob") return HopelessStrategy::probabilistic();
  return HopelessStrategy::batch(o.tau);
}

AttackConfig make_attack_config(const Options& o) {
  require(o.eps > 0.0, "--eps must be positive");
  require(o.max_queries >= 1, "--max-queries must be >= 1");
  AttackConfig cfg{o.eps, o.max_queries, make_strategy(o)};
  cfg.square_patch = o.patch;
  return cfg;
}

std::vector<Image> correctly_classified(const Model& m, const std::vector<Image>& xs) {
  std::vector<Image> out;
  for (const auto& x : xs)
    if (predict(m, x) == x.label) out.push_back(x);
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v);
  return buf;
}

void print_summary(const std::string& label, const BenchmarkSummary& s) {
  std::printf("%-10s n=%zu  ASR=%.1f%%  avg=%s  med=%s\n", label.c_str(), s.n_images, s.asr,
              fmt_opt(s.avg_queries).c_str(), fmt_opt(s.median_queries).c_str());
}

int cmd_train(const Options& o) {
  require(!o.out.empty(), "--out is required");
  require(o.arch == "mlp" || o.arch == "conv", "--arch must be mlp or conv");
  const Dataset ds = load_dataset(o);
  const std::uint64_t seed = stage_seed(o.seed, "train");
  Model m = o.arch == "conv" ? make_convnet(ds.shape(), ds.num_classes, seed)
                             : make_mlp(ds.shape(), ds.num_classes, seed);
  m = train(std::move(m), ds.images, {o.epochs, o.lr, o.batch, seed});
  save_model(m, o.out);
  std::printf("trained %s on %zu images (%s), train accuracy %.4f\n", o.arch.c_str(), ds.images.size(),
              ds.name.c_str(), m.train_accuracy());
  return kOk;
}

int cmd_extract(const Options& o) {
  require(!o.out.empty(), "--out is required");
  require(o.eps > 0.0, "--eps must be positive");
  require(o.patch >= 3, "--patch-size must be >= 3");
  require(o.stride >= 1, "--stride must be >= 1");
  require(o.whitebox == "fw" || o.whitebox == "pgd", "--whitebox must be fw or pgd");
  const auto m = load_victim(o);
  const Dataset ds = load_dataset(o);
  CovAccumulator acc(ds.shape().c, o.patch);
  std::size_t fooled = 0;
  for (const auto& x : ds.images) {
    const Perturbation p = o.whitebox == "fw"
                               ? frank_wolfe_attack(*m, x, x.label, o.eps, o.iters)
                               : pgd_attack(*m, x, x.label, o.eps, o.iters, 2.5 * o.eps / static_cast<double>(o.iters));
    if (predict(*m, apply(x, p.delta)) != x.label) ++fooled;
    acc.accumulate(p.delta, o.stride);
  }
  const EnergyBasis b = extract_basis(acc, fs::path(o.out).stem().string());
  save_basis(b, o.out);
  std::printf("harvested %zu perturbations (%zu fooled), N=%llu patches, n=%zu\n", ds.images.size(), fooled,
              static_cast<unsigned long long>(acc.count()), b.size());
  const double total = b.total_energy();
  std::printf("energy head:");
  for (std::size_t i = 0; i < std::min<std::size_t>(5, b.size()); ++i)
    std::printf(" %.4f", total > 0 ? b.energies()[i] / total : 0.0);
  std::printf("\n");
  return kOk;
}

struct RunResult {
  std::vector<AttackRecord> records;
  BenchmarkSummary summary;
  RunInfo info;
};

RunResult run_attack(const Options& o, const std::shared_ptr<const Model>& m, const std::vector<Image>& xs,
                     const EnergyBasis* basis, const AttackConfig& cfg) {
  auto oracle = QueryOracle::from_model(m, cfg.max_queries * xs.size() + xs.size());
  Rng rng = make_rng(o.seed, "attack");
  RunResult r;
  r.records = basis ? energy_attack(oracle, *basis, xs, cfg, rng) : square_baseline(oracle, xs, cfg, rng);
  r.summary = summarize(r.records, o.all_stats ? QueryStatsOver::all : QueryStatsOver::successful);
  r.info = {o.seed, cfg.epsilon, cfg.strategy.name(), basis ? basis->tag() : "square"};
  return r;
}

nlohmann::json summary_with_info(const RunResult& r) {
  nlohmann::json j = summary_json(r.summary);
  j["seed"] = r.info.seed;
  j["epsilon"] = r.info.epsilon;
  j["strategy"] = r.info.strategy;
  j["basis_tag"] = r.info.basis_tag;
  return j;
}

int cmd_attack(const Options& o) {
  require(!o.out.empty(), "--out is required");
  require(o.baseline.empty() || o.baseline == "square", "--baseline must be square");
  require(o.baseline.empty() != o.basis.empty(), "give exactly one of --basis or --baseline square");
  require(o.basis.size() <= 1, "attack takes a single --basis");
  const AttackConfig cfg = make_attack_config(o);
  if (o.baseline == "square") require(o.patch >= 3, "--patch-size must be >= 3");
  const auto m = load_victim(o);
  const Dataset ds = load_dataset(o);
  const auto xs = correctly_classified(*m, ds.images);
  if (xs.empty()) throw InvalidInput("no correctly classified images to attack");
  std::optional<EnergyBasis> basis;
  if (!o.basis.empty()) basis = load_basis(o.basis.front());

  const RunResult r = run_attack(o, m, xs, basis ? &*basis : nullptr, cfg);
  append_records_jsonl(r.records, r.info, o.out);
  write_json(o.out + ".summary.json", summary_with_info(r));
  print_summary(r.info.basis_tag, r.summary);
  return kOk;
}

int cmd_bench(const Options& o) {
  require(!o.out.empty(), "--out is required");
  require(o.basis.size() == 1, "bench needs exactly one --basis");
  const AttackConfig cfg = make_attack_config(o);
  const auto m = load_victim(o);
  const Dataset ds = load_dataset(o);
  const auto xs = correctly_classified(*m, ds.images);
  if (xs.empty()) throw InvalidInput("no correctly classified images to attack");
  const EnergyBasis basis = load_basis(o.basis.front());

  const RunResult energy = run_attack(o, m, xs, &basis, cfg);
  const RunResult square = run_attack(o, m, xs, nullptr, cfg);
  append_records_jsonl(energy.records, energy.info, o.out);
  append_records_jsonl(square.records, square.info, o.out);
  write_json(o.out + ".summary.json", nlohmann::json::array({summary_with_info(energy), summary_with_info(square)}));
  print_summary("energy", energy.summary);
  print_summary("square", square.summary);
  return kOk;
}

int cmd_analyze(const Options& o) {
  require(!o.out.empty(), "--out is required");
  require(o.basis.size() + (o.with_random ? 1 : 0) >= 2, "analyze needs at least two bases (or --with-random)");
  std::vector<EnergyBasis> bases;
  for (const auto& p : o.basis) bases.push_back(load_basis(p));
  if (o.with_random) bases.push_back(random_direction_basis(bases.front().channels(), bases.front().patch_size(), o.seed));
  const SimilarityMatrix sm = similarity_matrix(bases, !o.signed_cos);
  export_heatmap_pgm(sm, o.out + ".pgm");
  export_csv(sm, o.out + ".csv");

  const std::size_t d = bases.front().size();
  std::printf("random-direction baseline E|cos| at d=%zu: %.4f\n", d, random_direction_baseline(d, 20000, o.seed));
  for (std::size_t a = 0; a < bases.size(); ++a)
    for (std::size_t b = a + 1; b < bases.size(); ++b) {
      Matrix blk(sm.block, sm.block);
      for (std::size_t i = 0; i < sm.block; ++i)
        for (std::size_t j = 0; j < sm.block; ++j) blk(i, j) = sm.values(a * sm.block + i, b * sm.block + j);
      std::printf("%s vs %s: matched-rank mean %.4f\n", sm.sources[a].c_str(), sm.sources[b].c_str(),
                  diagonal_mean(blk));
    }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy Attack: transfer-based black-box L-inf attacks from eigenpatches"};
  Options o;
  app.set_config("--config", "", "key=value file mirroring the long flags; command-line flags win");
  app.add_option("command", o.command, "train | extract | attack | analyze | bench")
      ->required()
      ->check(CLI::IsMember({"train", "extract", "attack", "analyze", "bench"}));
  app.add_option("--dataset", o.dataset, "synth, or an IDX images file (.gz accepted)");
  app.add_option("--labels", o.labels, "IDX labels file matching --dataset");
  app.add_option("--model", o.model, "model file (surrogate for extract, victim for attack/bench)");
  app.add_option("--basis", o.basis, "basis file; repeat for analyze");
  app.add_option("--eps", o.eps, "L-inf budget (no default)");
  app.add_option("--max-queries", o.max_queries, "per-image query budget")->capture_default_str();
  app.add_option("--patch-size", o.patch, "patch side s_p")->capture_default_str();
  app.add_option("--stride", o.stride, "window stride for patch harvesting")->capture_default_str();
  app.add_option("--strategy", o.strategy, "hopeless rule")->check(CLI::IsMember({"batch", "prob"}))->capture_default_str();
  app.add_option("--tau", o.tau, "steps without improvement for the batch rule")->capture_default_str();
  app.add_option("--baseline", o.baseline, "square: run the square baseline instead of a basis");
  app.add_option("--seed", o.seed, "global seed")->capture_default_str();
  app.add_option("--out", o.out, "output file (prefix for analyze)");
  app.add_option("--arch", o.arch, "mlp | conv")->capture_default_str();
  app.add_option("--epochs", o.epochs)->capture_default_str();
  app.add_option("--lr", o.lr)->capture_default_str();
  app.add_option("--batch", o.batch, "training mini-batch size")->capture_default_str();
  app.add_option("--iters", o.iters, "white-box iterations")->capture_default_str();
  app.add_option("--whitebox", o.whitebox, "fw | pgd")->capture_default_str();
  app.add_option("--limit", o.limit, "use at most this many images (0 = all)")->capture_default_str();
  app.add_option("--offset", o.offset, "skip this many images first")->capture_default_str();
  app.add_option("--synth-size", o.synth_size, "image count for --dataset synth")->capture_default_str();
  app.add_flag("--all-stats", o.all_stats, "query statistics over all images, not just successes");
  app.add_flag("--signed", o.signed_cos, "signed cosine instead of |cos|");
  app.add_flag("--with-random", o.with_random, "add a random-direction basis to analyze");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (o.command == "train") return cmd_train(o);
    if (o.command == "extract") return cmd_extract(o);
    if (o.command == "attack") return cmd_attack(o);
    if (o.command == "bench") return cmd_bench(o);
    return cmd_analyze(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
