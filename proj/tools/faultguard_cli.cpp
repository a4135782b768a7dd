#include "faultguard/ads.hpp"
#include "faultguard/attacks.hpp"
#include "faultguard/dataset.hpp"
#include "faultguard/harness.hpp"
#include "faultguard/io.hpp"
#include "faultguard/predictor.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace faultguard;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string task;
  std::string out;
  int oat = 0;  // +1 on, -1 off, 0 from config
  int al = 0;
  int gate = 0;
  std::string attack;
  std::optional<double> epsilon;
  std::string report_dir;
};

harness::ExperimentConfig load_config(const Options& o) {
  harness::ExperimentConfig c;
  if (!o.config_path.empty()) c = harness::ExperimentConfig::load(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (!o.task.empty()) c.tasks = {parse_task(o.task)};
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.oat) c.use_oat = o.oat > 0;
  if (o.gate) c.use_gate = o.gate > 0;
  if (o.al) c.use_al = o.al > 0;
  if (o.al > 0 && o.gate == 0) c.use_gate = true;
  if (!c.use_gate && o.al <= 0) c.use_al = false;
  c.validate();
  return c;
}

void log_line(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << "\n"; }

// Artifact layout under the output directory.
struct Layout {
  fs::path root;
  std::uint64_t seed;

  fs::path dataset() const { return root / ("dataset_s" + std::to_string(seed)); }
  fs::path predictor(Task t, bool oat) const {
    return root / ("predictor_" + to_string(t) + (oat ? "_oat" : "_standard") + "_s" + std::to_string(seed));
  }
  fs::path ads(Task t, bool al) const {
    return root / ("ads_" + to_string(t) + (al ? "_al" : "_noal") + "_s" + std::to_string(seed));
  }
  fs::path graybox() const { return root / ("graybox_s" + std::to_string(seed)); }
  fs::path attack(Task t, attacks::AttackKind k, double eps) const {
    std::string kind = attacks::to_string(k);
    std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char c) { return std::tolower(c); });
    return root / "attacks" /
           (to_string(t) + "_" + kind + "_eps" + io::format_double(eps) + "_s" + std::to_string(seed));
  }
};

dataset::DatasetSplit require_dataset(const Layout& l) {
  if (!fs::exists(l.dataset() / "manifest.json"))
    throw Error("missing dataset artifact " + l.dataset().string() + " (run 'prepare' first)");
  return dataset::load_dataset(l.dataset());
}

predictor::PredictorModel require_predictor(const Layout& l, Task t, bool oat) {
  const fs::path stem = l.predictor(t, oat);
  if (!fs::exists(stem.string() + ".json"))
    throw Error("missing predictor artifact " + stem.string() + " (run 'train-predictor' first)");
  return predictor::load_checkpoint(stem);
}

ads::AdsModel require_ads(const Layout& l, Task t, bool al) {
  const fs::path stem = l.ads(t, al);
  if (!fs::exists(stem.string() + ".json"))
    throw Error("missing ADS artifact " + stem.string() + " (run 'train-ads' first)");
  return ads::load_ads(stem);
}

predictor::PredictorConfig predictor_config(const harness::ExperimentConfig& c, Task t, std::uint64_t seed) {
  predictor::PredictorConfig pc = c.predictor;
  pc.n_classes = num_classes(t);
  pc.window_len = c.window_size;
  pc.seed = derive_seed(seed, "predictor-" + to_string(t));
  return pc;
}

std::vector<attacks::AttackKind> selected_kinds(const harness::ExperimentConfig& c, const Options& o) {
  if (o.attack.empty()) return c.attack_kinds;
  return {attacks::parse_attack_kind(o.attack)};
}

std::vector<double> selected_epsilons(const harness::ExperimentConfig& c, const Options& o) {
  if (o.epsilon) return {*o.epsilon};
  return c.epsilons;
}

std::span<const dataset::GridWindow> eval_split(const harness::ExperimentConfig& c, const dataset::DatasetSplit& s) {
  std::size_t n = s.test.size();
  if (c.eval_windows > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(c.eval_windows));
  return {s.test.data(), n};
}

int cmd_prepare(const harness::ExperimentConfig& c) {
  const Layout l{c.out_dir, c.seed};
  const dataset::DatasetSplit s = harness::build_dataset(c, c.seed);
  dataset::save_dataset(s, l.dataset());
  std::cout << "dataset " << l.dataset().string() << ": train " << s.train.size() << ", validation "
            << s.validation.size() << ", test " << s.test.size() << ", fingerprint " << s.fingerprint() << "\n";
  return 0;
}

int cmd_train_predictor(const harness::ExperimentConfig& c) {
  const Layout l{c.out_dir, c.seed};
  const dataset::DatasetSplit s = require_dataset(l);
  for (Task t : c.tasks) {
    const predictor::PredictorConfig pc = predictor_config(c, t, c.seed);
    predictor::PredictorModel standard(pc);
    const auto st = predictor::train_standard(standard, s, t);
    predictor::save_checkpoint(standard, l.predictor(t, false), s.fingerprint());
    std::cout << to_string(t) << " standard: test accuracy " << io::format_double(predictor::evaluate_accuracy(standard, s.test, t))
              << " (" << io::format_double(st.total_seconds) << " s)\n";
    if (c.use_oat) {
      predictor::PredictorModel oat(pc);
      const auto ot = predictor::train_online_adversarial(oat, s, t);
      predictor::save_checkpoint(oat, l.predictor(t, true), s.fingerprint());
      std::cout << to_string(t) << " oat: test accuracy " << io::format_double(predictor::evaluate_accuracy(oat, s.test, t))
                << " (" << io::format_double(ot.total_seconds) << " s)\n";
    }
  }
  return 0;
}

int cmd_train_ads(const harness::ExperimentConfig& c) {
  const Layout l{c.out_dir, c.seed};
  const dataset::DatasetSplit s = require_dataset(l);
  for (Task t : c.tasks) {
    const predictor::PredictorModel p = require_predictor(l, t, c.use_oat);
    ads::AdsConfig ac = c.ads;
    ac.task = t;
    ac.adversarial_learning = c.use_al;
    ac.seed = derive_seed(c.seed, "ads-" + to_string(t));
    const ads::AdsModel m = ads::train_ads(s.train, p, ac);
    ads::save_ads(m, l.ads(t, c.use_al));
    const std::vector<Window> test = dataset::window_data(eval_split(c, s));
    const auto mask = ads::legitimate_mask(m.discriminator, test, ac.threshold);
    std::cout << to_string(t) << " ads (al=" << c.use_al << "): clean pass rate "
              << io::format_double(static_cast<double>(std::count(mask.begin(), mask.end(), true)) /
                                   static_cast<double>(mask.size()))
              << " (" << io::format_double(m.trace.total_seconds) << " s)\n";
  }
  return 0;
}

int cmd_train_graybox(const harness::ExperimentConfig& c) {
  const Layout l{c.out_dir, c.seed};
  const dataset::DatasetSplit s = require_dataset(l);
  attacks::GrayboxConfig gc = c.graybox;
  gc.seed = derive_seed(c.seed, "graybox");
  const attacks::GrayboxAttacker g = attacks::train_graybox_generator(s.train, gc);
  attacks::save_graybox(g, l.graybox());
  std::cout << "graybox " << l.graybox().string() << ": " << g.fake_score_trace.size() << " epochs\n";
  return 0;
}

int cmd_attack(const harness::ExperimentConfig& c, const Options& o) {
  const Layout l{c.out_dir, c.seed};
  const dataset::DatasetSplit s = require_dataset(l);
  for (Task t : c.tasks) {
    const predictor::PredictorModel p = require_predictor(l, t, c.use_oat);
    const auto split = eval_split(c, s);
    const std::vector<Window> x = dataset::window_data(split);
    const std::vector<int> y = dataset::labels(split, t);
    for (attacks::AttackKind k : selected_kinds(c, o))
      for (double eps : selected_epsilons(c, o)) {
        const attacks::AdversarialBatch b = attacks::run_attack(p, x, y, harness::make_spec(c, k, eps, c.seed));
        attacks::save_adversarial_batch(b, l.attack(t, k, eps));
        std::cout << to_string(t) << " " << attacks::to_string(k) << " eps " << io::format_double(eps)
                  << ": accuracy " << io::format_double(accuracy(p, b.perturbed, y)) << "\n";
      }
  }
  return 0;
}

int cmd_sweep(const harness::ExperimentConfig& c) {
  const Layout l{c.out_dir, c.seed};
  const dataset::DatasetSplit s = require_dataset(l);
  std::vector<predictor::PredictorModel> models;
  std::vector<ads::AdsModel> detectors;
  models.reserve(2 * c.tasks.size());
  detectors.reserve(c.tasks.size());
  std::vector<harness::SweepTarget> targets;
  const auto split = eval_split(c, s);
  const std::vector<Window> x = dataset::window_data(split);
  for (Task t : c.tasks) {
    const std::vector<int> y = dataset::labels(split, t);
    models.push_back(require_predictor(l, t, false));
    targets.push_back({t, {}, &models.back(), nullptr, c.ads.threshold, x, y, c.seed});
    if (c.use_oat || c.use_gate) {
      models.push_back(c.use_oat ? require_predictor(l, t, true) : models.back());
      const ads::DiscriminatorNet* disc = nullptr;
      if (c.use_gate) {
        detectors.push_back(require_ads(l, t, c.use_al));
        disc = &detectors.back().discriminator;
      }
      targets.push_back({t, {c.use_oat, c.use_al, c.use_gate}, &models.back(), disc, c.ads.threshold, x, y, c.seed});
    }
  }
  harness::ExperimentReport rep = harness::run_epsilon_sweep(c, targets);
  rep.provenance.dataset_fingerprints = {s.fingerprint()};
  for (const fs::path& p : harness::emit_report(rep, fs::path(c.out_dir) / "sweep")) std::cout << p.string() << "\n";
  return 0;
}

int cmd_pipeline(const harness::ExperimentConfig& c) {
  const harness::ExperimentReport rep = harness::run_full_pipeline(c, log_line);
  const fs::path dir = fs::path(c.out_dir) / "report";
  for (const fs::path& p : harness::emit_report(rep, dir)) std::cout << p.string() << "\n";
  return 0;
}

int cmd_report(const harness::ExperimentConfig& c, const Options& o) {
  const fs::path dir = o.report_dir.empty() ? fs::path(c.out_dir) / "report" : fs::path(o.report_dir);
  const harness::ExperimentReport rep = harness::load_report(dir);
  harness::emit_report(rep, dir);
  std::cout << "config " << rep.provenance.config_hash << ", seeds";
  for (auto s : rep.provenance.seeds) std::cout << " " << s;
  std::cout << "\n";
  for (const harness::ReportRow& r : rep.rows) {
    if (r.is_timing() || r.attack == "combinatorial") continue;
    std::cout << r.task << " " << r.defense.key() << " " << r.attack;
    if (r.epsilon) std::cout << " eps=" << io::format_double(*r.epsilon);
    std::cout << " " << r.metric << " " << io::format_double(r.value) << " +- " << io::format_double(r.std) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FaultGuard: resilient grid fault classification with an adversarial detection gate"};
  app.require_subcommand(1, 1);
  Options o;
  app.add_option("--config", o.config_path, "key = value experiment config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "global seed");
  app.add_option("--task", o.task, "type or zone")->check(CLI::IsMember({"type", "zone"}));
  app.add_option("--out", o.out, "output directory");
  app.add_flag("--oat,!--no-oat", o.oat, "online adversarial training");
  app.add_flag("--al,!--no-al", o.al, "adversarial learning for the ADS");
  app.add_flag("--gate,!--no-gate", o.gate, "ADS gate in front of the predictor");
  app.fallthrough();

  auto* prepare = app.add_subcommand("prepare", "build and save the dataset split");
  auto* train_predictor = app.add_subcommand("train-predictor", "train the standard (and OAT) predictor");
  auto* train_ads = app.add_subcommand("train-ads", "train the GAN anomaly detector");
  auto* train_graybox = app.add_subcommand("train-graybox", "train the gray-box generator");
  auto* attack = app.add_subcommand("attack", "craft and save white-box adversarial sets");
  attack->add_option("--attack", o.attack, "fgsm, bim, cw, rfgsm or pgd");
  attack->add_option("--epsilon", o.epsilon, "single budget instead of the grid");
  auto* sweep = app.add_subcommand("sweep", "epsilon sweep over saved artifacts");
  auto* pipeline = app.add_subcommand("pipeline", "train, evaluate and report end to end");
  auto* report = app.add_subcommand("report", "re-emit plot data and print a saved report");
  report->add_option("--in", o.report_dir, "report directory (default <out>/report)");

  CLI11_PARSE(app, argc, argv);

  try {
    const harness::ExperimentConfig c = load_config(o);
    if (*prepare) return cmd_prepare(c);
    if (*train_predictor) return cmd_train_predictor(c);
    if (*train_ads) return cmd_train_ads(c);
    if (*train_graybox) return cmd_train_graybox(c);
    if (*attack) return cmd_attack(c, o);
    if (*sweep) return cmd_sweep(c);
    if (*pipeline) return cmd_pipeline(c);
    if (*report) return cmd_report(c, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
