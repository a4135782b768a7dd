#include "faultguard/harness.hpp"

#include "faultguard/io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace faultguard::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return out;
}

long long parse_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const long long x = parse_integer(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw ConfigError("config key '" + key + "': value out of range");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::string fmt(double v) { return io::format_double(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FG_DOUBLE(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
          [](const ExperimentConfig& c) { return fmt(c.member); } }
#define FG_INT(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_int(k, v); }, \
          [](const ExperimentConfig& c) { return fmt(c.member); } }
#define FG_BOOL(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
          [](const ExperimentConfig& c) { return fmt(c.member); } }
#define FG_U64(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_u64(k, v); }, \
          [](const ExperimentConfig& c) { return fmt(c.member); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"data.path", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_path = v; },
            [](const ExperimentConfig& c) { return c.data_path; }},
      FG_INT("data.synth_classes", synth.n_classes),
      FG_INT("data.synth_windows", synth.n_windows),
      FG_DOUBLE("data.synth_separation", synth.separation),
      FG_DOUBLE("data.synth_noise", synth.noise),
      FG_INT("data.synth_code_features", synth.code_features),
      FG_DOUBLE("data.synth_code_gain", synth.code_gain),
      FG_DOUBLE("data.synth_weak_gain", synth.weak_gain),
      FG_INT("data.window_size", window_size),
      FG_INT("data.window_stride", window_stride),
      FG_BOOL("data.shuffle", shuffle_split),
      Field{"tasks",
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.tasks.clear();
              for (const std::string& t : split_list(v)) c.tasks.push_back(parse_task(t));
            },
            [](const ExperimentConfig& c) {
              std::string s;
              for (Task t : c.tasks) s += (s.empty() ? "" : ",") + to_string(t);
              return s;
            }},
      FG_U64("seed", seed),
      FG_INT("n_seeds", n_seeds),
      FG_BOOL("defense.oat", use_oat),
      FG_BOOL("defense.al", use_al),
      FG_BOOL("defense.gate", use_gate),
      FG_INT("predictor.hidden_size", predictor.hidden_size),
      FG_DOUBLE("predictor.dropout", predictor.dropout_rate),
      FG_INT("predictor.epochs", predictor.epochs),
      FG_DOUBLE("predictor.learning_rate", predictor.learning_rate),
      FG_INT("predictor.batch_size", predictor.batch_size),
      FG_DOUBLE("predictor.oat_epsilon", predictor.oat_epsilon),
      FG_BOOL("predictor.oat_include_clean", predictor.oat_include_clean),
      FG_INT("predictor.oat_bim_steps", predictor.oat_bim_steps),
      FG_INT("ads.epochs", ads.epochs),
      FG_DOUBLE("ads.learning_rate", ads.learning_rate),
      FG_DOUBLE("ads.adam_beta1", ads.adam_beta1),
      FG_DOUBLE("ads.al_epsilon", ads.al_epsilon),
      FG_INT("ads.al_bim_steps", ads.al_bim_steps),
      FG_DOUBLE("ads.threshold", ads.threshold),
      FG_INT("ads.latent_dim", ads.latent_dim),
      FG_INT("ads.batch_size", ads.batch_size),
      FG_BOOL("ads.compare_without_al", ads_compare_without_al),
      FG_INT("graybox.epochs", graybox.epochs),
      FG_DOUBLE("graybox.learning_rate", graybox.learning_rate),
      FG_INT("graybox.latent_dim", graybox.latent_dim),
      FG_INT("graybox.batch_size", graybox.batch_size),
      FG_INT("graybox.n_batches", graybox_batches),
      FG_INT("graybox.gen_batch_size", graybox_batch_size),
      Field{"attacks.kinds",
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.attack_kinds.clear();
              for (const std::string& k : split_list(v)) c.attack_kinds.push_back(attacks::parse_attack_kind(k));
            },
            [](const ExperimentConfig& c) {
              std::string s;
              for (attacks::AttackKind k : c.attack_kinds) s += (s.empty() ? "" : ",") + attacks::to_string(k);
              return s;
            }},
      Field{"attacks.epsilons",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.epsilons.clear();
              for (const std::string& e : split_list(v)) c.epsilons.push_back(parse_double(k, e));
            },
            [](const ExperimentConfig& c) {
              std::string s;
              for (double e : c.epsilons) s += (s.empty() ? "" : ",") + fmt(e);
              return s;
            }},
      FG_INT("attacks.steps", attack_steps),
      FG_INT("attacks.cw_steps", cw_steps),
      FG_DOUBLE("attacks.cw_c", cw_c),
      FG_DOUBLE("attacks.cw_kappa", cw_kappa),
      FG_DOUBLE("attacks.cw_lr", cw_lr),
      FG_INT("eval.windows", eval_windows),
      FG_INT("eval.notification_batches", notification_batches),
      FG_INT("eval.curve_batches", curve_batches),
      Field{"out", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
            [](const ExperimentConfig& c) { return c.out_dir; }},
  };
  return table;
}

#undef FG_DOUBLE
#undef FG_INT
#undef FG_BOOL
#undef FG_U64

void check_accuracy_args(double accuracy, int batches) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ConfigError("accuracy must lie in [0, 1]");
  if (batches < 1) throw ConfigError("batches must be a positive integer");
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string opt_string(const std::optional<double>& v) { return v ? fmt(*v) : ""; }
std::string opt_string(const std::optional<int>& v) { return v ? std::to_string(*v) : ""; }

std::string row_key(const ReportRow& r) {
  return r.task + "|" + r.defense.key() + "|" + r.attack + "|" + opt_string(r.epsilon) + "|" + opt_string(r.batches) +
         "|" + r.metric;
}

DefenseFlags parse_defense_key(const std::string& key) {
  DefenseFlags d;
  for (const std::string& part : split_list(key)) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw DataError("bad defense key '" + key + "'");
    const std::string name = part.substr(0, eq);
    const bool on = parse_bool(name, part.substr(eq + 1));
    if (name == "oat") d.oat = on;
    else if (name == "al") d.al = on;
    else if (name == "gate") d.gate = on;
    else throw DataError("bad defense key '" + key + "'");
  }
  return d;
}

std::string file_tag(const DefenseFlags& d) {
  return std::string("oat") + (d.oat ? "1" : "0") + "_al" + (d.al ? "1" : "0") + "_gate" + (d.gate ? "1" : "0");
}

ReportRow cell(std::string task, DefenseFlags defense, std::string attack, std::optional<double> epsilon,
               std::optional<int> batches, std::string metric) {
  ReportRow r;
  r.task = std::move(task);
  r.defense = defense;
  r.attack = std::move(attack);
  r.epsilon = epsilon;
  r.batches = batches;
  r.metric = std::move(metric);
  return r;
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw Error("stage '" + name + "' failed: " + e.what());
  }
}

}  // namespace

double combinatorial_accuracy(double accuracy, int batches) {
  check_accuracy_args(accuracy, batches);
  return 1.0 - std::pow(1.0 - accuracy, batches);
}

double false_alarm_probability(double accuracy, int batches) {
  check_accuracy_args(accuracy, batches);
  return std::pow(1.0 - accuracy, batches);
}

std::string DefenseFlags::key() const {
  return std::string("oat=") + (oat ? "1" : "0") + ",al=" + (al ? "1" : "0") + ",gate=" + (gate ? "1" : "0");
}

void ExperimentConfig::validate() const {
  if (tasks.empty()) throw ConfigError("config: at least one task must be selected");
  if (epsilons.empty()) throw ConfigError("config: epsilon grid is empty");
  for (double e : epsilons)
    if (!(e > 0)) throw ConfigError("config: epsilon grid values must be positive");
  if (attack_kinds.empty()) throw ConfigError("config: no attack kinds selected");
  if (n_seeds < 1) throw ConfigError("config: n_seeds must be positive");
  if (window_size < 1 || window_stride < 1) throw ConfigError("config: window size and stride must be positive");
  if (attack_steps < 1 || cw_steps < 0) throw ConfigError("config: attack step counts must be positive");
  if (eval_windows < 0) throw ConfigError("config: eval.windows must be non-negative");
  if (notification_batches < 1 || curve_batches < 1) throw ConfigError("config: batch counts must be positive");
  if (graybox_batches < 0 || graybox_batch_size < 1) throw ConfigError("config: bad gray-box batch settings");
  if (use_al && !use_gate) throw ConfigError("config: defense.al requires defense.gate");
  predictor::PredictorConfig p = predictor;
  p.window_len = window_size;
  p.validate();
  ads.validate();
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n_seeds; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  Fingerprint fp;
  // The output directory does not influence results.
  for (const Field& f : fields())
    if (std::string(f.key) != "out") fp.update(std::string(f.key) + "=" + f.get(*this) + "\n");
  return fp.hex();
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields())
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      c.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RowAccumulator::add(const ReportRow& key, double value, double runtime_seconds) {
  const std::string k = row_key(key);
  for (Cell& c : cells_)
    if (row_key(c.key) == k) {
      c.values.push_back(value);
      c.runtime += runtime_seconds;
      return;
    }
  cells_.push_back({key, {value}, runtime_seconds});
}

std::vector<ReportRow> RowAccumulator::rows() const {
  std::vector<ReportRow> out;
  for (const Cell& c : cells_) {
    ReportRow r = c.key;
    const auto [m, s] = mean_std(c.values);
    r.value = m;
    r.std = s;
    r.n_seeds = static_cast<int>(c.values.size());
    r.runtime_seconds = c.runtime / static_cast<double>(c.values.size());
    r.config_hash = hash_;
    out.push_back(r);
  }
  return out;
}

double gated_accuracy(const predictor::PredictorModel& model, const ads::DiscriminatorNet* disc, double threshold,
                      std::span<const Window> windows, std::span<const int> labels, bool malicious) {
  if (windows.empty()) throw DataError("gated_accuracy: empty window list");
  if (windows.size() != labels.size()) throw ShapeError("gated_accuracy: label count mismatch");
  if (!disc) return accuracy(model, windows, labels);
  const std::vector<bool> ok = ads::legitimate_mask(*disc, windows, threshold);
  const std::vector<int> pred = model.predict(windows);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) correct += ok[i] ? (pred[i] == labels[i]) : malicious;
  return static_cast<double>(correct) / static_cast<double>(windows.size());
}

attacks::AttackSpec make_spec(const ExperimentConfig& config, attacks::AttackKind kind, double epsilon,
                              std::uint64_t seed) {
  attacks::AttackSpec s = attacks::AttackSpec::defaults(
      kind, epsilon, derive_seed(seed, "attack-" + attacks::to_string(kind) + "-" + fmt(epsilon)));
  if (kind == attacks::AttackKind::CW) {
    s.steps = config.cw_steps;
    s.cw_c = config.cw_c;
    s.cw_kappa = config.cw_kappa;
    s.cw_lr = config.cw_lr;
    // The CW objective has no epsilon; one seed-independent spec serves the whole grid.
    s.seed = 0;
  } else if (kind == attacks::AttackKind::BIM || kind == attacks::AttackKind::PGD) {
    s.steps = config.attack_steps;
  }
  return s;
}

void sweep_into(const ExperimentConfig& config, const SweepTarget& t, RowAccumulator& acc) {
  if (!t.model) throw ConfigError("sweep: missing trained predictor");
  if (t.windows.empty()) throw DataError("sweep: no evaluation windows");
  std::optional<attacks::AdversarialBatch> cw_cache;
  double cw_seconds = 0;
  for (attacks::AttackKind kind : config.attack_kinds) {
    for (double eps : config.epsilons) {
      const auto t0 = Clock::now();
      const attacks::AttackSpec spec = make_spec(config, kind, eps, t.seed);
      const attacks::AdversarialBatch* batch = nullptr;
      attacks::AdversarialBatch fresh;
      if (kind == attacks::AttackKind::CW) {
        if (!cw_cache) {
          cw_cache = attacks::run_attack(*t.model, t.windows, t.labels, spec);
          cw_seconds = seconds_since(t0);
        }
        batch = &*cw_cache;
      } else {
        fresh = attacks::run_attack(*t.model, t.windows, t.labels, spec);
        batch = &fresh;
      }
      const double craft = kind == attacks::AttackKind::CW ? cw_seconds : seconds_since(t0);
      ReportRow row = cell(to_string(t.task), t.defense, attacks::to_string(kind), eps, std::nullopt, "accuracy");
      const auto e0 = Clock::now();
      acc.add(row, gated_accuracy(*t.model, t.discriminator, t.threshold, batch->perturbed, t.labels, true),
              craft + seconds_since(e0));
      if (t.discriminator) {
        const std::vector<ads::MaliciousSet> sets{{row.attack, batch->perturbed}};
        const auto d0 = Clock::now();
        const auto ev = ads::evaluate_ads(*t.discriminator, t.windows, sets, t.threshold);
        row.metric = "ads_accuracy";
        acc.add(row, ev.front().accuracy, seconds_since(d0));
      }
    }
  }
}

ExperimentReport run_epsilon_sweep(const ExperimentConfig& config, std::span<const SweepTarget> targets) {
  config.validate();
  if (targets.empty()) throw ConfigError("sweep: no trained artifacts supplied");
  ExperimentReport rep;
  rep.provenance.started = utc_now();
  RowAccumulator acc(config.hash());
  for (const SweepTarget& t : targets) {
    sweep_into(config, t, acc);
    if (std::find(rep.provenance.seeds.begin(), rep.provenance.seeds.end(), t.seed) == rep.provenance.seeds.end())
      rep.provenance.seeds.push_back(t.seed);
  }
  rep.rows = acc.rows();
  rep.provenance.config_hash = config.hash();
  rep.provenance.config_text = config.to_text();
  rep.provenance.finished = utc_now();
  return rep;
}

dataset::DatasetSplit build_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  if (config.data_path.empty()) {
    dataset::SynthOptions o = config.synth;
    o.seed = seed;
    o.window_len = config.window_size;
    return dataset::synth_dataset(o);
  }
  const std::vector<dataset::RawRecord> records = dataset::ingest(config.data_path);
  dataset::SplitOptions so;
  so.seed = seed;
  so.shuffle = config.shuffle_split;
  return dataset::split(dataset::make_windows(records, config.window_size, config.window_stride), so);
}

ExperimentReport run_full_pipeline(const ExperimentConfig& config, const Logger& log) {
  stage("config", [&] { config.validate(); });
  const auto note = [&](const std::string& s, const std::string& m) {
    if (log) log(s, m);
  };
  ExperimentReport rep;
  rep.provenance.started = utc_now();
  rep.provenance.config_hash = config.hash();
  rep.provenance.config_text = config.to_text();
  rep.provenance.seeds = config.seeds();
  RowAccumulator acc(config.hash());
  const DefenseFlags undefended{};
  const DefenseFlags defended{config.use_oat, config.use_al && config.use_gate, config.use_gate};
  const bool any_defense = config.use_oat || config.use_gate;

  for (std::uint64_t seed : config.seeds()) {
    const dataset::DatasetSplit split = stage("dataset", [&] { return build_dataset(config, seed); });
    rep.provenance.dataset_fingerprints.push_back(split.fingerprint());
    note("dataset", "seed " + std::to_string(seed) + ": " + std::to_string(split.train.size()) + "/" +
                        std::to_string(split.validation.size()) + "/" + std::to_string(split.test.size()) +
                        " windows");
    if (split.test.empty()) throw Error("stage 'dataset' failed: empty test split");

    std::size_t n_eval = split.test.size();
    if (config.eval_windows > 0) n_eval = std::min<std::size_t>(n_eval, static_cast<std::size_t>(config.eval_windows));
    const std::span<const dataset::GridWindow> eval_split(split.test.data(), n_eval);
    const std::vector<Window> eval_x = dataset::window_data(eval_split);

    attacks::GrayboxConfig gc = config.graybox;
    gc.seed = derive_seed(seed, "graybox");
    const auto g0 = Clock::now();
    const attacks::GrayboxAttacker graybox =
        stage("train-graybox", [&] { return attacks::train_graybox_generator(split.train, gc); });
    note("train-graybox", "done in " + fmt(seconds_since(g0)) + " s");
    const attacks::GeneratedData generated = stage("graybox-generate", [&] {
      return attacks::generate_graybox(graybox, config.graybox_batches, config.graybox_batch_size,
                                       derive_seed(seed, "graybox-sample"), config.window_size);
    });
    acc.add(cell("all", undefended, "training", std::nullopt, std::nullopt, "graybox_seconds"), seconds_since(g0));

    for (Task task : config.tasks) {
      const std::string tn = to_string(task);
      const std::vector<int> eval_y = dataset::labels(eval_split, task);
      predictor::PredictorConfig pc = config.predictor;
      pc.n_classes = num_classes(task);
      pc.window_len = config.window_size;
      pc.seed = derive_seed(seed, "predictor-" + tn);

      predictor::PredictorModel standard(pc);
      const predictor::TrainingTrace st =
          stage("train-predictor", [&] { return predictor::train_standard(standard, split, task); });
      note("train-predictor", tn + " standard done in " + fmt(st.total_seconds) + " s");
      acc.add(cell(tn, undefended, "training", std::nullopt, std::nullopt, "predictor_seconds"), st.total_seconds);

      std::optional<predictor::PredictorModel> oat;
      if (config.use_oat) {
        oat.emplace(pc);
        const predictor::TrainingTrace ot =
            stage("train-predictor-oat", [&] { return predictor::train_online_adversarial(*oat, split, task); });
        note("train-predictor-oat", tn + " done in " + fmt(ot.total_seconds) + " s");
        acc.add(cell(tn, DefenseFlags{true, false, false}, "training", std::nullopt, std::nullopt, "predictor_seconds"),
                ot.total_seconds);
      }
      const predictor::PredictorModel& deployed = oat ? *oat : standard;

      std::optional<ads::AdsModel> detector, detector_plain;
      if (config.use_gate) {
        ads::AdsConfig ac = config.ads;
        ac.task = task;
        ac.adversarial_learning = config.use_al;
        ac.seed = derive_seed(seed, "ads-" + tn);
        detector = stage("train-ads", [&] { return ads::train_ads(split.train, deployed, ac); });
        note("train-ads", tn + " done in " + fmt(detector->trace.total_seconds) + " s");
        acc.add(cell(tn, DefenseFlags{false, config.use_al, true}, "training", std::nullopt, std::nullopt, "ads_seconds"),
                detector->trace.total_seconds);
        if (config.use_al && config.ads_compare_without_al) {
          ac.adversarial_learning = false;
          detector_plain = stage("train-ads", [&] { return ads::train_ads(split.train, deployed, ac); });
          acc.add(cell(tn, DefenseFlags{false, false, true}, "training", std::nullopt, std::nullopt, "ads_seconds"),
                  detector_plain->trace.total_seconds);
        }
      }
      const double thr = config.ads.threshold;

      std::vector<SweepTarget> targets;
      targets.push_back({task, undefended, &standard, nullptr, thr, eval_x, eval_y, seed});
      if (any_defense)
        targets.push_back(
            {task, defended, &deployed, detector ? &detector->discriminator : nullptr, thr, eval_x, eval_y, seed});

      stage("evaluate", [&] {
        for (const SweepTarget& t : targets) {
          const double clean = gated_accuracy(*t.model, t.discriminator, thr, t.windows, t.labels, false);
          acc.add(cell(tn, t.defense, "clean", std::nullopt, std::nullopt, "accuracy"), clean);
          for (int b = 1; b <= config.curve_batches; ++b) {
            acc.add(cell(tn, t.defense, "combinatorial", std::nullopt, b, "combinatorial_accuracy"),
                    combinatorial_accuracy(clean, b));
            acc.add(cell(tn, t.defense, "combinatorial", std::nullopt, b, "false_alarm_probability"),
                    false_alarm_probability(clean, b));
          }
          if (t.discriminator) {
            const std::vector<bool> ok = ads::legitimate_mask(*t.discriminator, t.windows, thr);
            acc.add(cell(tn, t.defense, "clean", std::nullopt, std::nullopt, "gate_pass_rate"),
                    static_cast<double>(std::count(ok.begin(), ok.end(), true)) / static_cast<double>(ok.size()));
          }
          // Gray-box injection: predicted-class coverage over windows that reach the predictor.
          if (!generated.windows.empty()) {
            std::vector<Window> reach = generated.windows;
            if (t.discriminator) reach = ads::gate(*t.discriminator, generated.windows, thr).passed;
            const double asr =
                reach.empty() ? 0.0 : attacks::graybox_asr(*t.model, reach, t.model->n_classes());
            acc.add(cell(tn, t.defense, "graybox", std::nullopt, std::nullopt, "asr"), asr);
            if (t.discriminator) {
              const std::vector<ads::MaliciousSet> sets{{"graybox", generated.windows}};
              acc.add(cell(tn, t.defense, "graybox", std::nullopt, std::nullopt, "ads_accuracy"),
                      ads::evaluate_ads(*t.discriminator, t.windows, sets, thr).front().accuracy);
            }
          }
        }
      });

      stage("sweep", [&] {
        for (const SweepTarget& t : targets) {
          sweep_into(config, t, acc);
          note("sweep", tn + " " + t.defense.key() + " done");
        }
        if (detector_plain) {
          // Detection-only rows for the ADS trained without adversarial learning.
          const DefenseFlags plain{config.use_oat, false, true};
          SweepTarget t{task, plain, &deployed, &detector_plain->discriminator, thr, eval_x, eval_y, seed};
          RowAccumulator scratch(config.hash());
          sweep_into(config, t, scratch);
          for (const ReportRow& r : scratch.rows())
            if (r.metric == "ads_accuracy") acc.add(r, r.value, r.runtime_seconds);
          if (!generated.windows.empty()) {
            const std::vector<ads::MaliciousSet> sets{{"graybox", generated.windows}};
            acc.add(cell(tn, plain, "graybox", std::nullopt, std::nullopt, "ads_accuracy"),
                    ads::evaluate_ads(*t.discriminator, t.windows, sets, thr).front().accuracy);
          }
        }
      });
    }
  }
  rep.rows = acc.rows();
  rep.provenance.finished = utc_now();
  return rep;
}

std::vector<std::string> csv_header() {
  return {"task",   "oat",  "al",  "gate", "attack",  "epsilon",         "batches",
          "metric", "value", "std", "n_seeds", "runtime_seconds", "config_hash"};
}

std::string to_csv(std::span<const ReportRow> rows, bool include_runtime) {
  std::ostringstream os;
  const std::vector<std::string> header = csv_header();
  bool first = true;
  for (const std::string& h : header) {
    if (!include_runtime && h == "runtime_seconds") continue;
    os << (first ? "" : ",") << h;
    first = false;
  }
  os << "\n";
  for (const ReportRow& r : rows) {
    if (!include_runtime && r.is_timing()) continue;
    os << r.task << "," << r.defense.oat << "," << r.defense.al << "," << r.defense.gate << "," << r.attack << ","
       << opt_string(r.epsilon) << "," << opt_string(r.batches) << "," << r.metric << "," << fmt(r.value) << ","
       << fmt(r.std) << "," << r.n_seeds << ",";
    if (include_runtime) os << fmt(r.runtime_seconds) << ",";
    os << r.config_hash << "\n";
  }
  return os.str();
}

std::vector<ReportRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw DataError("report csv: missing header");
  const std::vector<std::string> cols = split_list(line);
  if (cols != csv_header()) throw DataError("report csv: unexpected header '" + line + "'");
  std::vector<ReportRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_list(line);
    if (f.size() != cols.size())
      throw DataError("report csv line " + std::to_string(lineno) + ": expected " + std::to_string(cols.size()) +
                      " fields");
    ReportRow r;
    r.task = f[0];
    r.defense = DefenseFlags{parse_bool("oat", f[1]), parse_bool("al", f[2]), parse_bool("gate", f[3])};
    r.attack = f[4];
    if (!f[5].empty()) r.epsilon = parse_double("epsilon", f[5]);
    if (!f[6].empty()) r.batches = parse_int("batches", f[6]);
    r.metric = f[7];
    r.value = parse_double("value", f[8]);
    r.std = parse_double("std", f[9]);
    r.n_seeds = parse_int("n_seeds", f[10]);
    r.runtime_seconds = parse_double("runtime_seconds", f[11]);
    r.config_hash = f[12];
    rows.push_back(r);
  }
  return rows;
}

nlohmann::ordered_json to_json(const ExperimentReport& report) {
  nlohmann::ordered_json prov;
  prov["config_hash"] = report.provenance.config_hash;
  prov["seeds"] = report.provenance.seeds;
  prov["dataset_fingerprints"] = report.provenance.dataset_fingerprints;
  prov["started"] = report.provenance.started;
  prov["finished"] = report.provenance.finished;
  prov["config"] = report.provenance.config_text;

  nlohmann::ordered_json results = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const ReportRow& r = report.rows[i];
    nlohmann::ordered_json e;
    e["row"] = i;
    e["epsilon"] = r.epsilon ? nlohmann::ordered_json(*r.epsilon) : nlohmann::ordered_json(nullptr);
    e["batches"] = r.batches ? nlohmann::ordered_json(*r.batches) : nlohmann::ordered_json(nullptr);
    e["metric"] = r.metric;
    e["value"] = r.value;
    e["std"] = r.std;
    e["n_seeds"] = r.n_seeds;
    e["runtime_seconds"] = r.runtime_seconds;
    e["config_hash"] = r.config_hash;
    results[r.task][r.defense.key()][r.attack].push_back(e);
  }
  nlohmann::ordered_json out;
  out["provenance"] = prov;
  out["results"] = results;
  return out;
}

ExperimentReport report_from_json(const nlohmann::ordered_json& j) {
  ExperimentReport rep;
  const auto& p = j.at("provenance");
  rep.provenance.config_hash = p.at("config_hash").get<std::string>();
  rep.provenance.seeds = p.at("seeds").get<std::vector<std::uint64_t>>();
  rep.provenance.dataset_fingerprints = p.at("dataset_fingerprints").get<std::vector<std::string>>();
  rep.provenance.started = p.at("started").get<std::string>();
  rep.provenance.finished = p.at("finished").get<std::string>();
  rep.provenance.config_text = p.at("config").get<std::string>();
  std::map<std::size_t, ReportRow> ordered;
  for (const auto& [task, by_defense] : j.at("results").items())
    for (const auto& [defense, by_attack] : by_defense.items())
      for (const auto& [attack, entries] : by_attack.items())
        for (const auto& e : entries) {
          ReportRow r;
          r.task = task;
          r.defense = parse_defense_key(defense);
          r.attack = attack;
          if (!e.at("epsilon").is_null()) r.epsilon = e.at("epsilon").get<double>();
          if (!e.at("batches").is_null()) r.batches = e.at("batches").get<int>();
          r.metric = e.at("metric").get<std::string>();
          r.value = e.at("value").get<double>();
          r.std = e.at("std").get<double>();
          r.n_seeds = e.at("n_seeds").get<int>();
          r.runtime_seconds = e.at("runtime_seconds").get<double>();
          r.config_hash = e.at("config_hash").get<std::string>();
          if (!ordered.emplace(e.at("row").get<std::size_t>(), r).second) throw DataError("report json: duplicate row");
        }
  for (auto& [i, r] : ordered) rep.rows.push_back(std::move(r));
  return rep;
}

std::string epsilon_curve_csv(std::span<const ReportRow> rows, const std::string& task, const DefenseFlags& defense,
                              const std::string& metric) {
  std::vector<std::string> kinds;
  for (attacks::AttackKind k : attacks::kAllAttacks) {
    const std::string name = attacks::to_string(k);
    for (const ReportRow& r : rows)
      if (r.task == task && r.defense == defense && r.metric == metric && r.attack == name && r.epsilon) {
        kinds.push_back(name);
        break;
      }
  }
  std::map<double, std::map<std::string, double>> grid;
  for (const ReportRow& r : rows)
    if (r.task == task && r.defense == defense && r.metric == metric && r.epsilon) grid[*r.epsilon][r.attack] = r.value;
  std::ostringstream os;
  os << "epsilon";
  for (const std::string& k : kinds) os << "," << k;
  os << "\n";
  for (const auto& [eps, cells] : grid) {
    os << fmt(eps);
    for (const std::string& k : kinds) {
      const auto it = cells.find(k);
      os << "," << (it == cells.end() ? "" : fmt(it->second));
    }
    os << "\n";
  }
  return os.str();
}

std::string combinatorial_curve_csv(double accuracy, int max_batches) {
  std::ostringstream os;
  os << "batches,accuracy,combinatorial_accuracy,false_alarm_probability\n";
  for (int b = 1; b <= max_batches; ++b)
    os << b << "," << fmt(accuracy) << "," << fmt(combinatorial_accuracy(accuracy, b)) << ","
       << fmt(false_alarm_probability(accuracy, b)) << "\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  if (report.rows.empty()) throw DataError("emit_report: empty report");
  io::ensure_directory(dir);
  std::vector<std::filesystem::path> written;
  const auto write_text = [&](const std::string& name, const std::string& text) {
    const std::filesystem::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + p.string());
    written.push_back(p);
  };
  write_text("report.csv", to_csv(report.rows, true));
  write_text("metrics.csv", to_csv(report.rows, false));
  {
    const std::filesystem::path p = dir / "report.json";
    std::ofstream out(p, std::ios::binary);
    out << to_json(report).dump(2) << "\n";
    if (!out) throw DataError("cannot write " + p.string());
    written.push_back(p);
  }
  std::vector<std::pair<std::string, DefenseFlags>> groups;
  for (const ReportRow& r : report.rows) {
    const std::pair<std::string, DefenseFlags> g{r.task, r.defense};
    if (r.epsilon && std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  for (const auto& [task, def] : groups)
    for (const std::string metric : {"accuracy", "ads_accuracy"}) {
      const std::string csv = epsilon_curve_csv(report.rows, task, def, metric);
      if (csv.find('\n') + 1 < csv.size())
        write_text("plot_eps_" + metric + "_" + task + "_" + file_tag(def) + ".csv", csv);
    }
  for (const ReportRow& r : report.rows)
    if (r.attack == "clean" && r.metric == "accuracy") {
      int max_b = 0;
      for (const ReportRow& c : report.rows)
        if (c.task == r.task && c.defense == r.defense && c.batches) max_b = std::max(max_b, *c.batches);
      write_text("plot_combinatorial_" + r.task + "_" + file_tag(r.defense) + ".csv",
                 combinatorial_curve_csv(r.value, max_b > 0 ? max_b : 10));
    }
  return written;
}

ExperimentReport load_report(const std::filesystem::path& dir) {
  const std::filesystem::path p = dir / "report.json";
  std::ifstream in(p);
  if (!in) throw DataError("report not found: " + p.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw DataError("invalid report json " + p.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace faultguard::harness
