#include "ictd/harness.hpp"
#include "ictd/io.hpp"
#include "ictd/pretrain.hpp"
#include "ictd/verify.hpp"

#include <CLI11.hpp>

#include <glob.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace ictd;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

// Fills every option of `sub` that was not given on the command line from a
// flat JSON object. Keys are long option names, with '_' accepted for '-'.
void apply_config_file(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  const Json cfg = read_json_file(path);
  require(cfg.is_object(), "config file " + path + " must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = sub.get_option_no_throw("--" + name);
    require(opt != nullptr, "config file " + path + ": unknown option '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    std::vector<std::string> inputs;
    const auto as_text = [](const Json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number_float()) return format_double(v.get<double>());
      return v.dump();
    };
    if (value.is_array()) {
      for (const Json& v : value) inputs.push_back(as_text(v));
    } else {
      inputs.push_back(as_text(value));
    }
    for (const std::string& in : inputs) opt->add_result(in);
    opt->run_callback();
  }
}

std::vector<int> parse_range(const std::string& text) {
  std::vector<int> parts;
  std::stringstream ss(text);
  std::string piece;
  while (std::getline(ss, piece, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stoi(piece, &used));
      require(used == piece.size(), "");
    } catch (const std::exception&) {
      throw Error("lengths: cannot read '" + text + "', expected start:stop:step");
    }
  }
  if (parts.size() == 1) return {parts[0]};
  require(parts.size() == 2 || parts.size() == 3, "lengths: expected start:stop:step, got '" + text + "'");
  const int step = parts.size() == 3 ? parts[2] : 1;
  require(step >= 1, "lengths: step must be >= 1");
  std::vector<int> out;
  for (int m = parts[0]; m <= parts[1]; m += step) out.push_back(m);
  require(!out.empty(), "lengths: empty range '" + text + "'");
  return out;
}

std::vector<std::string> expand_globs(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const std::string& pat : patterns) {
    glob_t g{};
    const int rc = ::glob(pat.c_str(), 0, nullptr, &g);
    if (rc == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    ::globfree(&g);
    require(rc == 0 || rc == GLOB_NOMATCH, "cannot expand '" + pat + "'");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

TransformerParams load_params(const std::string& path) {
  const Json j = read_json_file(path);
  return j.contains("params") ? checkpoint_from_json(j).params : params_from_json(j);
}

std::string trial_dir_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trial_%02d", t);
  return buf;
}

template <typename Enum>
CLI::Option* add_enum(CLI::App& app, const std::string& name, Enum& target,
                      Enum (*parse)(std::string_view), std::string_view (*show)(Enum),
                      const std::string& help) {
  return app
      .add_option_function<std::string>(
          name, [&target, parse](const std::string& s) { target = parse(s); }, help)
      ->default_str(std::string(show(target)));
}

// ---------------------------------------------------------------- gen-mrp

struct GenArgs {
  MrpFamily family = MrpFamily::boyan;
  int states = 5;
  double gamma = 0.9;
  double loop_threshold = kDefaultLoopThreshold;
  std::uint64_t seed = 0;
  int count = 1;
  std::string out;
};

int run_gen(const GenArgs& a) {
  Rng rng = make_rng(a.seed);
  Json arr = Json::array();
  for (const Mrp& m : sample_tasks(a.family, a.states, a.gamma, a.count, rng, a.loop_threshold)) {
    Json j = to_json(m);
    j["value"] = vector_to_json(solve_value(m));
    arr.push_back(std::move(j));
  }
  write_or_print(a.out, dump_json(arr) + "\n");
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  TrainConfig config;
  int trials = 1;
  std::string out;
};

int run_train(const TrainArgs& a) {
  a.config.validate();
  const fs::path root(a.out);
  fs::create_directories(root);

  Json cfg = to_json(a.config);
  cfg["trials"] = a.trials;
  write_text_file(root / "config.json", dump_json(cfg) + "\n");

  std::map<int, std::ostringstream> logs;
  const auto sink = [&logs](int t, const ProgressRecord& rec) {
    auto& os = logs[t];
    if (rec.task_index == 0) os << progress_csv_header();
    os << progress_csv_row(rec);
  };

  const std::vector<TrialResult> results = train_trials(a.config, a.trials, sink);

  Json summary = Json::array();
  bool all_ok = true;
  for (const TrialResult& r : results) {
    const fs::path dir = root / trial_dir_name(r.trial);
    fs::create_directories(dir);
    auto& log = logs[r.trial];
    if (log.tellp() == 0) log << progress_csv_header();
    write_text_file(dir / "progress.csv", log.str());

    Json entry{{"trial", r.trial}, {"seed", r.seed}, {"status", r.ok() ? "ok" : "diverged"}};
    if (r.ok()) {
      for (const Checkpoint& c : r.checkpoints) {
        if (c.tasks_seen == 0 && &c != &r.final()) continue;
        const std::string name = &c == &r.final() ? "checkpoint_final.json"
                                                  : "checkpoint_" + std::to_string(c.tasks_seen) + ".json";
        write_text_file(dir / name, dump_json(to_json(c)) + "\n");
      }
      entry["final_mean_abs_error"] = r.final().mean_abs_error;
      entry["final_param_norm"] = param_norm(r.final().params);
    } else {
      entry["error"] = r.error;
      all_ok = false;
    }
    std::cerr << trial_dir_name(r.trial) << ": " << (r.ok() ? "ok" : r.error) << '\n';
    summary.push_back(std::move(entry));
  }
  write_text_file(root / "summary.json", dump_json(summary) + "\n");
  return all_ok ? 0 : kExitFail;
}

// -------------------------------------------------------------- eval-msve

struct EvalArgs {
  std::string ckpt;
  int tasks = 10;
  std::string lengths = "5:100:5";
  MrpFamily family = MrpFamily::boyan;
  double gamma = -1.0;
  double loop_threshold = kDefaultLoopThreshold;
  ContextWeighting weighting = ContextWeighting::visit_count;
  std::uint64_t seed = 0;
  std::string out;
  std::string json;
};

int run_eval(const EvalArgs& a) {
  const Json j = read_json_file(a.ckpt);
  const bool is_ckpt = j.contains("params");
  const TransformerParams params = is_ckpt ? checkpoint_from_json(j).params : params_from_json(j);

  EvalConfig cfg;
  cfg.family = a.family;
  cfg.n_tasks = a.tasks;
  cfg.lengths = parse_range(a.lengths);
  cfg.gamma = a.gamma >= 0.0 ? a.gamma : (is_ckpt ? checkpoint_from_json(j).config.gamma : 0.9);
  cfg.loop_threshold = a.loop_threshold;
  cfg.weighting = a.weighting;

  Rng rng = make_rng(a.seed);
  EvalReport rep = msve_curve(params, cfg, rng);
  rep.seed = a.seed;
  rep.checkpoint_id = a.ckpt;
  write_or_print(a.out, eval_csv(rep));
  if (!a.json.empty()) write_text_file(a.json, dump_json(to_json(rep)) + "\n");
  return 0;
}

// -------------------------------------------------------- inspect-weights

struct InspectArgs {
  std::vector<std::string> ckpt;
  std::string out;
  std::string json;
};

int run_inspect(const InspectArgs& a) {
  const std::vector<std::string> files = expand_globs(a.ckpt);
  require(!files.empty(), "inspect-weights: no checkpoint matches");
  std::vector<TransformerParams> trials;
  for (const std::string& f : files) trials.push_back(load_params(f));
  const WeightReport rep = weight_report(std::span<const TransformerParams>(trials));

  if (!a.out.empty()) write_text_file(a.out, weight_csv(rep));
  Json j = to_json(rep);
  j["files"] = files;
  if (!a.json.empty()) write_text_file(a.json, dump_json(j) + "\n");
  std::cout << "trials " << files.size() << " corr_P " << format_double(rep.corr_P) << " corr_Q "
            << format_double(rep.corr_Q) << " off_pattern_P " << format_double(rep.off_pattern_P)
            << " off_pattern_Q " << format_double(rep.off_pattern_Q) << '\n';
  return 0;
}

// ----------------------------------------------------------------- verify

struct VerifyArgs {
  std::string check = "all";
  int states = 5;
  std::vector<int> layers{5, 10, 20, 30};
  std::vector<double> gamma{0.9};
  int tasks = 100;
  MrpFamily family = MrpFamily::boyan;
  double loop_threshold = kDefaultLoopThreshold;
  std::uint64_t seed = 0;
  std::string out;
  std::string summary;
};

int run_verify(const VerifyArgs& a) {
  std::vector<Check> checks;
  if (a.check == "all") {
    checks = all_checks();
  } else {
    checks.push_back(parse_check(a.check));
  }

  BoundReport all;
  Json per_check = Json::object();
  for (std::size_t gi = 0; gi < a.gamma.size(); ++gi) {
    Rng rng = make_rng(a.seed, gi);
    const std::vector<Mrp> tasks = sample_tasks(a.family, a.states, a.gamma[gi], a.tasks, rng, a.loop_threshold);
    for (Check c : checks) {
      const SweepResult res = decay_sweep(c, a.layers, tasks);
      all.append(res.report);
      Json entry{{"gamma", a.gamma[gi]},
                 {"depths", res.depths},
                 {"measured", res.measured},
                 {"bounds", res.bounds},
                 {"pass", res.report.pass()}};
      per_check[std::string(check_name(c))].push_back(std::move(entry));
      std::cerr << check_name(c) << " gamma " << format_double(a.gamma[gi]) << ": "
                << (res.report.pass() ? "pass" : "FAIL") << '\n';
    }
  }

  write_or_print(a.out, bound_csv(all));
  if (!a.summary.empty()) {
    double worst = 0.0;
    bool first = true;
    for (const BoundRecord& r : all.records) {
      if (first || r.slack < worst) worst = r.slack;
      first = false;
    }
    Json s{{"pass", all.pass()},
           {"records", all.records.size()},
           {"min_slack", worst},
           {"states", a.states},
           {"tasks", a.tasks},
           {"family", family_name(a.family)},
           {"seed", a.seed},
           {"checks", per_check}};
    write_text_file(a.summary, dump_json(s) + "\n");
  }
  return all.pass() ? 0 : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context TD experiments: MRP generation, pretraining, evaluation and bound checks"};
  app.require_subcommand(1);

  GenArgs gen;
  std::string gen_cfg;
  CLI::App* g = app.add_subcommand("gen-mrp", "Sample MRPs and write them as JSON");
  g->add_option("--config", gen_cfg, "JSON file with option values; flags override it");
  add_enum(*g, "--family", gen.family, parse_family, family_name, "boyan or loop");
  g->add_option("--states", gen.states, "Number of states")->capture_default_str();
  g->add_option("--gamma", gen.gamma, "Discount")->capture_default_str();
  g->add_option("--loop-threshold", gen.loop_threshold, "Loop edge threshold")->capture_default_str();
  g->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  g->add_option("--count", gen.count, "Number of MRPs")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output JSON (stdout if omitted)");

  TrainArgs tr;
  std::string tr_cfg;
  TrainConfig& c = tr.config;
  CLI::App* t = app.add_subcommand("train", "Pretrain the looped linear Transformer");
  t->add_option("--config", tr_cfg, "JSON file with option values; flags override it");
  add_enum(*t, "--algorithm", c.algorithm, parse_algorithm, algorithm_name, "td or mc");
  t->add_option("--n-states", c.n_states, "States per task")->capture_default_str();
  t->add_option("--depth", c.depth, "Layers L")->capture_default_str();
  t->add_option("--gamma", c.gamma, "Discount")->capture_default_str();
  t->add_option("--batch", c.batch, "Transitions per task")->capture_default_str();
  t->add_option("--n-tasks", c.n_tasks, "Training tasks")->capture_default_str();
  t->add_option("--learning-rate", c.learning_rate, "Step size")->capture_default_str();
  t->add_option("--mc-horizon", c.mc_horizon, "Truncation of MC returns")->capture_default_str();
  add_enum(*t, "--family", c.family, parse_family, family_name, "boyan or loop");
  t->add_option("--loop-threshold", c.loop_threshold, "Loop edge threshold")->capture_default_str();
  t->add_option("--init-scale", c.init_scale, "Std of the initial weights")->capture_default_str();
  t->add_option("--seed", c.seed, "Base seed; trial t uses a derived stream")->capture_default_str();
  t->add_option("--checkpoint-every", c.checkpoint_every, "Tasks between checkpoints (0: final only)")
      ->capture_default_str();
  add_enum(*t, "--optimizer", c.optimizer, parse_optimizer, optimizer_name, "adam or sgd");
  t->add_option("--adam-beta1", c.adam_beta1)->capture_default_str();
  t->add_option("--adam-beta2", c.adam_beta2)->capture_default_str();
  t->add_option("--adam-eps", c.adam_eps)->capture_default_str();
  t->add_option("--trials", tr.trials, "Independent runs")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--out", tr.out, "Output directory")->required();

  EvalArgs ev;
  std::string ev_cfg;
  CLI::App* e = app.add_subcommand("eval-msve", "MSVE against context length on fresh tasks");
  e->add_option("--config", ev_cfg, "JSON file with option values; flags override it");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint or params JSON")->required();
  e->add_option("--tasks", ev.tasks, "Validation tasks")->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--lengths", ev.lengths, "start:stop:step, stop inclusive")->capture_default_str();
  add_enum(*e, "--family", ev.family, parse_family, family_name, "boyan or loop");
  e->add_option("--gamma", ev.gamma, "Discount (default: the checkpoint's)");
  e->add_option("--loop-threshold", ev.loop_threshold, "Loop edge threshold")->capture_default_str();
  add_enum(*e, "--weighting", ev.weighting, parse_weighting, weighting_name, "unit or visit_count");
  e->add_option("--seed", ev.seed, "Seed")->capture_default_str();
  e->add_option("--out", ev.out, "Output CSV (stdout if omitted)");
  e->add_option("--json", ev.json, "Also write the report as JSON");

  InspectArgs in;
  std::string in_cfg;
  CLI::App* w = app.add_subcommand("inspect-weights", "Normalized mean weights and alignment with theta_TD");
  w->add_option("--config", in_cfg, "JSON file with option values; flags override it");
  w->add_option("--ckpt", in.ckpt, "Checkpoint files or glob patterns")->required();
  w->add_option("--out", in.out, "Output CSV");
  w->add_option("--json", in.json, "Output JSON");

  VerifyArgs vf;
  std::string vf_cfg;
  CLI::App* v = app.add_subcommand("verify", "Check the error and gradient bounds at theta_TD");
  v->add_option("--config", vf_cfg, "JSON file with option values; flags override it");
  v->add_option("--check", vf.check, "theorem1, lemma1..4, theorem2, corollary1 or all")->capture_default_str();
  v->add_option("--states", vf.states, "States per task")->capture_default_str();
  v->add_option("--layers", vf.layers, "Depths")->delimiter(',')->capture_default_str();
  v->add_option("--gamma", vf.gamma, "Discounts")->delimiter(',')->capture_default_str();
  v->add_option("--tasks", vf.tasks, "Tasks per discount")->capture_default_str()->check(CLI::PositiveNumber);
  add_enum(*v, "--family", vf.family, parse_family, family_name, "boyan or loop");
  v->add_option("--loop-threshold", vf.loop_threshold, "Loop edge threshold")->capture_default_str();
  v->add_option("--seed", vf.seed, "Seed")->capture_default_str();
  v->add_option("--out", vf.out, "Output CSV (stdout if omitted)");
  v->add_option("--summary", vf.summary, "Output JSON summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (g->parsed()) {
      apply_config_file(*g, gen_cfg);
      return run_gen(gen);
    }
    if (t->parsed()) {
      apply_config_file(*t, tr_cfg);
      return run_train(tr);
    }
    if (e->parsed()) {
      apply_config_file(*e, ev_cfg);
      return run_eval(ev);
    }
    if (w->parsed()) {
      apply_config_file(*w, in_cfg);
      return run_inspect(in);
    }
    if (v->parsed()) {
      apply_config_file(*v, vf_cfg);
      return run_verify(vf);
    }
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
