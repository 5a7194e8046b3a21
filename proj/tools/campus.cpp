// campus: command-line driver for metrics, scorer training, curriculum runs
// and the reference probe server.
//
// Exit codes: 0 ok, 1 configuration/data error, 2 probe error,
// 3 runtime failure during a run (trace prefix preserved on disk).

#include <CLI11.hpp>
#include <json.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "campus/campus.hpp"

namespace fs = std::filesystem;
using namespace campus;

namespace {

struct DataOptions {
  std::vector<std::string> datasets;
  std::vector<std::string> sources;
  std::string template_path;
};

struct ProbeOptions {
  std::string spec = "ngram:2";
  double alpha = 1.0;
  int timeout_s = 60;
};

void add_data_options(CLI::App* app, DataOptions& o) {
  app->add_option("--dataset", o.datasets, "JSONL dataset (repeatable)")->required();
  app->add_option("--source", o.sources,
                  "Default source label per --dataset, in the same order (used when a record has none)");
  app->add_option("--template", o.template_path, "Rendering template file (key=value markers)");
}

void add_probe_options(CLI::App* app, ProbeOptions& o, const std::string& default_spec) {
  o.spec = default_spec;
  app->add_option("--probe", o.spec, "ngram:<order> | exec:<cmd> | tcp:<host:port> | none")
      ->capture_default_str();
  app->add_option("--alpha", o.alpha, "Additive smoothing for the n-gram probe")->capture_default_str();
  app->add_option("--probe-timeout", o.timeout_s, "Seconds to wait for an external probe reply")
      ->capture_default_str();
}

Corpus load_corpus(const DataOptions& o) {
  if (!o.sources.empty() && o.sources.size() != o.datasets.size())
    throw ConfigError("--source must be given once per --dataset");
  Dataset ds;
  for (std::size_t k = 0; k < o.datasets.size(); ++k) {
    const std::string source = o.sources.empty() ? fs::path(o.datasets[k]).stem().string() : o.sources[k];
    ds.append(load_dataset(o.datasets[k], source));
  }
  RenderTemplate tpl;
  if (!o.template_path.empty()) tpl = RenderTemplate::load(o.template_path);
  return Corpus(std::move(ds), std::move(tpl));
}

std::unique_ptr<Probe> make_probe(const ProbeOptions& o, const Corpus& corpus) {
  if (o.spec == "none") return nullptr;
  if (o.spec.rfind("ngram:", 0) == 0) {
    int order = 0;
    try {
      order = std::stoi(o.spec.substr(6));
    } catch (const std::exception&) {
      throw ConfigError("bad n-gram order in --probe " + o.spec);
    }
    return std::make_unique<NGramProbe>(order, corpus.vocab().size(), o.alpha);
  }
  if (o.spec.rfind("exec:", 0) == 0 || o.spec.rfind("tcp:", 0) == 0)
    return ExternalProbe::connect(o.spec, std::chrono::seconds(o.timeout_s));
  throw ConfigError("unknown --probe spec '" + o.spec + "'");
}

void add_scorer_options(CLI::App* app, ScorerConfig& c) {
  app->add_option("--n-portions", c.n_portions, "Dataset portions for label construction")->capture_default_str();
  app->add_option("--lr", c.lr, "SGD learning rate for R and D")->capture_default_str();
  app->add_option("--batch", c.batch, "Minibatch size")->capture_default_str();
  app->add_option("--inner-iters", c.inner_iters, "Alternating D/R epochs per round")->capture_default_str();
  app->add_option("--label-smoothing", c.label_smoothing, "Label smoothing epsilon in [0,0.5)")
      ->capture_default_str();
  app->add_option("--upsample", c.upsample, "Upsample the minority label to 1:1")->capture_default_str();
  app->add_option("--adv-weight", c.adv_weight, "Weight of the adversarial fooling term")->capture_default_str();
  app->add_option("--hidden", c.hidden, "Hidden width of R and D")->capture_default_str();
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw ConfigError("cannot write " + path);
  return file;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

std::string loss_history_csv(const ScorerModel& m) {
  std::string out = "round,iteration,model,loss\n";
  for (const auto& r : m.history)
    out += std::to_string(r.round) + "," + std::to_string(r.iteration) + "," + r.model + "," +
           format_double(r.loss) + "\n";
  return out;
}

nlohmann::ordered_json nullable(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

// ---------------------------------------------------------------------------

struct MetricsCmd {
  DataOptions data;
  ProbeOptions probe;
  std::string scorer_path;
  std::string out;
  double ttr_threshold = kDefaultTtrThreshold;
  std::size_t jobs = 1;

  int operator()() const {
    const auto corpus = load_corpus(data);
    auto p = make_probe(probe, corpus);
    std::optional<ScorerModel> scorer;
    if (!scorer_path.empty()) {
      if (!p) throw ConfigError("--scorer needs a probe");
      scorer = load_scorer(scorer_path);
    }
    MetricContext ctx;
    ctx.corpus = &corpus;
    ctx.probe = p.get();
    ctx.scorer = scorer ? &*scorer : nullptr;
    ctx.ttr_threshold = ttr_threshold;
    ctx.jobs = jobs;
    const auto rows = compute_difficulties(ctx);
    std::ofstream file;
    auto& os = open_output(out, file);
    for (std::size_t id = 0; id < rows.size(); ++id) {
      nlohmann::ordered_json j;
      j["id"] = id;
      j["source"] = corpus.sample(id).source;
      j["d1"] = rows[id].d1;
      j["d2"] = rows[id].d2;
      j["d3"] = nullable(rows[id].d3);
      j["d4"] = nullable(rows[id].d4);
      os << j.dump() << '\n';
    }
    return 0;
  }
};

struct ScorerTrainCmd {
  DataOptions data;
  ProbeOptions probe;
  ScorerConfig config;
  std::string out = "scorer.json";

  int operator()() const {
    const auto corpus = load_corpus(data);
    auto p = make_probe(probe, corpus);
    if (!p) throw ConfigError("scorer training needs a probe");
    const auto model = train_scorer(corpus, *p, config);
    save_scorer(model, out);
    write_file(out + ".loss.csv", loss_history_csv(model));
    std::cerr << "scorer: " << model.history.size() << " loss records, checkpoint " << out << "\n";
    return 0;
  }
};

struct ScorerScoreCmd {
  DataOptions data;
  ProbeOptions probe;
  std::string scorer_path;
  std::string out;

  int operator()() const {
    const auto corpus = load_corpus(data);
    auto p = make_probe(probe, corpus);
    if (!p) throw ConfigError("scoring needs a probe");
    const auto model = load_scorer(scorer_path);
    std::ofstream file;
    auto& os = open_output(out, file);
    for (SampleId id = 0; id < corpus.size(); ++id) {
      nlohmann::ordered_json j;
      j["id"] = id;
      j["source"] = corpus.sample(id).source;
      j["d4"] = score_difficulty(corpus.encoded(id), *p, model);
      os << j.dump() << '\n';
    }
    return 0;
  }
};

struct RunCmd {
  DataOptions data;
  ProbeOptions probe;
  RunConfig config;
  ScorerConfig scorer_config;
  std::vector<std::string> metrics{"d1", "d2", "d3", "d4"};
  std::string select = "min";
  std::string refresh = "selected";
  std::string scorer_path;
  std::string out = "campus_out";
  std::size_t k = 5000;

  int operator()() {
    std::string joined;
    for (const auto& m : metrics) joined += (joined.empty() ? "" : ",") + m;
    config.metrics = parse_metric_set(joined);
    config.policy = parse_policy(select);
    if (refresh != "selected" && refresh != "all") throw ConfigError("--refresh-ppl must be selected|all");
    config.refresh_all = refresh == "all";
    config.validate();
    const auto corpus = load_corpus(data);
    auto p = make_probe(probe, corpus);
    if (!p) throw ConfigError("run needs a probe");

    std::optional<ScorerModel> scorer;
    const bool wants_score =
        std::find(config.metrics.begin(), config.metrics.end(), Metric::score) != config.metrics.end();
    if (!scorer_path.empty()) {
      scorer = load_scorer(scorer_path);
    } else if (wants_score) {
      auto* ngram = dynamic_cast<NGramProbe*>(p.get());
      if (!ngram) throw ConfigError("d4 with an external probe needs --scorer <checkpoint>");
      NGramProbe scratch = *ngram;
      scorer_config.seed = config.seed;
      scorer = train_scorer(corpus, scratch, scorer_config);
    }

    fs::create_directories(out);
    std::ofstream trace_file(fs::path(out) / "trace.jsonl");
    if (!trace_file) throw ConfigError("cannot write trace under " + out);

    CurriculumTrace trace;
    try {
      trace = run(corpus, *p, scorer ? &*scorer : nullptr, config, &trace_file);
    } catch (const ConfigError&) {
      throw;
    } catch (const ProbeError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("run failed: ") + e.what());
    }

    auto meta = trace.meta;
    meta["probe"] = probe.spec;
    meta["steps"] = trace.steps.size();
    write_file(fs::path(out) / "run_meta.json", meta.dump(2) + "\n");
    write_file(fs::path(out) / "convergence.csv", convergence_report(trace));
    if (!trace.trained_ids().empty())
      write_file(fs::path(out) / "composition.json", to_json(composition_report(trace, corpus, k)).dump(2) + "\n");

    const auto ids = all_ids(corpus.size());
    std::optional<double> last_loss;
    for (const auto& s : trace.steps)
      if (s.loss) last_loss = s.loss;
    std::cout << "steps: " << trace.steps.size() << "\n"
              << "final batch loss: " << (last_loss ? format_double(*last_loss) : "n/a") << "\n"
              << "corpus cross-entropy: " << format_double(cross_entropy(*p, corpus, ids)) << "\n"
              << "outputs: " << out << "\n";
    return 0;
  }
};

struct ServeProbeCmd {
  int order = 2;
  double alpha = 1.0;
  std::size_t vocab_size = 0;
  DataOptions data;
  int port = 0;

  int operator()() const {
    std::size_t v = vocab_size;
    if (v == 0) {
      if (data.datasets.empty()) throw ConfigError("serve-probe needs --vocab-size or --dataset");
      v = load_corpus(data).vocab().size();
    }
    NGramProbe probe(order, v, alpha);
    if (port == 0) {
      serve_probe(probe, std::cin, std::cout);
      return 0;
    }
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 1) != 0)
      throw ConfigError("cannot listen on port " + std::to_string(port));
    const int conn = ::accept(fd, nullptr, nullptr);
    ::close(fd);
    SocketTransport transport(conn);
    bool done = false;
    try {
      while (!done) {
        const auto line = transport.read_line(std::chrono::hours(24));
        if (line.empty()) continue;
        transport.write_line(handle_probe_request(probe, line, done).dump());
      }
    } catch (const ProbeProtocolError&) {
      // peer closed the connection
    }
    return 0;
  }
};

struct SynthCmd {
  std::size_t n = 1500;
  std::uint64_t seed = 0;
  std::string profile = "default";
  std::string out;

  int operator()() const {
    std::vector<SourceProfile> profiles;
    if (profile == "default") profiles = default_profiles();
    else if (profile == "code-easy") profiles = code_easy_profiles();
    else if (profile == "separable") profiles = separable_profiles();
    else throw ConfigError("unknown --profile '" + profile + "'");
    const auto ds = synthetic_corpus(n, seed, profiles);
    std::ofstream file;
    auto& os = open_output(out, file);
    for (const auto& s : ds.samples) os << to_json(s).dump() << '\n';
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"campus: competence-aware multi-perspective curriculum scheduling"};
  app.set_config("--config", "", "Config file (key=value, one [section] per subcommand)");
  app.require_subcommand(1);

  MetricsCmd metrics_cmd;
  auto* metrics = app.add_subcommand("metrics", "Compute d1..d4 per sample as JSONL");
  add_data_options(metrics, metrics_cmd.data);
  add_probe_options(metrics, metrics_cmd.probe, "none");
  metrics->add_option("--scorer", metrics_cmd.scorer_path, "Scorer checkpoint enabling d4");
  metrics->add_option("--ttr-threshold", metrics_cmd.ttr_threshold, "MTLD TTR threshold")->capture_default_str();
  metrics->add_option("--out", metrics_cmd.out, "Output JSONL (default stdout)");
  metrics->add_option("--jobs", metrics_cmd.jobs, "Worker threads for d1/d2")->capture_default_str();

  auto* scorer = app.add_subcommand("scorer", "Train or apply the competence-aware scoring model");
  scorer->require_subcommand(1);
  ScorerTrainCmd train_cmd;
  auto* train = scorer->add_subcommand("train", "Train R and D and write a checkpoint");
  add_data_options(train, train_cmd.data);
  add_probe_options(train, train_cmd.probe, "ngram:2");
  add_scorer_options(train, train_cmd.config);
  train->add_option("--seed", train_cmd.config.seed, "Seed")->capture_default_str();
  train->add_option("--out", train_cmd.out, "Checkpoint path (loss history at <out>.loss.csv)")
      ->capture_default_str();
  ScorerScoreCmd score_cmd;
  auto* score = scorer->add_subcommand("score", "Score every sample with a trained checkpoint");
  add_data_options(score, score_cmd.data);
  add_probe_options(score, score_cmd.probe, "ngram:2");
  score->add_option("--scorer", score_cmd.scorer_path, "Scorer checkpoint")->required();
  score->add_option("--out", score_cmd.out, "Output JSONL (default stdout)");

  RunCmd run_cmd;
  auto* run = app.add_subcommand("run", "Run the dynamic curriculum and write trace + reports");
  add_data_options(run, run_cmd.data);
  add_probe_options(run, run_cmd.probe, "ngram:2");
  add_scorer_options(run, run_cmd.scorer_config);
  run->add_option("--metrics", run_cmd.metrics, "Metric set, e.g. d1,d2,d3,d4")->delimiter(',')->capture_default_str();
  run->add_option("--scorer", run_cmd.scorer_path, "Scorer checkpoint (otherwise trained inline for d4)");
  run->add_option("--T", run_cmd.config.scope.total_steps, "Sub-curricula per schedule")->capture_default_str();
  run->add_option("--s1", run_cmd.config.scope.s1, "Initial learning scope")->capture_default_str();
  run->add_option("--p", run_cmd.config.scope.p, "Scope progression exponent")->capture_default_str();
  run->add_option("--select", run_cmd.select, "min | max | random | sequential")->capture_default_str();
  run->add_flag("--dedup", run_cmd.config.dedup, "Train each sample at most once");
  run->add_option("--refresh-ppl", run_cmd.refresh, "selected | all")->capture_default_str();
  run->add_option("--resort-window", run_cmd.config.resort_window, "Limit re-sorting to the next W positions (0 = all)")
      ->capture_default_str();
  run->add_flag("--plateau", run_cmd.config.plateau, "Stop early on loss plateau");
  run->add_option("--rel-tol", run_cmd.config.rel_tol, "Plateau relative tolerance")->capture_default_str();
  run->add_option("--patience", run_cmd.config.patience, "Plateau patience in steps")->capture_default_str();
  run->add_option("--max-steps", run_cmd.config.max_steps, "Step cap (0 = none)")->capture_default_str();
  run->add_option("--ttr-threshold", run_cmd.config.ttr_threshold, "MTLD TTR threshold")->capture_default_str();
  run->add_option("--seed", run_cmd.config.seed, "Seed")->capture_default_str();
  run->add_option("--k", run_cmd.k, "Window size of the composition report")->capture_default_str();
  run->add_option("--out", run_cmd.out, "Output directory")->capture_default_str();
  run->add_option("--jobs", run_cmd.config.jobs, "Worker threads for the initial d1/d2 sort")->capture_default_str();

  ServeProbeCmd serve_cmd;
  auto* serve = app.add_subcommand("serve-probe", "Serve the n-gram probe over the JSON-lines protocol");
  serve->add_option("--order", serve_cmd.order, "n-gram order")->capture_default_str();
  serve->add_option("--alpha", serve_cmd.alpha, "Additive smoothing")->capture_default_str();
  serve->add_option("--vocab-size", serve_cmd.vocab_size, "Vocabulary size (or derive from --dataset)");
  serve->add_option("--dataset", serve_cmd.data.datasets, "Dataset whose vocabulary size to use");
  serve->add_option("--port", serve_cmd.port, "Listen on 127.0.0.1:<port> instead of stdio");

  SynthCmd synth_cmd;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic multi-source corpus");
  synth->add_option("--n", synth_cmd.n, "Sample count")->capture_default_str();
  synth->add_option("--seed", synth_cmd.seed, "Seed")->capture_default_str();
  synth->add_option("--profile", synth_cmd.profile, "default | code-easy | separable")->capture_default_str();
  synth->add_option("--out", synth_cmd.out, "Output JSONL (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (metrics->parsed()) return metrics_cmd();
    if (train->parsed()) return train_cmd();
    if (score->parsed()) return score_cmd();
    if (run->parsed()) return run_cmd();
    if (serve->parsed()) return serve_cmd();
    if (synth->parsed()) return synth_cmd();
  } catch (const ProbeError& e) {
    std::cerr << "probe error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return run->parsed() ? 3 : 1;
  }
  return 1;
}
