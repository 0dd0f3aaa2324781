#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>

#include "sftx/baselines.hpp"
#include "sftx/campaign.hpp"
#include "sftx/defense.hpp"
#include "sftx/synthetic.hpp"
#include "sftx/text.hpp"
#include "sftx/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sftx;

namespace {

// Flags shared by every subcommand. Values left unset fall back to --config.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> dataset;
  std::optional<std::string> attack;
  std::optional<std::string> ft_backend;
  std::optional<std::string> base_backend;
  std::optional<int> max_tokens;
  std::optional<int> concurrency;
};

void add_common(CLI::App* cmd, Common& c, bool backends = true) {
  cmd->add_option("--config", c.config_path, "JSON campaign config");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--dataset", c.dataset, "SFT dataset (JSONL)");
  cmd->add_option("--attack", c.attack, "ir or ri")->check(CLI::IsMember({"ir", "ri"}));
  cmd->add_option("--max-tokens", c.max_tokens, "generation budget per branch");
  cmd->add_option("--concurrency", c.concurrency, "in-flight examples");
  if (backends) {
    cmd->add_option("--ft-backend", c.ft_backend, "toy:MODEL.json, http://host:port or a backend JSON file");
    cmd->add_option("--base-backend", c.base_backend, "same forms as --ft-backend");
  }
}

BackendConfig parse_backend(const std::string& spec) {
  if (spec.rfind("toy:", 0) == 0) {
    BackendConfig b;
    b.kind = BackendKind::toy;
    b.model_path = spec.substr(4);
    return b;
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    BackendConfig b;
    b.kind = BackendKind::http;
    b.endpoint = spec;
    b.auth_env = "SFTX_API_KEY";
    return b;
  }
  return backend_config_from_json(json::parse(read_text(spec)));
}

CampaignConfig resolve(const Common& c) {
  CampaignConfig cfg;
  if (!c.config_path.empty()) cfg = CampaignConfig::from_json(json::parse(read_text(c.config_path)));
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.dataset) cfg.dataset_path = *c.dataset;
  if (c.attack) cfg.attack = attack_from_string(*c.attack);
  if (c.ft_backend) cfg.ft_backend = parse_backend(*c.ft_backend);
  if (c.base_backend) cfg.base_backend = parse_backend(*c.base_backend);
  if (c.max_tokens) cfg.dde.max_tokens = *c.max_tokens;
  if (c.concurrency) cfg.concurrency = *c.concurrency;
  return cfg;
}

fs::path out_dir(const CampaignConfig& cfg) {
  fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const CampaignConfig& cfg, const std::string& started) {
  RunManifest m;
  m.seed = cfg.seed;
  m.config_digest = cfg.digest();
  m.tool_version = kToolVersion;
  m.started_at = started;
  m.finished_at = utc_timestamp();
  save_manifest(m, out_dir(cfg) / "manifest.json");
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) out.push_back(line);
  }
  return out;
}

const std::string& known_side(const CampaignConfig& cfg, const InstructionResponsePair& e) {
  return cfg.attack == AttackType::ir ? e.instruction : e.response;
}

const std::string& hidden_side(const CampaignConfig& cfg, const InstructionResponsePair& e) {
  return cfg.attack == AttackType::ir ? e.response : e.instruction;
}

// Known-side text per entry id, from a `preserve` output file when given.
std::map<std::string, std::string> load_preserved(const std::string& path) {
  std::map<std::string, std::string> out;
  for (const auto& row : read_jsonl(path)) out[row.at("id").get<std::string>()] = row.at("masked").get<std::string>();
  return out;
}

volatile std::sig_atomic_t g_stop = 0;

void wait_for_signal() {
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

// ---------------------------------------------------------------------------

int cmd_toy_train(const std::string& corpus, int order, double smoothing, const std::optional<std::string>& finetune,
                  double weight, const std::string& tmpl, const Common& c) {
  auto cfg = resolve(c);
  auto model = toy_train(read_lines(corpus), order, smoothing);
  if (finetune) model = toy_finetune(model, load_dataset(*finetune), weight, tmpl);
  const auto started = utc_timestamp();
  model.save(out_dir(cfg) / "model.json");
  write_manifest(cfg, started);
  std::cout << "vocab " << model.vocab().size() << ", contexts " << model.contexts().size() << "\n";
  return 0;
}

int cmd_preserve(const std::string& method_name, double rate, const std::string& role_name,
                 const std::optional<std::string>& rewriter, const Common& c) {
  auto cfg = resolve(c);
  const auto started = utc_timestamp();
  const auto dataset = load_dataset(cfg.dataset_path);
  const auto method = preservation_from_string(method_name);
  const Role role = role_name == "response" ? Role::response : Role::instruction;
  std::unique_ptr<Backend> rw;
  if (method == PreservationMethod::ssp) {
    if (!rewriter) throw Error("ssp needs --rewriter");
    rw = make_backend(parse_backend(*rewriter));
  }
  std::vector<json> rows(dataset.entries.size());
  parallel_for(dataset.entries.size(), cfg.concurrency, [&](std::size_t i) {
    const auto& e = dataset.entries[i];
    const auto& text = role == Role::instruction ? e.instruction : e.response;
    rows[i] = to_json(preserve(text, method, rate, mix_seed(cfg.seed, i), rw.get(), role, cfg.dde.max_tokens), e.id);
  });
  write_jsonl(rows, out_dir(cfg) / "preserved.jsonl");
  write_manifest(cfg, started);
  return 0;
}

int cmd_extract(const std::string& method_name, const std::optional<double>& tau, const std::optional<int>& mbr,
                const std::optional<int>& budget, const std::optional<std::string>& preserved, const Common& c) {
  auto cfg = resolve(c);
  if (tau) cfg.dde.tau = *tau;
  if (mbr) cfg.dde.mbr = *mbr;
  cfg.validate();
  const auto started = utc_timestamp();
  const auto method = method_from_string(method_name);
  const auto dataset = load_dataset(cfg.dataset_path);
  const auto backends = CampaignBackends::from_config(cfg);
  std::map<std::string, std::string> known;
  if (preserved) known = load_preserved(*preserved);

  std::vector<json> rows(dataset.entries.size());
  std::atomic<std::size_t> failures{0};
  parallel_for(dataset.entries.size(), cfg.concurrency, [&](std::size_t i) {
    const auto& e = dataset.entries[i];
    auto it = known.find(e.id);
    const auto query = build_attack_prompt(cfg, it != known.end() ? it->second : known_side(cfg, e));
    try {
      if (method == Method::dde) {
        rows[i] = to_json(dde_extract(*backends.ft, *backends.base, query, cfg.dde, e.id));
        return;
      }
      int n = budget.value_or(0);
      if (n <= 0) {
        auto gen = backends.ft->generate_greedy(query, cfg.dde.max_tokens, cfg.dde.top_k);
        n = 1 + static_cast<int>(identify_branch_points(gen, cfg.dde.tau, cfg.dde.mbr).size());
      }
      auto v = vanilla_extract(*backends.ft, query, n, cfg.vanilla_sampling, mix_seed(cfg.seed, i), cfg.dde.max_tokens);
      rows[i] = {{"query_id", e.id}, {"query", query}, {"budget", n}, {"candidates", v.candidates}, {"failures", v.failures}};
    } catch (const Error& err) {
      ++failures;
      rows[i] = {{"query_id", e.id}, {"query", query}, {"error", err.what()}};
    }
  });
  write_jsonl(rows, out_dir(cfg) / "extraction.jsonl");
  write_manifest(cfg, started);
  if (failures) std::cerr << failures << " of " << rows.size() << " queries failed\n";
  return 0;
}

int cmd_ntc(const Common& c) {
  auto cfg = resolve(c);
  const auto started = utc_timestamp();
  const auto dataset = load_dataset(cfg.dataset_path);
  const auto backends = CampaignBackends::from_config(cfg);
  std::vector<double> values(dataset.entries.size());
  parallel_for(dataset.entries.size(), cfg.concurrency, [&](std::size_t i) {
    const auto& e = dataset.entries[i];
    const auto truth = split_ws(hidden_side(cfg, e));
    values[i] = ntc(*backends.ft, build_attack_prompt(cfg, known_side(cfg, e)), truth);
  });
  std::vector<json> rows;
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    rows.push_back({{"id", dataset.entries[i].id}, {"ntc", values[i]}});
    sum += values[i];
  }
  const double mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  auto dir = out_dir(cfg);
  write_jsonl(rows, dir / "ntc.jsonl");
  write_text(json{{"count", values.size()}, {"mean_ntc", mean}}.dump(2) + "\n", dir / "ntc.json");
  write_manifest(cfg, started);
  std::cout << "mean ntc " << mean << "\n";
  return 0;
}

int cmd_evaluate(const std::string& extraction, bool embed_remote, const std::optional<std::string>& embed_endpoint,
                 const Common& c) {
  auto cfg = resolve(c);
  const auto started = utc_timestamp();
  const auto dataset = load_dataset(cfg.dataset_path);
  std::unique_ptr<Embedder> remote;
  ScoreOptions opts;
  opts.bleu = cfg.bleu;
  opts.window = cfg.window;
  if (embed_remote) {
    if (!embed_endpoint) throw Error("--embed-remote needs --embed-endpoint");
    remote = std::make_unique<RemoteEmbedder>(*embed_endpoint);
    opts.embedder = remote.get();
  }
  ScoreReport report;
  std::size_t skipped = 0;
  for (const auto& row : read_jsonl(extraction)) {
    const auto id = row.at("query_id").get<std::string>();
    const auto* entry = dataset.find(id);
    if (!entry) throw FormatError("extraction row refers to unknown id: " + id);
    if (row.contains("error")) {
      ++skipped;
      continue;
    }
    const auto& truth = hidden_side(cfg, *entry);
    Scores s;
    if (row.contains("closest")) {
      s = pair_score(extraction_result_from_json(row), truth, opts);
    } else {
      s = mean_scores(row.at("candidates").get<std::vector<std::string>>(), truth, opts);
    }
    report.per_example.push_back({id, s});
  }
  report.recompute_means();
  auto dir = out_dir(cfg);
  auto j = report.to_json();
  j["skipped"] = skipped;
  write_text(j.dump(2) + "\n", dir / "scores.json");
  write_text(report.to_csv(), dir / "scores.csv");
  write_manifest(cfg, started);
  std::cout << "bleu " << report.means.bleu << ", token " << report.means.token << ", embed " << report.means.embed
            << "\n";
  return 0;
}

int cmd_baseline(const std::optional<std::string>& kind, const std::optional<std::string>& corpus,
                 const std::optional<std::string>& words, const std::optional<std::size_t>& queries, const Common& c) {
  auto cfg = resolve(c);
  if (kind) cfg.baseline_kind = *kind;
  if (corpus) cfg.corpus_path = *corpus;
  if (words) cfg.words_path = *words;
  if (queries) cfg.baseline_queries = *queries;
  const auto started = utc_timestamp();
  const auto dataset = load_dataset(cfg.dataset_path);
  const auto backends = CampaignBackends::from_config(cfg);
  auto report = run_baseline_campaign(cfg, baseline_queries(cfg), dataset, *backends.ft);
  write_text(report.to_json().dump(2) + "\n", out_dir(cfg) / "baseline.json");
  write_manifest(cfg, started);
  std::cout << cfg.baseline_kind << ": bleu rate " << report.bleu_rate << ", token rate " << report.token_rate << "\n";
  return 0;
}

int cmd_defend_proxy(const std::string& upstream, double tau_def, const std::string& host, int port,
                     const std::optional<std::string>& log, const Common& c) {
  auto cfg = resolve(c);
  DefenseConfig dc;
  dc.tau_def = tau_def;
  dc.seed = cfg.seed;
  dc.validate();
  std::optional<fs::path> log_path;
  if (log) log_path = *log;
  DefenseProxy proxy(upstream, dc, log_path);
  const int bound = proxy.start(host, port);
  std::cout << "defense proxy on " << host << ":" << bound << " -> " << upstream << std::endl;
  wait_for_signal();
  proxy.stop();
  return 0;
}

int cmd_defend_detect(const std::string& log, std::size_t min_group, double window, std::size_t min_prefix,
                      const Common& c) {
  auto cfg = resolve(c);
  std::vector<QueryLogEntry> entries;
  for (const auto& row : read_jsonl(log)) entries.push_back(query_log_entry_from_json(row));
  json alerts = json::array();
  for (const auto& a : detect_shared_prefix(entries, min_group, window, min_prefix)) alerts.push_back(to_json(a));
  write_text(alerts.dump(2) + "\n", out_dir(cfg) / "alerts.json");
  std::cout << alerts.size() << " alert(s)\n";
  return 0;
}

int cmd_export(const std::string& rows_path, const std::optional<std::string>& completion_backend, bool no_completion,
               const std::optional<std::string>& fresh_base, const std::optional<std::string>& benchmark,
               const Common& c) {
  auto cfg = resolve(c);
  if (no_completion) cfg.completion = false;
  if (benchmark) cfg.benchmark_path = *benchmark;
  const auto started = utc_timestamp();
  std::vector<ExampleRow> rows;
  for (const auto& j : read_jsonl(rows_path)) rows.push_back(ExampleRow::from_json(j));
  std::unique_ptr<Backend> completer;
  if (cfg.completion) {
    if (completion_backend) {
      completer = make_backend(parse_backend(*completion_backend));
    } else if (cfg.ft_backend) {
      completer = make_backend(*cfg.ft_backend);
    }
  }
  auto ex = run_retraining_export(cfg, rows, completer.get());
  auto dir = out_dir(cfg);
  save_dataset(ex.dataset, dir / "export.jsonl");
  std::vector<json> flags;
  for (std::size_t i = 0; i < ex.flags.size(); ++i) {
    flags.push_back({{"id", ex.dataset.entries[i].id},
                     {"masked", ex.flags[i].masked},
                     {"completed", ex.flags[i].completed},
                     {"completion_failed", ex.flags[i].completion_failed}});
  }
  write_jsonl(flags, dir / "export_flags.jsonl");
  auto summary = ex.summary();
  if (fresh_base) {
    if (cfg.benchmark_path.empty()) throw Error("toy retraining score needs --benchmark or a benchmark in the config");
    auto score = toy_retraining_eval(ToyModel::load(*fresh_base), ex.dataset, cfg.retrain_weight,
                                     load_dataset(cfg.benchmark_path), cfg.pair_template);
    summary["base_exact_match"] = score.base_exact_match;
    summary["retrained_exact_match"] = score.retrained_exact_match;
  }
  write_text(summary.dump(2) + "\n", dir / "export_summary.json");
  write_manifest(cfg, started);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_campaign(const Common& c) {
  auto cfg = resolve(c);
  auto out = run_reconstruction_to_dir(cfg);
  for (const auto& cell : out.report.cells) {
    std::cout << cell.name << ": bleu " << cell.mean.bleu << ", token " << cell.mean.token << ", embed "
              << cell.mean.embed << " (" << cell.count << " ok, " << cell.failures << " failed)\n";
  }
  return 0;
}

int cmd_serve(const std::string& model, const std::string& host, int port, int context_window) {
  auto backend = std::make_shared<ToyBackend>(std::make_shared<ToyModel>(ToyModel::load(model)), context_window);
  wire::ProtocolServer server(backend);
  const int bound = server.start(host, port);
  std::cout << "serving " << model << " on " << host << ":" << bound << std::endl;
  wait_for_signal();
  server.stop();
  return 0;
}

int cmd_synth(const SyntheticOptions& opts, const Common& c) {
  auto cfg = resolve(c);
  auto s = make_synthetic_setup(opts);
  auto dir = out_dir(cfg);
  save_dataset(s.dataset, dir / "dataset.jsonl");
  save_dataset(s.benchmark, dir / "benchmark.jsonl");
  std::string corpus;
  for (const auto& line : s.base_corpus) corpus += line + "\n";
  write_text(corpus, dir / "base_corpus.txt");
  s.base_model->save(dir / "base_model.json");
  s.ft_model->save(dir / "ft_model.json");
  std::vector<std::string> ids(s.deviated_ids.begin(), s.deviated_ids.end());
  write_text(json{{"deviated", ids}}.dump(2) + "\n", dir / "subsets.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extraction and defense toolkit for instruction-tuning data"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Common common;

  auto* toy = app.add_subcommand("toy-train", "train (and optionally fine-tune) a toy n-gram model");
  std::string corpus;
  int order = 3;
  double smoothing = 0.01, weight = 2.0;
  std::optional<std::string> finetune;
  std::string tmpl = kDefaultPairTemplate;
  toy->add_option("--corpus", corpus, "one document per line")->required();
  toy->add_option("--order", order);
  toy->add_option("--smoothing", smoothing);
  toy->add_option("--finetune", finetune, "SFT dataset to fine-tune on");
  toy->add_option("--weight", weight, "fine-tune count weight");
  toy->add_option("--template", tmpl, "pair template with {instruction} and {response}");
  add_common(toy, common, false);

  auto* pres = app.add_subcommand("preserve", "mask or rewrite the known side of each entry");
  std::string pres_method = "pwp", role = "instruction";
  double rate = 0.5;
  std::optional<std::string> rewriter;
  pres->add_option("--method", pres_method)->check(CLI::IsMember({"full", "pwp", "psp", "ssp"}));
  pres->add_option("--rate", rate, "retention rate in (0, 1]");
  pres->add_option("--role", role)->check(CLI::IsMember({"instruction", "response"}));
  pres->add_option("--rewriter", rewriter, "backend for ssp");
  add_common(pres, common, false);

  auto* ext = app.add_subcommand("extract", "run Vanilla or DDE extraction over a dataset");
  std::string ext_method = "dde";
  std::optional<double> tau;
  std::optional<int> mbr, budget;
  std::optional<std::string> preserved;
  ext->add_option("--method", ext_method)->check(CLI::IsMember({"vanilla", "dde"}));
  ext->add_option("--tau", tau, "branch-point threshold");
  ext->add_option("--mbr", mbr, "maximum forced branches");
  ext->add_option("--budget", budget, "Vanilla queries per example (default: |S| of the greedy scan)");
  ext->add_option("--preserved", preserved, "output of `preserve` to use as the known side");
  add_common(ext, common);

  auto* ntc_cmd = app.add_subcommand("ntc", "teacher-forced next-token correctness");
  add_common(ntc_cmd, common);

  auto* eval = app.add_subcommand("evaluate", "score extraction output against ground truth");
  std::string extraction;
  bool embed_remote = false;
  std::optional<std::string> embed_endpoint;
  eval->add_option("--extraction", extraction, "extraction.jsonl")->required();
  eval->add_flag("--embed-remote", embed_remote);
  eval->add_option("--embed-endpoint", embed_endpoint);
  add_common(eval, common, false);

  auto* base = app.add_subcommand("baseline", "untargeted Random/Poem baselines");
  std::optional<std::string> kind, base_corpus, words;
  std::optional<std::size_t> queries;
  base->add_option("--kind", kind)->check(CLI::IsMember({"random", "poem"}));
  base->add_option("--corpus", base_corpus, "corpus file for random queries");
  base->add_option("--words", words, "word list for poem queries");
  base->add_option("--queries", queries, "number of queries");
  add_common(base, common);

  auto* defend = app.add_subcommand("defend", "logit-rewrite proxy and shared-prefix detector");
  defend->require_subcommand(1);
  auto* proxy = defend->add_subcommand("proxy", "rewrite upstream distributions");
  std::string upstream, host = "127.0.0.1";
  double tau_def = 0.8;
  int port = 8081;
  std::optional<std::string> qlog;
  proxy->add_option("--upstream", upstream)->required();
  proxy->add_option("--tau-def", tau_def);
  proxy->add_option("--host", host);
  proxy->add_option("--port", port);
  proxy->add_option("--query-log", qlog, "append JSONL query log");
  add_common(proxy, common, false);
  auto* detect = defend->add_subcommand("detect", "scan a query log for shared-prefix bursts");
  std::string log;
  std::size_t min_group = 5, min_prefix = kMinSharedPrefix;
  double window = 60.0;
  detect->add_option("--log", log)->required();
  detect->add_option("--min-group", min_group);
  detect->add_option("--window", window, "seconds");
  detect->add_option("--min-prefix", min_prefix, "characters");
  add_common(detect, common, false);

  auto* exp = app.add_subcommand("export", "turn campaign rows into a retraining dataset");
  std::string rows;
  std::optional<std::string> completion_backend, fresh_base, benchmark;
  bool no_completion = false;
  exp->add_option("--rows", rows, "rows.jsonl from `campaign`")->required();
  exp->add_option("--completion-backend", completion_backend);
  exp->add_flag("--no-completion", no_completion);
  exp->add_option("--fresh-base", fresh_base, "toy base model to retrain and score");
  exp->add_option("--benchmark", benchmark, "held-out pairs for the retraining score");
  add_common(exp, common, false);

  auto* camp = app.add_subcommand("campaign", "full reconstruction campaign from a config");
  add_common(camp, common);

  auto* serve = app.add_subcommand("serve", "serve a toy model over the wire protocol");
  std::string serve_model;
  int serve_port = 8080, ctx = 4096;
  serve->add_option("--model", serve_model)->required();
  serve->add_option("--host", host);
  serve->add_option("--port", serve_port);
  serve->add_option("--context-window", ctx);

  auto* synth = app.add_subcommand("synth", "write the engineered branch-deviation corpus and toy models");
  SyntheticOptions sopts;
  synth->add_option("--families", sopts.families);
  synth->add_option("--plain", sopts.plain);
  synth->add_option("--corpus-seed", sopts.seed);
  add_common(synth, common, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) return cmd_toy_train(corpus, order, smoothing, finetune, weight, tmpl, common);
    if (*pres) return cmd_preserve(pres_method, rate, role, rewriter, common);
    if (*ext) return cmd_extract(ext_method, tau, mbr, budget, preserved, common);
    if (*ntc_cmd) return cmd_ntc(common);
    if (*eval) return cmd_evaluate(extraction, embed_remote, embed_endpoint, common);
    if (*base) return cmd_baseline(kind, base_corpus, words, queries, common);
    if (*proxy) return cmd_defend_proxy(upstream, tau_def, host, port, qlog, common);
    if (*detect) return cmd_defend_detect(log, min_group, window, min_prefix, common);
    if (*exp) return cmd_export(rows, completion_backend, no_completion, fresh_base, benchmark, common);
    if (*camp) return cmd_campaign(common);
    if (*serve) return cmd_serve(serve_model, host, serve_port, ctx);
    if (*synth) return cmd_synth(sopts, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
