#include "sftx/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

std::string to_string(AttackType a) { return a == AttackType::ir ? "ir" : "ri"; }

AttackType attack_from_string(std::string_view s) {
  if (s == "ir") return AttackType::ir;
  if (s == "ri") return AttackType::ri;
  throw FormatError("unknown attack type: " + std::string(s));
}

std::string to_string(Method m) { return m == Method::vanilla ? "vanilla" : "dde"; }

Method method_from_string(std::string_view s) {
  if (s == "vanilla") return Method::vanilla;
  if (s == "dde") return Method::dde;
  throw FormatError("unknown method: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Configuration

void CampaignConfig::validate() const {
  dde.validate();
  if (methods.empty()) throw Error("campaign needs at least one method");
  for (const auto& p : preservations) {
    if (!(p.rate > 0.0 && p.rate <= 1.0)) throw Error("retention rate must be in (0, 1]");
  }
  if (concurrency < 1) throw Error("concurrency must be >= 1");
  if (window < 1) throw Error("token window must be >= 1");
  if (pair_template.find("{instruction}") == std::string::npos) {
    throw Error("pair_template must contain {instruction}");
  }
  if (ri_template.find("{query}") == std::string::npos) throw Error("ri_template must contain {query}");
}

json CampaignConfig::to_json() const {
  json methods_json = json::array();
  for (auto m : methods) methods_json.push_back(to_string(m));
  json pres = json::array();
  for (const auto& p : preservations) pres.push_back({{"method", to_string(p.method)}, {"rate", p.rate}});
  json j = {{"dataset", dataset_path},
            {"attack", to_string(attack)},
            {"methods", methods_json},
            {"preservations", pres},
            {"dde", sftx::to_json(dde)},
            {"vanilla_sampling", {{"temperature", vanilla_sampling.temperature}, {"top_p", vanilla_sampling.top_p}}},
            {"seed", seed},
            {"out", out_dir},
            {"pair_template", pair_template},
            {"ri_template", ri_template},
            {"window", window},
            {"bleu_smoothing", bleu.smoothing},
            {"concurrency", concurrency},
            {"max_failure_rate", max_failure_rate},
            {"completion", completion},
            {"retrain_weight", retrain_weight},
            {"benchmark", benchmark_path},
            {"baseline",
             {{"kind", baseline_kind},
              {"corpus", corpus_path},
              {"words", words_path},
              {"queries", baseline_queries},
              {"random_length", random_length},
              {"poem_repeats", poem_repeats},
              {"bleu_threshold", match_bleu_threshold},
              {"max_response_tokens", max_response_tokens}}}};
  if (ft_backend) j["ft_backend"] = sftx::to_json(*ft_backend);
  if (base_backend) j["base_backend"] = sftx::to_json(*base_backend);
  if (rewriter_backend) j["rewriter_backend"] = sftx::to_json(*rewriter_backend);
  return j;
}

CampaignConfig CampaignConfig::from_json(const json& j) {
  CampaignConfig c;
  c.dataset_path = j.value("dataset", c.dataset_path);
  if (j.contains("attack")) c.attack = attack_from_string(j["attack"].get<std::string>());
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (j.contains("preservations")) {
    c.preservations.clear();
    for (const auto& p : j["preservations"]) {
      auto method = preservation_from_string(p.at("method").get<std::string>());
      if (p.contains("rates")) {
        for (const auto& r : p["rates"]) c.preservations.push_back({method, r.get<double>()});
      } else {
        c.preservations.push_back({method, p.value("rate", 1.0)});
      }
    }
  }
  if (j.contains("dde")) c.dde = dde_config_from_json(j["dde"]);
  if (j.contains("vanilla_sampling")) {
    c.vanilla_sampling.temperature = j["vanilla_sampling"].value("temperature", c.vanilla_sampling.temperature);
    c.vanilla_sampling.top_p = j["vanilla_sampling"].value("top_p", c.vanilla_sampling.top_p);
  }
  if (j.contains("ft_backend")) c.ft_backend = backend_config_from_json(j["ft_backend"]);
  if (j.contains("base_backend")) c.base_backend = backend_config_from_json(j["base_backend"]);
  if (j.contains("rewriter_backend")) c.rewriter_backend = backend_config_from_json(j["rewriter_backend"]);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out", c.out_dir);
  c.pair_template = j.value("pair_template", c.pair_template);
  c.ri_template = j.value("ri_template", c.ri_template);
  c.window = j.value("window", c.window);
  c.bleu.smoothing = j.value("bleu_smoothing", c.bleu.smoothing);
  c.concurrency = j.value("concurrency", c.concurrency);
  c.max_failure_rate = j.value("max_failure_rate", c.max_failure_rate);
  c.completion = j.value("completion", c.completion);
  c.retrain_weight = j.value("retrain_weight", c.retrain_weight);
  c.benchmark_path = j.value("benchmark", c.benchmark_path);
  if (j.contains("baseline")) {
    const auto& b = j["baseline"];
    c.baseline_kind = b.value("kind", c.baseline_kind);
    c.corpus_path = b.value("corpus", c.corpus_path);
    c.words_path = b.value("words", c.words_path);
    c.baseline_queries = b.value("queries", c.baseline_queries);
    c.random_length = b.value("random_length", c.random_length);
    c.poem_repeats = b.value("poem_repeats", c.poem_repeats);
    c.match_bleu_threshold = b.value("bleu_threshold", c.match_bleu_threshold);
    c.max_response_tokens = b.value("max_response_tokens", c.max_response_tokens);
  }
  return c;
}

// Execution-only settings (output location, parallelism) do not enter the digest.
std::string CampaignConfig::digest() const {
  auto j = to_json();
  j.erase("out");
  j.erase("concurrency");
  return sha256_hex(j.dump());
}

CampaignBackends CampaignBackends::from_config(const CampaignConfig& cfg) {
  if (!cfg.ft_backend) throw Error("campaign config has no ft_backend");
  CampaignBackends b;
  b.ft = make_backend(*cfg.ft_backend);
  b.base = cfg.base_backend ? std::shared_ptr<const Backend>(make_backend(*cfg.base_backend)) : b.ft;
  b.rewriter = cfg.rewriter_backend ? std::shared_ptr<const Backend>(make_backend(*cfg.rewriter_backend)) : b.ft;
  return b;
}

std::string build_attack_prompt(const CampaignConfig& cfg, std::string_view preserved_text) {
  if (cfg.attack == AttackType::ir) return query_prompt(cfg.pair_template, preserved_text);
  return substitute(cfg.ri_template, "{query}", preserved_text);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Rows and reports

namespace {

json scores_json(const Scores& s) {
  return {{"bleu", s.bleu}, {"token_match", s.token}, {"longest_run", s.longest_run}, {"embed", s.embed}};
}

Scores scores_from_json(const json& j) {
  Scores s;
  s.bleu = j.value("bleu", 0.0);
  s.token = j.value("token_match", 0.0);
  s.longest_run = j.value("longest_run", std::size_t{0});
  s.embed = j.value("embed", 0.0);
  return s;
}

std::string cell_name(Method m, const PreservationCell& p) {
  std::ostringstream os;
  os << to_string(m) << '/' << to_string(p.method) << '@' << std::fixed << std::setprecision(2) << p.rate;
  return os.str();
}

}  // namespace

json ExampleRow::to_json() const {
  return {{"cell", cell},
          {"id", id},
          {"method", to_string(method)},
          {"preserved", preserved},
          {"query", query},
          {"candidates", candidates},
          {"budget", budget},
          {"scores", scores_json(scores)},
          {"best", scores_json(best)},
          {"dde", dde ? sftx::to_json(*dde) : json(nullptr)},
          {"error", error ? json(*error) : json(nullptr)}};
}

ExampleRow ExampleRow::from_json(const json& j) {
  ExampleRow r;
  r.cell = j.value("cell", "");
  r.id = j.at("id").get<std::string>();
  r.method = method_from_string(j.value("method", "dde"));
  r.preserved = j.value("preserved", "");
  r.query = j.value("query", "");
  r.candidates = j.value("candidates", std::vector<std::string>{});
  r.budget = j.value("budget", std::size_t{0});
  if (j.contains("scores")) r.scores = scores_from_json(j["scores"]);
  if (j.contains("best")) r.best = scores_from_json(j["best"]);
  if (j.contains("dde") && !j["dde"].is_null()) r.dde = extraction_result_from_json(j["dde"]);
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  return r;
}

json CampaignReport::to_json() const {
  json cells_json = json::array();
  for (const auto& c : cells) {
    json cell = {{"cell", c.name},
                 {"method", to_string(c.method)},
                 {"preservation", to_string(c.preservation)},
                 {"rate", c.rate},
                 {"count", c.count},
                 {"failures", c.failures},
                 {"bleu", c.mean.bleu},
                 {"token_rate", c.mean.token},
                 {"embed", c.mean.embed},
                 {"mean_budget", c.mean_budget}};
    if (c.method == Method::vanilla) {
      cell["best_of_n"] = {{"bleu", c.best_of_n.bleu}, {"token_rate", c.best_of_n.token}, {"embed", c.best_of_n.embed}};
    }
    cells_json.push_back(std::move(cell));
  }
  return {{"attack", to_string(attack)},
          {"manifest", {{"seed", seed}, {"config_digest", config_digest}, {"tool_version", kToolVersion}}},
          {"budget_parity", budget_parity},
          {"cells", std::move(cells_json)}};
}

std::vector<CellReport> aggregate_rows(const std::vector<ExampleRow>& rows, const CampaignConfig& cfg) {
  std::vector<CellReport> cells;
  for (const auto& p : cfg.preservations) {
    for (auto m : cfg.methods) {
      CellReport c;
      c.name = cell_name(m, p);
      c.method = m;
      c.preservation = p.method;
      c.rate = p.rate;
      cells.push_back(std::move(c));
    }
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cells.size(); ++i) index[cells[i].name] = i;
  for (const auto& r : rows) {
    auto it = index.find(r.cell);
    if (it == index.end()) continue;
    auto& c = cells[it->second];
    if (r.error) {
      ++c.failures;
      continue;
    }
    ++c.count;
    c.mean.bleu += r.scores.bleu;
    c.mean.token += r.scores.token;
    c.mean.embed += r.scores.embed;
    c.best_of_n.bleu += r.best.bleu;
    c.best_of_n.token += r.best.token;
    c.best_of_n.embed += r.best.embed;
    c.mean_budget += static_cast<double>(r.budget);
  }
  for (auto& c : cells) {
    if (c.count == 0) continue;
    const double n = static_cast<double>(c.count);
    c.mean.bleu /= n;
    c.mean.token /= n;
    c.mean.embed /= n;
    c.best_of_n.bleu /= n;
    c.best_of_n.token /= n;
    c.best_of_n.embed /= n;
    c.mean_budget /= n;
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Reconstruction

ReconstructionOutput run_reconstruction(const CampaignConfig& cfg, const SFTDataset& dataset,
                                        const CampaignBackends& backends) {
  cfg.validate();
  dataset.validate();
  if (!backends.ft) throw Error("campaign requires an ft backend");
  const Backend& ft = *backends.ft;
  const Backend& base = backends.base ? *backends.base : ft;
  const Backend* rewriter = backends.rewriter ? backends.rewriter.get() : &ft;
  const Role known_role = cfg.attack == AttackType::ir ? Role::instruction : Role::response;
  const bool want_vanilla = std::find(cfg.methods.begin(), cfg.methods.end(), Method::vanilla) != cfg.methods.end();
  const bool want_dde = std::find(cfg.methods.begin(), cfg.methods.end(), Method::dde) != cfg.methods.end();
  ScoreOptions score_opts;
  score_opts.bleu = cfg.bleu;
  score_opts.window = cfg.window;

  ReconstructionOutput out;
  out.report.attack = cfg.attack;
  out.report.seed = cfg.seed;
  out.report.config_digest = cfg.digest();
  const std::size_t n = dataset.entries.size();

  for (std::size_t cell_idx = 0; cell_idx < cfg.preservations.size(); ++cell_idx) {
    const auto& cell = cfg.preservations[cell_idx];
    // Slot per (example, method) keeps output order independent of scheduling.
    std::vector<std::vector<ExampleRow>> slots(n);
    parallel_for(n, cfg.concurrency, [&](std::size_t i) {
      const auto& entry = dataset.entries[i];
      const auto& known = known_role == Role::instruction ? entry.instruction : entry.response;
      const auto& truth = known_role == Role::instruction ? entry.response : entry.instruction;
      const auto example_seed = mix_seed(cfg.seed, i);
      auto make_row = [&](Method m) {
        ExampleRow r;
        r.cell = cell_name(m, cell);
        r.id = entry.id;
        r.method = m;
        return r;
      };
      std::string preserved, query;
      try {
        preserved = preserve(known, cell.method, cell.rate, example_seed, rewriter, known_role, cfg.dde.max_tokens).masked;
        query = build_attack_prompt(cfg, preserved);
      } catch (const Error& e) {
        for (auto m : cfg.methods) {
          auto r = make_row(m);
          r.error = e.what();
          slots[i].push_back(std::move(r));
        }
        return;
      }

      std::optional<ExtractionResult> dde_result;
      std::optional<std::string> dde_error;
      std::size_t budget = 0;
      try {
        if (want_dde) {
          dde_result = dde_extract(ft, base, query, cfg.dde, entry.id);
          budget = dde_result->sft_branches;
        } else {
          auto gen = ft.generate_greedy(query, cfg.dde.max_tokens, cfg.dde.top_k);
          budget = 1 + identify_branch_points(gen, cfg.dde.tau, cfg.dde.mbr).size();
        }
      } catch (const Error& e) {
        dde_error = e.what();
      }

      for (auto m : cfg.methods) {
        auto r = make_row(m);
        r.preserved = preserved;
        r.query = query;
        if (dde_error) {
          r.error = *dde_error;
        } else if (m == Method::dde) {
          r.dde = dde_result;
          r.candidates = dde_result->candidates();
          r.budget = budget;
        } else {
          auto v = vanilla_extract(ft, query, static_cast<int>(budget), cfg.vanilla_sampling,
                                   mix_seed(example_seed, 0x76616e), cfg.dde.max_tokens);
          r.budget = budget;
          r.candidates = std::move(v.candidates);
          if (r.candidates.empty()) r.error = "all vanilla queries failed";
        }
        if (!r.error) {
          r.scores = mean_scores(r.candidates, truth, score_opts);
          r.best = best_scores(r.candidates, truth, score_opts);
        }
        slots[i].push_back(std::move(r));
      }
    });
    for (auto& s : slots) {
      for (auto& r : s) out.rows.push_back(std::move(r));
    }
  }

  // Budget parity: every vanilla row spent exactly |S| of the DDE run on the same query.
  if (want_vanilla && want_dde) {
    std::map<std::pair<std::string, std::string>, std::size_t> dde_budget;
    for (const auto& r : out.rows) {
      if (r.method == Method::dde && r.dde) {
        dde_budget[{r.cell.substr(r.cell.find('/')), r.id}] = r.dde->sft_branches;
      }
    }
    for (const auto& r : out.rows) {
      if (r.method != Method::vanilla || r.error) continue;
      auto it = dde_budget.find({r.cell.substr(r.cell.find('/')), r.id});
      if (it == dde_budget.end() || it->second != r.budget) out.report.budget_parity = false;
    }
  }

  out.report.cells = aggregate_rows(out.rows, cfg);
  for (const auto& c : out.report.cells) {
    const auto total = c.count + c.failures;
    if (total && static_cast<double>(c.failures) / static_cast<double>(total) > cfg.max_failure_rate) {
      throw Error("campaign aborted: cell " + c.name + " failed on " + std::to_string(c.failures) + " of " +
                  std::to_string(total) + " examples");
    }
  }
  return out;
}

namespace {

std::string rows_csv(const std::vector<ExampleRow>& rows) {
  std::ostringstream os;
  os << "cell,id,method,budget,bleu,token_match,longest_run,embed,error\n";
  os << std::setprecision(17);
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    return "\"" + substitute(s, "\"", "\"\"") + "\"";
  };
  for (const auto& r : rows) {
    os << quote(r.cell) << ',' << quote(r.id) << ',' << to_string(r.method) << ',' << r.budget << ','
       << r.scores.bleu << ',' << r.scores.token << ',' << r.scores.longest_run << ',' << r.scores.embed << ','
       << quote(r.error.value_or("")) << '\n';
  }
  return os.str();
}

}  // namespace

ReconstructionOutput run_reconstruction_to_dir(const CampaignConfig& cfg) {
  RunManifest manifest;
  manifest.seed = cfg.seed;
  manifest.config_digest = cfg.digest();
  manifest.tool_version = kToolVersion;
  manifest.started_at = utc_timestamp();
  auto dataset = load_dataset(cfg.dataset_path);
  auto backends = CampaignBackends::from_config(cfg);
  auto out = run_reconstruction(cfg, dataset, backends);
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  std::vector<json> rows;
  rows.reserve(out.rows.size());
  for (const auto& r : out.rows) rows.push_back(r.to_json());
  write_jsonl(rows, dir / "rows.jsonl");
  write_text(rows_csv(out.rows), dir / "rows.csv");
  write_text(out.report.to_json().dump(2) + "\n", dir / "report.json");
  manifest.finished_at = utc_timestamp();
  save_manifest(manifest, dir / "manifest.json");
  return out;
}

// ---------------------------------------------------------------------------
// Retraining export

double RetrainingExport::mask_rate() const {
  if (dataset.entries.empty()) return 0.0;
  std::size_t masked = 0;
  for (const auto& f : flags) {
    if (f.masked && !f.completed) ++masked;
  }
  return static_cast<double>(masked) / static_cast<double>(dataset.entries.size());
}

json RetrainingExport::summary() const {
  std::size_t masked = 0, completed = 0, failed = 0;
  for (const auto& f : flags) {
    masked += f.masked;
    completed += f.completed;
    failed += f.completion_failed;
  }
  return {{"pairs", dataset.entries.size()},
          {"masked", masked},
          {"completed", completed},
          {"completion_failed", failed},
          {"skipped_empty", skipped_empty},
          {"mask_rate", mask_rate()}};
}

RetrainingExport run_retraining_export(const CampaignConfig& cfg, const std::vector<ExampleRow>& rows,
                                       const Backend* completion_backend) {
  const Role known_role = cfg.attack == AttackType::ir ? Role::instruction : Role::response;
  const std::string wrapper = cfg.attack == AttackType::ir ? query_prompt(cfg.pair_template, "{query}")
                                                           : cfg.ri_template;
  struct Job {
    InstructionResponsePair pair;
    bool masked = false;
  };
  std::vector<Job> jobs;
  RetrainingExport out;
  out.dataset.name = "extracted";
  for (const auto& r : rows) {
    if (r.error) continue;
    std::set<std::string> seen;
    for (std::size_t c = 0; c < r.candidates.size(); ++c) {
      auto text = trim(r.candidates[c]);
      if (text.empty() || trim(r.preserved).empty()) {
        ++out.skipped_empty;
        continue;
      }
      if (!seen.insert(text).second) continue;
      std::string suffix;
      if (r.method == Method::dde) {
        suffix = c == 0 ? "closest" : "outlier";
      } else {
        suffix = "v" + std::to_string(c);
      }
      Job job;
      job.pair.id = r.cell + ":" + r.id + ":" + suffix;
      (known_role == Role::instruction ? job.pair.instruction : job.pair.response) = trim(r.preserved);
      (known_role == Role::instruction ? job.pair.response : job.pair.instruction) = text;
      job.masked = contains_mask(r.preserved);
      jobs.push_back(std::move(job));
    }
  }
  out.dataset.entries.resize(jobs.size());
  out.flags.resize(jobs.size());
  parallel_for(jobs.size(), cfg.concurrency, [&](std::size_t i) {
    auto& job = jobs[i];
    auto& flags = out.flags[i];
    flags.masked = job.masked;
    out.dataset.entries[i] = job.pair;
    if (!job.masked || !cfg.completion || !completion_backend) return;
    try {
      auto done = complete_masked_pair(job.pair, known_role, *completion_backend, cfg.dde.max_tokens, wrapper);
      const auto& filled = known_role == Role::instruction ? done.instruction : done.response;
      if (trim(filled).empty()) {
        flags.completion_failed = true;
      } else {
        out.dataset.entries[i] = std::move(done);
        flags.completed = true;
      }
    } catch (const Error&) {
      flags.completion_failed = true;
    }
  });
  return out;
}

double toy_benchmark_exact_match(const Backend& model, const SFTDataset& benchmark, const std::string& pair_template,
                                 int max_tokens) {
  if (benchmark.entries.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& e : benchmark.entries) {
    auto out = model.complete_text(query_prompt(pair_template, e.instruction), max_tokens);
    if (trim(out) == trim(e.response)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(benchmark.entries.size());
}

RetrainingScore toy_retraining_eval(const ToyModel& fresh_base, const SFTDataset& exported, double weight,
                                    const SFTDataset& benchmark, const std::string& pair_template) {
  RetrainingScore s;
  ToyBackend before(std::make_shared<const ToyModel>(fresh_base));
  s.base_exact_match = toy_benchmark_exact_match(before, benchmark, pair_template);
  ToyBackend after(std::make_shared<const ToyModel>(toy_finetune(fresh_base, exported, weight, pair_template)));
  s.retrained_exact_match = toy_benchmark_exact_match(after, benchmark, pair_template);
  return s;
}

// ---------------------------------------------------------------------------
// Untargeted baselines

json BaselineReport::to_json() const {
  json rows = json::array();
  for (const auto& r : responses) {
    json matches = json::array();
    for (const auto& m : r.matches) matches.push_back(sftx::to_json(m));
    rows.push_back({{"query", r.query},
                    {"response", r.response},
                    {"original_tokens", r.original_tokens},
                    {"matches", std::move(matches)},
                    {"error", r.error ? json(*r.error) : json(nullptr)}});
  }
  return {{"kind", kind},
          {"responses", std::move(rows)},
          {"aggregate",
           {{"count", responses.size()},
            {"failures", failures},
            {"bleu_rate", bleu_rate},
            {"token_rate", token_rate},
            {"any_rate", any_rate},
            {"unique_entries", unique_entries}}}};
}

std::vector<std::string> baseline_queries(const CampaignConfig& cfg) {
  auto lines = [](const std::string& path) {
    std::vector<std::string> out;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
      if (!trim(line).empty()) out.push_back(line);
    }
    return out;
  };
  if (cfg.baseline_kind == "random") {
    if (cfg.corpus_path.empty()) throw Error("random baseline needs a corpus file");
    return gen_random_queries(lines(cfg.corpus_path), cfg.baseline_queries, cfg.random_length, cfg.seed);
  }
  if (cfg.baseline_kind == "poem") {
    if (cfg.words_path.empty()) throw Error("poem baseline needs a word list");
    auto base = gen_poem_queries(lines(cfg.words_path), cfg.poem_repeats);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < cfg.baseline_queries && !base.empty(); ++i) out.push_back(base[i % base.size()]);
    return out;
  }
  throw Error("unknown baseline kind: " + cfg.baseline_kind);
}

BaselineReport score_baseline_responses(const std::string& kind, std::vector<BaselineResponse> responses,
                                        const SFTDataset& dataset, const CampaignConfig& cfg) {
  UntargetedMatcher matcher(dataset, cfg.match_bleu_threshold, cfg.window);
  BaselineReport report;
  report.kind = kind;
  parallel_for(responses.size(), cfg.concurrency, [&](std::size_t i) {
    auto& r = responses[i];
    if (r.error) return;
    r.original_tokens = truncate_tokens(r.response, cfg.max_response_tokens);
    r.matches = matcher.match(r.response);
  });
  std::size_t ok = 0, bleu_hits = 0, token_hits = 0, any_hits = 0;
  std::set<std::string> entries;
  for (const auto& r : responses) {
    if (r.error) {
      ++report.failures;
      continue;
    }
    ++ok;
    bool b = false, t = false;
    for (const auto& m : r.matches) {
      b = b || m.by_bleu;
      t = t || m.by_token;
      entries.insert(m.entry_id);
    }
    bleu_hits += b;
    token_hits += t;
    any_hits += b || t;
  }
  if (ok) {
    report.bleu_rate = static_cast<double>(bleu_hits) / static_cast<double>(ok);
    report.token_rate = static_cast<double>(token_hits) / static_cast<double>(ok);
    report.any_rate = static_cast<double>(any_hits) / static_cast<double>(ok);
  }
  report.unique_entries = entries.size();
  report.responses = std::move(responses);
  return report;
}

BaselineReport run_baseline_campaign(const CampaignConfig& cfg, const std::vector<std::string>& queries,
                                     const SFTDataset& dataset, const Backend& ft) {
  std::vector<BaselineResponse> responses(queries.size());
  CampaignConfig ir = cfg;
  ir.attack = AttackType::ir;
  parallel_for(queries.size(), cfg.concurrency, [&](std::size_t i) {
    responses[i].query = queries[i];
    try {
      responses[i].response = ft.complete_text(build_attack_prompt(ir, queries[i]), cfg.dde.max_tokens);
    } catch (const Error& e) {
      responses[i].error = e.what();
    }
  });
  auto report = score_baseline_responses(cfg.baseline_kind, std::move(responses), dataset, cfg);
  const auto total = report.responses.size();
  if (total && static_cast<double>(report.failures) / static_cast<double>(total) > cfg.max_failure_rate) {
    throw Error("baseline campaign aborted: " + std::to_string(report.failures) + " of " + std::to_string(total) +
                " queries failed");
  }
  return report;
}

}  // namespace sftx
