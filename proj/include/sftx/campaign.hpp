#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sftx/backend.hpp"
#include "sftx/baselines.hpp"
#include "sftx/datamodel.hpp"
#include "sftx/extraction.hpp"
#include "sftx/metrics.hpp"
#include "sftx/preservation.hpp"

namespace sftx {

enum class AttackType { ir, ri };
enum class Method { vanilla, dde };

std::string to_string(AttackType a);
AttackType attack_from_string(std::string_view s);
std::string to_string(Method m);
Method method_from_string(std::string_view s);

struct PreservationCell {
  PreservationMethod method = PreservationMethod::full;
  double rate = 1.0;
};

struct CampaignConfig {
  std::string dataset_path;
  AttackType attack = AttackType::ir;
  std::vector<Method> methods = {Method::vanilla, Method::dde};
  std::vector<PreservationCell> preservations = {{PreservationMethod::full, 1.0}};
  DdeConfig dde;
  SamplingParams vanilla_sampling;
  std::optional<BackendConfig> ft_backend;
  std::optional<BackendConfig> base_backend;
  std::optional<BackendConfig> rewriter_backend;
  std::uint64_t seed = 0;
  std::string out_dir = "campaign-out";

  // Toy-style prompt layout. I-R queries are everything before "{response}".
  std::string pair_template = kDefaultPairTemplate;
  // R-I queries substitute the (preserved) response for "{query}".
  std::string ri_template = "RESP: {query}\nINST:";

  int window = kDefaultTokenWindow;
  BleuOptions bleu;
  int concurrency = 8;
  double max_failure_rate = 0.2;

  // Retraining export
  bool completion = true;
  double retrain_weight = 2.0;
  std::string benchmark_path;  // held-out QA set for the toy retraining score

  // Untargeted baselines
  std::string baseline_kind = "random";
  std::string corpus_path;
  std::string words_path;
  std::size_t baseline_queries = 100;
  std::size_t random_length = 100;
  int poem_repeats = 50;
  double match_bleu_threshold = 0.8;
  std::size_t max_response_tokens = 512;

  void validate() const;
  nlohmann::json to_json() const;
  static CampaignConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

struct CampaignBackends {
  std::shared_ptr<const Backend> ft;
  std::shared_ptr<const Backend> base;
  std::shared_ptr<const Backend> rewriter;  // SSP only; defaults to ft

  static CampaignBackends from_config(const CampaignConfig& cfg);
};

// Query text for one entry: the known side after preservation, wrapped in the attack's prompt layout.
std::string build_attack_prompt(const CampaignConfig& cfg, std::string_view preserved_text);

struct ExampleRow {
  std::string cell;
  std::string id;
  Method method = Method::dde;
  std::string preserved;  // the known side after preservation
  std::string query;      // prompt actually sent
  std::vector<std::string> candidates;
  std::optional<ExtractionResult> dde;
  std::size_t budget = 0;
  Scores scores;       // mean over candidates
  Scores best;         // per-metric best over candidates
  std::optional<std::string> error;

  nlohmann::json to_json() const;
  static ExampleRow from_json(const nlohmann::json& j);
};

struct CellReport {
  std::string name;
  Method method = Method::dde;
  PreservationMethod preservation = PreservationMethod::full;
  double rate = 1.0;
  std::size_t count = 0;
  std::size_t failures = 0;
  Scores mean;
  Scores best_of_n;
  double mean_budget = 0.0;
};

struct CampaignReport {
  AttackType attack = AttackType::ir;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<CellReport> cells;
  bool budget_parity = true;

  nlohmann::json to_json() const;
};

struct ReconstructionOutput {
  CampaignReport report;
  std::vector<ExampleRow> rows;
};

// Recomputes cell aggregates from persisted rows.
std::vector<CellReport> aggregate_rows(const std::vector<ExampleRow>& rows, const CampaignConfig& cfg);

ReconstructionOutput run_reconstruction(const CampaignConfig& cfg, const SFTDataset& dataset,
                                        const CampaignBackends& backends);

// Writes rows.jsonl, rows.csv, report.json and manifest.json under cfg.out_dir.
ReconstructionOutput run_reconstruction_to_dir(const CampaignConfig& cfg);

struct ExportFlags {
  bool masked = false;
  bool completed = false;
  bool completion_failed = false;
};

struct RetrainingExport {
  SFTDataset dataset;
  std::vector<ExportFlags> flags;
  std::size_t skipped_empty = 0;

  double mask_rate() const;
  nlohmann::json summary() const;
};

// Pairs each extracted candidate with the known (or completed) side.
RetrainingExport run_retraining_export(const CampaignConfig& cfg, const std::vector<ExampleRow>& rows,
                                       const Backend* completion_backend);

// Exact-match rate of greedy answers over a QA set, using cfg.pair_template prompts.
double toy_benchmark_exact_match(const Backend& model, const SFTDataset& benchmark, const std::string& pair_template,
                                 int max_tokens = 128);

struct RetrainingScore {
  double base_exact_match = 0.0;
  double retrained_exact_match = 0.0;
};

RetrainingScore toy_retraining_eval(const ToyModel& fresh_base, const SFTDataset& exported, double weight,
                                    const SFTDataset& benchmark, const std::string& pair_template);

struct BaselineResponse {
  std::string query;
  std::string response;
  std::size_t original_tokens = 0;
  std::vector<UntargetedMatch> matches;
  std::optional<std::string> error;
};

struct BaselineReport {
  std::string kind;
  std::vector<BaselineResponse> responses;
  double bleu_rate = 0.0;
  double token_rate = 0.0;
  double any_rate = 0.0;
  std::size_t unique_entries = 0;
  std::size_t failures = 0;

  nlohmann::json to_json() const;
};

std::vector<std::string> baseline_queries(const CampaignConfig& cfg);

// Truncates and matches already-collected responses.
BaselineReport score_baseline_responses(const std::string& kind, std::vector<BaselineResponse> responses,
                                        const SFTDataset& dataset, const CampaignConfig& cfg);

BaselineReport run_baseline_campaign(const CampaignConfig& cfg, const std::vector<std::string>& queries,
                                     const SFTDataset& dataset, const Backend& ft);

// Runs fn(i) for i in [0, n) on at most `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace sftx
