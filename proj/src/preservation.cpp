#include "sftx/preservation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

std::string to_string(PreservationMethod m) {
  switch (m) {
    case PreservationMethod::full: return "full";
    case PreservationMethod::pwp: return "pwp";
    case PreservationMethod::psp: return "psp";
    case PreservationMethod::ssp: return "ssp";
  }
  return "full";
}

PreservationMethod preservation_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "full") return PreservationMethod::full;
  if (lower == "pwp") return PreservationMethod::pwp;
  if (lower == "psp") return PreservationMethod::psp;
  if (lower == "ssp") return PreservationMethod::ssp;
  throw FormatError("unknown preservation method: " + std::string(s));
}

std::string to_string(Role r) { return r == Role::instruction ? "instruction" : "response"; }

json to_json(const PreservedQuery& q, std::string_view id) {
  json spans = json::array();
  for (const auto& s : q.kept_spans) spans.push_back({s.start, s.end});
  return {{"id", id},
          {"method", to_string(q.method)},
          {"rate", q.retention_rate},
          {"seed", q.seed},
          {"masked", q.masked},
          {"kept_spans", std::move(spans)}};
}

std::size_t kept_unit_count(double rate, std::size_t units) {
  // The epsilon keeps products like 0.3 * 10 from flooring to 2.
  auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(units) + 1e-9));
  return std::min(units, std::max<std::size_t>(1, k));
}

std::vector<TextSpan> word_spans(std::string_view text) {
  std::vector<TextSpan> out;
  std::size_t i = 0;
  auto space = [&](std::size_t p) { return std::isspace(static_cast<unsigned char>(text[p])) != 0; };
  while (i < text.size()) {
    while (i < text.size() && space(i)) ++i;
    std::size_t j = i;
    while (j < text.size() && !space(j)) ++j;
    if (j > i) out.push_back({i, j});
    i = j;
  }
  return out;
}

std::vector<TextSpan> sentence_spans(std::string_view text) {
  std::vector<TextSpan> out;
  auto space = [&](std::size_t p) { return std::isspace(static_cast<unsigned char>(text[p])) != 0; };
  auto delim = [&](std::size_t p) { return text[p] == '.' || text[p] == '?' || text[p] == '!'; };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && space(i)) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !(delim(j) && (j + 1 == text.size() || space(j + 1)))) ++j;
    std::size_t end = j < text.size() ? j + 1 : j;
    while (end > i && space(end - 1)) --end;
    out.push_back({i, end});
    i = j < text.size() ? j + 1 : j;
  }
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
  }
  return perm;
}

PreservedQuery preserve_full(std::string_view text) {
  PreservedQuery q;
  q.original = std::string(text);
  q.masked = q.original;
  q.method = PreservationMethod::full;
  q.retention_rate = 1.0;
  if (!text.empty()) q.kept_spans.push_back({0, text.size()});
  return q;
}

namespace {

void check_rate(double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw Error("retention rate must be in (0, 1], got " + std::to_string(rate));
}

PreservedQuery mask_units(std::string_view text, std::vector<TextSpan> units, PreservationMethod method,
                          double rate, std::uint64_t seed, std::string_view mask) {
  check_rate(rate);
  PreservedQuery q;
  q.original = std::string(text);
  q.method = method;
  q.retention_rate = rate;
  q.seed = seed;
  if (units.empty()) throw Error("cannot preserve empty text");
  const auto keep = kept_unit_count(rate, units.size());
  auto perm = seeded_permutation(units.size(), seed);
  std::vector<bool> kept(units.size(), false);
  for (std::size_t i = 0; i < keep; ++i) kept[perm[i]] = true;

  std::vector<std::string> parts;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (kept[i]) {
      parts.emplace_back(text.substr(units[i].start, units[i].end - units[i].start));
      q.kept_spans.push_back(units[i]);
    } else {
      parts.emplace_back(mask);
    }
  }
  q.masked = keep == units.size() ? q.original : join(parts, " ");
  return q;
}

}  // namespace

PreservedQuery preserve_pwp(std::string_view text, double rate, std::uint64_t seed, std::string_view mask) {
  return mask_units(text, word_spans(text), PreservationMethod::pwp, rate, seed, mask);
}

PreservedQuery preserve_psp(std::string_view text, double rate, std::uint64_t seed, std::string_view mask) {
  return mask_units(text, sentence_spans(text), PreservationMethod::psp, rate, seed, mask);
}

namespace {
constexpr const char* kSspTemplate =
    "Condense the following instruction to approximately {n}% of its original length without "
    "altering its core meaning. Preserve essential information and intent:{instruction}. Provide "
    "only the revised instruction as your response.";

constexpr const char* kInstructionCompletionTemplate =
    "You will be given an incomplete instruction and its corresponding response. You need to return "
    "a complete, contextually appropriate new instruction that fits the given response. "
    "[Instruction]: {instruction}, [Response]: {response}.";

constexpr const char* kResponseCompletionTemplate =
    "You will be given an incomplete response and its corresponding instruction. You need to return "
    "a complete, contextually appropriate new response that fits the given instruction. "
    "[Instruction]: {instruction}, [Response]: {response}.";
}  // namespace

std::string ssp_prompt(std::string_view text, double rate, Role role) {
  const auto n = static_cast<long>(std::lround(rate * 100.0));
  std::string tmpl = kSspTemplate;
  // Fill the text last so its content is never mistaken for a placeholder.
  tmpl = substitute(std::move(tmpl), "{n}", std::to_string(n));
  if (role == Role::response) {
    tmpl = substitute(std::move(tmpl), "following instruction", "following response");
    tmpl = substitute(std::move(tmpl), "revised instruction", "revised response");
  }
  return substitute(std::move(tmpl), "{instruction}", text);
}

PreservedQuery preserve_ssp(std::string_view text, double rate, const Backend& rewriter, Role role,
                            int max_tokens) {
  check_rate(rate);
  if (rate >= 1.0) return preserve_full(text);
  PreservedQuery q;
  q.original = std::string(text);
  q.method = PreservationMethod::ssp;
  q.retention_rate = rate;
  q.masked = trim(rewriter.complete_text(ssp_prompt(text, rate, role), max_tokens));
  if (q.masked.empty()) throw Error("rewriter returned empty text");
  return q;
}

PreservedQuery preserve(std::string_view text, PreservationMethod method, double rate, std::uint64_t seed,
                        const Backend* rewriter, Role role, int max_tokens) {
  switch (method) {
    case PreservationMethod::full: return preserve_full(text);
    case PreservationMethod::pwp: return preserve_pwp(text, rate, seed);
    case PreservationMethod::psp: return preserve_psp(text, rate, seed);
    case PreservationMethod::ssp:
      if (!rewriter) throw Error("SSP preservation requires a rewriter backend");
      return preserve_ssp(text, rate, *rewriter, role, max_tokens);
  }
  throw Error("unreachable preservation method");
}

std::string build_completion_prompt(std::string_view instruction, std::string_view response, Role masked_side) {
  std::string tmpl = masked_side == Role::instruction ? kInstructionCompletionTemplate : kResponseCompletionTemplate;
  // Split at the instruction marker so substituted text cannot collide with placeholders.
  const auto pos = tmpl.find("{instruction}");
  std::string head = tmpl.substr(0, pos);
  std::string tail = tmpl.substr(pos + std::string_view("{instruction}").size());
  const auto rpos = tail.find("{response}");
  return head + std::string(instruction) + tail.substr(0, rpos) + std::string(response) +
         tail.substr(rpos + std::string_view("{response}").size());
}

bool contains_mask(std::string_view text, std::string_view mask) {
  for (const auto& t : split_ws(text)) {
    if (t == mask) return true;
  }
  return false;
}

InstructionResponsePair complete_masked_pair(const InstructionResponsePair& pair, Role masked_side,
                                             const Backend& backend, int max_tokens, std::string_view wrapper,
                                             std::string_view mask) {
  const auto& side = masked_side == Role::instruction ? pair.instruction : pair.response;
  if (!contains_mask(side, mask)) {
    throw std::logic_error("complete_masked_pair: " + to_string(masked_side) + " of " + pair.id +
                           " carries no mask token");
  }
  const auto prompt =
      substitute(std::string(wrapper), "{query}", build_completion_prompt(pair.instruction, pair.response, masked_side));
  auto completed = trim(backend.complete_text(prompt, max_tokens));
  InstructionResponsePair out = pair;
  (masked_side == Role::instruction ? out.instruction : out.response) = std::move(completed);
  return out;
}

}  // namespace sftx
