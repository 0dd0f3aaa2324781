#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sftx/backend.hpp"
#include "sftx/datamodel.hpp"

namespace sftx {

enum class PreservationMethod { full, pwp, psp, ssp };
enum class Role { instruction, response };

std::string to_string(PreservationMethod m);
PreservationMethod preservation_from_string(std::string_view s);
std::string to_string(Role r);

inline constexpr const char* kMaskToken = "_";

struct TextSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const TextSpan&) const = default;
};

// A partially known instruction (I-R) or response (R-I).
struct PreservedQuery {
  std::string original;
  std::string masked;
  PreservationMethod method = PreservationMethod::full;
  double retention_rate = 1.0;
  std::uint64_t seed = 0;
  std::vector<TextSpan> kept_spans;  // byte offsets into original; empty for SSP

  bool operator==(const PreservedQuery&) const = default;
};

nlohmann::json to_json(const PreservedQuery& q, std::string_view id);

// max(1, floor(rate * units)).
std::size_t kept_unit_count(double rate, std::size_t units);

// Word and sentence units with their byte spans in the source text.
std::vector<TextSpan> word_spans(std::string_view text);
std::vector<TextSpan> sentence_spans(std::string_view text);

// Indices [0, n) in seeded random order. The kept set at rate r is the sorted
// prefix of this permutation, so lower rates keep subsets of higher rates.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

PreservedQuery preserve_full(std::string_view text);
PreservedQuery preserve_pwp(std::string_view text, double rate, std::uint64_t seed,
                            std::string_view mask = kMaskToken);
PreservedQuery preserve_psp(std::string_view text, double rate, std::uint64_t seed,
                            std::string_view mask = kMaskToken);

std::string ssp_prompt(std::string_view text, double rate, Role role);
PreservedQuery preserve_ssp(std::string_view text, double rate, const Backend& rewriter, Role role,
                            int max_tokens = 512);

// Dispatches on method; `rewriter` is only consulted for SSP.
PreservedQuery preserve(std::string_view text, PreservationMethod method, double rate,
                        std::uint64_t seed, const Backend* rewriter, Role role, int max_tokens = 512);

std::string build_completion_prompt(std::string_view instruction, std::string_view response,
                                    Role masked_side = Role::instruction);

// True if `text` contains `mask` as a whitespace-delimited token.
bool contains_mask(std::string_view text, std::string_view mask = kMaskToken);

// Replaces the masked side of `pair` with the backend's completion. The
// completion prompt is substituted for "{query}" in `wrapper` before it is
// sent. Throws std::logic_error when that side carries no mask token.
InstructionResponsePair complete_masked_pair(const InstructionResponsePair& pair, Role masked_side,
                                             const Backend& backend, int max_tokens = 512,
                                             std::string_view wrapper = "{query}",
                                             std::string_view mask = kMaskToken);

}  // namespace sftx
