#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tulab/common.hpp"

namespace tulab {

enum class ToolFamily { arith, convert, lookup };

std::string to_string(ToolFamily f);
ToolFamily tool_family_from_string(const std::string& s);

// Deterministic integer semantics. Arguments live in [0, 99].
struct ToolSemantics {
  enum class Kind { arith_op, affine, table };
  Kind kind = Kind::arith_op;
  int op = 0;                    // arith_op: 0 add, 1 sub, 2 mul, 3 min, 4 max, 5 absdiff
  long long a = 1, b = 1, c = 0; // affine: (a*x)/b + c, integer division
  std::vector<int> table;        // table: value per key 0..99
};

struct Tool {
  int id = 0;
  std::string name;
  ToolFamily family = ToolFamily::arith;
  int arity = 1;
  ToolSemantics semantics;
  std::vector<std::string> doc;
  // Seeded argument tuples each generator draws from; a tool's observable
  // behavior is its calls over this pool, probed under disjoint phrasings.
  std::vector<std::vector<int>> arg_pool;
};

struct Demonstration {
  int tool_id = 0;
  std::vector<std::string> query;
  std::vector<std::string> response;
  int template_id = 0;
};

struct GeneralTask {
  std::vector<std::string> query;
  std::vector<std::string> answer;
  int fact_id = 0;
  int template_id = 0;
  bool heldout = false;
};

struct ToolUniverse {
  uint64_t seed = 0;
  std::vector<Tool> tools;
  std::vector<std::string> vocab;          // closed token set, sorted, no specials
  std::vector<GeneralTask> general_tasks;  // training phrasings
  std::vector<GeneralTask> general_heldout;

  const Tool& tool(int id) const;
  bool has_tool(int id) const;
};

struct CorpusSplit {
  std::set<int> forget_tools;
  std::set<int> retain_tools;
  std::vector<Demonstration> forget_demos;
  std::vector<Demonstration> retain_demos;
  std::vector<Demonstration> test_demos;  // held-out queries for all tools
};

struct DiversityConfig {
  int n_templates = 4;
  int paraphrase_depth = 1;
  int difficulty_levels = 2;
};

struct ShadowSet {
  int tool_id = 0;
  std::vector<Demonstration> samples;
  DiversityConfig diversity;
};

// Which third of the master template list a generator draws from.
enum class TemplatePool { train, test, shadow };

inline constexpr int kArgDomainMin = 0;
inline constexpr int kArgDomainMax = 99;

int execute_tool(const Tool& tool, const std::vector<int>& args);

ToolUniverse build_tool_universe(uint64_t seed, int n_tools, int n_general_tasks);

std::vector<int> template_ids_for(ToolFamily family, TemplatePool pool);

std::vector<Demonstration> sample_demonstrations(const ToolUniverse& universe, int tool_id, int n,
                                                 const std::vector<int>& template_pool,
                                                 uint64_t seed);

CorpusSplit split_corpus(const ToolUniverse& universe, int demos_per_tool, double forget_fraction,
                         uint64_t seed, int test_demos_per_tool = 10);

ShadowSet sample_shadow_set(const ToolUniverse& universe, int tool_id, int n,
                            const DiversityConfig& diversity, uint64_t seed);

std::vector<Demonstration> pseudo_samples_for_tool(const ToolUniverse& universe, int tool_id,
                                                   int n, uint64_t seed);

// Canonical call grammar helpers: response tokens look like
//   CALL <name> ( <digits> [, <digits>] ) = <digits>
std::vector<std::string> int_to_tokens(long long value);
bool tokens_to_int(const std::vector<std::string>& tokens, size_t begin, size_t end,
                   long long* out);
std::vector<std::string> render_call(const std::string& name, const std::vector<int>& args,
                                     long long result);

struct ParsedCall {
  std::string name;
  std::vector<int> args;
  long long result = 0;
};

// Returns false when the token sequence is not a well-formed call.
bool parse_call(const std::vector<std::string>& tokens, ParsedCall* out);

}  // namespace tulab
