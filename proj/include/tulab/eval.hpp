#pragma once

#include <map>
#include <string>
#include <vector>

#include "tulab/model.hpp"
#include "tulab/worldgen.hpp"

namespace tulab {

struct KnowledgeScore {
  int tool_id = 0;
  double value = 0.0;  // in [0,1]
  int probe_size = 0;
};

struct EvalReport {
  double acc_test = 0.0;
  double acc_retain = 0.0;
  double acc_forget = 0.0;
  double general_score = 0.0;
  std::vector<KnowledgeScore> per_tool;
  std::map<std::string, double> timings;  // phase -> seconds
};

struct PropertyCheckResult {
  bool pass = false;
  double margin = 0.0;
  double tolerance = 0.0;
};

struct PropertyTolerances {
  double tkd = 0.05;
  double tkr = 0.10;
  double gcr = 0.10;
};

struct PropertyChecks {
  PropertyCheckResult tkd, tkr, gcr;
  std::map<int, double> g_f0, g_f, g_fprime;  // per-tool knowledge scores
  double general_f0 = 0.0, general_fprime = 0.0;
};

// True when the greedy generation for this demo parses to a call with the
// right name and arguments and the result checks out against the tool oracle.
bool generation_correct(const Checkpoint& model, const Tokenizer& tok, const Tool& tool,
                        const Demonstration& demo);

KnowledgeScore measure_tool_knowledge(const Checkpoint& model, const Tokenizer& tok,
                                      const Tool& tool, const std::vector<Demonstration>& probe);

double eval_split(const Checkpoint& model, const Tokenizer& tok, const ToolUniverse& universe,
                  const std::vector<Demonstration>& demos);

double general_capability(const Checkpoint& model, const Tokenizer& tok,
                          const std::vector<GeneralTask>& tasks);

PropertyChecks property_checks(const Checkpoint& f0, const Checkpoint& f,
                               const Checkpoint& f_prime, const Tokenizer& tok,
                               const ToolUniverse& universe, const CorpusSplit& split,
                               const std::map<int, std::vector<Demonstration>>& probes,
                               const std::vector<GeneralTask>& general_tasks,
                               const PropertyTolerances& tol);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Canonical form used by the determinism contract: wall-clock timings are
// measurement metadata and excluded.
std::string eval_report_canonical_json(const EvalReport& report);

}  // namespace tulab
