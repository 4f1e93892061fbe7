#include "tulab/eval.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace tulab {
namespace {

using nlohmann::json;

constexpr int kGenerateMaxLen = 24;

double mean_gap(const std::map<int, double>& g, const std::map<int, double>& g2,
                const std::set<int>& tools) {
  if (tools.empty()) return 0.0;
  double total = 0.0;
  for (int t : tools) total += g.at(t) - g2.at(t);
  return total / static_cast<double>(tools.size());
}

json report_json(const EvalReport& r, bool with_timings) {
  json per_tool = json::array();
  for (const auto& k : r.per_tool) {
    per_tool.push_back(
        {{"tool_id", k.tool_id}, {"value", k.value}, {"probe_size", k.probe_size}});
  }
  json j{{"acc_test", r.acc_test},
         {"acc_retain", r.acc_retain},
         {"acc_forget", r.acc_forget},
         {"general_score", r.general_score},
         {"per_tool", per_tool}};
  if (with_timings) {
    json t = json::object();
    for (const auto& [k, v] : r.timings) t[k] = v;
    j["timings"] = t;
  }
  return j;
}

}  // namespace

bool generation_correct(const Checkpoint& model, const Tokenizer& tok, const Tool& tool,
                        const Demonstration& demo) {
  ParsedCall gold;
  if (!parse_call(demo.response, &gold)) {
    throw InvalidArgument("demonstration response does not parse as a call");
  }
  DecodeOptions opts;
  opts.max_len = kGenerateMaxLen;
  std::vector<int> out = generate(model, make_prompt(tok, demo.query), opts);
  ParsedCall got;
  if (!parse_call(tok.decode(out), &got)) return false;
  if (got.name != tool.name || got.args != gold.args) return false;
  return got.result == execute_tool(tool, got.args);
}

KnowledgeScore measure_tool_knowledge(const Checkpoint& model, const Tokenizer& tok,
                                      const Tool& tool, const std::vector<Demonstration>& probe) {
  if (probe.empty()) throw InvalidArgument("probe set must be nonempty");
  for (const auto& d : probe) {
    if (d.tool_id != tool.id) {
      throw InvalidArgument("probe mixes tool ids " + std::to_string(d.tool_id) + " and " +
                            std::to_string(tool.id));
    }
  }
  int correct = 0;
  for (const auto& d : probe) {
    if (generation_correct(model, tok, tool, d)) ++correct;
  }
  KnowledgeScore score;
  score.tool_id = tool.id;
  score.probe_size = static_cast<int>(probe.size());
  score.value = static_cast<double>(correct) / static_cast<double>(probe.size());
  return score;
}

double eval_split(const Checkpoint& model, const Tokenizer& tok, const ToolUniverse& universe,
                  const std::vector<Demonstration>& demos) {
  if (demos.empty()) throw InvalidArgument("demo set must be nonempty");
  int correct = 0;
  for (const auto& d : demos) {
    if (generation_correct(model, tok, universe.tool(d.tool_id), d)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(demos.size());
}

double general_capability(const Checkpoint& model, const Tokenizer& tok,
                          const std::vector<GeneralTask>& tasks) {
  if (tasks.empty()) throw InvalidArgument("general task set must be nonempty");
  DecodeOptions opts;
  opts.max_len = kGenerateMaxLen;
  int correct = 0;
  for (const auto& t : tasks) {
    std::vector<int> out = generate(model, make_prompt(tok, t.query), opts);
    if (tok.decode(out) == t.answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

PropertyChecks property_checks(const Checkpoint& f0, const Checkpoint& f,
                               const Checkpoint& f_prime, const Tokenizer& tok,
                               const ToolUniverse& universe, const CorpusSplit& split,
                               const std::map<int, std::vector<Demonstration>>& probes,
                               const std::vector<GeneralTask>& general_tasks,
                               const PropertyTolerances& tol) {
  PropertyChecks out;
  for (const auto& [tool_id, probe] : probes) {
    const Tool& tool = universe.tool(tool_id);
    out.g_f0[tool_id] = measure_tool_knowledge(f0, tok, tool, probe).value;
    out.g_f[tool_id] = measure_tool_knowledge(f, tok, tool, probe).value;
    out.g_fprime[tool_id] = measure_tool_knowledge(f_prime, tok, tool, probe).value;
  }
  for (int t : split.forget_tools) {
    if (!probes.count(t)) throw NotFound("no probe set for forget tool " + std::to_string(t));
  }
  for (int t : split.retain_tools) {
    if (!probes.count(t)) throw NotFound("no probe set for retain tool " + std::to_string(t));
  }

  // mean over forget tools of g(f0,t) - g(f',t), required >= -tol
  out.tkd.margin = mean_gap(out.g_f0, out.g_fprime, split.forget_tools);
  out.tkd.tolerance = tol.tkd;
  out.tkd.pass = out.tkd.margin >= -tol.tkd;

  // mean over retain tools of g(f,t) - g(f',t), required <= tol
  out.tkr.margin = mean_gap(out.g_f, out.g_fprime, split.retain_tools);
  out.tkr.tolerance = tol.tkr;
  out.tkr.pass = out.tkr.margin <= tol.tkr;

  out.general_f0 = general_capability(f0, tok, general_tasks);
  out.general_fprime = general_capability(f_prime, tok, general_tasks);
  out.gcr.margin = std::fabs(out.general_f0 - out.general_fprime);
  out.gcr.tolerance = tol.gcr;
  out.gcr.pass = out.gcr.margin <= tol.gcr;
  return out;
}

std::string eval_report_to_json(const EvalReport& report) {
  return report_json(report, true).dump(2);
}

std::string eval_report_canonical_json(const EvalReport& report) {
  return report_json(report, false).dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport r;
  r.acc_test = j.at("acc_test").get<double>();
  r.acc_retain = j.at("acc_retain").get<double>();
  r.acc_forget = j.at("acc_forget").get<double>();
  r.general_score = j.at("general_score").get<double>();
  for (const auto& k : j.at("per_tool")) {
    r.per_tool.push_back({k.at("tool_id").get<int>(), k.at("value").get<double>(),
                          k.at("probe_size").get<int>()});
  }
  if (j.contains("timings")) {
    for (const auto& [key, v] : j.at("timings").items()) {
      r.timings[key] = v.get<double>();
    }
  }
  return r;
}

}  // namespace tulab
