#include "tulab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tulab/io.hpp"

namespace tulab {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
  throw InvalidArgument("config field '" + field + "': " + what);
}

template <typename T>
T get_req(const json& j, const std::string& scope, const char* key) {
  if (!j.contains(key)) config_error(scope.empty() ? key : scope + "." + key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(scope.empty() ? key : scope + "." + key, e.what());
  }
}

template <typename T>
T get_opt(const json& j, const std::string& scope, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(scope.empty() ? key : scope + "." + key, e.what());
  }
}

PhaseHyper parse_phase_hyper(const json& j, const std::string& scope) {
  PhaseHyper p;
  p.steps = get_req<int>(j, scope, "steps");
  p.batch_size = get_opt<int>(j, scope, "batch_size", p.batch_size);
  p.learning_rate = get_opt<double>(j, scope, "learning_rate", p.learning_rate);
  if (j.contains("optimizer")) {
    p.optimizer = optimizer_from_string(get_req<std::string>(j, scope, "optimizer"));
  }
  if (j.contains("grad_clip")) {
    if (j.at("grad_clip").is_null()) {
      p.grad_clip.reset();
    } else {
      p.grad_clip = get_req<double>(j, scope, "grad_clip");
    }
  }
  return p;
}

json phase_hyper_to_json(const PhaseHyper& p) {
  json j{{"steps", p.steps},
         {"batch_size", p.batch_size},
         {"learning_rate", p.learning_rate},
         {"optimizer", to_string(p.optimizer)}};
  if (p.grad_clip) {
    j["grad_clip"] = *p.grad_clip;
  } else {
    j["grad_clip"] = nullptr;
  }
  return j;
}

fs::path ckpt_dir(const fs::path& dir) { return dir / "ckpt"; }
fs::path corpus_dir(const fs::path& dir) { return dir / "corpus"; }

void ensure_dirs(const fs::path& dir) {
  fs::create_directories(ckpt_dir(dir));
  fs::create_directories(corpus_dir(dir));
}

// Every emitted file is registered here; the manifest is the single index.
void manifest_add(const fs::path& dir, const std::vector<std::string>& files,
                  const json* config = nullptr) {
  const fs::path path = dir / "manifest.json";
  json m;
  if (fs::exists(path)) {
    m = json::parse(read_text_file(path));
  } else {
    m = json{{"schema_version", kConfigSchemaVersion}, {"files", json::array()}};
  }
  if (config) m["config"] = *config;
  auto& arr = m["files"];
  for (const auto& f : files) {
    if (std::find(arr.begin(), arr.end(), json(f)) == arr.end()) arr.push_back(f);
  }
  write_text_file(path, m.dump(2));
}

std::vector<Example> encode_all(const Tokenizer& tok, const std::vector<Demonstration>& demos) {
  std::vector<Example> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back({tok.encode(d.query), tok.encode(d.response)});
  return out;
}

std::vector<Example> encode_general(const Tokenizer& tok, const std::vector<GeneralTask>& tasks) {
  std::vector<Example> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back({tok.encode(t.query), tok.encode(t.answer)});
  return out;
}

void check_context_fits(const ModelConfig& cfg, const World& world) {
  size_t longest = 0;
  auto measure = [&](const std::vector<std::string>& q, const std::vector<std::string>& r) {
    longest = std::max(longest, q.size() + r.size() + 3);
  };
  for (const auto& d : world.split.forget_demos) measure(d.query, d.response);
  for (const auto& d : world.split.retain_demos) measure(d.query, d.response);
  for (const auto& d : world.split.test_demos) measure(d.query, d.response);
  for (const auto& [id, probe] : world.probes) {
    for (const auto& d : probe) measure(d.query, d.response);
  }
  for (const auto& [id, set] : world.shadow_sets) {
    for (const auto& d : set.samples) measure(d.query, d.response);
  }
  for (const auto& t : world.universe.general_tasks) measure(t.query, t.answer);
  for (const auto& t : world.universe.general_heldout) measure(t.query, t.answer);
  if (longest > static_cast<size_t>(cfg.context_len)) {
    config_error("model.context_len", "must be >= longest packed sequence (" +
                                          std::to_string(longest) + ")");
  }
}

UnlearnRequest make_request(const ExperimentConfig& config) {
  UnlearnRequest req;
  req.method = config.method.name;
  req.alpha = config.method.alpha;
  req.beta = config.method.beta;
  req.retain_ratio = config.method.retain_ratio;
  req.use_pseudo_samples = config.method.use_pseudo_samples;
  // Retrain is a from-scratch tool training on D_r, so it gets the tool
  // training budget; everything else uses the unlearn budget.
  req.hyper = config.method.name == UnlearnMethod::retrain
                  ? to_hyper(config.train_tool, config.seeds.unlearn)
                  : to_hyper(config.unlearn, config.seeds.unlearn);
  return req;
}

std::vector<Example> tool_training_set(const ExperimentConfig& config, const World& world) {
  std::vector<Example> dataset = world.demo_train;
  if (config.general_replay_fraction > 0.0 && !world.general_train.empty()) {
    const size_t n_replay = static_cast<size_t>(
        std::llround(config.general_replay_fraction * static_cast<double>(dataset.size())));
    for (size_t i = 0; i < n_replay; ++i) {
      dataset.push_back(world.general_train[i % world.general_train.size()]);
    }
  }
  return dataset;
}

Checkpoint load_ckpt(const fs::path& dir, const std::string& name) {
  return load_checkpoint(ckpt_dir(dir) / (name + ".ckpt"));
}

void save_ckpt(const Checkpoint& ckpt, const fs::path& dir, const std::string& name) {
  save_checkpoint(ckpt, ckpt_dir(dir) / (name + ".ckpt"));
}

std::vector<Demonstration> flatten_probes(const std::map<int, std::vector<Demonstration>>& m) {
  std::vector<Demonstration> out;
  for (const auto& [id, probe] : m) out.insert(out.end(), probe.begin(), probe.end());
  return out;
}

std::vector<Demonstration> flatten_shadow_sets(const std::map<int, ShadowSet>& m) {
  std::vector<Demonstration> out;
  for (const auto& [id, set] : m) out.insert(out.end(), set.samples.begin(), set.samples.end());
  return out;
}

EvalReport evaluate_model(const ExperimentConfig& config, const World& world,
                          const Tokenizer& tok, const Checkpoint& model) {
  EvalReport report;
  report.acc_test = eval_split(model, tok, world.universe, world.split.test_demos);
  report.acc_retain = eval_split(model, tok, world.universe, world.split.retain_demos);
  report.acc_forget = eval_split(model, tok, world.universe, world.split.forget_demos);
  report.general_score = general_capability(model, tok, world.universe.general_heldout);
  for (const auto& [tool_id, probe] : world.probes) {
    report.per_tool.push_back(
        measure_tool_knowledge(model, tok, world.universe.tool(tool_id), probe));
  }
  (void)config;
  return report;
}

json checks_to_json(const PropertyChecks& checks) {
  auto one = [](const PropertyCheckResult& r) {
    return json{{"pass", r.pass}, {"margin", r.margin}, {"tolerance", r.tolerance}};
  };
  json per_tool = json::object();
  for (const auto& [id, v] : checks.g_fprime) {
    per_tool[std::to_string(id)] = {{"g_f0", checks.g_f0.at(id)},
                                    {"g_f", checks.g_f.at(id)},
                                    {"g_fprime", v}};
  }
  return json{{"tkd", one(checks.tkd)},
              {"tkr", one(checks.tkr)},
              {"gcr", one(checks.gcr)},
              {"general_f0", checks.general_f0},
              {"general_fprime", checks.general_fprime},
              {"per_tool", per_tool}};
}

}  // namespace

TrainHyper to_hyper(const PhaseHyper& p, uint64_t seed) {
  TrainHyper h;
  h.steps = p.steps;
  h.batch_size = p.batch_size;
  h.learning_rate = p.learning_rate;
  h.optimizer = p.optimizer;
  h.grad_clip = p.grad_clip;
  h.seed = seed;
  return h;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  const int version = get_req<int>(j, "", "schema_version");
  if (version != kConfigSchemaVersion) {
    config_error("schema_version", "unsupported version " + std::to_string(version));
  }

  ExperimentConfig c;
  if (j.contains("universe")) {
    const auto& u = j.at("universe");
    c.universe.n_tools = get_opt<int>(u, "universe", "n_tools", c.universe.n_tools);
    c.universe.n_general_tasks =
        get_opt<int>(u, "universe", "n_general_tasks", c.universe.n_general_tasks);
    c.universe.demos_per_tool =
        get_opt<int>(u, "universe", "demos_per_tool", c.universe.demos_per_tool);
    c.universe.test_demos_per_tool =
        get_opt<int>(u, "universe", "test_demos_per_tool", c.universe.test_demos_per_tool);
    c.universe.probe_count = get_opt<int>(u, "universe", "probe_count", c.universe.probe_count);
    c.universe.shadow_samples_per_tool = get_opt<int>(u, "universe", "shadow_samples_per_tool",
                                                      c.universe.shadow_samples_per_tool);
    if (u.contains("diversity")) {
      const auto& d = u.at("diversity");
      c.universe.diversity.n_templates =
          get_opt<int>(d, "universe.diversity", "n_templates", c.universe.diversity.n_templates);
      c.universe.diversity.paraphrase_depth = get_opt<int>(
          d, "universe.diversity", "paraphrase_depth", c.universe.diversity.paraphrase_depth);
      c.universe.diversity.difficulty_levels = get_opt<int>(
          d, "universe.diversity", "difficulty_levels", c.universe.diversity.difficulty_levels);
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.d_model = get_opt<int>(m, "model", "d_model", c.model.d_model);
    c.model.n_layers = get_opt<int>(m, "model", "n_layers", c.model.n_layers);
    c.model.n_heads = get_opt<int>(m, "model", "n_heads", c.model.n_heads);
    c.model.context_len = get_opt<int>(m, "model", "context_len", c.model.context_len);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.forget_fraction =
        get_opt<double>(s, "split", "forget_fraction", c.split.forget_fraction);
    if (s.contains("forget_tools")) {
      c.split.forget_tools = get_req<std::vector<int>>(s, "split", "forget_tools");
    }
  }
  if (j.contains("method")) {
    const auto& m = j.at("method");
    if (m.contains("name")) {
      c.method.name = unlearn_method_from_string(get_req<std::string>(m, "method", "name"));
    }
    c.method.alpha = get_opt<double>(m, "method", "alpha", c.method.alpha);
    c.method.beta = get_opt<double>(m, "method", "beta", c.method.beta);
    c.method.retain_ratio = get_opt<double>(m, "method", "retain_ratio", c.method.retain_ratio);
    c.method.use_pseudo_samples =
        get_opt<bool>(m, "method", "use_pseudo_samples", c.method.use_pseudo_samples);
  }
  if (!j.contains("train")) config_error("train", "missing");
  {
    const auto& t = j.at("train");
    if (!t.contains("base")) config_error("train.base", "missing");
    if (!t.contains("tool")) config_error("train.tool", "missing");
    if (!t.contains("unlearn")) config_error("train.unlearn", "missing");
    c.train_base = parse_phase_hyper(t.at("base"), "train.base");
    c.train_tool = parse_phase_hyper(t.at("tool"), "train.tool");
    c.unlearn = parse_phase_hyper(t.at("unlearn"), "train.unlearn");
    c.shadow = t.contains("shadow") ? parse_phase_hyper(t.at("shadow"), "train.shadow")
                                    : c.train_tool;
    c.general_replay_fraction =
        get_opt<double>(t, "train", "general_replay_fraction", c.general_replay_fraction);
  }
  if (j.contains("mia")) {
    const auto& m = j.at("mia");
    c.mia.enabled = get_opt<bool>(m, "mia", "enabled", c.mia.enabled);
    c.mia.sizes = get_opt<std::vector<int>>(m, "mia", "sizes", c.mia.sizes);
    c.mia.shadows_per_size =
        get_opt<int>(m, "mia", "shadows_per_size", c.mia.shadows_per_size);
  }
  if (j.contains("tolerances")) {
    const auto& t = j.at("tolerances");
    c.tolerances.tkd = get_opt<double>(t, "tolerances", "tkd", c.tolerances.tkd);
    c.tolerances.tkr = get_opt<double>(t, "tolerances", "tkr", c.tolerances.tkr);
    c.tolerances.gcr = get_opt<double>(t, "tolerances", "gcr", c.tolerances.gcr);
  }
  if (j.contains("sequential")) {
    c.sequential_batches =
        get_req<std::vector<std::vector<int>>>(j.at("sequential"), "sequential", "batches");
  }
  if (!j.contains("seeds")) config_error("seeds", "missing (every stochastic phase needs one)");
  {
    const auto& s = j.at("seeds");
    c.seeds.universe = get_req<uint64_t>(s, "seeds", "universe");
    c.seeds.model = get_req<uint64_t>(s, "seeds", "model");
    c.seeds.split = get_req<uint64_t>(s, "seeds", "split");
    c.seeds.train_base = get_req<uint64_t>(s, "seeds", "train_base");
    c.seeds.train_tool = get_req<uint64_t>(s, "seeds", "train_tool");
    c.seeds.unlearn = get_req<uint64_t>(s, "seeds", "unlearn");
    c.seeds.mia = get_req<uint64_t>(s, "seeds", "mia");
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    SweepParams sw;
    for (const auto& name : get_req<std::vector<std::string>>(s, "sweep", "methods")) {
      sw.methods.push_back(unlearn_method_from_string(name));
    }
    sw.seeds = get_req<std::vector<uint64_t>>(s, "sweep", "seeds");
    sw.alphas = get_opt<std::vector<double>>(s, "sweep", "alphas", {1.0});
    c.sweep = sw;
  }

  if (c.universe.n_tools < 2) config_error("universe.n_tools", "must be >= 2");
  if (c.universe.n_general_tasks < 1) config_error("universe.n_general_tasks", "must be >= 1");
  if (c.train_base.steps <= 0) config_error("train.base.steps", "must be > 0");
  if (c.train_tool.steps <= 0) config_error("train.tool.steps", "must be > 0");
  if (c.unlearn.steps <= 0) config_error("train.unlearn.steps", "must be > 0");
  try {
    ModelConfig probe = c.model;
    probe.vocab_size = 8;  // placeholder; the real vocab comes from the universe
    probe.validate();
  } catch (const InvalidArgument& e) {
    config_error("model", e.what());
  }
  return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["universe"] = {{"n_tools", c.universe.n_tools},
                   {"n_general_tasks", c.universe.n_general_tasks},
                   {"demos_per_tool", c.universe.demos_per_tool},
                   {"test_demos_per_tool", c.universe.test_demos_per_tool},
                   {"probe_count", c.universe.probe_count},
                   {"shadow_samples_per_tool", c.universe.shadow_samples_per_tool},
                   {"diversity",
                    {{"n_templates", c.universe.diversity.n_templates},
                     {"paraphrase_depth", c.universe.diversity.paraphrase_depth},
                     {"difficulty_levels", c.universe.diversity.difficulty_levels}}}};
  j["model"] = {{"d_model", c.model.d_model},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"context_len", c.model.context_len}};
  json split{{"forget_fraction", c.split.forget_fraction}};
  if (c.split.forget_tools) split["forget_tools"] = *c.split.forget_tools;
  j["split"] = split;
  j["method"] = {{"name", to_string(c.method.name)},
                 {"alpha", c.method.alpha},
                 {"beta", c.method.beta},
                 {"retain_ratio", c.method.retain_ratio},
                 {"use_pseudo_samples", c.method.use_pseudo_samples}};
  j["train"] = {{"base", phase_hyper_to_json(c.train_base)},
                {"tool", phase_hyper_to_json(c.train_tool)},
                {"unlearn", phase_hyper_to_json(c.unlearn)},
                {"shadow", phase_hyper_to_json(c.shadow)},
                {"general_replay_fraction", c.general_replay_fraction}};
  j["mia"] = {{"enabled", c.mia.enabled},
              {"sizes", c.mia.sizes},
              {"shadows_per_size", c.mia.shadows_per_size}};
  j["tolerances"] = {{"tkd", c.tolerances.tkd}, {"tkr", c.tolerances.tkr},
                     {"gcr", c.tolerances.gcr}};
  if (c.sequential_batches) j["sequential"] = {{"batches", *c.sequential_batches}};
  j["seeds"] = {{"universe", c.seeds.universe},   {"model", c.seeds.model},
                {"split", c.seeds.split},         {"train_base", c.seeds.train_base},
                {"train_tool", c.seeds.train_tool}, {"unlearn", c.seeds.unlearn},
                {"mia", c.seeds.mia}};
  if (c.sweep) {
    json methods = json::array();
    for (auto m : c.sweep->methods) methods.push_back(to_string(m));
    j["sweep"] = {{"methods", methods}, {"seeds", c.sweep->seeds}, {"alphas", c.sweep->alphas}};
  }
  return j.dump(2);
}

Tokenizer make_tokenizer(const ToolUniverse& universe) { return Tokenizer(universe.vocab); }

World build_world(const ExperimentConfig& config) {
  World w;
  w.universe = build_tool_universe(config.seeds.universe, config.universe.n_tools,
                                   config.universe.n_general_tasks);
  if (config.split.forget_tools) {
    // Explicit forget ids: build the fraction-based corpus first, then slot
    // the demos onto the requested sides.
    CorpusSplit base = split_corpus(w.universe, config.universe.demos_per_tool,
                                    0.5, config.seeds.split,
                                    config.universe.test_demos_per_tool);
    CorpusSplit s;
    for (int id : *config.split.forget_tools) {
      if (!w.universe.has_tool(id)) {
        throw InvalidArgument("config field 'split.forget_tools': unknown tool id " +
                              std::to_string(id));
      }
      s.forget_tools.insert(id);
    }
    for (const auto& t : w.universe.tools) {
      if (!s.forget_tools.count(t.id)) s.retain_tools.insert(t.id);
    }
    if (s.forget_tools.empty() || s.retain_tools.empty()) {
      throw InvalidArgument("config field 'split.forget_tools': both sides must be nonempty");
    }
    auto route = [&](std::vector<Demonstration>& src) {
      for (auto& d : src) {
        (s.forget_tools.count(d.tool_id) ? s.forget_demos : s.retain_demos).push_back(d);
      }
    };
    route(base.forget_demos);
    route(base.retain_demos);
    s.test_demos = std::move(base.test_demos);
    w.split = std::move(s);
  } else {
    w.split = split_corpus(w.universe, config.universe.demos_per_tool,
                           config.split.forget_fraction, config.seeds.split,
                           config.universe.test_demos_per_tool);
  }

  for (const auto& t : w.universe.tools) {
    w.probes[t.id] =
        sample_shadow_set(w.universe, t.id, config.universe.probe_count,
                          config.universe.diversity, derive_seed(config.seeds.split, "probes"))
            .samples;
    w.shadow_sets[t.id] =
        sample_shadow_set(w.universe, t.id, config.universe.shadow_samples_per_tool,
                          config.universe.diversity, derive_seed(config.seeds.mia, "shadow_sets"));
  }

  Tokenizer tok = make_tokenizer(w.universe);
  w.general_train = encode_general(tok, w.universe.general_tasks);
  std::vector<Demonstration> all_train = w.split.forget_demos;
  all_train.insert(all_train.end(), w.split.retain_demos.begin(), w.split.retain_demos.end());
  w.demo_train = encode_all(tok, all_train);
  return w;
}

void phase_gen_data(const ExperimentConfig& config, const fs::path& dir, bool force) {
  if (fs::exists(dir / "manifest.json")) {
    if (!force) {
      throw AlreadyExists("run directory already initialized: " + dir.string() +
                          " (use --force to overwrite)");
    }
    fs::remove(dir / "manifest.json");  // start a fresh artifact index
  }
  ensure_dirs(dir);
  World w = build_world(config);
  save_universe(w.universe, dir / "universe.json");
  save_demos(w.split.forget_demos, corpus_dir(dir) / "train_forget.jsonl");
  save_demos(w.split.retain_demos, corpus_dir(dir) / "train_retain.jsonl");
  save_demos(w.split.test_demos, corpus_dir(dir) / "test.jsonl");
  save_demos(flatten_probes(w.probes), corpus_dir(dir) / "probes.jsonl");
  save_demos(flatten_shadow_sets(w.shadow_sets), corpus_dir(dir) / "shadow_sets.jsonl");
  json cfg = json::parse(experiment_config_to_json(config));
  manifest_add(dir,
               {"universe.json", "corpus/train_forget.jsonl", "corpus/train_retain.jsonl",
                "corpus/test.jsonl", "corpus/probes.jsonl", "corpus/shadow_sets.jsonl"},
               &cfg);
}

void phase_train_base(const ExperimentConfig& config, const fs::path& dir) {
  World w = build_world(config);
  Tokenizer tok = make_tokenizer(w.universe);
  ModelConfig mc = config.model;
  mc.vocab_size = tok.vocab_size();
  mc.seed = config.seeds.model;
  check_context_fits(mc, w);

  Checkpoint f_r = init_random(mc);
  Checkpoint f_0 = train_lm(f_r, w.general_train, to_hyper(config.train_base, config.seeds.train_base));
  save_ckpt(f_r, dir, "f_R");
  save_ckpt(f_0, dir, "f_0");
  manifest_add(dir, {"ckpt/f_R.ckpt", "ckpt/f_0.ckpt"});
}

void phase_train_tool(const ExperimentConfig& config, const fs::path& dir) {
  World w = build_world(config);
  Checkpoint f_0 = load_ckpt(dir, "f_0");
  Checkpoint f = train_lm(f_0, tool_training_set(config, w),
                          to_hyper(config.train_tool, config.seeds.train_tool));
  save_ckpt(f, dir, "f");
  manifest_add(dir, {"ckpt/f.ckpt"});
}

void phase_unlearn(const ExperimentConfig& config, const fs::path& dir) {
  World w = build_world(config);
  Tokenizer tok = make_tokenizer(w.universe);
  Checkpoint f = load_ckpt(dir, "f");
  Checkpoint f_0 = load_ckpt(dir, "f_0");
  Checkpoint f_r = load_ckpt(dir, "f_R");

  UnlearnRequest req = make_request(config);

  // Tools whose knowledge already sits at or below the tool-free level are
  // no-op deletions; they are reported, not failed.
  std::vector<int> noop_tools;
  for (int t : w.split.forget_tools) {
    const auto& probe = w.probes.at(t);
    const double g_f = measure_tool_knowledge(f, tok, w.universe.tool(t), probe).value;
    const double g_f0 = measure_tool_knowledge(f_0, tok, w.universe.tool(t), probe).value;
    if (g_f <= g_f0) noop_tools.push_back(t);
  }

  Checkpoint f_prime = run_unlearn(req, w.universe, tok, w.split, f, f_0, f_r);
  save_ckpt(f_prime, dir, "f_prime");

  json manifest{{"method", to_string(req.method)},
                {"alpha", req.alpha},
                {"beta", req.beta},
                {"retain_ratio", req.retain_ratio},
                {"use_pseudo_samples", req.use_pseudo_samples},
                {"hyper", phase_hyper_to_json(config.method.name == UnlearnMethod::retrain
                                                  ? config.train_tool
                                                  : config.unlearn)},
                {"seed", config.seeds.unlearn},
                {"noop_tools", noop_tools},
                {"before", "ckpt/f.ckpt"},
                {"after", "ckpt/f_prime.ckpt"},
                {"forget_tools", std::vector<int>(w.split.forget_tools.begin(),
                                                  w.split.forget_tools.end())}};
  write_text_file(dir / "unlearn_manifest.json", manifest.dump(2));
  manifest_add(dir, {"ckpt/f_prime.ckpt", "unlearn_manifest.json"});
}

void phase_sequential(const ExperimentConfig& config, const fs::path& dir) {
  if (!config.sequential_batches) {
    throw InvalidArgument("config field 'sequential.batches': missing");
  }
  World w = build_world(config);
  Tokenizer tok = make_tokenizer(w.universe);
  Checkpoint f = load_ckpt(dir, "f");
  Checkpoint f_0 = load_ckpt(dir, "f_0");
  Checkpoint f_r = load_ckpt(dir, "f_R");

  std::vector<std::set<int>> batches;
  for (const auto& b : *config.sequential_batches) batches.emplace_back(b.begin(), b.end());

  UnlearnRequest req = make_request(config);
  auto ckpts = sequential_unlearn(req, w.universe, tok, w.split, batches, f, f_0, f_r);

  std::vector<std::string> files;
  for (size_t i = 0; i < ckpts.size(); ++i) {
    const std::string name = "f_prime_batch_" + std::to_string(i + 1);
    save_ckpt(ckpts[i], dir, name);
    EvalReport r = evaluate_model(config, w, tok, ckpts[i]);
    const std::string report_name = "eval_batch_" + std::to_string(i + 1) + ".json";
    write_text_file(dir / report_name, eval_report_to_json(r));
    files.push_back("ckpt/" + name + ".ckpt");
    files.push_back(report_name);
  }
  save_ckpt(ckpts.back(), dir, "f_prime");
  files.push_back("ckpt/f_prime.ckpt");
  manifest_add(dir, files);
}

bool phase_eval(const ExperimentConfig& config, const fs::path& dir, bool check) {
  World w = build_world(config);
  Tokenizer tok = make_tokenizer(w.universe);
  Checkpoint f_0 = load_ckpt(dir, "f_0");
  Checkpoint f = load_ckpt(dir, "f");
  Checkpoint f_prime = load_ckpt(dir, "f_prime");

  EvalReport report = evaluate_model(config, w, tok, f_prime);
  PropertyChecks checks = property_checks(f_0, f, f_prime, tok, w.universe, w.split, w.probes,
                                          w.universe.general_heldout, config.tolerances);
  write_text_file(dir / "eval_report.json", eval_report_to_json(report));
  write_text_file(dir / "property_checks.json", checks_to_json(checks).dump(2));
  manifest_add(dir, {"eval_report.json", "property_checks.json"});
  if (check) return checks.tkd.pass && checks.tkr.pass && checks.gcr.pass;
  return true;
}

void phase_mia(const ExperimentConfig& config, const fs::path& dir, int n_threads) {
  World w = build_world(config);
  Tokenizer tok = make_tokenizer(w.universe);
  Checkpoint f_0 = load_ckpt(dir, "f_0");
  Checkpoint f = load_ckpt(dir, "f");
  Checkpoint f_prime = load_ckpt(dir, "f_prime");

  std::vector<Demonstration> all_demos = w.split.forget_demos;
  all_demos.insert(all_demos.end(), w.split.retain_demos.begin(), w.split.retain_demos.end());

  ShadowCollection shadows = train_shadow_models(
      w.universe, tok, all_demos, f_0, config.mia.sizes, config.mia.shadows_per_size,
      to_hyper(config.shadow, config.seeds.mia), config.seeds.mia, n_threads);
  ShadowLossTable table = harvest_shadow_losses(shadows, tok, w.shadow_sets, n_threads);
  LiraFits fits = build_lira_fits(shadows, table);
  MiaReport report = evaluate_attack(f_prime, f, tok, w.split, w.shadow_sets, shadows, table,
                                     fits);
  write_text_file(dir / "mia_report.json", mia_report_to_json(report));
  write_text_file(dir / "roc.tsv", roc_to_tsv(report.roc));
  manifest_add(dir, {"mia_report.json", "roc.tsv"});
}

void phase_report(const fs::path& dir) {
  write_text_file(dir / "table.tsv", aggregate_report({dir}));
  manifest_add(dir, {"table.tsv"});
}

RunArtifacts run_pipeline(const ExperimentConfig& config, const fs::path& out_dir, bool force,
                          int n_threads) {
  if (fs::exists(out_dir / "manifest.json") && !force) {
    throw AlreadyExists("output directory already holds a run: " + out_dir.string() +
                        " (use --force to overwrite)");
  }

  std::map<std::string, double> timings;
  phase_gen_data(config, out_dir, force);

  auto t_train = Clock::now();
  phase_train_base(config, out_dir);
  phase_train_tool(config, out_dir);
  timings["train"] = seconds_since(t_train);

  auto t_unlearn = Clock::now();
  if (config.sequential_batches) {
    phase_sequential(config, out_dir);
  } else {
    phase_unlearn(config, out_dir);
  }
  timings["unlearn"] = seconds_since(t_unlearn);

  auto t_eval = Clock::now();
  phase_eval(config, out_dir, false);
  timings["eval"] = seconds_since(t_eval);

  auto t_mia = Clock::now();
  if (config.mia.enabled) {
    phase_mia(config, out_dir, n_threads);
  }
  timings["mia"] = config.mia.enabled ? seconds_since(t_mia) : 0.0;

  RunArtifacts artifacts;
  artifacts.dir = out_dir;
  artifacts.eval_report = eval_report_from_json(read_text_file(out_dir / "eval_report.json"));
  artifacts.eval_report.timings = timings;
  write_text_file(out_dir / "eval_report.json", eval_report_to_json(artifacts.eval_report));

  World w = build_world(config);
  Tokenizer tok = make_tokenizer(w.universe);
  Checkpoint f_0 = load_ckpt(out_dir, "f_0");
  Checkpoint f = load_ckpt(out_dir, "f");
  Checkpoint f_prime = load_ckpt(out_dir, "f_prime");
  artifacts.checks = property_checks(f_0, f, f_prime, tok, w.universe, w.split, w.probes,
                                     w.universe.general_heldout, config.tolerances);
  if (config.mia.enabled) {
    artifacts.mia_report = mia_report_from_json(read_text_file(out_dir / "mia_report.json"));
  }
  phase_report(out_dir);
  return artifacts;
}

std::string aggregate_report(const std::vector<fs::path>& run_dirs) {
  struct Row {
    std::string method;
    uint64_t seed = 0;
    double alpha = 0.0;
    double acc_test = 0.0, acc_retain = 0.0, acc_forget = 0.0, general = 0.0;
    std::optional<double> tpr;
  };
  std::vector<Row> rows;
  for (const auto& dir : run_dirs) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
      throw NotFound("no manifest in run directory: " + dir.string());
    }
    json manifest = json::parse(read_text_file(manifest_path));
    if (!manifest.contains("config")) {
      throw NotFound("manifest has no config: " + manifest_path.string());
    }
    const auto& cfg = manifest.at("config");
    Row row;
    row.method = cfg.at("method").at("name").get<std::string>();
    row.alpha = cfg.at("method").at("alpha").get<double>();
    row.seed = cfg.at("seeds").at("universe").get<uint64_t>();
    const fs::path report_path = dir / "eval_report.json";
    if (!fs::exists(report_path)) {
      throw NotFound("no eval report in run directory: " + dir.string());
    }
    EvalReport r = eval_report_from_json(read_text_file(report_path));
    row.acc_test = r.acc_test;
    row.acc_retain = r.acc_retain;
    row.acc_forget = r.acc_forget;
    row.general = r.general_score;
    if (fs::exists(dir / "mia_report.json")) {
      row.tpr = mia_report_from_json(read_text_file(dir / "mia_report.json")).tpr_at_fpr_001;
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream out;
  out << "method\tseed\talpha\tacc_test\tacc_retain\tacc_forget\tgeneral\ttpr_at_fpr_001\n";
  out.precision(4);
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.method << '\t' << r.seed << '\t' << r.alpha << '\t' << r.acc_test << '\t'
        << r.acc_retain << '\t' << r.acc_forget << '\t' << r.general << '\t';
    if (r.tpr) {
      out << *r.tpr;
    } else {
      out << "-";
    }
    out << '\n';
  }

  // mean +/- std footer per method
  std::map<std::string, std::vector<const Row*>> by_method;
  for (const auto& r : rows) by_method[r.method].push_back(&r);
  auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
    return std::make_pair(mean, std::sqrt(var));
  };
  for (const auto& [method, group] : by_method) {
    auto col = [&](auto getter) {
      std::vector<double> xs;
      for (const Row* r : group) xs.push_back(getter(*r));
      return mean_std(xs);
    };
    auto fmt = [&](std::pair<double, double> ms) {
      std::ostringstream s;
      s.precision(4);
      s << std::fixed << ms.first << "±" << ms.second;
      return s.str();
    };
    out << "# " << method << "\tmean±std\t-\t"
        << fmt(col([](const Row& r) { return r.acc_test; })) << '\t'
        << fmt(col([](const Row& r) { return r.acc_retain; })) << '\t'
        << fmt(col([](const Row& r) { return r.acc_forget; })) << '\t'
        << fmt(col([](const Row& r) { return r.general; })) << '\t';
    std::vector<double> tprs;
    for (const Row* r : group) {
      if (r->tpr) tprs.push_back(*r->tpr);
    }
    if (tprs.empty()) {
      out << "-";
    } else {
      out << fmt(mean_std(tprs));
    }
    out << '\n';
  }
  return out.str();
}

std::vector<fs::path> run_sweep(const ExperimentConfig& config, const fs::path& out_dir,
                                bool force, int n_threads) {
  if (!config.sweep) throw InvalidArgument("config field 'sweep': missing");
  const auto& sw = *config.sweep;
  if (sw.methods.empty() || sw.seeds.empty()) {
    throw InvalidArgument("config field 'sweep': methods and seeds must be nonempty");
  }
  fs::create_directories(out_dir);

  std::vector<fs::path> dirs;
  std::vector<ExperimentConfig> configs;
  for (auto method : sw.methods) {
    for (uint64_t seed : sw.seeds) {
      for (double alpha : sw.alphas) {
        ExperimentConfig c = config;
        c.sweep.reset();
        c.method.name = method;
        c.method.alpha = alpha;
        c.seeds.universe = derive_seed(seed, "sweep.universe");
        c.seeds.model = derive_seed(seed, "sweep.model");
        c.seeds.split = derive_seed(seed, "sweep.split");
        c.seeds.train_base = derive_seed(seed, "sweep.train_base");
        c.seeds.train_tool = derive_seed(seed, "sweep.train_tool");
        c.seeds.unlearn = derive_seed(seed, "sweep.unlearn");
        c.seeds.mia = derive_seed(seed, "sweep.mia");
        std::ostringstream name;
        name << to_string(method) << "_s" << seed << "_a" << alpha;
        dirs.push_back(out_dir / name.str());
        configs.push_back(std::move(c));
      }
    }
  }
  for (size_t i = 0; i < configs.size(); ++i) {
    run_pipeline(configs[i], dirs[i], force, n_threads);
  }
  write_text_file(out_dir / "table.tsv", aggregate_report(dirs));
  return dirs;
}

}  // namespace tulab
