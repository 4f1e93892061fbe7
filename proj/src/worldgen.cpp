#include "tulab/worldgen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <numeric>
#include <sstream>

namespace tulab {
namespace {

// ---------------------------------------------------------------- templates

// A template is a space-separated pattern; <name>, <a>, <b> are slots.
// The master list per family is split into fixed disjoint thirds:
// ids 0..7 train, 8..15 test, 16..23 shadow. Test and shadow phrasings
// recombine words already covered by the train third (plus decorations),
// so held-out queries never contain tokens the model has not trained on.
const std::array<const char*, 24> kArithTemplates = {
    "use <name> on <a> and <b>",
    "apply <name> to <a> and <b>",
    "what is <name> of <a> and <b> ?",
    "run <name> with <a> and <b>",
    "compute <name> for <a> and <b>",
    "take <a> and <b> through <name>",
    "give the <name> result of <a> and <b>",
    "feed <a> and <b> into <name>",
    "compute <name> of <a> and <b>",
    "use <name> with <a> and <b>",
    "evaluate <name> at <a> and <b>",
    "give the <name> value for <a> and <b>",
    "what does <name> give for <a> and <b> ?",
    "run <name> on <a> and <b>",
    "let <name> work with <a> and <b>",
    "send <a> and <b> through <name>",
    "please use <name> for <a> and <b>",
    "take <name> at <a> and <b>",
    "now give <name> of <a> and <b>",
    "check <name> with <a> and <b>",
    "work <name> on <a> and <b>",
    "get the <name> result of <a> and <b>",
    "run the <name> value for <a> and <b>",
    "feed <name> with <a> and <b>",
};

const std::array<const char*, 24> kConvertTemplates = {
    "use <name> on <a>",
    "convert <a> with <name>",
    "apply <name> to <a>",
    "what is <name> of <a> ?",
    "evaluate <name> at <a>",
    "run <name> on value <a>",
    "send <a> to <name>",
    "let <name> work on <a>",
    "compute <name> for <a>",
    "use <name> with <a>",
    "evaluate <name> of <a>",
    "convert the value <a> with <name>",
    "what does <name> give for <a> ?",
    "run <name> at <a>",
    "let <name> work at <a>",
    "send the value <a> into <name>",
    "please use <name> on <a>",
    "take <a> into <name>",
    "now convert <a> through <name>",
    "check <name> on <a>",
    "work <name> on <a>",
    "get the <name> value of <a>",
    "run the <name> value for <a>",
    "give <name> the value <a>",
};

const std::array<const char*, 24> kLookupTemplates = {
    "look up <a> in <name>",
    "use <name> on key <a>",
    "fetch <a> from <name>",
    "what does <name> hold at <a> ?",
    "query <name> for key <a>",
    "get the <name> value for key <a>",
    "check <name> at <a>",
    "read entry <a> of <name>",
    "query <name> at <a>",
    "read the <name> entry for <a>",
    "get the <name> value at key <a>",
    "check <name> for key <a>",
    "what does <name> hold for <a> ?",
    "fetch the entry <a> of <name>",
    "let <name> look at key <a>",
    "send key <a> into <name>",
    "please look up <a> in <name>",
    "take key <a> into <name>",
    "now read <a> from <name>",
    "check the <name> entry at <a>",
    "work <name> at key <a>",
    "get <name> for key <a>",
    "run <name> on entry <a>",
    "give the <name> value for key <a>",
};

const std::array<const char*, 5> kParaphrasePrefixes = {"please", "kindly", "now", "quick",
                                                        "hey"};
const std::array<const char*, 3> kParaphraseSuffixes = {"thanks", "ok", "today"};

const std::array<const char*, 24>& templates_for(ToolFamily f) {
  switch (f) {
    case ToolFamily::arith:
      return kArithTemplates;
    case ToolFamily::convert:
      return kConvertTemplates;
    case ToolFamily::lookup:
      return kLookupTemplates;
  }
  throw InvalidArgument("unknown tool family");
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// ---------------------------------------------------------------- name pools

struct ArithRecipe {
  const char* name;
  int op;
};

const std::array<ArithRecipe, 12> kArithPool = {{
    {"add", 0},
    {"plus", 0},
    {"sum", 0},
    {"sub", 1},
    {"minus", 1},
    {"diff", 1},
    {"mul", 2},
    {"times", 2},
    {"prod", 2},
    {"low", 3},
    {"high", 4},
    {"gap", 5},
}};

struct ConvertRecipe {
  const char* name;
  long long a, b, c;
};

// Multipliers stay small so results keep to at most three digits.
const std::array<ConvertRecipe, 12> kConvertPool = {{
    {"c2f", 9, 5, 32},
    {"doz", 12, 1, 0},
    {"wk2d", 7, 1, 0},
    {"half", 1, 2, 0},
    {"dime", 10, 1, 0},
    {"trip", 3, 1, 0},
    {"quad", 4, 1, 0},
    {"score", 20, 1, 0},
    {"nickel", 5, 1, 0},
    {"twin", 2, 1, 0},
    {"octo", 8, 1, 0},
    {"hex", 6, 1, 0},
}};

const std::array<const char*, 12> kLookupNames = {"price", "stock", "zip",  "rank",
                                                  "dex",   "code",  "age",  "slot",
                                                  "seat",  "badge", "room", "level"};

// ---------------------------------------------------------------- facts

struct FactType {
  const char* relation;
  std::vector<const char*> keys;
  std::vector<const char*> values;
  // three phrasings; the last one is held out from training
  std::vector<const char*> phrasings;
};

const std::vector<FactType>& fact_types() {
  static const std::vector<FactType> types = {
      {"capital",
       {"atria", "borund", "cestia", "dorn", "elvia", "fentar", "gorsia", "hydel", "ilor",
        "jantu"},
       {"arlem", "bexley", "corin", "darvel", "esten", "farrow", "galden", "hollis", "ivers",
        "jorvik"},
       {"what is the capital of <k> ?", "the capital of <k> is", "name the capital of <k>"}},
      {"color",
       {"apple", "leaf", "sky", "coal", "snow", "rose", "sun", "sea"},
       {"red", "green", "blue", "black", "white", "pink", "yellow", "teal"},
       {"what color is the <k> ?", "the color of the <k> is", "name the color of the <k>"}},
      {"opposite",
       {"hot", "big", "fast", "up", "wet", "hard", "old", "loud"},
       {"cold", "small", "slow", "down", "dry", "soft", "new", "quiet"},
       {"what is the opposite of <k> ?", "the opposite of <k> is", "name the opposite of <k>"}},
  };
  return types;
}

std::vector<std::string> instantiate_phrase(const std::string& pattern, const std::string& key) {
  std::vector<std::string> out;
  for (const auto& w : split_words(pattern)) {
    if (w == "<k>") {
      out.push_back(key);
    } else {
      out.push_back(w);
    }
  }
  return out;
}

int args_in_template(const std::string& pattern) {
  int n = 0;
  for (const auto& w : split_words(pattern)) {
    if (w == "<a>" || w == "<b>") ++n;
  }
  return n;
}

std::vector<std::string> instantiate_query(const std::string& pattern, const std::string& name,
                                           const std::vector<int>& args) {
  std::vector<std::string> out;
  for (const auto& w : split_words(pattern)) {
    if (w == "<name>") {
      out.push_back(name);
    } else if (w == "<a>") {
      auto digits = int_to_tokens(args.at(0));
      out.insert(out.end(), digits.begin(), digits.end());
    } else if (w == "<b>") {
      auto digits = int_to_tokens(args.at(1));
      out.insert(out.end(), digits.begin(), digits.end());
    } else {
      out.push_back(w);
    }
  }
  return out;
}

constexpr int kArgPoolSize = 24;

// Difficulty levels walk disjoint slices of the tool's argument pool.
std::pair<size_t, size_t> difficulty_slice(int level, int n_levels, size_t pool_size) {
  const int levels = std::max(1, n_levels);
  const size_t width = std::max<size_t>(1, pool_size / static_cast<size_t>(levels));
  const size_t begin = std::min(pool_size - 1, static_cast<size_t>(level % levels) * width);
  const size_t end = level % levels == levels - 1 ? pool_size : std::min(pool_size, begin + width);
  return {begin, end};
}

Demonstration make_demo(const Tool& tool, int template_id, const std::vector<int>& args) {
  const auto& pattern = templates_for(tool.family)[static_cast<size_t>(template_id)];
  Demonstration d;
  d.tool_id = tool.id;
  d.template_id = template_id;
  d.query = instantiate_query(pattern, tool.name, args);
  d.response = render_call(tool.name, args, execute_tool(tool, args));
  return d;
}

}  // namespace

std::string to_string(ToolFamily f) {
  switch (f) {
    case ToolFamily::arith:
      return "arith";
    case ToolFamily::convert:
      return "convert";
    case ToolFamily::lookup:
      return "lookup";
  }
  throw InvalidArgument("unknown tool family");
}

ToolFamily tool_family_from_string(const std::string& s) {
  if (s == "arith") return ToolFamily::arith;
  if (s == "convert") return ToolFamily::convert;
  if (s == "lookup") return ToolFamily::lookup;
  throw InvalidArgument("unknown tool family: " + s);
}

const Tool& ToolUniverse::tool(int id) const {
  for (const auto& t : tools) {
    if (t.id == id) return t;
  }
  throw NotFound("tool id " + std::to_string(id) + " not in universe");
}

bool ToolUniverse::has_tool(int id) const {
  return std::any_of(tools.begin(), tools.end(), [&](const Tool& t) { return t.id == id; });
}

int execute_tool(const Tool& tool, const std::vector<int>& args) {
  if (static_cast<int>(args.size()) != tool.arity) {
    throw InvalidArgument("tool " + tool.name + " expects " + std::to_string(tool.arity) +
                          " arguments, got " + std::to_string(args.size()));
  }
  for (int a : args) {
    if (a < kArgDomainMin || a > kArgDomainMax) {
      throw InvalidArgument("argument " + std::to_string(a) + " outside domain [0,99]");
    }
  }
  const auto& s = tool.semantics;
  switch (s.kind) {
    case ToolSemantics::Kind::arith_op: {
      long long x = args[0], y = args[1];
      switch (s.op) {
        case 0:
          return static_cast<int>(x + y);
        case 1:
          return static_cast<int>(x - y);
        case 2:
          return static_cast<int>(x * y);
        case 3:
          return static_cast<int>(std::min(x, y));
        case 4:
          return static_cast<int>(std::max(x, y));
        case 5:
          return static_cast<int>(std::llabs(x - y));
        default:
          throw InvalidArgument("unknown arith op " + std::to_string(s.op));
      }
    }
    case ToolSemantics::Kind::affine:
      return static_cast<int>((s.a * args[0]) / s.b + s.c);
    case ToolSemantics::Kind::table:
      return s.table.at(static_cast<size_t>(args[0]));
  }
  throw InvalidArgument("unknown semantics kind");
}

std::vector<std::string> int_to_tokens(long long value) {
  // Numerals are atomic tokens; the closed vocab enumerates every one the
  // generators can emit.
  return {std::to_string(value)};
}

bool tokens_to_int(const std::vector<std::string>& tokens, size_t begin, size_t end,
                   long long* out) {
  if (begin + 1 != end || end > tokens.size()) return false;
  const std::string& t = tokens[begin];
  size_t i = 0;
  bool neg = false;
  if (!t.empty() && t[0] == '-') {
    neg = true;
    i = 1;
  }
  if (i >= t.size() || t.size() > 10) return false;
  long long v = 0;
  for (; i < t.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(t[i]))) return false;
    v = v * 10 + (t[i] - '0');
  }
  *out = neg ? -v : v;
  return true;
}

std::vector<std::string> render_call(const std::string& name, const std::vector<int>& args,
                                     long long result) {
  std::vector<std::string> out = {"CALL", name, "("};
  for (size_t i = 0; i < args.size(); ++i) {
    if (i > 0) out.push_back(",");
    auto digits = int_to_tokens(args[i]);
    out.insert(out.end(), digits.begin(), digits.end());
  }
  out.push_back(")");
  out.push_back("=");
  auto digits = int_to_tokens(result);
  out.insert(out.end(), digits.begin(), digits.end());
  return out;
}

bool parse_call(const std::vector<std::string>& tokens, ParsedCall* out) {
  if (tokens.size() < 7 || tokens[0] != "CALL" || tokens[2] != "(") return false;
  ParsedCall call;
  call.name = tokens[1];
  size_t close = 0;
  for (size_t i = 3; i < tokens.size(); ++i) {
    if (tokens[i] == ")") {
      close = i;
      break;
    }
  }
  if (close == 0 || close + 2 > tokens.size() || tokens[close + 1] != "=") return false;
  size_t arg_begin = 3;
  for (size_t i = 3; i <= close; ++i) {
    if (tokens[i] == "," || i == close) {
      long long v = 0;
      if (!tokens_to_int(tokens, arg_begin, i, &v)) return false;
      if (v < kArgDomainMin || v > kArgDomainMax) return false;
      call.args.push_back(static_cast<int>(v));
      arg_begin = i + 1;
    }
  }
  if (call.args.empty() || call.args.size() > 2) return false;
  if (!tokens_to_int(tokens, close + 2, tokens.size(), &call.result)) return false;
  if (out) *out = call;
  return true;
}

std::vector<int> template_ids_for(ToolFamily family, TemplatePool pool) {
  const int n = static_cast<int>(templates_for(family).size());
  const int third = n / 3;
  int begin = 0;
  switch (pool) {
    case TemplatePool::train:
      begin = 0;
      break;
    case TemplatePool::test:
      begin = third;
      break;
    case TemplatePool::shadow:
      begin = 2 * third;
      break;
  }
  std::vector<int> ids(static_cast<size_t>(third));
  std::iota(ids.begin(), ids.end(), begin);
  return ids;
}

ToolUniverse build_tool_universe(uint64_t seed, int n_tools, int n_general_tasks) {
  if (n_tools < 2) {
    throw InvalidArgument("n_tools must be >= 2 to allow nonempty forget and retain sets");
  }
  if (n_general_tasks < 1) {
    throw InvalidArgument("n_general_tasks must be >= 1");
  }

  ToolUniverse u;
  u.seed = seed;

  // Seeded shuffles of the per-family pools; round-robin family assignment.
  Rng name_rng(derive_seed(seed, "worldgen.names"));
  std::vector<int> arith_order(kArithPool.size()), convert_order(kConvertPool.size()),
      lookup_order(kLookupNames.size());
  std::iota(arith_order.begin(), arith_order.end(), 0);
  std::iota(convert_order.begin(), convert_order.end(), 0);
  std::iota(lookup_order.begin(), lookup_order.end(), 0);
  std::shuffle(arith_order.begin(), arith_order.end(), name_rng);
  std::shuffle(convert_order.begin(), convert_order.end(), name_rng);
  std::shuffle(lookup_order.begin(), lookup_order.end(), name_rng);

  Rng table_rng(derive_seed(seed, "worldgen.tables"));
  std::uniform_int_distribution<int> value_dist(0, 99);

  size_t n_arith = 0, n_convert = 0, n_lookup = 0;
  for (int id = 0; id < n_tools; ++id) {
    Tool t;
    t.id = id;
    switch (id % 3) {
      case 0: {
        const auto& r = kArithPool[arith_order[n_arith % arith_order.size()]];
        t.family = ToolFamily::arith;
        t.arity = 2;
        t.name = r.name;
        if (n_arith >= arith_order.size()) t.name += std::to_string(n_arith / arith_order.size() + 1);
        t.semantics.kind = ToolSemantics::Kind::arith_op;
        t.semantics.op = r.op;
        t.doc = {t.name, "combines", "two", "numbers"};
        ++n_arith;
        break;
      }
      case 1: {
        const auto& r = kConvertPool[convert_order[n_convert % convert_order.size()]];
        t.family = ToolFamily::convert;
        t.arity = 1;
        t.name = r.name;
        if (n_convert >= convert_order.size())
          t.name += std::to_string(n_convert / convert_order.size() + 1);
        t.semantics.kind = ToolSemantics::Kind::affine;
        t.semantics.a = r.a;
        t.semantics.b = r.b;
        t.semantics.c = r.c;
        t.doc = {t.name, "converts", "one", "number"};
        ++n_convert;
        break;
      }
      default: {
        t.family = ToolFamily::lookup;
        t.arity = 1;
        t.name = kLookupNames[lookup_order[n_lookup % lookup_order.size()]];
        if (n_lookup >= lookup_order.size())
          t.name += std::to_string(n_lookup / lookup_order.size() + 1);
        t.semantics.kind = ToolSemantics::Kind::table;
        t.semantics.table.resize(static_cast<size_t>(kArgDomainMax - kArgDomainMin + 1));
        for (auto& v : t.semantics.table) v = value_dist(table_rng);
        t.doc = {t.name, "maps", "a", "key", "to", "a", "value"};
        ++n_lookup;
        break;
      }
    }
    u.tools.push_back(std::move(t));
  }

  // Argument pools: a bounded set of tuples per tool so tool behavior is a
  // finite, memorizable skill rather than open-ended integer arithmetic.
  // Per-family ranges keep every result within three digits.
  Rng pool_rng(derive_seed(seed, "worldgen.arg_pools"));
  for (auto& t : u.tools) {
    int lo = kArgDomainMin, hi = kArgDomainMax;
    int pool_cap = kArgPoolSize;
    switch (t.family) {
      case ToolFamily::arith:
        lo = 2;
        hi = 9;
        pool_cap = 12;  // two-argument associations are the hardest to keep apart
        break;
      case ToolFamily::convert:
        lo = 0;
        hi = 23;
        pool_cap = 16;
        break;
      case ToolFamily::lookup:
        pool_cap = 16;
        break;
    }
    std::uniform_int_distribution<int> arg_dist(lo, hi);
    const long long max_tuples = t.arity == 1 ? (hi - lo + 1)
                                              : static_cast<long long>(hi - lo + 1) * (hi - lo + 1);
    const int pool_size = static_cast<int>(std::min<long long>(pool_cap, max_tuples));
    std::set<std::vector<int>> seen;
    while (static_cast<int>(seen.size()) < pool_size) {
      std::vector<int> tuple(static_cast<size_t>(t.arity));
      for (auto& a : tuple) a = arg_dist(pool_rng);
      seen.insert(std::move(tuple));
    }
    t.arg_pool.assign(seen.begin(), seen.end());
  }

  // General tasks: seeded key->value assignment per fact type, three phrasings
  // each; the last phrasing of every used fact is held out for evaluation.
  Rng fact_rng(derive_seed(seed, "worldgen.facts"));
  struct Fact {
    int type;
    std::string key;
    std::string value;
  };
  std::vector<Fact> facts;
  for (size_t ti = 0; ti < fact_types().size(); ++ti) {
    const auto& ft = fact_types()[ti];
    std::vector<int> perm(ft.values.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), fact_rng);
    for (size_t k = 0; k < ft.keys.size(); ++k) {
      facts.push_back({static_cast<int>(ti), ft.keys[k], ft.values[perm[k % perm.size()]]});
    }
  }
  Rng order_rng(derive_seed(seed, "worldgen.fact_order"));
  std::shuffle(facts.begin(), facts.end(), order_rng);

  std::set<int> used_facts;
  int emitted = 0;
  for (int round = 0; emitted < n_general_tasks; ++round) {
    for (size_t fi = 0; fi < facts.size() && emitted < n_general_tasks; ++fi) {
      const auto& f = facts[fi];
      const auto& ft = fact_types()[static_cast<size_t>(f.type)];
      int phrasing = round % 2;  // phrasings 0 and 1 train; 2 is held out
      GeneralTask task;
      task.fact_id = static_cast<int>(fi);
      task.template_id = phrasing;
      task.query = instantiate_phrase(ft.phrasings[static_cast<size_t>(phrasing)], f.key);
      task.answer = {f.value};
      u.general_tasks.push_back(std::move(task));
      used_facts.insert(static_cast<int>(fi));
      ++emitted;
    }
  }
  for (int fi : used_facts) {
    const auto& f = facts[static_cast<size_t>(fi)];
    const auto& ft = fact_types()[static_cast<size_t>(f.type)];
    GeneralTask task;
    task.fact_id = fi;
    task.template_id = 2;
    task.heldout = true;
    task.query = instantiate_phrase(ft.phrasings[2], f.key);
    task.answer = {f.value};
    u.general_heldout.push_back(std::move(task));
  }

  // Closed vocabulary: every token that any generator can emit.
  std::set<std::string> vocab;
  auto add_words = [&vocab](const std::vector<std::string>& ws) {
    for (const auto& w : ws) vocab.insert(w);
  };
  for (const auto& t : u.tools) {
    vocab.insert(t.name);
    add_words(t.doc);
  }
  for (ToolFamily f : {ToolFamily::arith, ToolFamily::convert, ToolFamily::lookup}) {
    for (const char* pattern : templates_for(f)) {
      for (const auto& w : split_words(pattern)) {
        if (w != "<name>" && w != "<a>" && w != "<b>") vocab.insert(w);
      }
    }
  }
  for (const char* w : kParaphrasePrefixes) vocab.insert(w);
  for (const char* w : kParaphraseSuffixes) vocab.insert(w);
  for (const auto& ft : fact_types()) {
    for (const char* k : ft.keys) vocab.insert(k);
    for (const char* v : ft.values) vocab.insert(v);
    for (const char* p : ft.phrasings) {
      for (const auto& w : split_words(p)) {
        if (w != "<k>") vocab.insert(w);
      }
    }
  }
  // Numerals: every argument and every reachable result over the pools.
  for (const auto& t : u.tools) {
    for (const auto& tuple : t.arg_pool) {
      for (int a : tuple) vocab.insert(std::to_string(a));
      vocab.insert(std::to_string(execute_tool(t, tuple)));
    }
  }
  for (const char* w : {"(", ")", ",", "=", "CALL"}) vocab.insert(w);
  u.vocab.assign(vocab.begin(), vocab.end());

  return u;
}

std::vector<Demonstration> sample_demonstrations(const ToolUniverse& universe, int tool_id, int n,
                                                 const std::vector<int>& template_pool,
                                                 uint64_t seed) {
  if (!universe.has_tool(tool_id)) {
    throw NotFound("tool id " + std::to_string(tool_id) + " not in universe");
  }
  if (template_pool.empty()) {
    throw InvalidArgument("template pool must be nonempty");
  }
  const Tool& tool = universe.tool(tool_id);
  Rng rng(derive_seed(seed, "worldgen.demos", static_cast<uint64_t>(tool_id)));
  std::uniform_int_distribution<size_t> pick(0, tool.arg_pool.size() - 1);
  std::uniform_int_distribution<int> dec(0, 4);
  std::uniform_int_distribution<int> prefix_dist(0, static_cast<int>(kParaphrasePrefixes.size()) - 1);
  std::uniform_int_distribution<int> suffix_dist(0, static_cast<int>(kParaphraseSuffixes.size()) - 1);

  std::vector<Demonstration> demos;
  demos.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int template_id = template_pool[static_cast<size_t>(i) % template_pool.size()];
    Demonstration d = make_demo(tool, template_id, tool.arg_pool[pick(rng)]);
    // Light decoration shifts token positions so queries never bind to
    // absolute offsets.
    const int roll = dec(rng);
    if (roll == 0 || roll == 2) {
      d.query.insert(d.query.begin(), kParaphrasePrefixes[static_cast<size_t>(prefix_dist(rng))]);
    }
    if (roll == 1 || roll == 2) {
      d.query.push_back(kParaphraseSuffixes[static_cast<size_t>(suffix_dist(rng))]);
    }
    demos.push_back(std::move(d));
  }
  return demos;
}

CorpusSplit split_corpus(const ToolUniverse& universe, int demos_per_tool, double forget_fraction,
                         uint64_t seed, int test_demos_per_tool) {
  const int n = static_cast<int>(universe.tools.size());
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0)) {
    throw InvalidArgument("forget_fraction must lie in (0,1)");
  }
  int k = std::max(1, static_cast<int>(std::llround(forget_fraction * n)));
  if (k >= n) {
    throw InvalidArgument("forget_fraction " + std::to_string(forget_fraction) +
                          " leaves no retain tools");
  }

  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, "worldgen.split"));
  std::shuffle(ids.begin(), ids.end(), rng);

  CorpusSplit split;
  for (int i = 0; i < n; ++i) {
    if (i < k) {
      split.forget_tools.insert(ids[static_cast<size_t>(i)]);
    } else {
      split.retain_tools.insert(ids[static_cast<size_t>(i)]);
    }
  }

  for (const auto& tool : universe.tools) {
    auto train_pool = template_ids_for(tool.family, TemplatePool::train);
    auto test_pool = template_ids_for(tool.family, TemplatePool::test);
    auto train = sample_demonstrations(universe, tool.id, demos_per_tool, train_pool,
                                       derive_seed(seed, "split.train"));
    auto test = sample_demonstrations(universe, tool.id, test_demos_per_tool, test_pool,
                                      derive_seed(seed, "split.test"));
    auto& dest = split.forget_tools.count(tool.id) ? split.forget_demos : split.retain_demos;
    dest.insert(dest.end(), train.begin(), train.end());
    split.test_demos.insert(split.test_demos.end(), test.begin(), test.end());
  }
  return split;
}

ShadowSet sample_shadow_set(const ToolUniverse& universe, int tool_id, int n,
                            const DiversityConfig& diversity, uint64_t seed) {
  if (!universe.has_tool(tool_id)) {
    throw NotFound("tool id " + std::to_string(tool_id) + " not in universe");
  }
  if (diversity.n_templates < 2) {
    throw InvalidArgument("diversity.n_templates must be >= 2");
  }
  const Tool& tool = universe.tool(tool_id);
  auto pool = template_ids_for(tool.family, TemplatePool::shadow);
  if (diversity.n_templates > static_cast<int>(pool.size())) {
    throw ResourceExhausted("shadow template pool has " + std::to_string(pool.size()) +
                            " templates, requested " + std::to_string(diversity.n_templates));
  }
  pool.resize(static_cast<size_t>(diversity.n_templates));

  Rng rng(derive_seed(seed, "worldgen.shadow", static_cast<uint64_t>(tool_id)));
  std::uniform_int_distribution<int> prefix_dist(0, static_cast<int>(kParaphrasePrefixes.size()) - 1);
  std::uniform_int_distribution<int> suffix_dist(0, static_cast<int>(kParaphraseSuffixes.size()) - 1);
  std::uniform_int_distribution<int> coin(0, 1);

  ShadowSet set;
  set.tool_id = tool_id;
  set.diversity = diversity;
  set.samples.reserve(static_cast<size_t>(n));
  int levels = std::max(1, diversity.difficulty_levels);
  for (int i = 0; i < n; ++i) {
    int template_id = pool[static_cast<size_t>(i) % pool.size()];
    auto [lo, hi] = difficulty_slice(i % levels, levels, tool.arg_pool.size());
    std::uniform_int_distribution<size_t> pick(lo, hi - 1);
    Demonstration d = make_demo(tool, template_id, tool.arg_pool[pick(rng)]);
    for (int depth = 0; depth < diversity.paraphrase_depth; ++depth) {
      if (coin(rng)) {
        d.query.insert(d.query.begin(), kParaphrasePrefixes[static_cast<size_t>(prefix_dist(rng))]);
      } else {
        d.query.push_back(kParaphraseSuffixes[static_cast<size_t>(suffix_dist(rng))]);
      }
    }
    set.samples.push_back(std::move(d));
  }
  return set;
}

std::vector<Demonstration> pseudo_samples_for_tool(const ToolUniverse& universe, int tool_id,
                                                   int n, uint64_t seed) {
  if (n == 0) return {};
  DiversityConfig diversity;
  return sample_shadow_set(universe, tool_id, n, diversity, derive_seed(seed, "worldgen.pseudo"))
      .samples;
}

}  // namespace tulab
