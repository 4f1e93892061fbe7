#include <algorithm>
#include <set>

#include "doctest.h"
#include "tulab/worldgen.hpp"

using namespace tulab;

TEST_SUITE_BEGIN("worldgen");

TEST_CASE("build_tool_universe is deterministic and unique-named") {
  ToolUniverse a = build_tool_universe(0, 8, 50);
  ToolUniverse b = build_tool_universe(0, 8, 50);
  REQUIRE(a.tools.size() == 8);
  std::set<std::string> names;
  for (size_t i = 0; i < a.tools.size(); ++i) {
    CHECK(a.tools[i].name == b.tools[i].name);
    CHECK(a.tools[i].id == static_cast<int>(i));
    names.insert(a.tools[i].name);
  }
  CHECK(names.size() == 8);
  CHECK(a.vocab == b.vocab);
  REQUIRE(a.general_tasks.size() == 50);

  // identical output on repeated calls, including semantics
  for (size_t i = 0; i < a.tools.size(); ++i) {
    if (a.tools[i].family == ToolFamily::lookup) {
      CHECK(a.tools[i].semantics.table == b.tools[i].semantics.table);
    }
  }
}

TEST_CASE("build_tool_universe rejects degenerate sizes") {
  CHECK_THROWS_AS(build_tool_universe(0, 1, 50), InvalidArgument);
  CHECK_THROWS_AS(build_tool_universe(0, 8, 0), InvalidArgument);
}

TEST_CASE("universes with different seeds differ in at least one tool name") {
  ToolUniverse a = build_tool_universe(1, 8, 10);
  ToolUniverse b = build_tool_universe(2, 8, 10);
  bool any_diff = false;
  for (size_t i = 0; i < a.tools.size(); ++i) {
    if (a.tools[i].name != b.tools[i].name) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("families are assigned round-robin") {
  ToolUniverse u = build_tool_universe(3, 9, 10);
  for (int i = 0; i < 9; ++i) {
    switch (i % 3) {
      case 0:
        CHECK(u.tools[i].family == ToolFamily::arith);
        break;
      case 1:
        CHECK(u.tools[i].family == ToolFamily::convert);
        break;
      default:
        CHECK(u.tools[i].family == ToolFamily::lookup);
        break;
    }
  }
}

TEST_CASE("execute_tool matches hand values") {
  Tool add;
  add.name = "add";
  add.family = ToolFamily::arith;
  add.arity = 2;
  add.semantics.kind = ToolSemantics::Kind::arith_op;
  add.semantics.op = 0;
  CHECK(execute_tool(add, {3, 4}) == 7);

  Tool c2f;
  c2f.name = "c2f";
  c2f.family = ToolFamily::convert;
  c2f.arity = 1;
  c2f.semantics.kind = ToolSemantics::Kind::affine;
  c2f.semantics.a = 9;
  c2f.semantics.b = 5;
  c2f.semantics.c = 32;
  CHECK(execute_tool(c2f, {99}) == 210);
  CHECK(execute_tool(c2f, {0}) == 32);

  CHECK_THROWS_AS(execute_tool(add, {3}), InvalidArgument);
  CHECK_THROWS_AS(execute_tool(add, {3, 100}), InvalidArgument);
  CHECK_THROWS_AS(execute_tool(c2f, {-1}), InvalidArgument);
}

TEST_CASE("lookup tools return the generated table entry") {
  ToolUniverse u = build_tool_universe(0, 8, 10);
  for (const auto& t : u.tools) {
    if (t.family != ToolFamily::lookup) continue;
    CHECK(execute_tool(t, {5}) == t.semantics.table[5]);
  }
}

TEST_CASE("sample_demonstrations verifies against the oracle and is deterministic") {
  ToolUniverse u = build_tool_universe(0, 8, 10);
  auto pool = template_ids_for(u.tools[0].family, TemplatePool::train);
  auto demos = sample_demonstrations(u, 0, 5, pool, 0);
  auto again = sample_demonstrations(u, 0, 5, pool, 0);
  REQUIRE(demos.size() == 5);
  for (size_t i = 0; i < demos.size(); ++i) {
    CHECK(demos[i].query == again[i].query);
    CHECK(demos[i].response == again[i].response);
    ParsedCall call;
    REQUIRE(parse_call(demos[i].response, &call));
    CHECK(call.name == u.tools[0].name);
    CHECK(call.result == execute_tool(u.tools[0], call.args));
  }
  CHECK_THROWS_AS(sample_demonstrations(u, 999, 5, pool, 0), NotFound);
  CHECK_THROWS_AS(sample_demonstrations(u, 0, 5, {}, 0), InvalidArgument);
}

TEST_CASE("queries contain the argument digits") {
  ToolUniverse u = build_tool_universe(0, 8, 10);
  auto pool = template_ids_for(u.tools[0].family, TemplatePool::train);
  for (const auto& d : sample_demonstrations(u, 0, 10, pool, 7)) {
    ParsedCall call;
    REQUIRE(parse_call(d.response, &call));
    for (int arg : call.args) {
      auto digits = int_to_tokens(arg);
      auto it = std::search(d.query.begin(), d.query.end(), digits.begin(), digits.end());
      CHECK(it != d.query.end());
    }
  }
}

TEST_CASE("split_corpus partitions tools and demos") {
  ToolUniverse u = build_tool_universe(0, 10, 10);
  CorpusSplit s = split_corpus(u, 10, 0.2, 0);
  CHECK(s.forget_tools.size() == 2);
  CHECK(s.retain_tools.size() == 8);
  std::set<int> all;
  for (int t : s.forget_tools) {
    CHECK(!s.retain_tools.count(t));
    all.insert(t);
  }
  all.insert(s.retain_tools.begin(), s.retain_tools.end());
  CHECK(all.size() == 10);
  for (const auto& d : s.forget_demos) CHECK(s.forget_tools.count(d.tool_id));
  for (const auto& d : s.retain_demos) CHECK(s.retain_tools.count(d.tool_id));
  CHECK(s.forget_demos.size() + s.retain_demos.size() == 100);

  CHECK_THROWS_AS(split_corpus(u, 10, 0.99, 0), InvalidArgument);
}

TEST_CASE("test demos use template instantiations absent from training demos") {
  ToolUniverse u = build_tool_universe(0, 6, 10);
  CorpusSplit s = split_corpus(u, 12, 0.25, 1);
  std::set<std::pair<int, int>> train_templates;
  for (const auto& d : s.forget_demos) train_templates.insert({d.tool_id, d.template_id});
  for (const auto& d : s.retain_demos) train_templates.insert({d.tool_id, d.template_id});
  for (const auto& d : s.test_demos) {
    CHECK(!train_templates.count({d.tool_id, d.template_id}));
  }
}

TEST_CASE("shadow sets are diverse and disjoint from training") {
  ToolUniverse u = build_tool_universe(0, 8, 10);
  CorpusSplit s = split_corpus(u, 50, 0.25, 0);
  DiversityConfig div;
  div.n_templates = 4;
  ShadowSet set = sample_shadow_set(u, 0, 20, div, 0);
  REQUIRE(set.samples.size() == 20);

  std::set<int> templates;
  for (const auto& d : set.samples) templates.insert(d.template_id);
  CHECK(templates.size() >= 4);

  std::set<std::vector<std::string>> training_queries;
  for (const auto& d : s.forget_demos) training_queries.insert(d.query);
  for (const auto& d : s.retain_demos) training_queries.insert(d.query);
  for (const auto& d : set.samples) {
    CHECK(!training_queries.count(d.query));
    ParsedCall call;
    REQUIRE(parse_call(d.response, &call));
    CHECK(call.result == execute_tool(u.tool(d.tool_id), call.args));
  }

  CHECK_THROWS_AS(sample_shadow_set(u, 999, 5, div, 0), NotFound);
  DiversityConfig too_many;
  too_many.n_templates = 40;
  CHECK_THROWS_AS(sample_shadow_set(u, 0, 5, too_many, 0), ResourceExhausted);
}

TEST_CASE("pseudo samples are valid demos outside the training corpus") {
  ToolUniverse u = build_tool_universe(0, 8, 10);
  CHECK(pseudo_samples_for_tool(u, 0, 0, 0).empty());
  auto pseudo = pseudo_samples_for_tool(u, 0, 10, 3);
  REQUIRE(pseudo.size() == 10);
  auto train_pool = template_ids_for(u.tools[0].family, TemplatePool::train);
  for (const auto& d : pseudo) {
    ParsedCall call;
    REQUIRE(parse_call(d.response, &call));
    CHECK(call.result == execute_tool(u.tool(0), call.args));
    CHECK(std::find(train_pool.begin(), train_pool.end(), d.template_id) == train_pool.end());
  }
}

TEST_CASE("vocab covers every emitted token") {
  ToolUniverse u = build_tool_universe(5, 9, 40);
  std::set<std::string> vocab(u.vocab.begin(), u.vocab.end());
  auto covered = [&](const std::vector<std::string>& ws) {
    for (const auto& w : ws) {
      if (!vocab.count(w)) return false;
    }
    return true;
  };
  CorpusSplit s = split_corpus(u, 10, 0.25, 2);
  for (const auto& d : s.forget_demos) CHECK(covered(d.query));
  for (const auto& d : s.retain_demos) CHECK(covered(d.response));
  for (const auto& d : s.test_demos) CHECK((covered(d.query) && covered(d.response)));
  DiversityConfig div;
  div.paraphrase_depth = 2;
  div.difficulty_levels = 3;
  for (const auto& t : u.tools) {
    for (const auto& d : sample_shadow_set(u, t.id, 12, div, 9).samples) {
      CHECK((covered(d.query) && covered(d.response)));
    }
  }
  for (const auto& t : u.general_tasks) CHECK((covered(t.query) && covered(t.answer)));
  for (const auto& t : u.general_heldout) CHECK((covered(t.query) && covered(t.answer)));
  for (const auto& t : u.tools) CHECK(covered(t.doc));
}

TEST_CASE("call grammar round-trips") {
  auto tokens = render_call("add", {13, 4}, 17);
  ParsedCall call;
  REQUIRE(parse_call(tokens, &call));
  CHECK(call.name == "add");
  CHECK(call.args == std::vector<int>{13, 4});
  CHECK(call.result == 17);

  auto neg = render_call("sub", {3, 40}, -37);
  REQUIRE(parse_call(neg, &call));
  CHECK(call.result == -37);

  CHECK_FALSE(parse_call({"CALL", "add", "(", "3"}, nullptr));
  CHECK_FALSE(parse_call({"hello", "world"}, nullptr));
  CHECK_FALSE(parse_call({}, nullptr));
}

TEST_SUITE_END();
