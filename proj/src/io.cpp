#include "tulab/io.hpp"

#include <bit>
#include <fstream>

#include "json.hpp"

namespace tulab {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

constexpr char kMagic[8] = {'T', 'U', 'L', 'A', 'B', 'C', 'K', 'P'};

json demo_to_json(const Demonstration& d) {
  return json{{"tool_id", d.tool_id},
              {"template_id", d.template_id},
              {"query_tokens", d.query},
              {"response_tokens", d.response}};
}

Demonstration demo_from_json(const json& j) {
  Demonstration d;
  d.tool_id = j.at("tool_id").get<int>();
  d.template_id = j.at("template_id").get<int>();
  d.query = j.at("query_tokens").get<std::vector<std::string>>();
  d.response = j.at("response_tokens").get<std::vector<std::string>>();
  return d;
}

json general_task_to_json(const GeneralTask& t) {
  return json{{"query", t.query},
              {"answer", t.answer},
              {"fact_id", t.fact_id},
              {"template_id", t.template_id},
              {"heldout", t.heldout}};
}

GeneralTask general_task_from_json(const json& j) {
  GeneralTask t;
  t.query = j.at("query").get<std::vector<std::string>>();
  t.answer = j.at("answer").get<std::vector<std::string>>();
  t.fact_id = j.at("fact_id").get<int>();
  t.template_id = j.at("template_id").get<int>();
  t.heldout = j.at("heldout").get<bool>();
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  validate_checkpoint(ckpt);
  json lineage = json::array();
  for (const auto& e : ckpt.lineage) lineage.push_back({{"op", e.op}, {"params", e.params}});
  json header{{"config",
               {{"vocab_size", ckpt.config.vocab_size},
                {"context_len", ckpt.config.context_len},
                {"d_model", ckpt.config.d_model},
                {"n_layers", ckpt.config.n_layers},
                {"n_heads", ckpt.config.n_heads},
                {"seed", ckpt.config.seed}}},
              {"provenance", to_string(ckpt.provenance)},
              {"lineage", lineage}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint file for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const uint32_t version = kCheckpointFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(reinterpret_cast<const char*>(ckpt.params.data()),
            static_cast<std::streamsize>(ckpt.params.size() * sizeof(double)));
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("checkpoint file not found: " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InvalidArgument("not a checkpoint file: " + path.string());
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCheckpointFormatVersion) {
    throw InvalidArgument("unsupported checkpoint format version " + std::to_string(version));
  }
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw InvalidArgument("truncated checkpoint header: " + path.string());

  json header = json::parse(header_text);
  Checkpoint ckpt;
  const auto& c = header.at("config");
  ckpt.config.vocab_size = c.at("vocab_size").get<int>();
  ckpt.config.context_len = c.at("context_len").get<int>();
  ckpt.config.d_model = c.at("d_model").get<int>();
  ckpt.config.n_layers = c.at("n_layers").get<int>();
  ckpt.config.n_heads = c.at("n_heads").get<int>();
  ckpt.config.seed = c.at("seed").get<uint64_t>();
  ckpt.provenance = provenance_from_string(header.at("provenance").get<std::string>());
  for (const auto& e : header.at("lineage")) {
    ckpt.lineage.push_back({e.at("op").get<std::string>(), e.at("params").get<std::string>()});
  }

  ckpt.params.resize(static_cast<size_t>(ckpt.config.param_count()));
  in.read(reinterpret_cast<char*>(ckpt.params.data()),
          static_cast<std::streamsize>(ckpt.params.size() * sizeof(double)));
  if (!in || in.gcount() !=
                 static_cast<std::streamsize>(ckpt.params.size() * sizeof(double))) {
    throw InvalidArgument("truncated checkpoint payload: " + path.string());
  }
  validate_checkpoint(ckpt);
  return ckpt;
}

void save_demos(const std::vector<Demonstration>& demos, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open corpus file for writing: " + path.string());
  for (const auto& d : demos) out << demo_to_json(d).dump() << '\n';
}

std::vector<Demonstration> load_demos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("corpus file not found: " + path.string());
  std::vector<Demonstration> demos;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    demos.push_back(demo_from_json(json::parse(line)));
  }
  return demos;
}

std::string universe_to_json(const ToolUniverse& universe) {
  json tools = json::array();
  for (const auto& t : universe.tools) {
    json sem;
    switch (t.semantics.kind) {
      case ToolSemantics::Kind::arith_op:
        sem = {{"kind", "arith_op"}, {"op", t.semantics.op}};
        break;
      case ToolSemantics::Kind::affine:
        sem = {{"kind", "affine"}, {"a", t.semantics.a}, {"b", t.semantics.b},
               {"c", t.semantics.c}};
        break;
      case ToolSemantics::Kind::table:
        sem = {{"kind", "table"}, {"table", t.semantics.table}};
        break;
    }
    tools.push_back({{"id", t.id},
                     {"name", t.name},
                     {"family", to_string(t.family)},
                     {"arity", t.arity},
                     {"semantics", sem},
                     {"doc", t.doc},
                     {"arg_pool", t.arg_pool}});
  }
  json general = json::array(), heldout = json::array();
  for (const auto& t : universe.general_tasks) general.push_back(general_task_to_json(t));
  for (const auto& t : universe.general_heldout) heldout.push_back(general_task_to_json(t));
  json j{{"schema_version", 1},
         {"seed", universe.seed},
         {"tools", tools},
         {"vocab", universe.vocab},
         {"general_tasks", general},
         {"general_heldout", heldout}};
  return j.dump(2);
}

ToolUniverse universe_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.at("schema_version").get<int>() != 1) {
    throw InvalidArgument("unsupported universe schema version");
  }
  ToolUniverse u;
  u.seed = j.at("seed").get<uint64_t>();
  for (const auto& tj : j.at("tools")) {
    Tool t;
    t.id = tj.at("id").get<int>();
    t.name = tj.at("name").get<std::string>();
    t.family = tool_family_from_string(tj.at("family").get<std::string>());
    t.arity = tj.at("arity").get<int>();
    t.doc = tj.at("doc").get<std::vector<std::string>>();
    t.arg_pool = tj.at("arg_pool").get<std::vector<std::vector<int>>>();
    const auto& sem = tj.at("semantics");
    const std::string kind = sem.at("kind").get<std::string>();
    if (kind == "arith_op") {
      t.semantics.kind = ToolSemantics::Kind::arith_op;
      t.semantics.op = sem.at("op").get<int>();
    } else if (kind == "affine") {
      t.semantics.kind = ToolSemantics::Kind::affine;
      t.semantics.a = sem.at("a").get<long long>();
      t.semantics.b = sem.at("b").get<long long>();
      t.semantics.c = sem.at("c").get<long long>();
    } else if (kind == "table") {
      t.semantics.kind = ToolSemantics::Kind::table;
      t.semantics.table = sem.at("table").get<std::vector<int>>();
    } else {
      throw InvalidArgument("unknown semantics kind: " + kind);
    }
    u.tools.push_back(std::move(t));
  }
  u.vocab = j.at("vocab").get<std::vector<std::string>>();
  for (const auto& tj : j.at("general_tasks")) u.general_tasks.push_back(general_task_from_json(tj));
  for (const auto& tj : j.at("general_heldout"))
    u.general_heldout.push_back(general_task_from_json(tj));
  return u;
}

void save_universe(const ToolUniverse& universe, const std::filesystem::path& path) {
  write_text_file(path, universe_to_json(universe));
}

ToolUniverse load_universe(const std::filesystem::path& path) {
  return universe_from_json(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("file not found: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path.string());
  out << text;
  if (!out) throw Error("failed writing file: " + path.string());
}

}  // namespace tulab
