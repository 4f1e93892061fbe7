#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tulab/model.hpp"
#include "tulab/worldgen.hpp"

namespace tulab {

// Checkpoint file: magic, format version, JSON header (config, provenance,
// lineage), then the raw little-endian float64 parameter payload.
inline constexpr uint32_t kCheckpointFormatVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Line-delimited demonstration records:
// {"tool_id":..,"template_id":..,"query_tokens":[..],"response_tokens":[..]}
void save_demos(const std::vector<Demonstration>& demos, const std::filesystem::path& path);
std::vector<Demonstration> load_demos(const std::filesystem::path& path);

std::string universe_to_json(const ToolUniverse& universe);
ToolUniverse universe_from_json(const std::string& text);
void save_universe(const ToolUniverse& universe, const std::filesystem::path& path);
ToolUniverse load_universe(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace tulab
