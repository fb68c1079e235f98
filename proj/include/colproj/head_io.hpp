#pragma once

// Head file format.
//
//   line 1     : JSON header object, terminated by '\n'
//                {"format":"colproj-head","version":1,"config":{...},
//                 "config_hash":"<16 hex>","seed":N,"tensors":[{name,role,rows,cols}...],
//                 "metadata":{...}}
//   then, for each tensor in declaration order:
//                u64 rows, u64 cols, rows*cols f64 values, all little-endian.
//
// Round trips are bit-exact.

#include <filesystem>
#include <string>
#include <string_view>

#include "colproj/errors.hpp"
#include "colproj/head.hpp"
#include "json.hpp"

namespace colproj {

inline constexpr int kHeadFormatVersion = 1;

nlohmann::json head_config_to_json(const HeadConfig& c);
HeadConfig head_config_from_json(const nlohmann::json& j);

struct HeadFile {
  HeadParams params;
  nlohmann::json metadata;
};

/// Raised when a head file was produced for a different configuration.
class ConfigMismatchError : public Error {
 public:
  explicit ConfigMismatchError(const std::string& what) : Error("config-mismatch", what) {}
};

std::string serialize_head(const HeadParams& params,
                           const nlohmann::json& metadata = nlohmann::json::object());
/// Throws FormatError (with byte offset) on corrupt, truncated or
/// version-mismatched payloads.
HeadFile deserialize_head(std::string_view bytes);
/// As above, and throws ConfigMismatchError unless the stored config hash
/// equals `expected.hash()`.
HeadFile deserialize_head(std::string_view bytes, const HeadConfig& expected);

void save_head(const std::filesystem::path& path, const HeadParams& params,
               const nlohmann::json& metadata = nlohmann::json::object());
HeadFile load_head(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace colproj
