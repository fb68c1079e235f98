#include "colproj/head_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "colproj/errors.hpp"

namespace colproj {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  Reader(std::string_view bytes, std::size_t offset) : bytes_(bytes), pos_(offset) {}

  std::uint64_t u64(const std::string& what) {
    if (bytes_.size() - pos_ < 8) {
      throw FormatError("head file truncated at byte " + std::to_string(pos_) + " reading " +
                        what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_;
};

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

nlohmann::json head_config_to_json(const HeadConfig& c) {
  nlohmann::json j;
  j["input_dim"] = c.input_dim;
  j["output_dim"] = c.output_dim;
  j["depth"] = c.depth;
  j["family"] = to_string(c.family);
  j["activation"] = to_string(c.activation);
  j["gate"] = to_string(c.gate);
  j["rho"] = c.rho;
  j["residual"] = c.residual;
  j["bias"] = c.has_bias();
  j["alpha_init"] = c.alpha_init;
  return j;
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
  try {
    HeadConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.output_dim = j.at("output_dim").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.family = parse_head_family(j.at("family").get<std::string>());
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.gate = parse_activation(j.at("gate").get<std::string>());
    c.rho = j.at("rho").get<double>();
    c.residual = j.at("residual").get<bool>();
    c.bias = j.at("bias").get<bool>();
    c.alpha_init = j.at("alpha_init").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("head config: ") + e.what());
  }
}

std::string serialize_head(const HeadParams& params, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["format"] = "colproj-head";
  header["version"] = kHeadFormatVersion;
  header["config"] = head_config_to_json(params.config());
  header["config_hash"] = hex64(params.config().hash());
  header["seed"] = params.seed();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"role", to_string(t.role)},
                       {"rows", t.value.rows()},
                       {"cols", t.value.cols()}});
  }
  header["tensors"] = std::move(tensors);
  header["metadata"] = metadata;

  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& t : params.tensors()) {
    put_u64(out, t.value.rows());
    put_u64(out, t.value.cols());
    for (double v : t.value.values()) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

HeadFile deserialize_head(std::string_view bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) {
    throw FormatError("head file truncated at byte " + std::to_string(bytes.size()) +
                      ": missing header terminator");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("head header unreadable at byte " + std::to_string(e.byte) + ": " +
                      e.what());
  }
  if (!header.is_object() || header.value("format", "") != "colproj-head") {
    throw FormatError("not a head file (byte 0)");
  }
  const int version = header.value("version", -1);
  if (version != kHeadFormatVersion) {
    throw FormatError("unsupported head format version " + std::to_string(version) +
                      " at byte 0 (expected " + std::to_string(kHeadFormatVersion) + ")");
  }
  const HeadConfig config = head_config_from_json(header.at("config"));
  if (header.value("config_hash", "") != hex64(config.hash())) {
    throw FormatError("header config_hash does not match its config (byte 0)");
  }
  const HeadLayout layout = HeadLayout::for_config(config);

  Reader reader(bytes, nl + 1);
  std::vector<HeadTensor> tensors;
  for (const TensorSpec& spec : layout.tensors) {
    const std::size_t at = reader.pos();
    const std::uint64_t rows = reader.u64(spec.name + " rows");
    const std::uint64_t cols = reader.u64(spec.name + " cols");
    if (rows != spec.rows || cols != spec.cols) {
      throw FormatError("tensor '" + spec.name + "' at byte " + std::to_string(at) + " has shape " +
                        std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                        std::to_string(spec.rows) + "x" + std::to_string(spec.cols));
    }
    std::vector<double> values(rows * cols);
    for (double& v : values) {
      v = std::bit_cast<double>(reader.u64(spec.name + " values"));
    }
    tensors.push_back(HeadTensor{spec.name, spec.role, Matrix(rows, cols, std::move(values))});
  }
  if (!reader.at_end()) {
    throw FormatError("trailing bytes after last tensor at byte " + std::to_string(reader.pos()));
  }
  const auto seed = header.at("seed").get<std::uint64_t>();
  return HeadFile{HeadParams(config, seed, std::move(tensors)),
                  header.value("metadata", nlohmann::json::object())};
}

HeadFile deserialize_head(std::string_view bytes, const HeadConfig& expected) {
  HeadFile file = deserialize_head(bytes);
  if (file.params.config().hash() != expected.hash()) {
    throw ConfigMismatchError("head file config " + file.params.config().canonical() +
                              " does not match expected " + expected.canonical());
  }
  return file;
}

void save_head(const std::filesystem::path& path, const HeadParams& params,
               const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("io", "cannot open '" + path.string() + "' for writing");
  }
  const std::string bytes = serialize_head(params, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error("io", "failed writing '" + path.string() + "'");
  }
}

HeadFile load_head(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("io", "cannot open '" + path.string() + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_head(ss.str());
}

}  // namespace colproj
