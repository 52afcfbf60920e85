#pragma once

// Binary checkpoints: magic, format version, a JSON header (config, config
// hash, parameter table, optimizer step) and the raw little-endian
// column-major values of every parameter followed by the Adam moments.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "form2seq/seqmodels.hpp"

namespace form2seq {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'F', '2', 'S', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>)
    return "float32";
  else if constexpr (std::is_same_v<T, double>)
    return "float64";
  else
    static_assert(sizeof(T) == 0, "unsupported checkpoint dtype");
}

namespace detail {

template <class V>
void put(std::string& out, const V& v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}
  void read(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_)
      throw CheckpointError(where_ + ": truncated (wanted " + std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()) + ")");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <class V>
  V get() {
    V v;
    read(&v, sizeof(V));
    return v;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes parameters, optimizer state and config to bytes. `meta` is
/// stored verbatim in the header.
template <class T>
std::string checkpoint_bytes(const nn::Parameters<T>& params, const ModelConfig& cfg, const json& meta = json()) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<T>();
  header["config"] = to_json(cfg);
  header["config_hash"] = config_hash(cfg);
  header["optimizer_step"] = params.step;
  json table = json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    table.push_back({{"name", params.name(i)}, {"shape", {params.value(i).rows(), params.value(i).cols()}}});
  header["params"] = table;
  if (!meta.is_null()) header["meta"] = meta;
  const std::string h = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  auto raw = [&](const nn::Mat<T>& m) {
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(T));
  };
  for (std::size_t i = 0; i < params.size(); ++i) raw(params.value(i));
  for (std::size_t i = 0; i < params.size(); ++i) raw(params.moments()[i].m);
  for (std::size_t i = 0; i < params.size(); ++i) raw(params.moments()[i].v);
  return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const nn::Parameters<T>& params, const ModelConfig& cfg,
                     const json& meta = json()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
  const std::string bytes = checkpoint_bytes(params, cfg, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(path.string() + ": write failed");
}

struct CheckpointHeader {
  json header;
  ModelConfig config;
};

namespace detail {

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline CheckpointHeader read_header(Reader& r, const std::string& where) {
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError(where + ": not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(where + ": unsupported format version " + std::to_string(version));
  const auto len = r.get<std::uint64_t>();
  if (len > (1ull << 30)) throw CheckpointError(where + ": implausible header length");
  std::string h(static_cast<std::size_t>(len), '\0');
  r.read(h.data(), h.size());
  CheckpointHeader out;
  try {
    out.header = json::parse(h);
    out.config = model_config_from_json(out.header.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(where + ": bad header: " + e.what());
  }
  if (out.header.value("config_hash", std::string()) != config_hash(out.config))
    throw CheckpointError(where + ": config hash does not match the stored config");
  return out;
}

}  // namespace detail

/// Reads just the header (config and metadata).
inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const std::string bytes = detail::slurp(path);
  detail::Reader r(bytes, path.string());
  return detail::read_header(r, path.string());
}

/// Fills `params` (already built for the expected config) from a checkpoint.
/// Refuses when the stored config hash differs from `expected`.
template <class T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, nn::Parameters<T>& params, const ModelConfig& expected) {
  const std::string where = path.string();
  const std::string bytes = detail::slurp(path);
  detail::Reader r(bytes, where);
  CheckpointHeader h = detail::read_header(r, where);
  if (h.header.value("config_hash", std::string()) != config_hash(expected))
    throw CheckpointError(where + ": config hash " + h.header.value("config_hash", std::string()) +
                          " does not match the requested model (" + config_hash(expected) + ")");
  if (h.header.value("dtype", std::string()) != dtype_name<T>())
    throw CheckpointError(where + ": stored dtype " + h.header.value("dtype", std::string()) + ", expected " +
                          dtype_name<T>());
  const json& table = h.header.at("params");
  if (table.size() != params.size()) throw CheckpointError(where + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = table[i];
    if (e.at("name").get<std::string>() != params.name(i) ||
        e.at("shape")[0].get<nn::Index>() != params.value(i).rows() ||
        e.at("shape")[1].get<nn::Index>() != params.value(i).cols())
      throw CheckpointError(where + ": parameter table mismatch at " + params.name(i));
  }
  auto raw = [&](nn::Mat<T>& m) { r.read(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T)); };
  for (std::size_t i = 0; i < params.size(); ++i) raw(params.value(i));
  for (std::size_t i = 0; i < params.size(); ++i) raw(params.moments()[i].m);
  for (std::size_t i = 0; i < params.size(); ++i) raw(params.moments()[i].v);
  if (!r.at_end()) throw CheckpointError(where + ": trailing bytes after parameter data");
  params.step = h.header.value("optimizer_step", std::int64_t{0});
  return h;
}

/// Builds the model described by the checkpoint header and loads it.
template <class T>
Form2SeqModel<T> load_model(const std::filesystem::path& path, json* meta = nullptr) {
  const auto h = read_checkpoint_header(path);
  Form2SeqModel<T> model(h.config);
  load_checkpoint(path, model.params(), h.config);
  if (meta) *meta = h.header.value("meta", json());
  return model;
}

}  // namespace form2seq
