#pragma once

// Checkpoint directory: manifest.json (config hash, stage, epoch, rng state,
// per-section hashes, freeze flags and provenance), tensors.bin (named
// little-endian f64 tensors grouped by section) and vocab.json.

#include <bit>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "json.hpp"

#include "llalign/errors.hpp"
#include "llalign/hash.hpp"
#include "llalign/model.hpp"

namespace llalign {

inline constexpr char kCheckpointMagic[4] = {'L', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Sections in blob order. The stage-0 classifier head is not saved.
inline constexpr std::array<ParamGroup, 8> kCheckpointSections = {
    ParamGroup::kEncoder, ParamGroup::kVat,    ParamGroup::kQueries, ParamGroup::kVpe,
    ParamGroup::kProjection, ParamGroup::kLmBase, ParamGroup::kAdapter, ParamGroup::kBoxHead};

struct CheckpointInfo {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string stage;
  int epoch = 0;
  /// Seed of the sample-order stream for the next epoch.
  std::uint64_t rng_state = 0;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class BlobReader {
 public:
  explicit BlobReader(std::string_view data) : data_(data) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError("checkpoint blob is truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialized tensors of one section, in parameter creation order.
inline std::string section_bytes(const ParamStore& ps, ParamGroup g) {
  std::string out;
  for (const auto& p : ps.all()) {
    if (p.group != g) continue;
    const Matrix& m = p.var.value();
    detail::put_str(out, p.name);
    detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  return out;
}

inline std::string tensor_blob(const ParamStore& ps) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(kCheckpointSections.size()));
  for (auto g : kCheckpointSections) {
    const auto body = section_bytes(ps, g);
    detail::put_str(out, std::string(group_name(g)));
    detail::put_u64(out, body.size());
    out += body;
  }
  return out;
}

inline nlohmann::json checkpoint_manifest(const Model& model, const CheckpointInfo& info, const std::string& blob) {
  nlohmann::json j;
  j["format"] = "llalign-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config_hash"] = info.config_hash;
  j["seed"] = info.seed;
  j["stage"] = info.stage;
  j["epoch"] = info.epoch;
  j["rng_state"] = hex64(info.rng_state);
  j["blob_hash"] = hex64(fnv1a64(blob));
  nlohmann::json sections = nlohmann::json::object();
  for (auto g : kCheckpointSections) {
    sections[std::string(group_name(g))] = {{"hash", hex64(fnv1a64(section_bytes(model.params(), g)))},
                                            {"values", model.params().count(g)}};
  }
  j["sections"] = sections;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.params().all()) {
    if (p.group == ParamGroup::kEncoderHead) continue;
    params.push_back({{"name", p.name},
                      {"section", group_name(p.group)},
                      {"rows", p.var.rows()},
                      {"cols", p.var.cols()},
                      {"frozen", p.frozen},
                      {"provenance", p.provenance}});
  }
  j["params"] = params;
  return j;
}

inline void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  const auto blob = tensor_blob(model.params());
  write_file((dir / "tensors.bin").string(), blob);
  write_file((dir / "manifest.json").string(), checkpoint_manifest(model, info, blob).dump(2) + "\n");
  write_file((dir / "vocab.json").string(), model.vocab().to_json().dump(2) + "\n");
}

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw DataError("no checkpoint at " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path.string()));
    if (j.at("format") != "llalign-checkpoint") throw DataError("not a checkpoint manifest: " + path.string());
    CheckpointInfo info;
    info.config_hash = j.at("config_hash").get<std::string>();
    info.seed = j.at("seed").get<std::uint64_t>();
    info.stage = j.at("stage").get<std::string>();
    info.epoch = j.at("epoch").get<int>();
    info.rng_state = std::stoull(j.at("rng_state").get<std::string>(), nullptr, 16);
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
}

inline Vocab read_checkpoint_vocab(const std::filesystem::path& dir) {
  try {
    return Vocab::from_json(nlohmann::json::parse(read_file((dir / "vocab.json").string())));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint vocabulary: " + std::string(e.what()));
  }
}

/// Loads tensor values, freeze flags and provenance into a model built from
/// the same config. Every saved tensor must exist with the same shape and
/// every model tensor (except the stage-0 head) must be present.
inline CheckpointInfo load_checkpoint(const std::filesystem::path& dir, Model& model) {
  const auto info = read_checkpoint_info(dir);
  if (!(read_checkpoint_vocab(dir) == model.vocab())) throw DataError("checkpoint vocabulary differs from the model's");
  const auto blob = read_file((dir / "tensors.bin").string());
  const auto manifest = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
  if (manifest.at("blob_hash").get<std::string>() != hex64(fnv1a64(blob))) {
    throw DataError("checkpoint tensors do not match the manifest hash");
  }
  detail::BlobReader r(blob);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw DataError("bad checkpoint magic");
  if (r.u32() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  auto& ps = model.params();
  std::set<std::string> seen;
  const auto sections = r.u32();
  for (std::uint32_t s = 0; s < sections; ++s) {
    r.str();
    const auto len = r.u64();
    detail::BlobReader sec(r.bytes(len));
    while (!sec.done()) {
      const auto name = sec.str();
      const auto rows = static_cast<Eigen::Index>(sec.u64()), cols = static_cast<Eigen::Index>(sec.u64());
      if (!ps.contains(name)) throw DataError("checkpoint tensor " + name + " is not part of the model");
      auto& p = ps.get(name);
      if (p.var.rows() != rows || p.var.cols() != cols) throw DataError("shape mismatch for tensor " + name);
      Matrix& m = p.var.mutable_value();
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(sec.u64());
      seen.insert(name);
    }
  }
  if (!r.done()) throw DataError("trailing bytes in checkpoint blob");
  for (const auto& p : ps.all()) {
    if (p.group != ParamGroup::kEncoderHead && !seen.count(p.name)) {
      throw DataError("checkpoint is missing tensor " + p.name);
    }
  }
  for (const auto& e : manifest.at("params")) {
    auto& p = ps.get(e.at("name").get<std::string>());
    p.frozen = e.at("frozen").get<bool>();
    p.var.set_requires_grad(!p.frozen);
    p.provenance = e.at("provenance").get<std::string>();
  }
  return info;
}

}  // namespace llalign
