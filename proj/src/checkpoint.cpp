#include "gatevit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace gatevit {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'A', 'T', 'E', 'V', 'I', 'T', '1'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

Model Model::clone() const {
  Model m{config, backbone.clone(), std::nullopt};
  if (decision) {
    m.decision = DecisionParams<float>::zeros(config);
    copy_matching(*this, m);
  }
  return m;
}

void copy_matching(const Model& src, Model& dst) {
  std::map<std::string, nd::Tensor<float>> by_name;
  src.for_each([&](const std::string& n, const nd::Tensor<float>& t) { by_name.emplace(n, t); });
  dst.for_each([&](const std::string& n, nd::Tensor<float>& t) {
    auto it = by_name.find(n);
    if (it == by_name.end()) return;
    if (it->second.shape() != t.shape())
      throw ArtifactError("tensor " + n + ": shape " + shape_str(it->second.shape()) + " does not match " +
                          shape_str(t.shape()));
    auto d = t.data();
    auto s = it->second.data();
    std::copy(s.begin(), s.end(), d.begin());
  });
}

void save_checkpoint(const std::string& path, const Model& model, const json& metadata) {
  std::string payload;
  json index = json::array();
  model.for_each([&](const std::string& n, const nd::Tensor<float>& t) {
    index.push_back({{"name", n}, {"shape", t.shape()}, {"dtype", "float32"}, {"offset", payload.size()}});
    for (float v : t.data()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
  });
  json header = {{"format", 1},
                 {"model", to_json(model.config)},
                 {"has_decision", model.decision.has_value()},
                 {"tensors", index},
                 {"payload_bytes", payload.size()},
                 {"checksum", fnv1a(payload)},
                 {"metadata", metadata.is_null() ? json::object() : metadata}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t len = h.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += h;
  out += payload;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ArtifactError("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw ArtifactError("cannot write checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ArtifactError("cannot move checkpoint into " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  auto fail = [&](const std::string& why) { return ArtifactError("checkpoint " + path + ": " + why); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw fail("bad magic");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (len > bytes.size() - 16) throw fail("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw fail(std::string("unreadable header: ") + e.what());
  }
  const std::string payload = bytes.substr(16 + len);
  LoadedCheckpoint out;
  try {
    if (header.at("format").get<int>() != 1) throw fail("unsupported format version");
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) throw fail("payload size mismatch");
    if (fnv1a(payload) != header.at("checksum").get<std::uint64_t>()) throw fail("checksum mismatch");
    ModelConfig cfg = model_config_from_json(header.at("model"));
    cfg.validate();
    out.model.config = cfg;
    out.model.backbone = BackboneParams<float>::zeros(cfg);
    if (header.at("has_decision").get<bool>()) out.model.decision = DecisionParams<float>::zeros(cfg);
    out.metadata = header.at("metadata");
    std::map<std::string, json> index;
    for (const auto& e : header.at("tensors")) index.emplace(e.at("name").get<std::string>(), e);
    std::size_t seen = 0;
    out.model.for_each([&](const std::string& n, nd::Tensor<float>& t) {
      auto it = index.find(n);
      if (it == index.end()) throw fail("missing tensor " + n);
      if (it->second.at("shape").get<Shape>() != t.shape()) throw fail("tensor " + n + " has wrong shape");
      if (it->second.at("dtype").get<std::string>() != "float32") throw fail("tensor " + n + " has wrong dtype");
      const std::size_t off = it->second.at("offset").get<std::size_t>();
      if (off + 4 * t.size() > payload.size()) throw fail("tensor " + n + " exceeds payload");
      auto d = t.data();
      const auto* p = reinterpret_cast<const unsigned char*>(payload.data() + off);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      ++seen;
    });
    if (seen != index.size()) throw fail("unexpected extra tensors");
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw fail(std::string("invalid model config: ") + e.what());
  }
  return out;
}

}  // namespace gatevit
