#include "trajcast/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace trajcast {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'R', 'J', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t read_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  std::memcpy(&v, in.data() + pos, 8);
  return v;
}

json meta_to_json(const TrainingMetadata& m) {
  return json{{"epoch", m.epoch},
              {"seed", m.seed},
              {"lambda", m.lambda},
              {"horizon", m.horizon},
              {"use_anatomy", m.use_anatomy}};
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json tensors = json::array();
  std::size_t offset = 0;
  ckpt.params.for_each([&](const std::string& name, const Matrix& m) {
    const auto count = static_cast<std::size_t>(m.size());
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"offset", offset},
                       {"count", count}});
    offset += count;
  });
  const std::string header =
      json{{"net", to_json(ckpt.params.config)}, {"meta", meta_to_json(ckpt.meta)}, {"tensors", tensors}}
          .dump();

  std::string out(kMagic, sizeof(kMagic));
  append_u64(out, header.size());
  out += header;
  out.reserve(out.size() + offset * sizeof(double));
  ckpt.params.for_each([&](const std::string&, const Matrix& m) {
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  });
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError("not a trajcast checkpoint (bad magic)");
  }
  const std::uint64_t header_len = read_u64(bytes, 8);
  if (header_len > bytes.size() - 16) throw SchemaError("checkpoint header is truncated");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = 16 + header_len;
  const std::size_t payload_elems = (bytes.size() - payload) / sizeof(double);

  Checkpoint ckpt;
  try {
    ckpt.params = init_params(net_config_from_json(header.at("net")), 0);
    const json& meta = header.at("meta");
    ckpt.meta.epoch = meta.at("epoch").get<int>();
    ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.meta.lambda = meta.at("lambda").get<double>();
    ckpt.meta.horizon = meta.at("horizon").get<int>();
    ckpt.meta.use_anatomy = meta.at("use_anatomy").get<bool>();

    const json& tensors = header.at("tensors");
    std::size_t i = 0;
    ckpt.params.for_each([&](const std::string& name, Matrix& m) {
      if (i >= tensors.size()) throw SchemaError("checkpoint is missing tensor " + name);
      const json& t = tensors[i++];
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (t.at("name").get<std::string>() != name || rows != m.rows() || cols != m.cols() ||
          count != static_cast<std::size_t>(m.size())) {
        throw SchemaError("checkpoint tensor " + t.at("name").get<std::string>() +
                          " does not match the network layout at " + name);
      }
      if (offset + count > payload_elems) throw SchemaError("checkpoint payload is truncated");
      std::memcpy(m.data(), bytes.data() + payload + offset * sizeof(double), count * sizeof(double));
    });
    if (i != tensors.size()) throw SchemaError("checkpoint has unexpected extra tensors");
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("bad checkpoint network config: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace trajcast
