#include "lesdet/serialize.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lesdet/error.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order and must be little-endian");

namespace {

constexpr std::size_t kDigestBytes = 32;

std::array<unsigned char, kDigestBytes> digest(std::string_view bytes) {
  std::array<unsigned char, kDigestBytes> out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != kDigestBytes) {
    throw StateError("SHA-256 digest failed");
  }
  return out;
}

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(std::string_view bytes, std::size_t at) {
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + at, 8);
  return v;
}

Shape parse_shape(const Json& j) {
  Shape s;
  for (const auto& d : j) s.push_back(d.get<std::size_t>());
  return s;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint of kind '" + kind + "' has no tensor '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& c) {
  Json header;
  header["kind"] = c.kind;
  header["meta"] = c.meta;
  header["tensors"] = Json::array();
  for (const auto& [name, t] : c.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = header.dump();

  std::string out(kCheckpointMagic);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, t] : c.tensors) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size_bytes());
  }
  const auto d = digest(out);
  out.append(reinterpret_cast<const char*>(d.data()), d.size());
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const std::size_t fixed = kCheckpointMagic.size() + 8;
  if (bytes.size() < fixed + kDigestBytes || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a checkpoint file (bad magic or truncated)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - kDigestBytes);
  const auto expect = digest(body);
  if (std::memcmp(expect.data(), bytes.data() + body.size(), kDigestBytes) != 0) {
    throw FormatError("checkpoint digest mismatch (file corrupted or edited)");
  }
  const std::uint64_t header_len = get_u64(bytes, kCheckpointMagic.size());
  if (header_len > body.size() - fixed) throw FormatError("checkpoint header length out of range");

  Json header;
  try {
    header = Json::parse(body.substr(fixed, header_len));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  std::size_t at = fixed + header_len;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      Shape shape = parse_shape(entry.at("shape"));
      const std::size_t n = shape_size(shape);
      if (n * sizeof(float) > body.size() - at) throw FormatError("checkpoint payload truncated");
      std::vector<float> values(n);
      std::memcpy(values.data(), body.data() + at, n * sizeof(float));
      at += n * sizeof(float);
      c.tensors.emplace_back(entry.at("name").get<std::string>(),
                             Tensor(std::move(shape), std::move(values)));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("malformed tensor record: ") + e.what());
  }
  if (at != body.size()) throw FormatError("checkpoint has trailing payload bytes");
  return c;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(c));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

Json network_meta(const Network& net) {
  Json m;
  m["arch"] = net.arch();
  m["input_shape"] = net.input_shape();
  m["seed"] = net.seed();
  m["output_width"] = net.output_width();
  m["param_count"] = net.param_count();
  return m;
}

Network network_from_meta(const Json& meta) {
  try {
    const auto arch = meta.at("arch").get<std::string>();
    const Shape input = parse_shape(meta.at("input_shape"));
    const auto seed = meta.at("seed").get<std::uint64_t>();
    if (arch.rfind("detector", 0) == 0) {
      std::vector<std::size_t> channels;
      std::istringstream ss(arch.substr(std::string("detector").size()));
      std::string part;
      std::getline(ss, part, '-');  // leading empty field
      while (std::getline(ss, part, '-')) channels.push_back(std::stoul(part));
      return build_detector(seed, input, channels);
    }
    return build_substitute(arch, input, meta.at("output_width").get<int>(), seed);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("network description incomplete: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("network description invalid: ") + e.what());
  }
}

void network_to_checkpoint(const Network& net, Checkpoint& c, const std::string& prefix) {
  for (const auto& p : net.params()) c.tensors.emplace_back(prefix + p.name, p.value);
}

Network network_from_checkpoint(const Checkpoint& c, const Json& meta, const std::string& prefix) {
  Network net = network_from_meta(meta);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    Param& p = net.params()[i];
    const Tensor& stored = c.tensor(prefix + p.name);
    if (stored.shape() != p.value.shape()) {
      throw FormatError("tensor '" + p.name + "' has shape " + shape_string(stored.shape()) +
                        ", architecture expects " + shape_string(p.value.shape()));
    }
    p.value = stored;
  }
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path, const Json& extra_meta) {
  Checkpoint c;
  c.kind = "network";
  c.meta = extra_meta;
  c.meta["network"] = network_meta(net);
  network_to_checkpoint(net, c);
  write_checkpoint(c, path);
}

Network load_network(const std::filesystem::path& path, Json* meta_out) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != "network") {
    throw FormatError("'" + path.string() + "' holds a '" + c.kind + "', expected a network");
  }
  if (!c.meta.contains("network")) throw FormatError("network checkpoint lacks its description");
  Network net = network_from_checkpoint(c, c.meta["network"]);
  if (meta_out) *meta_out = c.meta;
  return net;
}

}  // namespace lesdet
