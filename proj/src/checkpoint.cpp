#include "chemflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace chemflow {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'F', 'L', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

const Mat& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, m] : arrays)
    if (n == name) return m;
  throw IoError("checkpoint has no array '" + name + "'");
}

void Checkpoint::add_net(const std::string& prefix, const diffnet::DenseNet& net) {
  header["nets"][prefix] = net.architecture();
  auto copy = net;
  for (const auto& p : copy.parameters()) add(prefix + "/" + p.name, p.value);
}

diffnet::DenseNet Checkpoint::net(const std::string& prefix) const {
  if (!header.contains("nets") || !header["nets"].contains(prefix))
    throw IoError("checkpoint has no network '" + prefix + "'");
  auto net = diffnet::DenseNet::from_architecture(header["nets"][prefix]);
  for (auto& p : net.parameters()) {
    const Mat& m = array(prefix + "/" + p.name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw IoError("shape mismatch for " + prefix + "/" + p.name);
    p.value = m;
  }
  return net;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header = ckpt.header;
  header["schema_version"] = kCheckpointSchemaVersion;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.arrays) index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["arrays"] = index;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 8);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : ckpt.arrays)
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not a checkpoint");
  const std::uint64_t len = get_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (ckpt.header.value("schema_version", 0) != kCheckpointSchemaVersion)
    throw IoError("unsupported checkpoint schema version");
  for (const auto& entry : ckpt.header.at("arrays")) {
    Mat m(entry.at("rows").get<Eigen::Index>(), entry.at("cols").get<Eigen::Index>());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(get_u64(in));
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(m));
  }
  ckpt.header.erase("arrays");
  return ckpt;
}

}  // namespace chemflow
