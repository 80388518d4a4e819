#include "cseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cseg/errors.hpp"

namespace cseg {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated checkpoint");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

std::uint64_t record_bytes(const Shape& s) { return 12 + 4 * s.size() + 4 * numel(s); }

}  // namespace

template <typename T>
void save_checkpoint(const std::string& file, Network<T>& net) {
  const auto state = net.state();
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : state) {
    manifest.push_back({{"path", p.path}, {"role", p.role}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += record_bytes(p.tensor.shape());
  }
  const std::string text = manifest.dump();
  std::ofstream os(file, std::ios::binary);
  if (!os) throw FormatError("cannot open " + file + " for writing");
  os.write(kArchiveMagic, 4);
  put_u32(os, kArchiveVersion);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : state) write_tensor(os, p.tensor);
  if (!os) throw FormatError("write failed for " + file);
}

Checkpoint read_checkpoint(const std::string& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot open " + file);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kArchiveMagic, 4) != 0) {
    throw FormatError(file + ": not a checkpoint archive");
  }
  const auto version = get_u32(is);
  if (version != kArchiveVersion) throw FormatError(file + ": unsupported archive version " + std::to_string(version));
  std::string text(get_u32(is), '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(text.size()))) throw FormatError(file + ": truncated manifest");
  Checkpoint ck;
  try {
    for (const auto& e : nlohmann::json::parse(text)) {
      ck.manifest.push_back({e.at("path").get<std::string>(), e.at("role").get<std::string>(),
                             e.at("shape").get<Shape>(), e.at("offset").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(file + ": bad manifest: " + ex.what());
  }
  std::uint64_t offset = 0;
  for (const auto& e : ck.manifest) {
    if (e.offset != offset) throw FormatError(file + ": manifest offset mismatch at " + e.path + "." + e.role);
    auto t = read_tensor(is);
    if (t.shape() != e.shape) throw FormatError(file + ": record shape differs from manifest at " + e.path);
    ck.tensors.push_back(std::move(t));
    offset += record_bytes(e.shape);
  }
  return ck;
}

template <typename T>
void load_checkpoint(const std::string& file, Network<T>& net) {
  const auto ck = read_checkpoint(file);
  auto state = net.state();
  if (ck.manifest.size() != state.size()) {
    throw FormatError(file + ": checkpoint has " + std::to_string(ck.manifest.size()) + " tensors, network has " +
                      std::to_string(state.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& e = ck.manifest[i];
    const auto& p = state[i];
    if (e.path != p.path || e.role != p.role || e.shape != p.tensor.shape()) {
      throw FormatError(file + ": entry " + std::to_string(i) + " is " + e.path + "." + e.role + " " +
                        to_string(e.shape) + ", network expects " + p.path + "." + p.role + " " +
                        to_string(p.tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto dst = state[i].tensor.data();
    const auto src = ck.tensors[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
}

template void save_checkpoint<float>(const std::string&, Network<float>&);
template void save_checkpoint<double>(const std::string&, Network<double>&);
template void load_checkpoint<float>(const std::string&, Network<float>&);
template void load_checkpoint<double>(const std::string&, Network<double>&);

}  // namespace cseg
