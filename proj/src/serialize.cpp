#include "ipreid/serialize.hpp"

#include <cstring>
#include <fstream>

namespace ipreid {

namespace {
constexpr char kMagic[8] = {'I', 'P', 'A', 'R', 'C', 'H', '0', '\n'};
}

bool Archive::has_blob(const std::string& name) const {
  for (const auto& [n, _] : blobs)
    if (n == name) return true;
  return false;
}

const std::vector<Scalar>& Archive::blob(const std::string& name) const {
  for (const auto& [n, d] : blobs)
    if (n == name) return d;
  throw IoError("archive blob not found: " + name);
}

void Archive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["meta"] = meta;
  auto& table = header["blobs"] = nlohmann::json::array();
  for (const auto& [name, data] : blobs) {
    table.push_back({{"name", name}, {"count", data.size()}});
  }
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [_, data] : blobs) {
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(Scalar)));
  }
  if (!f) throw IoError("write failed: " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw IoError("not an archive file: " + path.string());
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f || hlen > (1ULL << 30)) throw IoError("corrupt archive header: " + path.string());
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw IoError("corrupt archive meta: " + path.string());
  std::uint32_t version = header.value("format_version", 0u);
  if (version != kFormatVersion)
    throw IoError("archive format version mismatch: found " + std::to_string(version) +
                  ", expected " + std::to_string(kFormatVersion));
  Archive a;
  a.meta = header["meta"];
  for (const auto& entry : header["blobs"]) {
    std::string name = entry.at("name").get<std::string>();
    std::size_t count = entry.at("count").get<std::size_t>();
    std::vector<Scalar> data(count);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(count * sizeof(Scalar)));
    if (!f) throw IoError("truncated archive blob '" + name + "': " + path.string());
    a.blobs.emplace_back(std::move(name), std::move(data));
  }
  return a;
}

}  // namespace ipreid
