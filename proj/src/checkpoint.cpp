#include "rp3d/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rp3d {

namespace {

constexpr char kMagic[8] = {'R', 'P', '3', 'D', 'C', 'K', 'P', '1'};

long long shape_count(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("checkpoint shapes need positive dims");
    n *= d;
  }
  return n;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const CheckpointEntry& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

double round_trip_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> round_trip_f32(std::vector<double> v) {
  for (double& x : v) x = round_trip_f32(x);
  return v;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  nlohmann::json jentries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const CheckpointEntry& e : ckpt.entries) {
    long long count = shape_count(e.shape);
    if (count != static_cast<long long>(e.values.size()))
      throw std::invalid_argument("entry '" + e.name + "' holds " +
                                  std::to_string(e.values.size()) + " values but its shape wants " +
                                  std::to_string(count));
    jentries.push_back(
        {{"name", e.name}, {"shape", e.shape}, {"offset", offset}, {"count", count}});
    offset += static_cast<std::uint64_t>(count);
  }
  header["entries"] = std::move(jentries);
  std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(kMagic, sizeof(kMagic));
  std::uint64_t hlen = htext.size();
  unsigned char lenbytes[8];
  for (int i = 0; i < 8; ++i) lenbytes[i] = static_cast<unsigned char>((hlen >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(lenbytes), 8);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const CheckpointEntry& e : ckpt.entries) {
    std::vector<float> payload(e.values.size());
    for (std::size_t i = 0; i < e.values.size(); ++i)
      payload[i] = static_cast<float>(e.values[i]);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint file (bad magic)");
  unsigned char lenbytes[8];
  if (!f.read(reinterpret_cast<char*>(lenbytes), 8))
    throw std::runtime_error("'" + path + "' is truncated before the header length");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(lenbytes[i]) << (8 * i);
  if (hlen > (1ULL << 30)) throw std::runtime_error("checkpoint header length is implausible");
  std::string htext(hlen, '\0');
  if (!f.read(htext.data(), static_cast<std::streamsize>(hlen)))
    throw std::runtime_error("'" + path + "' is truncated inside the header");

  Checkpoint ckpt;
  std::uint64_t total = 0;
  try {
    nlohmann::json header = nlohmann::json::parse(htext);
    ckpt.meta = header.at("meta");
    for (const nlohmann::json& je : header.at("entries")) {
      CheckpointEntry e;
      e.name = je.at("name").get<std::string>();
      e.shape = je.at("shape").get<std::vector<int>>();
      std::uint64_t offset = je.at("offset").get<std::uint64_t>();
      std::uint64_t count = je.at("count").get<std::uint64_t>();
      if (offset != total || count != static_cast<std::uint64_t>(shape_count(e.shape)))
        throw std::runtime_error("entry '" + e.name + "' has inconsistent offset or count");
      total += count;
      e.values.resize(count);
      ckpt.entries.push_back(std::move(e));
    }
  } catch (const std::exception& ex) {
    throw std::runtime_error("checkpoint header of '" + path + "' is malformed: " + ex.what());
  }

  std::vector<float> payload(total);
  if (!f.read(reinterpret_cast<char*>(payload.data()),
              static_cast<std::streamsize>(total * sizeof(float))))
    throw std::runtime_error("'" + path + "' payload is truncated (wanted " +
                             std::to_string(total) + " float32 values)");
  char extra;
  if (f.read(&extra, 1))
    throw std::runtime_error("'" + path + "' has trailing bytes after the payload");
  std::size_t pos = 0;
  for (CheckpointEntry& e : ckpt.entries)
    for (double& v : e.values) v = static_cast<double>(payload[pos++]);
  return ckpt;
}

}  // namespace rp3d
