#include "sillnet/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace sillnet {

using json = nlohmann::json;

namespace {

// Minimal deterministic ustar writer. Every metadata field that tar allows to
// vary (mtime, uid, uname, ...) is pinned so identical payloads produce
// identical archives.

constexpr std::size_t kBlock = 512;

void write_entry(std::ofstream& out, const std::string& name, const char* data,
                 std::size_t size) {
  if (name.size() >= 100) throw std::runtime_error("checkpoint entry name too long: " + name);
  char hdr[kBlock];
  std::memset(hdr, 0, kBlock);
  std::memcpy(hdr, name.c_str(), name.size());
  std::memcpy(hdr + 100, "0000644", 8);   // mode
  std::memcpy(hdr + 108, "0000000", 8);   // uid
  std::memcpy(hdr + 116, "0000000", 8);   // gid
  char sizebuf[13];
  std::snprintf(sizebuf, sizeof(sizebuf), "%011lo", static_cast<unsigned long>(size));
  std::memcpy(hdr + 124, sizebuf, 12);
  std::memcpy(hdr + 136, "00000000000", 12);  // mtime pinned to epoch
  std::memset(hdr + 148, ' ', 8);             // checksum placeholder
  hdr[156] = '0';                             // regular file
  std::memcpy(hdr + 257, "ustar", 6);
  std::memcpy(hdr + 263, "00", 2);
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) sum += static_cast<unsigned char>(hdr[i]);
  char sumbuf[8];
  std::snprintf(sumbuf, sizeof(sumbuf), "%06o", sum);
  std::memcpy(hdr + 148, sumbuf, 7);
  hdr[155] = ' ';
  out.write(hdr, kBlock);
  out.write(data, static_cast<std::streamsize>(size));
  const std::size_t rem = size % kBlock;
  if (rem != 0) {
    char pad[kBlock] = {0};
    out.write(pad, static_cast<std::streamsize>(kBlock - rem));
  }
}

std::map<std::string, std::vector<char>> read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file " + path);
  std::map<std::string, std::vector<char>> entries;
  char hdr[kBlock];
  while (in.read(hdr, kBlock)) {
    bool all_zero = true;
    for (std::size_t i = 0; i < kBlock; ++i)
      if (hdr[i] != 0) {
        all_zero = false;
        break;
      }
    if (all_zero) break;  // end-of-archive marker
    char namebuf[101] = {0};
    std::memcpy(namebuf, hdr, 100);
    char sizebuf[13] = {0};
    std::memcpy(sizebuf, hdr + 124, 12);
    const std::size_t size = std::strtoul(sizebuf, nullptr, 8);
    std::vector<char> data(size);
    if (size > 0 && !in.read(data.data(), static_cast<std::streamsize>(size)))
      throw std::runtime_error("truncated checkpoint entry " + std::string(namebuf) + " in " +
                               path);
    const std::size_t rem = size % kBlock;
    if (rem != 0) in.seekg(static_cast<std::streamoff>(kBlock - rem), std::ios::cur);
    entries[namebuf] = std::move(data);
  }
  return entries;
}

std::vector<char> tensor_bytes(const Tensor& t) {
  std::vector<char> out(t.size() * sizeof(float));
  std::memcpy(out.data(), t.data(), out.size());
  return out;
}

}  // namespace

void save_checkpoint(const SillModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint file " + path);

  json cfg;
  cfg["C"] = model.cfg.C;
  cfg["image_size"] = model.cfg.image_size;
  cfg["M"] = model.cfg.M;
  cfg["seed"] = model.cfg.seed;
  cfg["version"] = model.cfg.version;
  cfg["classifier_trained"] = model.classifier_trained;
  const std::string cfg_str = cfg.dump(2);
  write_entry(out, "config.json", cfg_str.data(), cfg_str.size());

  auto& mut = const_cast<SillModel&>(model);  // param refs are non-const views
  for (const auto& p : mut.all_params()) {
    const auto bytes = tensor_bytes(*p.value);
    write_entry(out, p.name, bytes.data(), bytes.size());
  }
  for (const auto& b : mut.all_buffers()) {
    const auto bytes = tensor_bytes(*b.value);
    write_entry(out, b.name, bytes.data(), bytes.size());
  }

  char pad[kBlock] = {0};
  out.write(pad, kBlock);
  out.write(pad, kBlock);
  if (!out) throw std::runtime_error("short write while saving checkpoint to " + path);
}

SillModel load_checkpoint(const std::string& path) {
  auto entries = read_archive(path);
  auto cfg_it = entries.find("config.json");
  if (cfg_it == entries.end())
    throw std::runtime_error("checkpoint " + path + " has no config.json entry");
  json cfg;
  try {
    cfg = json::parse(cfg_it->second.begin(), cfg_it->second.end());
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint " + path + " has unparseable config.json: " + e.what());
  }

  ModelConfig mc;
  mc.C = cfg.at("C").get<int>();
  mc.image_size = cfg.at("image_size").get<int>();
  mc.M = cfg.at("M").get<int>();
  mc.seed = cfg.at("seed").get<std::uint64_t>();
  mc.version = cfg.at("version").get<int>();
  SillModel model(mc);
  model.classifier_trained = cfg.value("classifier_trained", false);

  auto restore = [&](const std::string& name, Tensor& value) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint " + path + " is missing entry " + name);
    const std::size_t want = value.size() * sizeof(float);
    if (it->second.size() != want)
      throw std::runtime_error("checkpoint entry " + name + " has " +
                               std::to_string(it->second.size()) + " bytes, expected " +
                               std::to_string(want));
    std::memcpy(value.data(), it->second.data(), want);
  };
  for (auto& p : model.all_params()) restore(p.name, *p.value);
  for (auto& b : model.all_buffers()) restore(b.name, *b.value);
  return model;
}

}  // namespace sillnet
