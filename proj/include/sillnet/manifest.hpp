#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace sillnet {

// SHA-1 of the git blob encoding of `bytes` ("blob <len>\0" + bytes), hex
// lowercase — the same digest `git hash-object` prints for a file with that
// content.
std::string git_blob_sha1(const std::string& bytes);

// Digest of a file's contents; throws std::runtime_error if unreadable.
std::string file_blob_sha1(const std::string& path);

std::string iso8601_utc_now();

// A record of one command invocation, written beside its outputs: what ran,
// with which resolved knobs and seed, over which inputs (content-addressed),
// producing which files. Rerunning the command described here against inputs
// with matching digests reproduces the outputs bit for bit.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> blob digest
  std::vector<std::string> outputs;           // paths written by the command
  std::string started_at;                     // ISO-8601 UTC
  std::string finished_at;

  nlohmann::json to_json() const;
};

void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace sillnet
