#pragma once

// Content-addressed blob store. A blob's key is the SHA-256 of its bytes, so
// entries are immutable and every read is integrity-checked. Optionally
// mirrored to a directory laid out as <root>/<first-2-hex>/<digest>.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chainlearn/common.hpp"

namespace chainlearn::castore {

enum class MediaTag { Dataset, Model, EncryptedModel, MetamodelManifest };

std::string tag_name(MediaTag t);
MediaTag tag_from(const std::string& s);

struct ContentRef {
  std::string digest;  // 64 hex chars
  std::uint64_t size = 0;
  MediaTag tag = MediaTag::Model;

  bool operator==(const ContentRef&) const = default;
};

class Store {
 public:
  // In-memory only.
  Store() = default;
  // Directory-backed: blobs already under `root` are visible through get().
  explicit Store(std::filesystem::path root);

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  ContentRef put(std::span<const std::uint8_t> blob, MediaTag tag);
  ContentRef put(std::string_view text, MediaTag tag) { return put(as_bytes(text), tag); }

  // NotFoundError for unknown digests; IntegrityError when stored bytes no
  // longer hash to the digest.
  Bytes get(const ContentRef& ref) const;
  Bytes get(const std::string& digest) const;

  bool contains(const std::string& digest) const;
  std::size_t size() const;
  std::uint64_t bytes_stored() const;
  std::vector<std::string> digests() const;

  const std::optional<std::filesystem::path>& root() const { return root_; }

  // Test hook: overwrite the stored bytes of an entry (simulated disk or
  // memory corruption).
  void corrupt_for_testing(const std::string& digest, std::span<const std::uint8_t> bytes);

 private:
  std::filesystem::path path_for(const std::string& digest) const;

  mutable std::mutex mu_;
  std::map<std::string, Bytes> blobs_;
  std::optional<std::filesystem::path> root_;
};

}  // namespace chainlearn::castore
