#include "chainlearn/castore.hpp"

#include <fstream>
#include <iterator>

namespace chainlearn::castore {

namespace {

bool is_digest(const std::string& s) {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFoundError("cannot open blob file " + p.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write blob file " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to blob file " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace

std::string tag_name(MediaTag t) {
  switch (t) {
    case MediaTag::Dataset: return "dataset";
    case MediaTag::Model: return "model";
    case MediaTag::EncryptedModel: return "encrypted-model";
    case MediaTag::MetamodelManifest: return "metamodel-manifest";
  }
  return "?";
}

MediaTag tag_from(const std::string& s) {
  if (s == "dataset") return MediaTag::Dataset;
  if (s == "model") return MediaTag::Model;
  if (s == "encrypted-model") return MediaTag::EncryptedModel;
  if (s == "metamodel-manifest") return MediaTag::MetamodelManifest;
  throw FormatError("unknown media tag '" + s + "'");
}

Store::Store(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(*root_); }

std::filesystem::path Store::path_for(const std::string& digest) const {
  return *root_ / digest.substr(0, 2) / digest;
}

ContentRef Store::put(std::span<const std::uint8_t> blob, MediaTag tag) {
  if (blob.empty()) throw ParameterError("castore: refusing to store an empty blob");
  ContentRef ref{sha256_hex(blob), blob.size(), tag};
  std::lock_guard lock(mu_);
  if (blobs_.count(ref.digest) == 0) {
    blobs_.emplace(ref.digest, Bytes(blob.begin(), blob.end()));
    if (root_ && !std::filesystem::exists(path_for(ref.digest))) write_file_atomic(path_for(ref.digest), blob);
  }
  return ref;
}

Bytes Store::get(const ContentRef& ref) const {
  Bytes out = get(ref.digest);
  if (out.size() != ref.size) throw IntegrityError("castore: size mismatch for " + ref.digest);
  return out;
}

Bytes Store::get(const std::string& digest) const {
  if (!is_digest(digest)) throw NotFoundError("castore: malformed digest '" + digest + "'");
  Bytes out;
  {
    std::lock_guard lock(mu_);
    auto it = blobs_.find(digest);
    if (it != blobs_.end()) {
      out = it->second;
    } else if (root_ && std::filesystem::exists(path_for(digest))) {
      out = read_file(path_for(digest));
    } else {
      throw NotFoundError("castore: unknown digest " + digest);
    }
  }
  if (sha256_hex(out) != digest) throw IntegrityError("castore: stored bytes do not match digest " + digest);
  return out;
}

bool Store::contains(const std::string& digest) const {
  std::lock_guard lock(mu_);
  return blobs_.count(digest) != 0 || (root_ && is_digest(digest) && std::filesystem::exists(path_for(digest)));
}

std::size_t Store::size() const {
  std::lock_guard lock(mu_);
  return blobs_.size();
}

std::uint64_t Store::bytes_stored() const {
  std::lock_guard lock(mu_);
  std::uint64_t total = 0;
  for (const auto& [_, b] : blobs_) total += b.size();
  return total;
}

std::vector<std::string> Store::digests() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [d, _] : blobs_) out.push_back(d);
  return out;
}

void Store::corrupt_for_testing(const std::string& digest, std::span<const std::uint8_t> bytes) {
  std::lock_guard lock(mu_);
  auto it = blobs_.find(digest);
  if (it == blobs_.end()) throw NotFoundError("castore: unknown digest " + digest);
  it->second.assign(bytes.begin(), bytes.end());
  if (root_) write_file_atomic(path_for(digest), bytes);
}

}  // namespace chainlearn::castore
