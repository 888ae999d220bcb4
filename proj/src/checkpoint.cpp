#include "h2sr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <json.hpp>

#include "h2sr/dataset.hpp"
#include "h2sr/errors.hpp"

namespace h2sr {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, const fs::path& path) : data_(data), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(path_.string() + ": truncated checkpoint");
  }
  const std::string& data_;
  fs::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor to_single_precision(const Tensor& t) {
  Tensor out = t;
  for (auto& x : out.mutable_data()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string out = "H2SR";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.vocabulary_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.matrices.size()));
  for (const auto& [name, m] : ckpt.matrices) {
    if (!m.all_finite()) throw NumericError("checkpoint matrix " + name + " has non-finite entries");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.size() / m.rows());
  }
  for (const auto& [name, m] : ckpt.matrices) {
    for (double x : m.data()) put<float>(out, static_cast<float>(x));
  }

  nlohmann::ordered_json side;
  side["kind"] = ckpt.kind;
  side["format_version"] = kCheckpointVersion;
  side["vocabulary_hash"] = ckpt.vocabulary_hash;
  side["config_hash"] = ckpt.config_hash;
  side["seed"] = ckpt.seed;
  side["config"] = nlohmann::ordered_json::parse(ckpt.config_json);
  side["users"] = ckpt.user_names;
  side["items"] = ckpt.item_names;
  atomic_write(path, out);
  atomic_write(sidecar_path(path), side.dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path, std::uint64_t expected_vocabulary) {
  const std::string data = read_file(path);
  Reader in(data, path);
  if (in.bytes(4) != "H2SR") throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.vocabulary_hash = in.get<std::uint64_t>();
  if (expected_vocabulary != 0 && ckpt.vocabulary_hash != expected_vocabulary) {
    throw FormatError(path.string() + ": checkpoint was written for a different user/item vocabulary");
  }
  const auto count = in.get<std::uint32_t>();
  struct Entry {
    std::string name;
    std::uint64_t rows, cols;
  };
  std::vector<Entry> entries;
  std::uint64_t total = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    e.name = in.bytes(in.get<std::uint32_t>());
    e.rows = in.get<std::uint64_t>();
    e.cols = in.get<std::uint64_t>();
    if (e.rows == 0 || e.cols == 0) throw FormatError(path.string() + ": empty matrix " + e.name);
    total += e.rows * e.cols;
    entries.push_back(std::move(e));
  }
  if (in.remaining() != total * sizeof(float)) {
    throw FormatError(path.string() + ": payload has " + std::to_string(in.remaining()) + " bytes, header expects " +
                      std::to_string(total * sizeof(float)));
  }
  for (const auto& e : entries) {
    std::vector<double> v(e.rows * e.cols);
    for (auto& x : v) x = in.get<float>();
    ckpt.matrices.emplace(e.name, Tensor::matrix(e.rows, e.cols, std::move(v)));
  }

  const fs::path side_path = sidecar_path(path);
  if (fs::exists(side_path)) {
    nlohmann::json side;
    try {
      side = nlohmann::json::parse(read_file(side_path));
      ckpt.kind = side.value("kind", "");
      ckpt.config_hash = side.value("config_hash", std::uint64_t{0});
      ckpt.seed = side.value("seed", std::uint64_t{0});
      ckpt.config_json = side.contains("config") ? side["config"].dump() : "{}";
      ckpt.user_names = side.value("users", std::vector<std::string>{});
      ckpt.item_names = side.value("items", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(side_path.string() + ": " + e.what());
    }
    if (side.value("vocabulary_hash", std::uint64_t{0}) != ckpt.vocabulary_hash) {
      throw FormatError(side_path.string() + ": sidecar does not belong to " + path.string());
    }
  }
  return ckpt;
}

}  // namespace h2sr
