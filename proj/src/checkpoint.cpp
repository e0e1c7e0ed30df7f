#include "capmt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "capmt/error.hpp"

namespace capmt {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'M', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& path, std::size_t offset, const std::string& why) {
  throw FormatError(path + ": " + why + " (byte offset " + std::to_string(offset) + ")");
}

class Reader {
 public:
  Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path);
  }
  void read(void* data, std::size_t count, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in_.gcount()) != count)
      fail(path_, offset_, std::string("truncated while reading ") + what);
    offset_ += count;
  }
  bool at_eof() {
    char c;
    in_.read(&c, 1);
    return in_.gcount() == 0;
  }
  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params,
                     const std::string& config_json) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  auto put = [&](const void* data, std::size_t count) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(count));
  };
  put(kMagic, sizeof(kMagic));
  put(&kVersion, sizeof(kVersion));
  const std::uint32_t cfg_len = static_cast<std::uint32_t>(config_json.size());
  put(&cfg_len, sizeof(cfg_len));
  put(config_json.data(), config_json.size());
  const std::uint64_t count = params.size();
  put(&count, sizeof(count));
  for (const NamedTensor& p : params) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
    put(&name_len, sizeof(name_len));
    put(p.name.data(), p.name.size());
    const std::uint32_t rank = static_cast<std::uint32_t>(p.tensor.shape().size());
    put(&rank, sizeof(rank));
    for (std::int64_t d : p.tensor.shape()) {
      const std::uint64_t dim = static_cast<std::uint64_t>(d);
      put(&dim, sizeof(dim));
    }
    put(p.tensor.value().data(), p.tensor.value().size() * sizeof(double));
  }
  if (!out) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.read(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(path, 0, "bad magic, not a checkpoint");
  std::uint32_t version = 0;
  r.read(&version, sizeof(version), "version");
  if (version != kVersion) fail(path, 8, "unsupported format version " + std::to_string(version));

  std::uint32_t cfg_len = 0;
  r.read(&cfg_len, sizeof(cfg_len), "config length");
  Checkpoint ck;
  ck.config_json.resize(cfg_len);
  if (cfg_len) r.read(ck.config_json.data(), cfg_len, "config");

  std::uint64_t count = 0;
  r.read(&count, sizeof(count), "parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    r.read(&name_len, sizeof(name_len), "parameter name length");
    if (name_len == 0 || name_len > 4096)
      fail(path, r.offset(), "implausible parameter name length");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "parameter name");
    std::uint32_t rank = 0;
    r.read(&rank, sizeof(rank), "parameter rank");
    if (rank == 0 || rank > 8) fail(path, r.offset(), "implausible parameter rank");
    std::vector<std::int64_t> shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint64_t dim = 0;
      r.read(&dim, sizeof(dim), "parameter dimension");
      if (dim == 0 || dim > (1ULL << 32)) fail(path, r.offset(), "implausible dimension");
      shape.push_back(static_cast<std::int64_t>(dim));
      numel *= static_cast<std::int64_t>(dim);
    }
    std::vector<double> values(static_cast<std::size_t>(numel));
    r.read(values.data(), values.size() * sizeof(double), "parameter values");
    ck.params.push_back({std::move(name), Tensor::from(shape, std::move(values))});
  }
  if (!r.at_eof()) fail(path, r.offset(), "trailing bytes after last parameter");
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, const std::vector<NamedTensor>& params) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const NamedTensor& p : ck.params) by_name[p.name] = &p;
  if (by_name.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(by_name.size()) +
                      " parameters, model expects " + std::to_string(params.size()));
  for (const NamedTensor& target : params) {
    auto it = by_name.find(target.name);
    if (it == by_name.end())
      throw FormatError("checkpoint is missing parameter '" + target.name + "'");
    const Tensor& src = it->second->tensor;
    if (src.shape() != target.tensor.shape())
      throw FormatError("parameter '" + target.name + "' has shape " +
                        shape_str(src.shape()) + ", model expects " +
                        shape_str(target.tensor.shape()));
    target.tensor.value() = src.value();
  }
}

}  // namespace capmt
