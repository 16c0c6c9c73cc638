#include "cartvis/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "cartvis/error.hpp"

namespace cartvis {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'C', 'K'};

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n, std::string path) : p_(data), end_(data + n), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (std::size_t(end_ - p_) < n) throw Error(ErrorKind::Corrupt, "checkpoint truncated: " + path_);
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const auto* q = p_;
    p_ += n;
    return q;
  }
  bool at_end() const { return p_ == end_; }

 private:
  const std::uint8_t* p_;
  const std::uint8_t* end_;
  std::string path_;
};

}  // namespace

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = meta_.find(key);
  if (it == meta_.end()) throw Error(ErrorKind::Corrupt, "checkpoint is missing metadata '" + key + "'");
  return it->second;
}

long long Checkpoint::meta_int(const std::string& key) const {
  try {
    return std::stoll(meta(key));
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::Corrupt, "checkpoint metadata '" + key + "' is not an integer");
  }
}

template <typename Scalar>
void Checkpoint::add(const std::string& name, const nn::Matrix<Scalar>& m) {
  Tensor t;
  t.name = name;
  t.width = sizeof(Scalar);
  t.rows = static_cast<std::uint32_t>(m.rows());
  t.cols = static_cast<std::uint32_t>(m.cols());
  t.bytes.resize(sizeof(Scalar) * m.size());
  std::memcpy(t.bytes.data(), m.data(), t.bytes.size());
  for (auto& existing : tensors_)
    if (existing.name == name) {
      existing = std::move(t);
      return;
    }
  tensors_.push_back(std::move(t));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const Checkpoint::Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw Error(ErrorKind::Corrupt, "checkpoint is missing tensor '" + name + "'");
}

template <typename Scalar>
nn::Matrix<Scalar> Checkpoint::get(const std::string& name) const {
  const Tensor& t = find(name);
  nn::Matrix<Scalar> m(t.rows, t.cols);
  if (t.width == sizeof(Scalar)) {
    std::memcpy(m.data(), t.bytes.data(), t.bytes.size());
  } else if (t.width == 4) {
    m = Eigen::Map<const Eigen::MatrixXf>(reinterpret_cast<const float*>(t.bytes.data()), t.rows, t.cols)
            .template cast<Scalar>();
  } else {
    m = Eigen::Map<const Eigen::MatrixXd>(reinterpret_cast<const double*>(t.bytes.data()), t.rows, t.cols)
            .template cast<Scalar>();
  }
  return m;
}

template void Checkpoint::add<float>(const std::string&, const nn::Matrix<float>&);
template void Checkpoint::add<double>(const std::string&, const nn::Matrix<double>&);
template nn::Matrix<float> Checkpoint::get<float>(const std::string&) const;
template nn::Matrix<double> Checkpoint::get<double>(const std::string&) const;

void Checkpoint::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.bytes.insert(w.bytes.end(), kMagic, kMagic + 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(kind_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& t : tensors_) {
    w.put_string(t.name);
    w.put<std::uint8_t>(t.width);
    w.put<std::uint32_t>(t.rows);
    w.put<std::uint32_t>(t.cols);
    w.bytes.insert(w.bytes.end(), t.bytes.begin(), t.bytes.end());
  }
  w.put<std::uint64_t>(fnv1a(w.bytes.data(), w.bytes.size()));

  // Write-then-rename keeps an existing checkpoint intact on failure.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes.data()), std::streamsize(w.bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingArtifact, "checkpoint not found: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 8 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0)
      throw Error(ErrorKind::Corrupt, "checkpoint truncated: " + where);
    throw Error(ErrorKind::Corrupt, "not a checkpoint file: " + where);
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::Version, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                        std::to_string(kCheckpointVersion) + "): " + where);
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(bytes.data(), body)) throw Error(ErrorKind::Corrupt, "checkpoint checksum mismatch (truncated or damaged): " + where);

  ByteReader r(bytes.data() + 8, body - 8, where);
  Checkpoint ck(r.get_string());
  if (!expected_kind.empty() && ck.kind_ != expected_kind)
    throw Error(ErrorKind::InvalidArgument, "checkpoint holds a '" + ck.kind_ + "', expected '" + expected_kind + "': " + where);
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string();
    ck.meta_[k] = r.get_string();
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Tensor t;
    t.name = r.get_string();
    t.width = r.get<std::uint8_t>();
    if (t.width != 4 && t.width != 8) throw Error(ErrorKind::Corrupt, "bad scalar width in checkpoint: " + where);
    t.rows = r.get<std::uint32_t>();
    t.cols = r.get<std::uint32_t>();
    const std::size_t n = std::size_t(t.width) * t.rows * t.cols;
    const auto* p = r.take(n);
    t.bytes.assign(p, p + n);
    ck.tensors_.push_back(std::move(t));
  }
  if (!r.at_end()) throw Error(ErrorKind::Corrupt, "trailing bytes in checkpoint: " + where);
  return ck;
}

}  // namespace cartvis
