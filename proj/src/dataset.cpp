#include "cartvis/dataset.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "cartvis/error.hpp"

namespace cartvis {

static_assert(std::endian::native == std::endian::little, "dataset files are little endian");

namespace {

constexpr char kMagic[4] = {'C', 'V', 'D', 'S'};

void check_raw(const Image& raw) {
  if (raw.height != 2 * kFrameSize || raw.width != 2 * kFrameSize || raw.channels != kFrameChannels ||
      raw.data.size() != std::size_t(raw.height) * raw.width * raw.channels)
    throw Error(ErrorKind::Dimension, "preprocess expects a 128x128x3 frame, got " + std::to_string(raw.height) + "x" +
                                          std::to_string(raw.width) + "x" + std::to_string(raw.channels));
}

template <typename F>
void for_each_block_sum(const Image& raw, F&& f) {
  for (int y = 0; y < kFrameSize; ++y)
    for (int x = 0; x < kFrameSize; ++x)
      for (int c = 0; c < kFrameChannels; ++c) {
        const int sum = raw.at(2 * y, 2 * x, c) + raw.at(2 * y, 2 * x + 1, c) + raw.at(2 * y + 1, 2 * x, c) +
                        raw.at(2 * y + 1, 2 * x + 1, c);
        f((std::size_t(y) * kFrameSize + x) * kFrameChannels + c, sum);
      }
}

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(const std::uint8_t* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

}  // namespace

FrameVec preprocess(const Image& raw) {
  check_raw(raw);
  FrameVec out(kFramePixels);
  for_each_block_sum(raw, [&](std::size_t i, int sum) { out(i) = float(sum) / (4.0f * 255.0f); });
  return out;
}

std::vector<std::uint8_t> downsample_bytes(const Image& raw) {
  check_raw(raw);
  std::vector<std::uint8_t> out(kFramePixels);
  for_each_block_sum(raw, [&](std::size_t i, int sum) { out[i] = static_cast<std::uint8_t>((sum + 2) / 4); });
  return out;
}

// Writer ---------------------------------------------------------------------

DatasetWriter::DatasetWriter(std::filesystem::path path) : path_(std::move(path)) {
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorKind::Io, "cannot open " + path_.string() + " for writing");
  out_.write(kMagic, 4);
  put<std::uint32_t>(out_, kDatasetVersion);
  put<std::uint64_t>(out_, 0);
  put<std::uint32_t>(out_, kFrameSize);
  put<std::uint32_t>(out_, kFrameSize);
  put<std::uint32_t>(out_, kFrameChannels);
  put<std::uint32_t>(out_, kWindow);
  put<std::uint32_t>(out_, 4);
  if (!out_) fail("header write");
}

DatasetWriter::~DatasetWriter() {
  if (!closed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
}

void DatasetWriter::fail(const std::string& what) {
  out_.close();
  closed_ = true;
  std::error_code ec;
  std::filesystem::remove(path_, ec);
  throw Error(ErrorKind::Io, "dataset " + what + " failed for " + path_.string());
}

void DatasetWriter::append(const SequenceSample& s) {
  if (closed_) throw Error(ErrorKind::InvalidArgument, "append on a closed dataset writer");
  put<std::uint32_t>(out_, s.episode);
  put<std::uint32_t>(out_, s.step);
  for (const auto& f : s.frames) out_.write(reinterpret_cast<const char*>(f.data()), f.size());
  for (Action a : s.actions) put<std::uint8_t>(out_, static_cast<std::uint8_t>(a));
  const StateVec t = s.target.vec();
  for (int d = 0; d < 4; ++d) put<double>(out_, t(d));
  if (!out_) fail("record write");
  ++count_;
}

void DatasetWriter::close() {
  if (closed_) return;
  out_.seekp(8);
  put<std::uint64_t>(out_, count_);
  out_.flush();
  if (!out_) fail("finalize");
  out_.close();
  closed_ = true;
}

// Reader ---------------------------------------------------------------------

DatasetReader::DatasetReader(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw Error(ErrorKind::MissingArtifact, "dataset not found: " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw Error(ErrorKind::Io, "cannot stat " + path.string());
  }
  bytes_ = static_cast<std::size_t>(st.st_size);
  if (bytes_ < kDatasetHeaderBytes) {
    ::close(fd);
    throw Error(ErrorKind::Corrupt, "dataset header truncated: " + path.string());
  }
  void* p = ::mmap(nullptr, bytes_, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  if (p == MAP_FAILED) throw Error(ErrorKind::Io, "mmap failed for " + path.string());
  data_ = static_cast<const std::uint8_t*>(p);

  auto reject = [&](ErrorKind kind, const std::string& msg) {
    ::munmap(const_cast<std::uint8_t*>(data_), bytes_);
    data_ = nullptr;
    throw Error(kind, msg + ": " + path.string());
  };
  if (std::memcmp(data_, kMagic, 4) != 0) reject(ErrorKind::Corrupt, "not a dataset file");
  if (get<std::uint32_t>(data_ + 4) != kDatasetVersion) reject(ErrorKind::Version, "unsupported dataset version");
  count_ = get<std::uint64_t>(data_ + 8);
  const std::uint32_t dims[5] = {get<std::uint32_t>(data_ + 16), get<std::uint32_t>(data_ + 20),
                                 get<std::uint32_t>(data_ + 24), get<std::uint32_t>(data_ + 28),
                                 get<std::uint32_t>(data_ + 32)};
  if (dims[0] != kFrameSize || dims[1] != kFrameSize || dims[2] != kFrameChannels || dims[3] != kWindow || dims[4] != 4)
    reject(ErrorKind::Dimension, "dataset dimensions do not match this build");
  if (bytes_ != kDatasetHeaderBytes + count_ * kRecordBytes) reject(ErrorKind::Corrupt, "dataset size does not match record count");
}

DatasetReader::~DatasetReader() {
  if (data_) ::munmap(const_cast<std::uint8_t*>(data_), bytes_);
}

const std::uint8_t* DatasetReader::record(std::size_t i) const {
  if (i >= count_) throw Error(ErrorKind::InvalidArgument, "sample index " + std::to_string(i) + " out of range");
  return data_ + kDatasetHeaderBytes + i * kRecordBytes;
}

std::uint32_t DatasetReader::episode(std::size_t i) const { return get<std::uint32_t>(record(i)); }
std::uint32_t DatasetReader::step(std::size_t i) const { return get<std::uint32_t>(record(i) + 4); }

std::span<const std::uint8_t> DatasetReader::frame_bytes(std::size_t i, int t) const {
  return {record(i) + 8 + std::size_t(t) * kFramePixels, std::size_t(kFramePixels)};
}

Action DatasetReader::action(std::size_t i, int t) const {
  return action_from_int(record(i)[8 + std::size_t(kWindow) * kFramePixels + t]);
}

State DatasetReader::target(std::size_t i) const {
  const std::uint8_t* p = record(i) + 8 + std::size_t(kWindow) * kFramePixels + kWindow;
  return {get<double>(p), get<double>(p + 8), get<double>(p + 16), get<double>(p + 24)};
}

SequenceSample DatasetReader::sample(std::size_t i) const {
  SequenceSample s;
  s.episode = episode(i);
  s.step = step(i);
  for (int t = 0; t < kWindow; ++t) {
    const auto bytes = frame_bytes(i, t);
    std::copy(bytes.begin(), bytes.end(), s.frames[t].begin());
    s.actions[t] = action(i, t);
  }
  s.target = target(i);
  return s;
}

template <typename Scalar>
void DatasetReader::load_batch(std::span<const std::size_t> ids,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& frames,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& actions,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& targets) const {
  const auto b = static_cast<Eigen::Index>(ids.size());
  frames.resize(kFramePixels, kWindow * b);
  actions.resize(kWindow, b);
  targets.resize(4, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const std::size_t id = ids[j];
    for (int t = 0; t < kWindow; ++t) {
      normalize_bytes(frame_bytes(id, t), frames.col(t * b + j).data());
      actions(t, j) = Scalar(to_int(action(id, t)));
    }
    targets.col(j) = target(id).vec().cast<Scalar>();
  }
}

template void DatasetReader::load_batch<float>(std::span<const std::size_t>, Eigen::MatrixXf&, Eigen::MatrixXf&,
                                               Eigen::MatrixXf&) const;
template void DatasetReader::load_batch<double>(std::span<const std::size_t>, Eigen::MatrixXd&, Eigen::MatrixXd&,
                                                Eigen::MatrixXd&) const;

// Split and manifest ---------------------------------------------------------

Split split(std::size_t n, double ratio, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "cannot split an empty dataset");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(ErrorKind::InvalidArgument, "split ratio must be in [0, 1]");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * double(n)));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& [k, v] : manifest) out << k << " = " << v << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingArtifact, "manifest not found: " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw Error(ErrorKind::Corrupt, "bad manifest line: " + line);
    m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

}  // namespace cartvis
