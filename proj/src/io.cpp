#include "noft/io.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "noft/error.hpp"

namespace noft::io {
namespace {

constexpr char kNoiseMagic[4] = {'N', 'O', 'F', 'T'};
constexpr char kCheckpointMagic[4] = {'N', 'O', 'F', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::size_t size() const { return out_.size(); }
  const Bytes& data() const { return out_; }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::Truncated, std::string("file truncated while reading ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le(const char* what) {
    auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> consumed() const { return bytes_.first(pos_); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_dims(Writer& w, const Shape& shape) {
  w.le(static_cast<std::uint16_t>(shape.size()));
  for (std::size_t d : shape) w.le(static_cast<std::uint32_t>(d));
}

Shape read_dims(Reader& r, std::size_t max_rank) {
  const auto rank = r.le<std::uint16_t>("rank");
  if (rank == 0 || rank > max_rank) {
    throw Error(ErrorKind::Shape, "invalid rank " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& d : shape) {
    d = r.le<std::uint32_t>("dims");
    if (d == 0) throw Error(ErrorKind::Shape, "zero-sized dim");
  }
  return shape;
}

void check_magic(Reader& r, const char (&magic)[4]) {
  if (r.remaining() < 4) throw Error(ErrorKind::Truncated, "file truncated before magic");
  auto m = r.take(4, "magic");
  if (std::memcmp(m.data(), magic, 4) != 0) {
    throw Error(ErrorKind::BadMagic, "expected magic '" + std::string(magic, 4) + "'");
  }
}

void check_version(Reader& r, std::uint16_t expected) {
  const auto v = r.le<std::uint16_t>("version");
  if (v != expected) {
    throw Error(ErrorKind::VersionMismatch,
                "file version " + std::to_string(v) + ", supported " + std::to_string(expected));
  }
}

void check_crc(Reader& r, std::span<const std::uint8_t> covered, const std::string& what) {
  const auto stored = r.le<std::uint32_t>("checksum");
  if (stored != crc32(covered)) throw Error(ErrorKind::CrcMismatch, what + " checksum does not match");
}

void check_no_trailing(const Reader& r) {
  if (r.remaining() != 0) {
    throw Error(ErrorKind::Io, std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
}

std::size_t checked_count(const Shape& shape, std::size_t elem_bytes, std::size_t available) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (n > available / d + 1) throw Error(ErrorKind::Truncated, "payload larger than file");
    n *= d;
  }
  if (n > available / elem_bytes + 1) throw Error(ErrorKind::Truncated, "payload larger than file");
  return n;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  std::from_chars_result res;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is available in libstdc++ 11.
    res = std::from_chars(first, last, out);
  } else {
    res = std::from_chars(first, last, out);
  }
  if (res.ec != std::errc() || res.ptr != last || value.empty()) {
    throw Error(ErrorKind::Config, "invalid value for '" + key + "': '" + value + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw Error(ErrorKind::Config, "invalid value for '" + key + "': '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw Error(ErrorKind::Config, "invalid value for '" + key + "': '" + value + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Bytes encode_noise(const NoiseTensor& t) {
  validate_shape(t.shape());
  Writer w;
  w.bytes(kNoiseMagic, 4);
  w.le(kNoiseVersion);
  write_dims(w, t.shape());
  const std::size_t payload_start = w.size();
  for (float v : t.values()) w.f32(v);
  const std::uint32_t crc = crc32(std::span(w.data()).subspan(payload_start));
  w.le(crc);
  return w.take();
}

NoiseTensor decode_noise(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r, kNoiseMagic);
  check_version(r, kNoiseVersion);
  const Shape shape = read_dims(r, kMaxRank);
  validate_shape(shape);
  const std::size_t n = checked_count(shape, 4, r.remaining());
  auto payload = r.take(4 * n, "payload");
  check_crc(r, payload, "payload");
  check_no_trailing(r);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return NoiseTensor(shape, std::move(data));
}

Bytes encode_checkpoint(const NoftModel& model) {
  model.validate();
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  write_dims(w, model.shape);
  w.le(static_cast<std::uint32_t>(model.n_iters));
  w.le(static_cast<std::uint8_t>(model.restandardize ? 1 : 0));
  w.le(static_cast<std::uint32_t>(model.attention.kernel_size));
  w.le(static_cast<std::uint32_t>(model.filter.downsample));
  w.f64(model.filter.lambda_min);
  const auto blocks = parameter_blocks(model);
  w.le(static_cast<std::uint32_t>(blocks.size()));
  w.le(crc32(w.data()));
  for (const auto& b : blocks) {
    w.le(static_cast<std::uint16_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    write_dims(w, b.dims);
    const std::size_t start = w.size();
    for (double v : b.values) w.f64(v);
    const std::uint32_t crc = crc32(std::span(w.data()).subspan(start));
    w.le(crc);
  }
  return w.take();
}

NoftModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r, kCheckpointMagic);
  check_version(r, kCheckpointVersion);
  const Shape shape = read_dims(r, kMaxRank);
  const auto n_iters = r.le<std::uint32_t>("n_iters");
  const auto restandardize = r.le<std::uint8_t>("restandardize");
  const auto kernel_size = r.le<std::uint32_t>("kernel_size");
  const auto downsample = r.le<std::uint32_t>("lambda_downsample");
  const double lambda_min = std::bit_cast<double>(r.le<std::uint64_t>("lambda_min"));
  const auto block_count = r.le<std::uint32_t>("block_count");
  const auto header = r.consumed();
  check_crc(r, header, "header");

  validate_shape(shape);
  ModelOptions options;
  options.n_iters = n_iters;
  options.kernel_size = kernel_size;
  options.lambda_downsample = downsample;
  options.lambda_min = lambda_min;
  options.restandardize = restandardize != 0;
  if (kernel_size == 0 || kernel_size % 2 == 0 || downsample == 0 || n_iters == 0) {
    throw Error(ErrorKind::Shape, "invalid checkpoint header fields");
  }
  NoftModel model = NoftModel::create(shape, options, 0);
  auto blocks = parameter_blocks(model);
  if (block_count != blocks.size()) {
    throw Error(ErrorKind::Shape, "checkpoint has " + std::to_string(block_count) + " blocks, expected " +
                                      std::to_string(blocks.size()));
  }
  for (auto& b : blocks) {
    const auto name_len = r.le<std::uint16_t>("block name length");
    auto name_bytes = r.take(name_len, "block name");
    const std::string name(name_bytes.begin(), name_bytes.end());
    if (name != b.name) throw Error(ErrorKind::Shape, "unexpected block '" + name + "', expected '" + b.name + "'");
    const Shape dims = read_dims(r, 8);
    if (dims != b.dims) {
      throw Error(ErrorKind::Shape, "block '" + name + "' has dims " + shape_to_string(dims) +
                                        ", header implies " + shape_to_string(b.dims));
    }
    auto payload = r.take(8 * b.values.size(), "block payload");
    check_crc(r, payload, "block '" + name + "'");
    for (std::size_t i = 0; i < b.values.size(); ++i) {
      std::uint64_t bits = 0;
      for (std::size_t k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(payload[8 * i + k]) << (8 * k);
      b.values[i] = std::bit_cast<double>(bits);
    }
  }
  check_no_trailing(r);
  model.validate();
  return model;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorKind::Io, "short write to '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, "cannot rename into '" + path.string() + "'");
  }
}

void atomic_write(const std::filesystem::path& path, const std::string& text) {
  atomic_write(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_noise(const std::filesystem::path& path, const NoiseTensor& t) {
  atomic_write(path, encode_noise(t));
}

NoiseTensor read_noise(const std::filesystem::path& path) { return decode_noise(read_file(path)); }

void write_checkpoint(const std::filesystem::path& path, const NoftModel& model) {
  atomic_write(path, encode_checkpoint(model));
}

NoftModel read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

NoftModel read_checkpoint(const std::filesystem::path& path, const Shape& expected) {
  NoftModel model = read_checkpoint(path);
  if (model.shape != expected) {
    throw Error(ErrorKind::Shape, "checkpoint is bound to " + shape_to_string(model.shape) +
                                      ", noise is " + shape_to_string(expected));
  }
  return model;
}

FileKind sniff(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) return FileKind::Unknown;
  if (std::memcmp(bytes.data(), kNoiseMagic, 4) == 0) return FileKind::Noise;
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0) return FileKind::Checkpoint;
  return FileKind::Unknown;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "beta") {
      c.beta = parse_number<double>(key, value);
    } else if (key == "learning_rate" || key == "lr") {
      c.learning_rate = parse_number<double>(key, value);
    } else if (key == "steps") {
      c.steps = parse_number<std::size_t>(key, value);
    } else if (key == "batch") {
      c.batch = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "mode") {
      if (value == "generic") {
        c.mode = TrainMode::Generic;
      } else if (value == "instance") {
        c.mode = TrainMode::Instance;
      } else {
        throw Error(ErrorKind::Config, "invalid value for 'mode': '" + value + "'");
      }
    } else if (key == "div_policy") {
      if (value == "resample_each_step" || value == "resample") {
        c.div_policy = DivPolicy::ResampleEachStep;
      } else if (value == "fixed") {
        c.div_policy = DivPolicy::Fixed;
      } else {
        throw Error(ErrorKind::Config, "invalid value for 'div_policy': '" + value + "'");
      }
    } else if (key == "adam_beta1") {
      c.adam_beta1 = parse_number<double>(key, value);
    } else if (key == "adam_beta2") {
      c.adam_beta2 = parse_number<double>(key, value);
    } else if (key == "adam_epsilon") {
      c.adam_epsilon = parse_number<double>(key, value);
    } else if (key == "n_iters") {
      c.model.n_iters = parse_number<std::size_t>(key, value);
    } else if (key == "kernel_size") {
      c.model.kernel_size = parse_number<std::size_t>(key, value);
    } else if (key == "lambda_downsample") {
      c.model.lambda_downsample = parse_number<std::size_t>(key, value);
    } else if (key == "lambda_min") {
      c.model.lambda_min = parse_number<double>(key, value);
    } else if (key == "lambda_init") {
      c.model.lambda_init = parse_number<double>(key, value);
    } else if (key == "restandardize") {
      c.model.restandardize = parse_bool(key, value);
    } else {
      throw Error(ErrorKind::Config, "unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig read_config(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string format_train_report(const TrainReport& report) {
  std::string out = "step\tloss\tl_noise\tl_info\tmean_lambda\n";
  char line[160];
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    std::snprintf(line, sizeof line, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\n", i + 1, r.loss, r.l_noise,
                  r.l_info, r.mean_lambda);
    out += line;
  }
  return out;
}

void write_train_report(const std::filesystem::path& path, const TrainReport& report) {
  atomic_write(path, format_train_report(report));
}

std::string sweep_to_json(const verify::TradeoffReport& report) {
  nlohmann::json j;
  j["shape"] = report.shape;
  j["steps"] = report.steps;
  j["trials"] = report.trials;
  j["seed"] = report.seed;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row;
    row["beta"] = r.beta;
    row["mean_lambda"] = r.mean_lambda;
    row["content"] = r.content;
    row["diversity"] = r.diversity ? nlohmann::json(*r.diversity) : nlohmann::json(nullptr);
    row["l_noise"] = r.l_noise;
    row["l_info"] = r.l_info;
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

void write_sweep_report(const std::filesystem::path& path, const verify::TradeoffReport& report) {
  atomic_write(path, sweep_to_json(report));
  std::filesystem::path table = path;
  table += ".txt";
  atomic_write(table, verify::format_table(report));
}

}  // namespace noft::io
