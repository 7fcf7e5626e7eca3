#include "mtltxt/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include "mtltxt/error.hpp"

namespace mtltxt {

namespace {

constexpr char kMagic[] = "MTLTXT1";
constexpr std::size_t kMagicLen = 7;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() {
    const std::uint64_t bits = bytes(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }
  std::size_t size() const { return data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) {
      fail_data(path_ + ": truncated weight file, needed " + std::to_string(pos_ + n) +
                " bytes but only " + std::to_string(data_.size()) + " are present");
    }
  }
  std::uint64_t bytes(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += n;
    return v;
  }

  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const ParamStore& store, const std::string& path) {
  std::string out;
  out.append(kMagic, kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(static_cast<ParamId>(i));
    const Tensor& p = store.param(static_cast<ParamId>(i));
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(p.rank()));
    for (std::size_t e : p.shape()) put_u64(out, e);
    for (double v : p.values()) put_f64(out, v);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail_data("cannot write weight file '" + path + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) fail_data("short write to weight file '" + path + "'");
}

void load_weights(ParamStore& store, const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) fail_data("cannot open weight file '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader in(std::move(data), path);
  if (in.str(kMagicLen) != std::string(kMagic, kMagicLen)) {
    fail_data(path + ": not a weight container (bad magic)");
  }
  const std::uint32_t count = in.u32();

  std::set<std::string> expected;
  for (std::size_t i = 0; i < store.size(); ++i) {
    expected.insert(store.name(static_cast<ParamId>(i)));
  }
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32();
    const std::string name = in.str(name_len);
    const std::uint32_t rank = in.u32();
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<std::size_t>(in.u64());
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = in.f64();
    seen.insert(name);
    if (!expected.count(name)) continue;  // reported below
    Tensor& target = store.param(store.id_of(name));
    if (target.shape() != shape) {
      fail_data(path + ": parameter '" + name + "' has shape " +
                Tensor(shape).shape_string() + " but the model expects " +
                target.shape_string());
    }
    target.values() = std::move(values);
  }
  if (!in.done()) {
    fail_data(path + ": " + std::to_string(in.size() - in.position()) +
              " unexpected trailing bytes");
  }
  std::string missing, extra;
  for (const std::string& name : expected) {
    if (!seen.count(name)) missing += (missing.empty() ? "" : ", ") + name;
  }
  for (const std::string& name : seen) {
    if (!expected.count(name)) extra += (extra.empty() ? "" : ", ") + name;
  }
  if (!missing.empty() || !extra.empty()) {
    fail_data(path + ": parameter set mismatch; missing: [" + missing + "], extra: [" +
              extra + "]");
  }
}

}  // namespace mtltxt
