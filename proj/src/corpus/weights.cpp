#include "gca/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gca/errors.hpp"
#include "gca/random.hpp"
#include "io_util.hpp"

namespace gca {

namespace {

constexpr char kMagic[8] = {'G', 'C', 'A', 'W', 'G', 'H', 'T', '\0'};
constexpr std::uint32_t kConfigFields = 7;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw FormatError("weight file truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* WeightFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

std::string serialize_weights(std::span<const Parameter* const> params, const ModelConfig& config) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kWeightFormatVersion);
  w.u32(kConfigFields);
  for (std::size_t v : {config.seq_len, config.vocab_size, config.embed_dim, config.gen_hidden, config.disc_hidden,
                        config.context_utterances, config.dense_width}) {
    w.u64(v);
  }
  w.u64(params.size());
  for (const Parameter* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) w.u64(e);
    for (double v : p->value.data()) w.f64(v);
  }
  return w.take();
}

void save_weights(std::span<const Parameter* const> params, const ModelConfig& config,
                  const std::filesystem::path& path) {
  detail::atomic_write(path, serialize_weights(params, config));
}

WeightFile parse_weights(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) {
    throw FormatError("bad weight file magic at offset 0");
  }
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32("version"); version != kWeightFormatVersion) {
    throw FormatError("unsupported weight format version " + std::to_string(version) + " at offset " +
                      std::to_string(version_at));
  }
  const std::size_t fields_at = r.offset();
  if (const auto fields = r.u32("config field count"); fields != kConfigFields) {
    throw FormatError("unexpected config field count " + std::to_string(fields) + " at offset " +
                      std::to_string(fields_at));
  }
  WeightFile wf;
  ModelConfig& c = wf.config;
  for (std::size_t* f : {&c.seq_len, &c.vocab_size, &c.embed_dim, &c.gen_hidden, &c.disc_hidden,
                         &c.context_utterances, &c.dense_width}) {
    *f = static_cast<std::size_t>(r.u64("config block"));
  }
  const auto count = r.u64("parameter count");
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor nt;
    const auto name_len = r.u32("parameter name length");
    nt.name = std::string(r.take(name_len, "parameter name"));
    const std::size_t rank_at = r.offset();
    const auto rank = r.u32("parameter rank");
    if (rank == 0 || rank > 2) {
      throw FormatError("parameter '" + nt.name + "' has invalid rank " + std::to_string(rank) + " at offset " +
                        std::to_string(rank_at));
    }
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      const std::size_t at = r.offset();
      e = static_cast<std::size_t>(r.u64("parameter shape"));
      if (e == 0) throw FormatError("zero extent in parameter '" + nt.name + "' at offset " + std::to_string(at));
      n *= e;
    }
    r.need(n * 8, "parameter data");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64("parameter data");
    nt.value = Tensor(std::move(shape), std::move(data));
    wf.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("trailing bytes after last parameter at offset " + std::to_string(r.offset()));
  return wf;
}

WeightFile load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_weights(ss.str());
}

Tensor load_pretrained_vectors(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t embed_dim,
                               std::uint64_t seed) {
  if (embed_dim == 0) throw ConfigError("embedding dimension must be positive");
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open pretrained vector file " + path.string());

  const std::size_t n = vocab.size();
  Tensor emb({embed_dim, n});
  std::vector<bool> found(n, false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    std::vector<double> vec;
    std::string f;
    while (fields >> f) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(f, &used));
        if (used != f.size()) throw std::invalid_argument(f);
      } catch (const std::exception&) {
        throw FormatError("line " + std::to_string(line_no) + ": bad number '" + f + "'");
      }
    }
    if (vec.size() != embed_dim) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(embed_dim) +
                        " values, got " + std::to_string(vec.size()));
    }
    const auto id = vocab.find(token);
    if (!id || *id == kPad) continue;
    for (std::size_t r = 0; r < embed_dim; ++r) emb.at(r, *id) = vec[r];
    found[*id] = true;
  }

  Rng rng(seed);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t r = 0; r < embed_dim; ++r) {
      const double u = rng.uniform(-0.05, 0.05);
      if (j != kPad && !found[j]) emb.at(r, j) = u;
    }
  }
  return emb;
}

}  // namespace gca
