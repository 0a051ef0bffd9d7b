#include "ocds/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ocds/rng.hpp"

namespace ocds {
namespace {

constexpr char kTokenMagic[8] = {'O', 'C', 'D', 'S', 'T', 'O', 'K', '1'};
constexpr char kParamMagic[8] = {'O', 'C', 'D', 'S', 'P', 'A', 'R', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::filesystem::path path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void expect_magic(const char (&magic)[8]) {
    if (bytes_.size() < 8 || std::memcmp(bytes_.data(), magic, 8) != 0) {
      throw ConfigError(path_.string() + ": bad magic, expected " +
                        std::string(magic, 8));
    }
    pos_ = 8;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
    }
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void need(std::size_t n) {
    if (remaining() < n) throw ConfigError(path_.string() + ": truncated file");
  }

  std::string bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to " + path.string());
}

// Splits a UTF-8 string into code points (kept as byte substrings).
std::vector<std::string> utf8_codepoints(const std::string& line,
                                         const std::filesystem::path& path,
                                         std::size_t lineno) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    unsigned char c = static_cast<unsigned char>(line[i]);
    std::size_t len = 1;
    if (c >= 0xf0) {
      len = 4;
    } else if (c >= 0xe0) {
      len = 3;
    } else if (c >= 0xc0) {
      len = 2;
    } else if (c >= 0x80) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": invalid UTF-8 continuation byte");
    }
    if (i + len > line.size()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": truncated UTF-8 sequence");
    }
    out.push_back(line.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

Vocab read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocab file " + path.string());
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto id = static_cast<std::uint32_t>(v.id_to_token.size());
    auto [it, inserted] = v.token_to_id.emplace(line, id);
    if (!inserted) {
      throw ConfigError("duplicate vocab token '" + line + "' in " + path.string());
    }
    v.id_to_token.push_back(line);
  }
  if (v.id_to_token.empty()) throw ConfigError("empty vocab file " + path.string());
  return v;
}

TokenCorpus read_text_corpus(const std::filesystem::path& path, const Vocab& vocab,
                             TokenizerMode mode, DatasetRole role) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus " + path.string());
  TokenCorpus corpus;
  corpus.vocab_size = vocab.size();
  corpus.data.role = role;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> pieces;
    if (mode == TokenizerMode::kWhitespace) {
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) pieces.push_back(tok);
    } else {
      pieces = utf8_codepoints(line, path, lineno);
    }
    Instance inst;
    inst.id = static_cast<std::int64_t>(corpus.data.size());
    inst.tokens.reserve(pieces.size());
    for (const auto& tok : pieces) {
      auto it = vocab.token_to_id.find(tok);
      if (it == vocab.token_to_id.end()) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": token '" + tok + "' not in vocabulary");
      }
      inst.tokens.push_back(it->second);
    }
    corpus.data.instances.push_back(std::move(inst));
  }
  return corpus;
}

TokenCorpus read_binary_corpus(const std::filesystem::path& path, DatasetRole role) {
  ByteReader r(read_bytes(path), path);
  r.expect_magic(kTokenMagic);
  TokenCorpus corpus;
  corpus.vocab_size = r.u32();
  if (corpus.vocab_size == 0) throw ConfigError(path.string() + ": vocab size 0");
  corpus.data.role = role;
  while (!r.at_end()) {
    std::uint32_t len = r.u32();
    Instance inst;
    inst.id = static_cast<std::int64_t>(corpus.data.size());
    inst.tokens.reserve(len);
    for (std::uint32_t i = 0; i < len; ++i) {
      std::uint32_t tok = r.u32();
      if (tok >= corpus.vocab_size) {
        throw ConfigError(path.string() + ": token id " + std::to_string(tok) +
                          " >= vocab size " + std::to_string(corpus.vocab_size));
      }
      inst.tokens.push_back(tok);
    }
    corpus.data.instances.push_back(std::move(inst));
  }
  return corpus;
}

void write_binary_corpus(const std::filesystem::path& path, const Dataset& data,
                         std::uint32_t vocab_size) {
  std::string buf;
  buf.append(kTokenMagic, 8);
  put_u32(buf, vocab_size);
  for (const auto& inst : data.instances) {
    put_u32(buf, static_cast<std::uint32_t>(inst.tokens.size()));
    for (std::uint32_t tok : inst.tokens) {
      if (tok >= vocab_size) {
        throw ConfigError(path.string() + ": token " + std::to_string(tok) +
                          " out of range for vocab " +
                          std::to_string(vocab_size) + " (instance " +
                          std::to_string(inst.id) + ")");
      }
      put_u32(buf, tok);
    }
  }
  write_bytes(path, buf);
}

void write_checkpoint(const std::filesystem::path& path, const ParamVector& theta) {
  std::string buf;
  buf.append(kParamMagic, 8);
  put_u64(buf, theta.size());
  for (double v : theta) put_f64(buf, v);
  write_bytes(path, buf);
}

ParamVector read_checkpoint(const std::filesystem::path& path) {
  ByteReader r(read_bytes(path), path);
  r.expect_magic(kParamMagic);
  std::uint64_t count = r.u64();
  if (r.remaining() != count * 8) {
    throw ConfigError(path.string() + ": parameter count mismatch");
  }
  ParamVector theta(count);
  for (std::uint64_t i = 0; i < count; ++i) theta[i] = r.f64();
  return theta;
}

std::string checkpoint_filename(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06zu.bin", step);
  return buf;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_id_value_tsv(const std::filesystem::path& path,
                        const std::string& value_column,
                        const std::vector<std::int64_t>& ids,
                        const std::vector<double>& values) {
  if (ids.size() != values.size()) {
    throw ConfigError("id/value column length mismatch writing " + path.string());
  }
  std::string buf = "instance_id\t" + value_column + "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    buf += std::to_string(ids[i]);
    buf += '\t';
    buf += format_double(values[i]);
    buf += '\n';
  }
  write_bytes(path, buf);
}

IdValueTable read_id_value_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  IdValueTable table;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected two tab-separated columns");
    }
    try {
      table.ids.push_back(std::stoll(line.substr(0, tab)));
      table.values.push_back(std::stod(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": cannot parse row '" + line + "'");
    }
  }
  return table;
}

std::vector<LossPoint> read_loss_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "N,D,L") {
    throw ConfigError(path.string() + ": expected header 'N,D,L', got '" +
                      line + "'");
  }
  std::vector<LossPoint> points;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LossPoint p;
    std::istringstream ls(line);
    char c1 = 0, c2 = 0;
    if (!(ls >> p.n >> c1 >> p.d >> c2 >> p.loss) || c1 != ',' || c2 != ',') {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'N,D,L' row, got '" + line + "'");
    }
    if (p.n <= 0 || p.d <= 0 || p.loss <= 0) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": N, D, L must be positive");
    }
    points.push_back(p);
  }
  return points;
}

void write_loss_points(const std::filesystem::path& path,
                       const std::vector<LossPoint>& points) {
  std::string buf = "N,D,L\n";
  for (const auto& p : points) {
    buf += format_double(p.n) + "," + format_double(p.d) + "," +
           format_double(p.loss) + "\n";
  }
  write_bytes(path, buf);
}

std::string read_text_file(const std::filesystem::path& path) {
  return read_bytes(path);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  write_bytes(path, content);
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  std::string bytes = read_bytes(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace ocds
