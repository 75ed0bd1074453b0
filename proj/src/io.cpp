#include "palm/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace palm::io {
namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void raw(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename M>
  void tensor(const M& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }

  void section(std::string_view tag, const ByteWriter& body) {
    raw(tag);
    u64(body.buf_.size());
    raw(body.buf_);
  }

  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    auto s = take(n);
    return std::string(s.begin(), s.end());
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorKind::InvalidInput, "file truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  Eigen::MatrixXd tensor() {
    const auto rows = u32();
    const auto cols = u32();
    if (static_cast<std::uint64_t>(rows) * cols * 8 > remaining()) throw Error(ErrorKind::InvalidInput, "tensor exceeds file");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    return m;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kEmbeddingMagic = "PALM";
constexpr std::string_view kModelMagic = "PALMMODL";

void write_layers(ByteWriter& w, const MlpModel& m) {
  w.u32(static_cast<std::uint32_t>(m.encoder.size()));
  w.u32(static_cast<std::uint32_t>(m.projector.size()));
  for (const auto* group : {&m.encoder, &m.projector}) {
    for (const auto& l : *group) {
      w.tensor(l.weight);
      w.tensor(l.bias);
    }
  }
}

MlpModel read_layers(ByteReader& r) {
  MlpModel m;
  const auto n_enc = r.u32();
  const auto n_proj = r.u32();
  auto read_group = [&](std::vector<LayerParams>& group, std::uint32_t n) {
    for (std::uint32_t i = 0; i < n; ++i) {
      LayerParams l;
      l.weight = r.tensor();
      const Eigen::MatrixXd b = r.tensor();
      if (b.cols() != 1 || b.rows() != l.weight.rows()) throw Error(ErrorKind::InvalidInput, "bias shape mismatch");
      l.bias = b.col(0);
      group.push_back(std::move(l));
    }
  };
  read_group(m.encoder, n_enc);
  read_group(m.projector, n_proj);
  return m;
}

void check_model_shapes(const MlpModel& m) {
  const std::vector<LayerParams>* groups[] = {&m.encoder, &m.projector};
  Eigen::Index width = -1;
  for (const auto* g : groups) {
    for (const auto& l : *g) {
      if (width >= 0 && l.weight.cols() != width) throw Error(ErrorKind::InvalidInput, "layer widths do not chain");
      width = l.weight.rows();
    }
  }
  if (m.projector.empty()) throw Error(ErrorKind::InvalidInput, "model has no projector");
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings

Bytes encode_embeddings(const EmbeddingBatch& batch) {
  if (batch.labeled() && static_cast<Eigen::Index>(batch.labels.size()) != batch.size()) {
    throw Error(ErrorKind::InvalidInput, "label count does not match record count");
  }
  ByteWriter w;
  w.raw(kEmbeddingMagic);
  w.u32(kEmbeddingVersion);
  w.u64(static_cast<std::uint64_t>(batch.size()));
  w.u32(static_cast<std::uint32_t>(batch.dim()));
  w.u8(batch.labeled() ? 1 : 0);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    for (Eigen::Index j = 0; j < batch.dim(); ++j) w.f32(static_cast<float>(batch.values(i, j)));
    if (batch.labeled()) {
      const int y = batch.labels[static_cast<std::size_t>(i)];
      if (y < 0) throw Error(ErrorKind::InvalidInput, "labels must be >= 0");
      w.i32(y);
    }
  }
  return w.take();
}

EmbeddingBatch decode_embeddings(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(4) != kEmbeddingMagic) throw Error(ErrorKind::InvalidInput, "not an embedding file (bad magic)");
  const auto version = r.u32();
  if (version != kEmbeddingVersion) throw Error(ErrorKind::InvalidInput, "unsupported embedding file version");
  const auto count = r.u64();
  const auto dim = r.u32();
  const auto flag = r.u8();
  if (flag > 1) throw Error(ErrorKind::InvalidInput, "label flag must be 0 or 1");
  const std::uint64_t record = static_cast<std::uint64_t>(dim) * 4 + (flag ? 4 : 0);
  if (record != 0 && count > r.remaining() / record) throw Error(ErrorKind::InvalidInput, "declared count exceeds file size");
  if (count * record != r.remaining()) throw Error(ErrorKind::InvalidInput, "declared count does not match file size");

  EmbeddingBatch out;
  out.values.resize(static_cast<Eigen::Index>(count), dim);
  if (flag) out.labels.resize(count);
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.values.cols(); ++j) out.values(i, j) = r.f32();
    if (flag) {
      const auto y = r.i32();
      if (y < 0) throw Error(ErrorKind::InvalidInput, "negative label in record " + std::to_string(i));
      out.labels[static_cast<std::size_t>(i)] = y;
    }
  }
  return out;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
  write_file_atomic(path, encode_embeddings(batch));
}

EmbeddingBatch read_embeddings(const std::filesystem::path& path) { return decode_embeddings(read_file(path)); }

EmbeddingBatch read_csv_dataset(const std::filesystem::path& path, bool labeled) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const char* b = cell.data();
      const char* e = cell.data() + cell.size();
      while (b < e && *b == ' ') ++b;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e) {
        throw Error(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      fields.push_back(v);
    }
    if (labeled) {
      if (fields.size() < 2) throw Error(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(line_no) + ": missing label");
      const double y = fields.back();
      fields.pop_back();
      if (y < 0 || y != static_cast<double>(static_cast<int>(y))) {
        throw Error(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
      }
      labels.push_back(static_cast<int>(y));
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width || width == 0) {
      throw Error(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    rows.push_back(std::move(fields));
  }
  EmbeddingBatch out;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  out.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------
// Model

Bytes encode_model(const ModelFile& file) {
  const Checkpoint& ck = file.checkpoint;
  ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);

  ByteWriter conf;
  conf.raw(ck.config.to_json());
  w.section("CONF", conf);

  ByteWriter enc;
  write_layers(enc, ck.model);
  w.section("ENCD", enc);

  ByteWriter prot;
  prot.u32(static_cast<std::uint32_t>(ck.bank.classes()));
  prot.u32(static_cast<std::uint32_t>(ck.bank.per_class()));
  prot.u32(static_cast<std::uint32_t>(ck.bank.dim()));
  prot.f64(ck.bank.alpha());
  for (Eigen::Index r = 0; r < ck.bank.prototypes().rows(); ++r)
    for (Eigen::Index c = 0; c < ck.bank.dim(); ++c) prot.f64(ck.bank.prototypes()(r, c));
  w.section("PROT", prot);

  ByteWriter optm;
  optm.u32(static_cast<std::uint32_t>(ck.epoch));
  optm.u32(static_cast<std::uint32_t>(ck.optimizer.total_epochs));
  optm.f64(ck.optimizer.base_lr);
  optm.f64(ck.optimizer.momentum);
  optm.f64(ck.optimizer.weight_decay);
  write_layers(optm, ck.optimizer.momentum_buffer);
  w.section("OPTM", optm);

  if (file.fit) {
    ByteWriter g;
    g.u8(file.fit->normalize_features ? 1 : 0);
    g.f64(file.fit->shrinkage);
    g.tensor(file.fit->means);
    g.tensor(file.fit->covariance);
    w.section("GFIT", g);
  }
  if (file.knn_reference) {
    ByteWriter k;
    k.tensor(*file.knn_reference);
    w.section("KNNR", k);
  }
  return w.take();
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(8) != kModelMagic) throw Error(ErrorKind::InvalidInput, "not a model file (bad magic)");
  if (r.u32() != kModelVersion) throw Error(ErrorKind::InvalidInput, "unsupported model file version");

  ModelFile out;
  Checkpoint& ck = out.checkpoint;
  const char* expected[] = {"CONF", "ENCD", "PROT", "OPTM"};
  int required = 0;
  std::string last_optional;
  while (!r.done()) {
    const std::string tag = r.str(4);
    const auto len = r.u64();
    if (len > r.remaining()) throw Error(ErrorKind::InvalidInput, "section " + tag + " exceeds file");
    ByteReader s(r.take(static_cast<std::size_t>(len)));
    if (required < 4) {
      if (tag != expected[required]) throw Error(ErrorKind::InvalidInput, "expected section " + std::string(expected[required]) + ", found " + tag);
      ++required;
    }
    if (tag == "CONF") {
      ck.config = TrainConfig::from_json(s.str(static_cast<std::size_t>(len)));
      ck.config_hash = ck.config.hash();
    } else if (tag == "ENCD") {
      ck.model = read_layers(s);
      check_model_shapes(ck.model);
    } else if (tag == "PROT") {
      const int c = static_cast<int>(s.u32());
      const int k = static_cast<int>(s.u32());
      const auto d = s.u32();
      const double alpha = s.f64();
      if (static_cast<std::uint64_t>(c) * k * d * 8 != s.remaining()) throw Error(ErrorKind::InvalidInput, "prototype payload size mismatch");
      Matrix p(static_cast<Eigen::Index>(c) * k, d);
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = s.f64();
      ck.bank = PrototypeBank(c, k, std::move(p), alpha);
    } else if (tag == "OPTM") {
      ck.epoch = static_cast<int>(s.u32());
      ck.optimizer.epoch = ck.epoch;
      ck.optimizer.total_epochs = static_cast<int>(s.u32());
      ck.optimizer.base_lr = s.f64();
      ck.optimizer.momentum = s.f64();
      ck.optimizer.weight_decay = s.f64();
      ck.optimizer.momentum_buffer = read_layers(s);
    } else if (tag == "GFIT" && required == 4 && last_optional.empty()) {
      GaussianFit fit;
      fit.normalize_features = s.u8() != 0;
      fit.shrinkage = s.f64();
      fit.means = s.tensor();
      fit.covariance = s.tensor();
      fit.factor();
      out.fit = std::move(fit);
      last_optional = tag;
    } else if (tag == "KNNR" && required == 4 && last_optional != "KNNR") {
      out.knn_reference = s.tensor();
      last_optional = tag;
    } else {
      throw Error(ErrorKind::InvalidInput, "unexpected section " + tag);
    }
    if (!s.done()) throw Error(ErrorKind::InvalidInput, "trailing bytes in section " + tag);
  }
  if (required < 4) throw Error(ErrorKind::InvalidInput, "model file is missing required sections");
  if (ck.bank.dim() != ck.model.projection_dim()) throw Error(ErrorKind::InvalidInput, "bank dimension does not match projector");
  return out;
}

void write_model(const std::filesystem::path& path, const ModelFile& model) { write_file_atomic(path, encode_model(model)); }

ModelFile read_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

// ---------------------------------------------------------------------------
// Text formats

void write_scores(const std::filesystem::path& path, std::span<const double> scores) {
  std::string text = "index,score\n";
  char buf[64];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, scores[i]);
    text += buf;
  }
  write_text_atomic(path, text);
}

std::vector<double> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path.string());
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line == "index,score") continue;
    const auto comma = line.find(',');
    auto bad = [&](const std::string& why) {
      return Error(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) throw bad("expected 'index,score'");
    std::size_t idx = 0;
    {
      auto [p, ec] = std::from_chars(line.data(), line.data() + comma, idx);
      if (ec != std::errc() || p != line.data() + comma) throw bad("bad index");
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(line.data() + comma + 1, line.data() + line.size(), v);
    if (ec != std::errc() || p != line.data() + line.size() || !std::isfinite(v)) throw bad("bad score");
    if (idx != out.size()) throw bad("indices must be consecutive from 0");
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorKind::InvalidInput, path.string() + ": no scores");
  return out;
}

std::string format_histogram(const OverlapHistogram& hist) {
  std::string text = "bin_left,bin_right,p_id,p_ood\n";
  char buf[160];
  for (std::size_t b = 0; b < hist.p_id.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", hist.edges[b], hist.edges[b + 1], hist.p_id[b],
                  hist.p_ood[b]);
    text += buf;
  }
  std::snprintf(buf, sizeof buf, "# overlap=%.17g\n", hist.overlap);
  text += buf;
  return text;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::InvalidInput, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace palm::io
