#include "mednli/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mednli/error.h"

namespace mednli {

namespace {

constexpr const char* kModule = "checkpoint";
constexpr std::string_view kMagic = "MEDNLICK";

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::string_view bytes(std::size_t n) {
    if (n > in_.size() - pos_) throw ParseError(kModule, "truncated checkpoint");
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str32() { return std::string(bytes(u32())); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t get(int n) {
    auto s = bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_block(Writer& w, const std::string& name, const ParameterBlock& block) {
  w.str32(name);
  w.u32(static_cast<std::uint32_t>(block.shape.size()));
  for (auto d : block.shape) w.u64(d);
  for (double v : block.values) w.f64(v);
}

nlohmann::ordered_json header_json(const Checkpoint& c) {
  nlohmann::ordered_json h;
  h["format_version"] = Checkpoint::kFormatVersion;
  h["model_kind"] = to_string(c.kind);
  h["model_config"] = c.model_config;
  h["train_config"] = c.train_config;
  h["provenance"] = c.provenance;
  h["adam_step"] = c.adam_step;
  h["best_step"] = c.best_step;
  h["best_dev_loss"] = c.best_dev_loss;
  h["best_dev_accuracy"] = c.best_dev_accuracy;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : c.history) rows.push_back({r.step, r.train_loss, r.dev_loss, r.dev_accuracy});
  h["history"] = rows;
  return h;
}

}  // namespace

std::string checkpoint_header(const Checkpoint& checkpoint) { return header_json(checkpoint).dump(); }

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic);
  w.u32(Checkpoint::kFormatVersion);
  const std::string header = checkpoint_header(c);
  w.u64(header.size());
  w.bytes(header);
  w.u64(c.vocabulary.size());
  for (const auto& t : c.vocabulary) w.str32(t);
  w.u64(c.parameters.size() + c.adam_first.size() + c.adam_second.size());
  for (const auto& b : c.parameters) write_block(w, "param/" + b.name, b);
  for (const auto& b : c.adam_first) write_block(w, "adam.m/" + b.name, b);
  for (const auto& b : c.adam_second) write_block(w, "adam.v/" + b.name, b);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw ParseError(kModule, "not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != Checkpoint::kFormatVersion) {
    throw ParseError(kModule, "unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(r.bytes(r.u64()));
    c.kind = parse_model_kind(h.at("model_kind").get<std::string>());
    c.model_config = h.at("model_config");
    c.train_config = h.at("train_config");
    c.provenance = h.at("provenance").get<std::vector<std::string>>();
    c.adam_step = h.at("adam_step").get<std::uint64_t>();
    c.best_step = h.at("best_step").get<std::size_t>();
    c.best_dev_loss = h.at("best_dev_loss").get<double>();
    c.best_dev_accuracy = h.at("best_dev_accuracy").get<double>();
    for (const auto& row : h.at("history")) {
      c.history.push_back({row.at(0).get<std::size_t>(), row.at(1).get<double>(),
                           row.at(2).get<double>(), row.at(3).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(kModule, std::string("malformed header: ") + e.what());
  }
  const auto vocab_size = r.u64();
  for (std::uint64_t i = 0; i < vocab_size; ++i) c.vocabulary.push_back(r.str32());
  const auto blocks = r.u64();
  for (std::uint64_t i = 0; i < blocks; ++i) {
    ParameterBlock b;
    std::string full = r.str32();
    const auto rank = r.u32();
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      b.shape.push_back(r.u64());
      const auto dim = b.shape.back();
      if (dim != 0 && count > r.remaining() / 8 / dim) throw ParseError(kModule, "truncated checkpoint");
      count *= dim;
    }
    b.values.resize(count);
    for (auto& v : b.values) v = r.f64();
    auto slash = full.find('/');
    const std::string kind = full.substr(0, slash);
    b.name = slash == std::string::npos ? full : full.substr(slash + 1);
    if (kind == "param") {
      c.parameters.push_back(std::move(b));
    } else if (kind == "adam.m") {
      c.adam_first.push_back(std::move(b));
    } else if (kind == "adam.v") {
      c.adam_second.push_back(std::move(b));
    } else {
      throw ParseError(kModule, "unknown block '" + full + "'");
    }
  }
  if (!r.done()) throw ParseError(kModule, "trailing bytes after last block");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(kModule, "cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

std::string metrics_table(const std::vector<MetricRow>& history) {
  std::ostringstream os;
  os << "step\ttrain_loss\tdev_loss\tdev_accuracy\n";
  os << std::setprecision(10);
  for (const auto& r : history) {
    os << r.step << '\t' << r.train_loss << '\t' << r.dev_loss << '\t' << r.dev_accuracy << '\n';
  }
  return os.str();
}

std::vector<ParameterBlock> snapshot(const ParameterList& params) {
  std::vector<ParameterBlock> blocks;
  blocks.reserve(params.size());
  for (const auto& p : params) {
    blocks.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  return blocks;
}

void restore(const ParameterList& params, const std::vector<ParameterBlock>& blocks) {
  std::map<std::string, const ParameterBlock*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError(kModule, "missing parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw DimensionError(kModule, "parameter '" + p.name + "' has shape " +
                                        shape_string(it->second->shape) + ", model expects " +
                                        shape_string(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::copy(it->second->values.begin(), it->second->values.end(), t.mutable_data().begin());
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& checkpoint) {
  Vocabulary vocab(checkpoint.vocabulary, tokenizer_mode_for(checkpoint.kind));
  auto model = make_model(checkpoint.kind, std::move(vocab), checkpoint.model_config, 0);
  restore(model->parameters(), checkpoint.parameters);
  return model;
}

}  // namespace mednli
