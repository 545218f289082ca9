#pragma once

// Versioned binary container for trained models.
//
// Layout, all integers little-endian:
//   "SRE1"                      magic
//   u32 version
//   str kind                    gru | pop | spop | itemknn | bprmf
//   u32 n_items, n_items x str  vocabulary ids, then n_items x u64 popularity
//   u32 n_hyper, n_hyper x (str key, str value)
//   u32 n_mats, n_mats x (str name, u32 rows, u32 cols, rows*cols x f64)
// where str is a u32 byte length followed by UTF-8 bytes.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "sessrnn/baselines.hpp"
#include "sessrnn/gru_net.hpp"
#include "sessrnn/matrix.hpp"
#include "sessrnn/session_data.hpp"
#include "sessrnn/trainer.hpp"

namespace sessrnn {

inline constexpr char kModelMagic[4] = {'S', 'R', 'E', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class ModelKind { gru, pop, spop, itemknn, bprmf };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::gru: return "gru";
    case ModelKind::pop: return "pop";
    case ModelKind::spop: return "spop";
    case ModelKind::itemknn: return "itemknn";
    case ModelKind::bprmf: return "bprmf";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "gru") return ModelKind::gru;
  if (s == "pop") return ModelKind::pop;
  if (s == "spop") return ModelKind::spop;
  if (s == "itemknn") return ModelKind::itemknn;
  if (s == "bprmf") return ModelKind::bprmf;
  throw std::invalid_argument("unknown model kind '" + std::string(s) + "'");
}

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelFile {
  ModelKind kind = ModelKind::gru;
  ItemVocab vocab;
  std::vector<std::pair<std::string, std::string>> hyper;
  std::vector<std::pair<std::string, Matrix>> matrices;

  const std::string* find_hyper(std::string_view key) const {
    for (const auto& [k, v] : hyper)
      if (k == key) return &v;
    return nullptr;
  }
  const std::string& hyper_value(std::string_view key) const {
    if (auto* v = find_hyper(key)) return *v;
    throw ModelFormatError("model file lacks hyperparameter '" + std::string(key) + "'");
  }
  const Matrix& matrix(std::string_view name) const {
    for (const auto& [n, m] : matrices)
      if (n == name) return m;
    throw ModelFormatError("model file lacks matrix '" + std::string(name) + "'");
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline void put_str(std::ostream& os, std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) throw ModelFormatError("string too long");
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::uint32_t checked_u32(std::size_t n, const char* what) {
  if (n > std::numeric_limits<std::uint32_t>::max()) throw ModelFormatError(std::string(what) + " too large");
  return static_cast<std::uint32_t>(n);
}

inline void read_exact(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw ModelFormatError("model file truncated");
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  read_exact(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s;
  char buf[4096];
  for (std::size_t left = n; left > 0;) {
    const std::size_t k = std::min<std::size_t>(left, sizeof buf);
    read_exact(is, buf, k);
    s.append(buf, k);
    left -= k;
  }
  return s;
}

}  // namespace detail

inline void write_model(std::ostream& os, const ModelFile& m) {
  using namespace detail;
  os.write(kModelMagic, 4);
  put_u32(os, kModelFormatVersion);
  put_str(os, to_string(m.kind));
  put_u32(os, checked_u32(m.vocab.size(), "vocabulary"));
  for (const auto& id : m.vocab.items()) put_str(os, id);
  for (auto p : m.vocab.popularity()) put_u64(os, p);
  put_u32(os, checked_u32(m.hyper.size(), "hyperparameter block"));
  for (const auto& [k, v] : m.hyper) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, checked_u32(m.matrices.size(), "matrix count"));
  for (const auto& [name, mat] : m.matrices) {
    put_str(os, name);
    put_u32(os, checked_u32(mat.rows(), "matrix rows"));
    put_u32(os, checked_u32(mat.cols(), "matrix cols"));
    for (double v : mat.values()) put_f64(os, v);
  }
  if (!os) throw ModelFormatError("failed writing model");
}

inline ModelFile read_model(std::istream& is) {
  using namespace detail;
  char magic[4];
  read_exact(is, magic, 4);
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw ModelFormatError("not a model file (bad magic)");
  const std::uint32_t version = get_u32(is);
  if (version != kModelFormatVersion)
    throw ModelFormatError("unsupported model format version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelFormatVersion) + ")");
  ModelFile m;
  try {
    m.kind = parse_model_kind(get_str(is));
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(e.what());
  }
  const std::uint32_t n_items = get_u32(is);
  std::vector<std::string> ids;
  for (std::uint32_t i = 0; i < n_items; ++i) ids.push_back(get_str(is));
  std::vector<std::uint64_t> pop;
  for (std::uint32_t i = 0; i < n_items; ++i) pop.push_back(get_u64(is));
  try {
    m.vocab = ItemVocab::from_parts(std::move(ids), std::move(pop));
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(e.what());
  }
  const std::uint32_t n_hyper = get_u32(is);
  for (std::uint32_t i = 0; i < n_hyper; ++i) {
    std::string k = get_str(is);
    std::string v = get_str(is);
    m.hyper.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t n_mats = get_u32(is);
  for (std::uint32_t i = 0; i < n_mats; ++i) {
    std::string name = get_str(is);
    const std::uint32_t rows = get_u32(is);
    const std::uint32_t cols = get_u32(is);
    // Grown as read so a corrupt size hits truncation, not a huge allocation.
    std::vector<double> data;
    for (std::size_t k = 0, n = static_cast<std::size_t>(rows) * cols; k < n; ++k) data.push_back(get_f64(is));
    m.matrices.emplace_back(std::move(name), Matrix(rows, cols, std::move(data)));
  }
  return m;
}

inline void save_model(const std::string& path, const ModelFile& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_model(os, m);
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model " + path);
  return read_model(is);
}

// Hyperparameter values are written in shortest round-trip form so equal
// configurations give equal bytes.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ModelFormatError("bad number '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ModelFormatError("bad integer '" + s + "'");
  return v;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(',', start);
    if (pos == std::string::npos) pos = s.size();
    out.push_back(static_cast<std::size_t>(parse_uint(s.substr(start, pos - start))));
    start = pos + 1;
  }
  return out;
}

inline ModelFile gru_model_file(const NetworkParams& p, const TrainConfig& t, const ItemVocab& vocab) {
  if (vocab.size() != p.n_items()) throw std::invalid_argument("vocabulary size does not match the network");
  ModelFile m;
  m.kind = ModelKind::gru;
  m.vocab = vocab;
  const auto& c = p.config;
  m.hyper = {
      {"loss", std::string(to_string(t.loss))},
      {"batch_width", std::to_string(t.batch_width)},
      {"dropout", format_double(t.dropout)},
      {"learning_rate", format_double(t.learning_rate)},
      {"momentum", format_double(t.momentum)},
      {"optimizer", std::string(to_string(t.optimizer))},
      {"epochs", std::to_string(t.epochs)},
      {"seed", std::to_string(t.seed)},
      {"bptt_horizon", std::to_string(t.bptt_horizon)},
      {"extra_negatives", std::to_string(t.extra_negatives)},
      {"rmsprop_decay", format_double(t.rmsprop_decay)},
      {"epsilon", format_double(t.epsilon)},
      {"hidden", join_sizes(c.layers)},
      {"input_mode", std::string(to_string(c.input_mode))},
      {"input_decay", format_double(c.input_decay)},
      {"deep_input", c.deep_input ? "1" : "0"},
      {"use_bias", c.use_bias ? "1" : "0"},
      {"init_scale", format_double(c.init_scale)},
  };
  for (const auto& [name, mat] : p.named_params()) m.matrices.emplace_back(name, *mat);
  return m;
}

struct LoadedGru {
  NetworkParams params;
  TrainConfig train;
};

inline LoadedGru gru_from_model_file(const ModelFile& m) {
  if (m.kind != ModelKind::gru) throw ModelFormatError("model is not a GRU network");
  LoadedGru out;
  TrainConfig& t = out.train;
  NetworkConfig c;
  try {
    t.loss = parse_loss_kind(m.hyper_value("loss"));
    t.optimizer = parse_optimizer_kind(m.hyper_value("optimizer"));
    c.input_mode = parse_input_mode(m.hyper_value("input_mode"));
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(e.what());
  }
  t.batch_width = parse_uint(m.hyper_value("batch_width"));
  t.dropout = parse_double(m.hyper_value("dropout"));
  t.learning_rate = parse_double(m.hyper_value("learning_rate"));
  t.momentum = parse_double(m.hyper_value("momentum"));
  t.epochs = parse_uint(m.hyper_value("epochs"));
  t.seed = parse_uint(m.hyper_value("seed"));
  t.bptt_horizon = parse_uint(m.hyper_value("bptt_horizon"));
  t.extra_negatives = parse_uint(m.hyper_value("extra_negatives"));
  t.rmsprop_decay = parse_double(m.hyper_value("rmsprop_decay"));
  t.epsilon = parse_double(m.hyper_value("epsilon"));
  c.layers = split_sizes(m.hyper_value("hidden"));
  c.input_decay = parse_double(m.hyper_value("input_decay"));
  c.deep_input = m.hyper_value("deep_input") == "1";
  c.use_bias = m.hyper_value("use_bias") == "1";
  c.init_scale = parse_double(m.hyper_value("init_scale"));
  c.n_items = m.vocab.size();
  c.seed = t.seed;

  out.params = NetworkParams::init(c);
  for (auto& [name, mat] : out.params.named_params()) {
    const Matrix& stored = m.matrix(name);
    if (!stored.same_shape(*mat))
      throw ModelFormatError("matrix " + name + " has shape " + stored.shape() + ", expected " + mat->shape());
    *mat = stored;
  }
  return out;
}

inline ModelFile itemknn_model_file(const ItemKnnModel& knn, const ItemVocab& vocab) {
  ModelFile m;
  m.kind = ModelKind::itemknn;
  m.vocab = vocab;
  m.hyper = {{"lambda", format_double(knn.lambda())}, {"neighbors", std::to_string(knn.max_neighbors())}};
  std::size_t width = 0;
  for (std::size_t a = 0; a < knn.n_items(); ++a) width = std::max(width, knn.neighbors(a).size());
  Matrix idx(knn.n_items(), width, -1.0), sim(knn.n_items(), width, 0.0);
  for (std::size_t a = 0; a < knn.n_items(); ++a) {
    const auto& list = knn.neighbors(a);
    for (std::size_t k = 0; k < list.size(); ++k) {
      idx(a, k) = static_cast<double>(list[k].item);
      sim(a, k) = list[k].similarity;
    }
  }
  m.matrices.emplace_back("knn.neighbors", std::move(idx));
  m.matrices.emplace_back("knn.similarity", std::move(sim));
  return m;
}

inline ItemKnnModel itemknn_from_model_file(const ModelFile& m) {
  if (m.kind != ModelKind::itemknn) throw ModelFormatError("model is not an item-KNN model");
  const Matrix& idx = m.matrix("knn.neighbors");
  const Matrix& sim = m.matrix("knn.similarity");
  if (!idx.same_shape(sim) || idx.rows() != m.vocab.size()) throw ModelFormatError("item-KNN matrices malformed");
  std::vector<std::vector<Neighbor>> lists(idx.rows());
  for (std::size_t a = 0; a < idx.rows(); ++a)
    for (std::size_t k = 0; k < idx.cols(); ++k) {
      if (idx(a, k) < 0.0) break;
      const auto item = static_cast<ItemIndex>(idx(a, k));
      if (item >= m.vocab.size()) throw ModelFormatError("item-KNN neighbor outside vocabulary");
      lists[a].push_back({item, sim(a, k)});
    }
  return ItemKnnModel::from_neighbors(std::move(lists), parse_double(m.hyper_value("lambda")),
                                      parse_uint(m.hyper_value("neighbors")));
}

inline ModelFile bprmf_model_file(const BprMfModel& mf, const BprMfConfig& cfg, const ItemVocab& vocab) {
  ModelFile m;
  m.kind = ModelKind::bprmf;
  m.vocab = vocab;
  m.hyper = {{"factors", std::to_string(cfg.factors)},
             {"epochs", std::to_string(cfg.epochs)},
             {"learning_rate", format_double(cfg.learning_rate)},
             {"regularization", format_double(cfg.regularization)},
             {"seed", std::to_string(cfg.seed)}};
  m.matrices.emplace_back("bprmf.factors", mf.factors());
  return m;
}

inline BprMfModel bprmf_from_model_file(const ModelFile& m) {
  if (m.kind != ModelKind::bprmf) throw ModelFormatError("model is not a BPR-MF model");
  const Matrix& f = m.matrix("bprmf.factors");
  if (f.rows() != m.vocab.size()) throw ModelFormatError("BPR-MF factors do not match the vocabulary");
  return BprMfModel(f);
}

inline ModelFile popularity_model_file(ModelKind kind, const ItemVocab& vocab) {
  if (kind != ModelKind::pop && kind != ModelKind::spop)
    throw std::invalid_argument("popularity_model_file: kind must be pop or spop");
  ModelFile m;
  m.kind = kind;
  m.vocab = vocab;
  return m;
}

/// Any persisted model, ready to hand out session scorers.
class LoadedModel {
 public:
  explicit LoadedModel(const ModelFile& file) : kind_(file.kind), vocab_(file.vocab), file_hyper_(file.hyper) {
    switch (kind_) {
      case ModelKind::gru: gru_ = gru_from_model_file(file); break;
      case ModelKind::itemknn: knn_ = itemknn_from_model_file(file); break;
      case ModelKind::bprmf: bprmf_ = bprmf_from_model_file(file); break;
      case ModelKind::pop:
      case ModelKind::spop: break;
    }
  }

  ModelKind kind() const { return kind_; }
  const ItemVocab& vocab() const { return vocab_; }
  const std::vector<std::pair<std::string, std::string>>& hyper() const { return file_hyper_; }
  const LoadedGru* gru() const { return gru_ ? &*gru_ : nullptr; }

  /// The returned scorer references this model and must not outlive it.
  std::unique_ptr<SessionScorer> make_scorer() const {
    switch (kind_) {
      case ModelKind::gru: return std::make_unique<GruScorer>(gru_->params);
      case ModelKind::pop: return std::make_unique<PopScorer>(vocab_.popularity());
      case ModelKind::spop: return std::make_unique<SPopScorer>(vocab_.popularity());
      case ModelKind::itemknn: return std::make_unique<ItemKnnScorer>(*knn_);
      case ModelKind::bprmf: return std::make_unique<BprMfScorer>(*bprmf_);
    }
    throw std::logic_error("make_scorer: bad model kind");
  }

 private:
  ModelKind kind_;
  ItemVocab vocab_;
  std::vector<std::pair<std::string, std::string>> file_hyper_;
  std::optional<LoadedGru> gru_;
  std::optional<ItemKnnModel> knn_;
  std::optional<BprMfModel> bprmf_;
};

}  // namespace sessrnn
