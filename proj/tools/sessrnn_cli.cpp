// sessrnn: prepare / train / baseline / evaluate / recommend.
//
// Data goes to stdout, diagnostics to stderr. Exit status is 0 only when the
// command completed.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sessrnn/sessrnn.hpp"

namespace fs = std::filesystem;
using namespace sessrnn;

namespace {

constexpr const char* kDataDirEnv = "SESSRNN_DATA_DIR";

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Relative data paths that do not exist here are looked up in $SESSRNN_DATA_DIR.
std::string data_path(const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || fs::exists(p)) return p;
  if (const char* dir = std::getenv(kDataDirEnv); dir && *dir) {
    fs::path alt = fs::path(dir) / p;
    if (fs::exists(alt)) return alt.string();
  }
  return p;
}

Dataset read_dataset(const std::string& path, const IngestOptions& opts) {
  std::ifstream in(data_path(path), std::ios::binary);
  if (!in) throw CliError("cannot read " + path);
  return ingest_csv(in, opts);
}

void write_dataset(const std::string& path, const SessionStore& st, const ItemVocab& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CliError("cannot write " + path);
  write_csv(out, st, vocab);
  if (!out) throw CliError("failed writing " + path);
}

std::size_t count_items(const SessionStore& st) {
  std::vector<char> seen;
  std::size_t n = 0;
  for (const auto& s : st.sessions())
    for (auto i : s.items) {
      if (i >= seen.size()) seen.resize(i + 1, 0);
      if (!seen[i]) ++n, seen[i] = 1;
    }
  return n;
}

// Flat `key = value` file; values only fill options not given on the command line.
void apply_config_file(CLI::App& cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError("cannot read config " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    auto trimmed = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trimmed(line).empty()) continue;
    if (eq == std::string::npos) throw CliError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trimmed(line.substr(0, eq)), value = trimmed(line.substr(eq + 1));
    for (auto& c : key)
      if (c == '_') c = '-';
    CLI::Option* opt = nullptr;
    try {
      opt = cmd.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw CliError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (opt->count() > 0) continue;  // flag wins
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1" || value == "yes") opt->add_result("true");
      else if (!(value == "false" || value == "0" || value == "no"))
        throw CliError(path + ":" + std::to_string(lineno) + ": '" + key + "' expects true/false");
      else
        continue;
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

// ---- prepare ---------------------------------------------------------------

struct PrepareArgs {
  std::string input;
  std::vector<std::string> out;
  std::optional<std::int64_t> split_time;
  std::optional<std::int64_t> split_last_days;
  std::size_t max_session_len = 200;
  bool iso_time = false;
};

int cmd_prepare(const PrepareArgs& a) {
  IngestOptions io;
  io.max_session_length = a.max_session_len;
  io.iso_timestamps = a.iso_time;
  Dataset ds = read_dataset(a.input, io);
  if (ds.store.empty()) throw CliError("no sessions left after filtering " + a.input);
  std::int64_t boundary = 0;
  if (a.split_time) boundary = *a.split_time;
  else boundary = last_days_boundary(ds.store, *a.split_last_days);
  TrainTestSplit sp = split_train_test(ds.store, ds.vocab, boundary);
  if (sp.train.empty()) throw CliError("train partition is empty (boundary " + std::to_string(boundary) + ")");
  if (sp.test.empty()) throw CliError("test partition is empty (boundary " + std::to_string(boundary) + ")");
  write_dataset(a.out[0], sp.train, sp.train_vocab);
  write_dataset(a.out[1], sp.test, sp.train_vocab);
  std::cout << "split_time=" << boundary << "\n"
            << "train_sessions=" << sp.train.size() << "\n"
            << "train_events=" << sp.train.n_events() << "\n"
            << "train_items=" << sp.train_vocab.size() << "\n"
            << "test_sessions=" << sp.test.size() << "\n"
            << "test_events=" << sp.test.n_events() << "\n"
            << "test_items=" << count_items(sp.test) << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string model;
  std::string loss = "top1";
  std::string optimizer = "adagrad";
  std::string input_mode = "one_hot";
  std::vector<std::size_t> layers;
  std::size_t hidden = 100;
  TrainConfig train;
  NetworkConfig net;
  bool quiet = false;
};

int cmd_train(TrainArgs a) {
  a.train.loss = parse_loss_kind(a.loss);
  a.train.optimizer = parse_optimizer_kind(a.optimizer);
  a.net.input_mode = parse_input_mode(a.input_mode);
  a.net.layers = a.layers.empty() ? std::vector<std::size_t>{a.hidden} : a.layers;
  a.train.validate();
  IngestOptions io;
  io.max_session_length = std::numeric_limits<std::size_t>::max();
  Dataset ds = read_dataset(a.data, io);
  if (ds.store.empty()) throw CliError("no training sessions in " + a.data);
  std::cerr << "training on " << ds.store.size() << " sessions, " << ds.store.n_events() << " events, "
            << ds.vocab.size() << " items\n";

  a.net.n_items = ds.vocab.size();
  a.net.seed = a.train.seed;
  NetworkParams params = NetworkParams::init(a.net);
  GruTrainer trainer(params, a.train, ds.vocab.popularity());
  for (std::size_t e = 0; e < a.train.epochs; ++e) {
    EpochStats st = trainer.run_epoch(ds.store);
    if (!a.quiet)
      std::cerr << "epoch " << st.epoch + 1 << "/" << a.train.epochs << " mean_loss=" << st.mean_loss
                << " batches=" << st.batches << "\n";
  }
  save_model(a.model, gru_model_file(params, a.train, ds.vocab));
  std::cerr << "wrote " << a.model << "\n";
  return 0;
}

// ---- baseline --------------------------------------------------------------

struct BaselineArgs {
  std::string data;
  std::string model;
  std::string kind;
  double lambda = 20.0;
  std::size_t neighbors = 100;
  BprMfConfig mf;
};

int cmd_baseline(const BaselineArgs& a) {
  const ModelKind kind = parse_model_kind(a.kind);
  IngestOptions io;
  io.max_session_length = std::numeric_limits<std::size_t>::max();
  Dataset ds = read_dataset(a.data, io);
  if (ds.store.empty()) throw CliError("no training sessions in " + a.data);
  ModelFile file;
  switch (kind) {
    case ModelKind::pop:
    case ModelKind::spop: file = popularity_model_file(kind, ds.vocab); break;
    case ModelKind::itemknn:
      file = itemknn_model_file(ItemKnnModel::train(ds.store, ds.vocab.size(), a.lambda, a.neighbors), ds.vocab);
      break;
    case ModelKind::bprmf:
      file = bprmf_model_file(BprMfModel::train(ds.store, ds.vocab.size(), a.mf), a.mf, ds.vocab);
      break;
    case ModelKind::gru: throw CliError("use 'train' for the GRU model");
  }
  save_model(a.model, file);
  std::cerr << "wrote " << a.kind << " model to " << a.model << "\n";
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> models;
  std::string test;
  std::size_t cutoff = 20;
  std::optional<std::size_t> prefilter;
  bool table = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  IngestOptions io;
  io.max_session_length = std::numeric_limits<std::size_t>::max();
  Dataset raw = read_dataset(a.test, io);
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& path : a.models) {
    LoadedModel model(load_model(path));
    std::size_t dropped = 0;
    SessionStore test = remap_sessions(raw.store, raw.vocab, model.vocab(), &dropped);
    if (dropped > 0) std::cerr << path << ": dropped " << dropped << " test events on items unknown to the model\n";
    auto scorer = model.make_scorer();
    const auto pop = model.vocab().popularity();
    EvalReport rep = evaluate(*scorer, test, {a.cutoff, a.prefilter}, &pop);
    if (!rep.defined()) std::cerr << path << ": no test cases; metrics undefined\n";
    if (a.table)
      rows.emplace_back(std::string(to_string(model.kind())), rep);
    else
      std::cout << (a.models.size() > 1 ? "model=" + path + " " : "") << rep.to_line() << "\n";
  }
  if (a.table) write_report_table(std::cout, rows);
  return 0;
}

// ---- recommend -------------------------------------------------------------

struct RecommendArgs {
  std::string model;
  std::size_t top_k = 20;
  bool strict = false;
};

int cmd_recommend(const RecommendArgs& a) {
  LoadedModel model(load_model(a.model));
  auto scorer = model.make_scorer();
  const ItemVocab& vocab = model.vocab();
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> scores;
  while (std::getline(std::cin, line)) {
    ++lineno;
    std::istringstream tokens(line);
    std::string tok;
    scorer->reset();
    std::size_t seen = 0;
    while (tokens >> tok) {
      auto idx = vocab.find(tok);
      if (!idx) {
        if (a.strict) throw CliError("line " + std::to_string(lineno) + ": unknown item '" + tok + "'");
        std::cerr << "warning: line " << lineno << ": skipping unknown item '" << tok << "'\n";
        continue;
      }
      scorer->observe(*idx);
      ++seen;
    }
    if (seen == 0) {
      std::cerr << "warning: line " << lineno << ": no known items, nothing to recommend\n";
      std::cout << "\n";
      continue;
    }
    scorer->scores(scores);
    // Same order as the evaluator: by score, ties by index.
    std::vector<ItemIndex> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t k = std::min(a.top_k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](ItemIndex x, ItemIndex y) { return scores[x] != scores[y] ? scores[x] > scores[y] : x < y; });
    for (std::size_t r = 0; r < k; ++r) std::cout << vocab.item(order[r]) << '\t' << scores[order[r]] << '\n';
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::cout.precision(17);
  CLI::App app{"Session-based next-item recommendation with GRU networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sessrnn 1.0");

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Group clicks into sessions and split train/test by time");
  p->add_option("--input", prep.input, "Click CSV (SessionId,ItemId,Time)")->required();
  p->add_option("--out", prep.out, "Output train and test CSV")->required()->expected(2);
  auto* st = p->add_option("--split-time", prep.split_time, "Sessions starting at or after this time (ms) are test");
  auto* sd = p->add_option("--split-last-days", prep.split_last_days, "Use the last N UTC days as test")
                 ->check(CLI::PositiveNumber);
  st->excludes(sd);
  p->add_option("--max-session-len", prep.max_session_len, "Drop longer sessions")->capture_default_str();
  p->add_flag("--iso-time", prep.iso_time, "Time column is ISO-8601");

  TrainArgs tr;
  std::string train_config;
  auto* t = app.add_subcommand("train", "Train the GRU network");
  t->add_option("--data", tr.data, "Training CSV")->required();
  t->add_option("--model", tr.model, "Output model file")->required();
  t->add_option("--loss", tr.loss, "top1 | bpr | xent")->capture_default_str();
  t->add_option("--hidden", tr.hidden, "GRU units (single layer)")->capture_default_str();
  t->add_option("--layers", tr.layers, "GRU units per layer, overrides --hidden")->delimiter(',');
  t->add_option("--batch", tr.train.batch_width, "Session-parallel batch width")->capture_default_str();
  t->add_option("--lr", tr.train.learning_rate, "Learning rate")->capture_default_str();
  t->add_option("--momentum", tr.train.momentum, "Momentum")->capture_default_str();
  t->add_option("--dropout", tr.train.dropout, "Dropout on GRU outputs")->capture_default_str();
  t->add_option("--optimizer", tr.optimizer, "adagrad | rmsprop")->capture_default_str();
  t->add_option("--epochs", tr.train.epochs, "Training epochs")->capture_default_str();
  t->add_option("--seed", tr.train.seed, "Random seed")->capture_default_str();
  t->add_option("--bptt", tr.train.bptt_horizon, "Backprop window in steps")->capture_default_str();
  t->add_option("--extra-negatives", tr.train.extra_negatives, "Popularity samples added to in-batch negatives");
  t->add_option("--rmsprop-decay", tr.train.rmsprop_decay)->capture_default_str();
  t->add_option("--input-mode", tr.input_mode, "one_hot | discounted")->capture_default_str();
  t->add_option("--decay", tr.net.input_decay, "Decay of the discounted input")->capture_default_str();
  t->add_flag("--deep-input", tr.net.deep_input, "Feed items to every layer");
  t->add_flag("--bias", tr.net.use_bias, "Use bias terms");
  t->add_option("--init-scale", tr.net.init_scale, "Uniform init range, <= 0 for the fan-based default");
  t->add_flag("--quiet", tr.quiet, "No per-epoch log");
  t->add_option("--config", train_config, "key = value file; flags win");

  BaselineArgs bl;
  auto* b = app.add_subcommand("baseline", "Fit a baseline model");
  b->add_option("--data", bl.data, "Training CSV")->required();
  b->add_option("--model", bl.model, "Output model file")->required();
  b->add_option("--kind", bl.kind, "pop | spop | itemknn | bprmf")
      ->required()
      ->check(CLI::IsMember({"pop", "spop", "itemknn", "bprmf"}));
  b->add_option("--lambda", bl.lambda, "Item-KNN similarity regularizer")->capture_default_str();
  b->add_option("--neighbors", bl.neighbors, "Item-KNN neighbors kept per item")->capture_default_str();
  b->add_option("--factors", bl.mf.factors, "BPR-MF latent factors")->capture_default_str();
  b->add_option("--epochs", bl.mf.epochs, "BPR-MF epochs")->capture_default_str();
  b->add_option("--lr", bl.mf.learning_rate, "BPR-MF learning rate")->capture_default_str();
  b->add_option("--reg", bl.mf.regularization, "BPR-MF L2 regularization")->capture_default_str();
  b->add_option("--seed", bl.mf.seed, "Random seed")->capture_default_str();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Recall@K and MRR@K on a test CSV");
  e->add_option("--model", ev.models, "Model file(s)")->required();
  e->add_option("--test", ev.test, "Test CSV")->required();
  e->add_option("--cutoff", ev.cutoff, "K")->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--prefilter", ev.prefilter, "Rank only among the N most popular items");
  e->add_flag("--table", ev.table, "Tabular output");

  RecommendArgs rc;
  auto* r = app.add_subcommand("recommend", "Top-k next items for each stdin line of item ids");
  r->add_option("--model", rc.model, "Model file")->required();
  r->add_option("-k,--top", rc.top_k, "Items per query")->capture_default_str()->check(CLI::PositiveNumber);
  r->add_flag("--strict", rc.strict, "Fail on unknown item ids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err, std::cerr, std::cerr);
  }

  try {
    if (*p) {
      if (!prep.split_time && !prep.split_last_days) throw CliError("one of --split-time, --split-last-days is required");
      return cmd_prepare(prep);
    }
    if (*t) {
      if (!train_config.empty()) apply_config_file(*t, train_config);
      return cmd_train(tr);
    }
    if (*b) return cmd_baseline(bl);
    if (*e) return cmd_evaluate(ev);
    if (*r) return cmd_recommend(rc);
  } catch (const DivergenceError& err) {
    std::cerr << "error: training diverged: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
