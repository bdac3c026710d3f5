#include "dualstyle/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "dualstyle/eval.hpp"
#include "dualstyle/pseudo.hpp"

namespace dualstyle {

namespace {

using nlohmann::json;

const char* content_variant_name(ContentVariant v) {
  return v == ContentVariant::ReconstructionProb ? "reconstruction_prob" : "bleu";
}

ContentVariant parse_content_variant(const std::string& s) {
  if (s == "reconstruction_prob") return ContentVariant::ReconstructionProb;
  if (s == "bleu") return ContentVariant::BleuDoublePrime;
  throw Error(ErrorCode::BadConfig, "unknown content variant: " + s);
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

void kv(std::ostream& log, const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields) {
  log << "event=" << event;
  for (const auto& [k, v] : fields) log << ' ' << k << '=' << v;
  log << '\n';
  log.flush();
}

std::string str(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void write_json(const std::filesystem::path& file, const json& j) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + file.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, file.string() + ": " + e.what());
  }
}

std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Seq2SeqConfig model_config(const RunConfig& cfg, const Vocabulary& vocab) {
  return Seq2SeqConfig{vocab.size(), cfg.embed_dim, cfg.hidden_dim};
}

Direction parse_direction(const std::string& s) {
  if (s == "x2y") return Direction::XtoY;
  if (s == "y2x") return Direction::YtoX;
  throw Error(ErrorCode::BadConfig, "direction must be x2y or y2x");
}

// ---- commands -------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  SyntheticTaskSpec spec = cfg.synth;
  const auto task = generate_synthetic(spec);
  write_corpus(task.corpus, cfg.data_dir);
  write_json(cfg.data_dir / "labels.json", {{"x", task.corpus.labels[0].name}, {"y", task.corpus.labels[1].name}});
  json gold = json::object();
  for (const auto& [a, b] : task.gold_map) gold[a] = b;
  write_json(cfg.data_dir / "gold_map.json", gold);
  kv(log, "synth", {{"kind", kind_name(spec.kind)},
                    {"seed", std::to_string(spec.seed)},
                    {"dir", cfg.data_dir.string()},
                    {"train_x", std::to_string(task.corpus.side(Style::X)[Split::Train].size())},
                    {"train_y", std::to_string(task.corpus.side(Style::Y)[Split::Train].size())}});
  return 0;
}

struct Loaded {
  StyleCorpus corpus;
  Vocabulary vocab;
};

Loaded load_indexed(const RunConfig& cfg, const RunLayout& layout) {
  Loaded l{load_corpus(cfg), load_vocab(layout.vocab())};
  index_corpus(l.corpus, l.vocab);
  return l;
}

int cmd_pretrain_classifier(const RunConfig& cfg, const RunLayout& layout, std::ostream& log) {
  StyleCorpus corpus = load_corpus(cfg);
  const auto vocab = Vocabulary::build(corpus, cfg.min_count);
  save_vocab(layout.vocab(), vocab);
  index_corpus(corpus, vocab);
  ClassifierTrainConfig cc = cfg.classifier;
  cc.model.vocab_size = vocab.size();
  cc.seed = cfg.seed;
  auto res = train_classifier(corpus, cc);
  res.classifier.save(layout.classifier(), vocab.hash());
  kv(log, "classifier", {{"vocab", std::to_string(vocab.size())},
                         {"dev_acc", str(100.0 * res.dev_accuracy)},
                         {"hash", hex(hash_params(res.classifier.params()))}});
  return 0;
}

int cmd_make_pseudo(const RunConfig& cfg, const RunLayout& layout, std::ostream& log) {
  auto l = load_indexed(cfg, layout);
  const auto lex = build_style_lexicon(l.corpus, cfg.lexicon_lambda, cfg.lexicon_gamma);
  const auto pairs = make_pretrain_pairs(l.corpus, lex, l.vocab);
  write_pairs_tsv(layout.pseudo_dir() / "forward.tsv", pairs.forward);
  write_pairs_tsv(layout.pseudo_dir() / "backward.tsv", pairs.backward);
  kv(log, "pseudo", {{"lexicon_x", std::to_string(lex.entries[0].size())},
                     {"lexicon_y", std::to_string(lex.entries[1].size())},
                     {"forward", std::to_string(pairs.forward.size())},
                     {"backward", std::to_string(pairs.backward.size())}});
  return 0;
}

// Template pairs over the dev split, scored only.
PretrainPairs dev_template_pairs(const RunConfig& cfg, const StyleCorpus& corpus, const Vocabulary& vocab) {
  StyleCorpus dev = corpus;
  for (auto& side : dev.sides) side[Split::Train] = side[Split::Dev];
  const auto lex = build_style_lexicon(corpus, cfg.lexicon_lambda, cfg.lexicon_gamma);
  return make_pretrain_pairs(dev, lex, vocab);
}

int cmd_pretrain(const RunConfig& cfg, const RunLayout& layout, std::ostream& log) {
  auto l = load_indexed(cfg, layout);
  PretrainPairs pairs{read_pairs_tsv(layout.pseudo_dir() / "forward.tsv", l.vocab),
                      read_pairs_tsv(layout.pseudo_dir() / "backward.tsv", l.vocab)};
  const auto dev = dev_template_pairs(cfg, l.corpus, l.vocab);
  Seq2Seq f(model_config(cfg, l.vocab), "f", cfg.seed * 2 + 11);
  Seq2Seq g(model_config(cfg, l.vocab), "g", cfg.seed * 2 + 12);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  pretrain(f, g, pairs, tc, &dev, &log);
  std::filesystem::create_directories(layout.pretrained('f').parent_path());
  f.save(layout.pretrained('f'), l.vocab.hash());
  g.save(layout.pretrained('g'), l.vocab.hash());
  return 0;
}

int cmd_train(RunConfig cfg, const RunLayout& layout, bool resume, std::ostream& log) {
  auto l = load_indexed(cfg, layout);
  const auto clf = StyleClassifier::load(layout.classifier());
  const auto f = Seq2Seq::load(layout.pretrained('f'));
  const auto g = Seq2Seq::load(layout.pretrained('g'));
  const auto dir = layout.train_dir(cfg.train.ablation);
  std::filesystem::create_directories(dir);
  cfg.train.seed = cfg.seed;
  write_json(dir / "config.json", cfg.to_json());
  const auto clf_hash = hash_params(clf.params());
  kv(log, "train_start", {{"ablation", ablation_name(cfg.train.ablation)},
                          {"dir", dir.string()},
                          {"classifier_hash", hex(clf_hash)}});
  auto res = train(f, g, clf, l.corpus, l.vocab, cfg.train, RunFiles{dir, resume}, &log);
  const auto dm = dev_metrics(res.f, res.g, clf, l.corpus, l.vocab, Split::Dev, 0);
  json summary = {{"ablation", ablation_name(cfg.train.ablation)},
                  {"best_epoch", res.state.best_epoch},
                  {"epochs", res.state.epoch},
                  {"iterations", res.state.iteration},
                  {"degenerate_samples", res.state.degenerate_samples},
                  {"dev_acc", dm.acc},
                  {"dev_self_bleu", dm.self_bleu},
                  {"dev_gold_bleu", dm.gold_bleu},
                  {"dev_score", dm.score},
                  {"classifier_hash", hex(clf_hash)}};
  write_json(dir / "summary.json", summary);
  kv(log, "train_done", {{"best_epoch", std::to_string(res.state.best_epoch)},
                         {"dev_acc_x2y", str(dm.acc[0])},
                         {"dev_acc_y2x", str(dm.acc[1])},
                         {"dev_gold_bleu_x2y", str(dm.gold_bleu[0])},
                         {"dev_gold_bleu_y2x", str(dm.gold_bleu[1])},
                         {"dev_score", str(dm.score)}});
  return 0;
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

// Blank input lines stay blank in the output.
std::vector<std::string> transfer_lines(const Seq2Seq& model, const Vocabulary& vocab,
                                        const std::vector<std::string>& lines) {
  std::vector<std::string> out(lines.size());
  std::vector<Sentence> inputs;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t\r") == std::string::npos) continue;
    inputs.push_back(to_ids(tokenize(lines[i]), vocab));
    where.push_back(i);
  }
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    std::vector<const Sentence*> batch;
    for (std::size_t i = start; i < std::min(inputs.size(), start + kChunk); ++i) batch.push_back(&inputs[i]);
    const auto ys = greedy_decode_batch(model, batch);
    for (std::size_t i = 0; i < ys.size(); ++i) out[where[start + i]] = join(from_ids(ys[i].ids, vocab).surface);
  }
  return out;
}

Seq2Seq load_direction(const RunLayout& layout, Ablation a, Direction d, const std::string& checkpoint) {
  if (!checkpoint.empty()) return Seq2Seq::load(checkpoint);
  return Seq2Seq::load(layout.best(a, d == Direction::XtoY ? 'f' : 'g'));
}

int cmd_transfer(const RunConfig& cfg, const RunLayout& layout, const std::string& direction,
                 const std::string& in, const std::string& out, const std::string& checkpoint, std::ostream& log) {
  const auto vocab = load_vocab(layout.vocab());
  const auto dir = parse_direction(direction);
  const auto model = load_direction(layout, cfg.train.ablation, dir, checkpoint);
  const auto lines = read_lines(in);
  const auto outputs = transfer_lines(model, vocab, lines);
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + out);
  for (const auto& s : outputs) os << s << '\n';
  kv(log, "transfer", {{"direction", direction}, {"lines", std::to_string(lines.size())}, {"out", out}});
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const RunLayout& layout, const std::string& direction, std::string outputs,
                 std::vector<std::string> refs, const std::string& split_name_arg, const std::string& checkpoint,
                 std::string report, std::ostream& out, std::ostream& log) {
  const auto vocab = load_vocab(layout.vocab());
  const auto clf = StyleClassifier::load(layout.classifier());
  const auto dir = parse_direction(direction);
  const Style src = source_style(dir);
  Split split = Split::Test;
  if (split_name_arg == "dev") split = Split::Dev;
  else if (split_name_arg != "test") throw Error(ErrorCode::BadConfig, "split must be dev or test");

  json labels = std::filesystem::exists(cfg.data_dir / "labels.json") ? read_json(cfg.data_dir / "labels.json")
                                                                       : json{{"x", "x"}, {"y", "y"}};
  const std::string src_name = labels.at(src == Style::X ? "x" : "y");
  const auto inputs_file = cfg.data_dir / (src_name + "." + split_name(split) + ".txt");
  const auto eval_dir = layout.train_dir(cfg.train.ablation) / "eval";
  if (outputs.empty()) {
    const auto model = load_direction(layout, cfg.train.ablation, dir, checkpoint);
    const auto produced = transfer_lines(model, vocab, read_lines(inputs_file));
    outputs = (eval_dir / (direction + "." + split_name(split) + ".out.txt")).string();
    std::filesystem::create_directories(eval_dir);
    std::ofstream os(outputs, std::ios::trunc);
    for (const auto& s : produced) os << s << '\n';
  }
  if (refs.empty()) {
    for (int k = 0;; ++k) {
      const auto f = cfg.data_dir / (src_name + "." + split_name(split) + ".ref" + std::to_string(k) + ".txt");
      if (!std::filesystem::exists(f)) break;
      refs.push_back(f.string());
    }
    if (refs.empty()) throw Error(ErrorCode::MissingReference, "no reference files for " + inputs_file.string());
  }
  std::vector<std::filesystem::path> ref_paths(refs.begin(), refs.end());
  const auto rep = evaluate_files(outputs, ref_paths, clf, vocab, opposite(src), inputs_file,
                                  hex(config_hash(cfg.to_json())));
  if (report.empty()) report = (eval_dir / (direction + "." + split_name(split))).string();
  rep.write(report + ".json", report + ".tsv");
  out << rep.to_json().dump() << '\n';
  kv(log, "evaluate", {{"direction", direction},
                       {"acc", str(rep.acc)},
                       {"bleu", str(rep.bleu)},
                       {"g2", str(rep.g2)},
                       {"h2", str(rep.h2)},
                       {"n", std::to_string(rep.n_sentences)}});
  return 0;
}

}  // namespace

// ---- config ---------------------------------------------------------------

json RunConfig::to_json() const {
  const auto& t = train;
  return {{"data_dir", data_dir.string()},
          {"run_dir", run_dir.string()},
          {"seed", seed},
          {"kind", kind_name(synth.kind)},
          {"vocab_size", synth.vocab_size},
          {"max_len", synth.max_len},
          {"pair_count", synth.pair_count},
          {"train_per_style", synth.train_per_style},
          {"dev_per_style", synth.dev_per_style},
          {"test_per_style", synth.test_per_style},
          {"synth_seed", synth.seed},
          {"min_count", min_count},
          {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},
          {"cls_embed_dim", classifier.model.embed_dim},
          {"cls_channels", classifier.model.channels},
          {"cls_widths", classifier.model.widths},
          {"cls_epochs", classifier.epochs},
          {"cls_batch", classifier.batch},
          {"cls_lr", classifier.lr},
          {"lexicon_lambda", lexicon_lambda},
          {"lexicon_gamma", lexicon_gamma},
          {"pretrain_epochs", t.pretrain_epochs},
          {"max_dual_epochs", t.max_dual_epochs},
          {"max_iterations", t.max_iterations},
          {"iterations_per_epoch", t.iterations_per_epoch},
          {"pretrain_lr", t.pretrain_lr},
          {"dual_lr", t.dual_lr},
          {"pretrain_batch", t.pretrain_batch},
          {"dual_batch", t.dual_batch},
          {"beta", t.reward.beta},
          {"k", t.reward.k},
          {"length_normalize_content", t.reward.length_normalize_content},
          {"content_variant", content_variant_name(t.reward.content_variant)},
          {"p0", t.schedule.p0},
          {"p_max", t.schedule.p_max},
          {"rate", t.schedule.rate},
          {"gap", t.schedule.gap},
          {"baseline", baseline_name(t.baseline)},
          {"ablation", ablation_name(t.ablation)},
          {"patience", t.patience},
          {"temperature", t.temperature},
          {"dev_limit", t.dev_limit}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw Error(ErrorCode::BadConfig, "unknown config key: " + key);
  json m = defaults;
  m.update(j);
  try {
    auto& t = c.train;
    c.data_dir = m.at("data_dir").get<std::string>();
    c.run_dir = m.at("run_dir").get<std::string>();
    c.seed = m.at("seed");
    c.synth.kind = parse_kind(m.at("kind").get<std::string>());
    c.synth.vocab_size = m.at("vocab_size");
    c.synth.max_len = m.at("max_len");
    c.synth.pair_count = m.at("pair_count");
    c.synth.train_per_style = m.at("train_per_style");
    c.synth.dev_per_style = m.at("dev_per_style");
    c.synth.test_per_style = m.at("test_per_style");
    c.synth.seed = m.at("synth_seed");
    c.min_count = m.at("min_count");
    c.embed_dim = m.at("embed_dim");
    c.hidden_dim = m.at("hidden_dim");
    c.classifier.model.embed_dim = m.at("cls_embed_dim");
    c.classifier.model.channels = m.at("cls_channels");
    c.classifier.model.widths = m.at("cls_widths").get<std::vector<int>>();
    c.classifier.epochs = m.at("cls_epochs");
    c.classifier.batch = m.at("cls_batch");
    c.classifier.lr = m.at("cls_lr");
    c.lexicon_lambda = m.at("lexicon_lambda");
    c.lexicon_gamma = m.at("lexicon_gamma");
    t.pretrain_epochs = m.at("pretrain_epochs");
    t.max_dual_epochs = m.at("max_dual_epochs");
    t.max_iterations = m.at("max_iterations");
    t.iterations_per_epoch = m.at("iterations_per_epoch");
    t.pretrain_lr = m.at("pretrain_lr");
    t.dual_lr = m.at("dual_lr");
    t.pretrain_batch = m.at("pretrain_batch");
    t.dual_batch = m.at("dual_batch");
    t.reward.beta = m.at("beta");
    t.reward.k = m.at("k");
    t.reward.length_normalize_content = m.at("length_normalize_content");
    t.reward.content_variant = parse_content_variant(m.at("content_variant"));
    t.schedule.p0 = m.at("p0");
    t.schedule.p_max = m.at("p_max");
    t.schedule.rate = m.at("rate");
    t.schedule.gap = m.at("gap");
    t.baseline = parse_baseline(m.at("baseline").get<std::string>());
    t.ablation = parse_ablation(m.at("ablation").get<std::string>());
    t.patience = m.at("patience");
    t.temperature = m.at("temperature");
    t.dev_limit = m.at("dev_limit");
    t.seed = c.seed;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("config: ") + e.what());
  }
  if (c.embed_dim < 1 || c.hidden_dim < 1) throw Error(ErrorCode::BadConfig, "model dims must be >= 1");
  c.train.validate();
  return c;
}

json apply_overrides(json base, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::BadConfig, "expected key=value, got " + a);
    const std::string key = a.substr(0, eq), value = a.substr(eq + 1);
    json parsed = json::parse(value, nullptr, false);
    base[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  return base;
}

std::filesystem::path RunLayout::train_dir(Ablation a) const {
  if (a == Ablation::RlPlusMle) return root / "train";
  return root / (std::string("ablate_") + ablation_name(a));
}

void save_vocab(const std::filesystem::path& file, const Vocabulary& vocab) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  for (const auto& t : vocab.tokens()) os << t << '\n';
}

Vocabulary load_vocab(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) tokens.push_back(line);
  return Vocabulary::from_tokens(tokens);
}

StyleCorpus load_corpus(const RunConfig& cfg) {
  std::string x = "x", y = "y";
  if (std::filesystem::exists(cfg.data_dir / "labels.json")) {
    const auto labels = read_json(cfg.data_dir / "labels.json");
    x = labels.at("x");
    y = labels.at("y");
  }
  auto corpus = read_corpus(cfg.data_dir, x, y);
  corpus.validate();
  return corpus;
}

// ---- entry ----------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  CLI::App app{"dualstyle: dual reinforcement learning for text style transfer"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "JSON config file (flat keys)");
  app.add_option("--set", sets, "override a config key: key=value")->take_all();

  // Every config key is also a flag: --dual-lr 1e-4 overrides dual_lr.
  const json defaults = RunConfig{}.to_json();
  std::map<std::string, std::string> flag_values;
  for (const auto& [key, _] : defaults.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    app.add_option("--" + flag, flag_values[key], "config key " + key);
  }

  auto* synth = app.add_subcommand("synth", "generate a synthetic style corpus");
  auto* pcls = app.add_subcommand("pretrain-classifier", "build the vocabulary and train the style classifier");
  auto* pseudo = app.add_subcommand("make-pseudo", "build template pseudo-parallel pairs");
  auto* pre = app.add_subcommand("pretrain", "pre-train both transfer models on the pseudo pairs");
  auto* tr = app.add_subcommand("train", "dual reinforcement learning");
  auto* xfer = app.add_subcommand("transfer", "transfer a file line by line");
  auto* ev = app.add_subcommand("evaluate", "ACC, BLEU, G2 and H2 of transferred outputs");
  auto* abl = app.add_subcommand("ablate", "dual training with one component removed");

  bool resume = false;
  tr->add_flag("--resume", resume, "continue from checkpoints/last");
  abl->add_flag("--resume", resume, "continue from checkpoints/last");
  std::string mode;
  abl->add_option("--mode", mode, "rl_only, mle_only or rl_plus_mle")->required()->check(
      CLI::IsMember({"rl_only", "mle_only", "rl_plus_mle"}));

  std::string direction, in, out_file, checkpoint, split = "test", report;
  std::vector<std::string> refs;
  xfer->add_option("--direction", direction)->required()->check(CLI::IsMember({"x2y", "y2x"}));
  xfer->add_option("--in", in)->required();
  xfer->add_option("--out", out_file)->required();
  xfer->add_option("--checkpoint", checkpoint, "model file (default: best of the run)");
  ev->add_option("--direction", direction)->required()->check(CLI::IsMember({"x2y", "y2x"}));
  ev->add_option("--in", in, "transferred outputs (default: transfer the split now)");
  ev->add_option("--ref", refs, "reference files (default: the split's gold references)");
  ev->add_option("--split", split)->check(CLI::IsMember({"dev", "test"}));
  ev->add_option("--checkpoint", checkpoint);
  ev->add_option("--report", report, "output prefix for .json and .tsv");
  ev->add_option("--mode", mode, "which run's models to use")->check(
      CLI::IsMember({"rl_only", "mle_only", "rl_plus_mle"}));

  std::vector<std::string> argv_store{"dualstyle"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, log);
  }

  try {
    json merged = config_file.empty() ? json::object() : read_json(config_file);
    std::vector<std::string> assignments;
    for (const auto& [key, value] : flag_values)
      if (!value.empty()) assignments.push_back(key + "=" + value);
    assignments.insert(assignments.end(), sets.begin(), sets.end());
    merged = apply_overrides(merged, assignments);
    if (!mode.empty()) merged["ablation"] = mode;
    // synth_seed follows --seed unless given explicitly
    if (merged.contains("seed") && !merged.contains("synth_seed")) merged["synth_seed"] = merged["seed"];
    RunConfig cfg = RunConfig::from_json(merged);
    const RunLayout layout{cfg.run_dir};
    if (*synth) return cmd_synth(cfg, log);
    if (*pcls) return cmd_pretrain_classifier(cfg, layout, log);
    if (*pseudo) return cmd_make_pseudo(cfg, layout, log);
    if (*pre) return cmd_pretrain(cfg, layout, log);
    if (*tr || *abl) return cmd_train(cfg, layout, resume, log);
    if (*xfer) return cmd_transfer(cfg, layout, direction, in, out_file, checkpoint, log);
    if (*ev) return cmd_evaluate(cfg, layout, direction, in, refs, split, checkpoint, report, out, log);
  } catch (const Error& e) {
    kv(log, "error", {{"code", to_string(e.code())}, {"message", "\"" + std::string(e.what()) + "\""}});
    return 2;
  } catch (const std::exception& e) {
    kv(log, "error", {{"code", "unexpected"}, {"message", "\"" + std::string(e.what()) + "\""}});
    return 2;
  }
  return 1;
}

}  // namespace dualstyle
