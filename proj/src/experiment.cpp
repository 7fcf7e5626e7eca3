#include "mtltxt/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "mtltxt/dataset.hpp"
#include "mtltxt/error.hpp"
#include "mtltxt/kfold.hpp"
#include "mtltxt/preprocess.hpp"
#include "mtltxt/weights_io.hpp"

namespace mtltxt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exclusive ownership of an output directory plus cleanup of everything
// written when the run fails.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    fs::create_directories(dir_);
    lock_path_ = (fs::path(dir_) / ".mtltxt.lock").string();
    lock_fd_ = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (lock_fd_ < 0) {
      fail_config("output directory '" + dir + "' is locked by another run (" + lock_path_ +
                  " exists)");
    }
  }

  ~OutputDir() {
    if (lock_fd_ >= 0) {
      ::close(lock_fd_);
      ::unlink(lock_path_.c_str());
    }
  }

  std::string path(const std::string& filename) const {
    return (fs::path(dir_) / filename).string();
  }

  std::string write(const std::string& filename, const std::string& content) {
    const std::string p = path(filename);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write '" + p + "'");
    out << content;
    written_.push_back(p);
    return p;
  }

  void track(const std::string& p) { written_.push_back(p); }
  const std::vector<std::string>& written() const { return written_; }

  void discard_all() {
    for (const std::string& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    written_.clear();
  }

 private:
  std::string dir_;
  std::string lock_path_;
  int lock_fd_ = -1;
  std::vector<std::string> written_;
};

struct Resources {
  SegmenterLexicon lexicon;
  EmoticonTable emoticons;
  EmbeddingTable words;
  SubwordModel subwords = SubwordModel::random_init(1, 1, 0);
};

Resources load_resources(const RunConfig& config) {
  Resources r;
  if (!config.lexicon_path.empty()) {
    r.lexicon = SegmenterLexicon::load(resolve_resource(config.lexicon_path));
  }
  if (!config.emoticons_path.empty()) {
    r.emoticons = EmoticonTable::load(resolve_resource(config.emoticons_path));
  }
  if (!config.embeddings_path.empty()) {
    r.words = load_embedding_table(resolve_resource(config.embeddings_path), config.word_dim);
  } else {
    r.words.matrix = Tensor({1, config.word_dim});  // padding row only; every word is oov
  }
  if (!config.subword_path.empty()) {
    r.subwords = SubwordModel::from_table(
        load_embedding_table(resolve_resource(config.subword_path), config.subword_dim));
  } else {
    r.subwords = SubwordModel::random_init(config.subword_dim, config.subword_buckets,
                                           derive_seed(config.seed, "subword"));
  }
  return r;
}

std::vector<std::string> simple_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!current.empty()) tokens.push_back(current);
      current.clear();
    } else {
      current += (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c;
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

struct PreparedTask {
  DatasetRef ref;
  Dataset data;
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::string> rendered;
  bool has_test = false;
  Dataset test_data;
  std::vector<std::vector<std::string>> test_tokens;
  std::vector<std::string> test_rendered;
};

void tokenize_into(const RunConfig& config, const Resources& res, const Dataset& data,
                   std::vector<std::vector<std::string>>* tokens,
                   std::vector<std::string>* rendered) {
  tokens->reserve(data.size());
  rendered->reserve(data.size());
  for (const Example& ex : data.examples) {
    if (config.preprocess_text) {
      CleanedText cleaned = preprocess(ex.text, res.lexicon, res.emoticons);
      rendered->push_back(render(cleaned));
      tokens->push_back(std::move(cleaned.tokens));
    } else {
      tokens->push_back(simple_tokens(ex.text));
      rendered->push_back(ex.text);
    }
  }
}

std::vector<PreparedTask> prepare_tasks(const RunConfig& config, const Resources& res) {
  std::vector<PreparedTask> tasks;
  for (const DatasetRef& ref : config.datasets) {
    PreparedTask task;
    task.ref = ref;
    task.data = load_dataset(ref.path, config.delimiter, config.label_order);
    task.data.name = ref.name;
    tokenize_into(config, res, task.data, &task.tokens, &task.rendered);
    if (!ref.test_path.empty()) {
      task.has_test = true;
      task.test_data = load_dataset(ref.test_path, config.delimiter, task.data.label_space);
      tokenize_into(config, res, task.test_data, &task.test_tokens, &task.test_rendered);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

// 95th percentile of training token counts, capped at 100, never below the
// largest conv window.
std::size_t derive_max_tokens(const RunConfig& config,
                              const std::vector<PreparedTask>& tasks) {
  std::size_t result = config.max_tokens;
  if (result == 0) {
    std::vector<std::size_t> lengths;
    for (const PreparedTask& task : tasks) {
      for (const auto& tokens : task.tokens) lengths.push_back(tokens.size());
    }
    result = 1;
    if (!lengths.empty()) {
      std::sort(lengths.begin(), lengths.end());
      result = std::max<std::size_t>(lengths[(lengths.size() - 1) * 95 / 100], 1);
    }
    result = std::min<std::size_t>(result, 100);
  }
  std::size_t max_window = 0;
  for (std::size_t w : config.windows) max_window = std::max(max_window, w);
  return std::max(result, max_window);
}

ModelSpec make_spec(const RunConfig& config, std::size_t max_tokens) {
  ModelSpec spec;
  spec.variant = config.variant;
  spec.windows = config.windows;
  spec.word_filters = config.word_filters;
  spec.char_filters = config.char_filters;
  spec.word_dim = config.word_dim;
  spec.subword_dim = config.subword_dim;
  spec.max_tokens = max_tokens;
  spec.max_chars = config.max_chars;
  spec.char_conv = config.char_conv;
  spec.init = config.variant == 1 ? InitMode::RandomStatic : InitMode::PretrainedStatic;
  return spec;
}

Vocabulary build_vocab(const std::vector<const PreparedTask*>& tasks,
                       const std::vector<std::vector<std::size_t>>& train_indices) {
  Vocabulary vocab;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t i : train_indices[t]) {
      for (const std::string& token : tasks[t]->tokens[i]) vocab.add(token);
    }
  }
  return vocab;
}

EncodedExample encode_one(const PreparedTask& task, std::size_t index, bool test_split,
                          const Vocabulary& vocab, const Vocabulary* vocab_b,
                          const ModelSpec& spec, bool needs_chars) {
  const auto& tokens = test_split ? task.test_tokens[index] : task.tokens[index];
  const auto& rendered = test_split ? task.test_rendered[index] : task.rendered[index];
  EncodedExample ex;
  ex.token_ids = encode_sequence(tokens, vocab, spec.max_tokens);
  if (vocab_b) ex.token_ids_b = encode_sequence(tokens, *vocab_b, spec.max_tokens);
  if (needs_chars) ex.char_one_hot = char_one_hot_encode(rendered, spec.max_chars);
  ex.label = test_split ? task.test_data.examples[index].label
                        : task.data.examples[index].label;
  return ex;
}

std::vector<EncodedExample> encode_many(const PreparedTask& task,
                                        const std::vector<std::size_t>& indices,
                                        bool test_split, const Vocabulary& vocab,
                                        const Vocabulary* vocab_b, const ModelSpec& spec,
                                        bool needs_chars) {
  std::vector<EncodedExample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    out.push_back(encode_one(task, i, test_split, vocab, vocab_b, spec, needs_chars));
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

// Carves a ~10% stratified validation slice for early stopping; classes too
// small to spare an example stay whole.
void carve_validation(const PreparedTask& task, const std::vector<std::size_t>& pool,
                      std::uint64_t seed, std::vector<std::size_t>* train_out,
                      std::vector<std::size_t>* val_out) {
  std::vector<std::vector<std::size_t>> by_class(task.data.class_count());
  for (std::size_t i : pool) {
    by_class[task.data.examples[i].label].push_back(i);
  }
  Rng rng(derive_seed(seed, "val_carve"));
  for (auto& members : by_class) {
    rng.shuffle(members);
    const std::size_t val_n = members.size() >= 10 ? members.size() / 10
                              : members.size() >= 4 ? 1
                                                    : 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < val_n ? val_out : train_out)->push_back(members[i]);
    }
  }
  std::sort(train_out->begin(), train_out->end());
  std::sort(val_out->begin(), val_out->end());
}

BuiltModel build_single_task(const ModelSpec& spec, const Tensor& matrix,
                             std::uint64_t seed) {
  switch (spec.variant) {
    case 1:
    case 2:
      return build_word_cnn(spec, matrix, seed);
    case 3:
      return build_char_cnn(spec, seed);
    case 4:
      return build_hybrid_cnn(spec, matrix, seed);
    case 5:
      return build_attention_cnn(spec, matrix, seed);
    default:
      fail_config("variant " + std::to_string(spec.variant) + " is not single-task");
  }
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["windows"] = spec.windows;
  j["word_filters"] = spec.word_filters;
  j["char_filters"] = spec.char_filters;
  j["word_dim"] = spec.word_dim;
  j["subword_dim"] = spec.subword_dim;
  j["max_tokens"] = spec.max_tokens;
  j["max_chars"] = spec.max_chars;
  j["char_conv"] = {spec.char_conv.kernel1, spec.char_conv.stride1, spec.char_conv.pool1,
                    spec.char_conv.kernel2, spec.char_conv.stride2, spec.char_conv.pool2,
                    spec.char_conv.dense};
  json tasks = json::array();
  for (const TaskSpec& t : spec.tasks) {
    tasks.push_back({{"name", t.name}, {"classes", t.class_count}});
  }
  j["tasks"] = tasks;
  return j;
}

ModelSpec spec_from_json(const json& j, int variant) {
  ModelSpec spec;
  spec.variant = variant;
  spec.windows = j.at("windows").get<std::vector<std::size_t>>();
  spec.word_filters = j.at("word_filters").get<std::size_t>();
  spec.char_filters = j.at("char_filters").get<std::size_t>();
  spec.word_dim = j.at("word_dim").get<std::size_t>();
  spec.subword_dim = j.at("subword_dim").get<std::size_t>();
  spec.max_tokens = j.at("max_tokens").get<std::size_t>();
  spec.max_chars = j.at("max_chars").get<std::size_t>();
  const auto cc = j.at("char_conv").get<std::vector<std::size_t>>();
  if (cc.size() != 7) fail_data("model meta: char_conv needs 7 entries");
  spec.char_conv = {cc[0], cc[1], cc[2], cc[3], cc[4], cc[5], cc[6]};
  spec.init = variant == 1 ? InitMode::RandomStatic : InitMode::PretrainedStatic;
  for (const json& t : j.at("tasks")) {
    spec.tasks.push_back(
        {t.at("name").get<std::string>(), t.at("classes").get<std::size_t>()});
  }
  return spec;
}

Vocabulary vocab_from_json(const json& j) {
  Vocabulary vocab;
  for (const auto& token : j.get<std::vector<std::string>>()) vocab.add(token);
  return vocab;
}

// ---------------------------------------------------------------------------

struct Run {
  const RunConfig& config;
  std::string command;
  Resources res;
  std::vector<PreparedTask> tasks;
  ModelSpec base_spec;
  OutputDir out;

  Run(const RunConfig& cfg, const std::string& cmd)
      : config(cfg),
        command(cmd),
        res(load_resources(cfg)),
        tasks(prepare_tasks(cfg, res)),
        base_spec(make_spec(cfg, derive_max_tokens(cfg, tasks))),
        out(cfg.out_dir) {}

  std::uint64_t seed_for(const std::string& label) const {
    return derive_seed(config.seed, label);
  }

  TrainConfig train_config(const std::string& label) const {
    TrainConfig tc = config.train;
    tc.seed = seed_for(label);
    return tc;
  }

  std::vector<std::size_t> reported_task_indices() const {
    std::vector<std::size_t> reported;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].ref.role == "hate") reported.push_back(i);
    }
    if (reported.empty()) {
      for (std::size_t i = 0; i < tasks.size(); ++i) reported.push_back(i);
    }
    return reported;
  }

  Report new_report(const std::string& task_name) const {
    Report report;
    report.task = task_name;
    report.variant = config.variant;
    report.seed = config.seed;
    report.config_echo = config.echo();
    return report;
  }

  void emit(Report& report) {
    report.finalize();
    audit_report(report);
    for (const std::string& fmt : config.report_formats) {
      if (fmt == "plain") out.write("report_" + report.task + ".txt", render_plain(report));
      if (fmt == "csv") out.write("report_" + report.task + ".csv", render_csv(report));
      if (fmt == "json") out.write("report_" + report.task + ".json", render_json(report));
    }
    std::string log;
    for (const FoldRecord& fold : report.folds) {
      for (const EpochRecord& r : fold.history.records) {
        char line[160];
        std::snprintf(line, sizeof line, "fold=%d epoch=%zu split=%s loss=%.9g acc=%.6f\n",
                      fold.fold + 1, r.epoch, r.split.c_str(), r.loss, r.accuracy);
        log += line;
      }
    }
    if (!log.empty()) out.write("history_" + report.task + ".log", log);
  }

  void save_model(const ParamStore& store, const std::string& graph_kind,
                  const ModelSpec& spec, const std::string& task, std::size_t task_index,
                  const std::vector<std::string>& labels, const Vocabulary& vocab,
                  const Vocabulary* vocab_b, const std::string& stem) {
    const std::string weights_path = out.path(stem + ".mtlw");
    save_weights(store, weights_path);
    out.track(weights_path);
    json meta;
    meta["version"] = kEngineVersion;
    meta["graph_kind"] = graph_kind;
    meta["variant"] = config.variant;
    meta["task"] = task;
    meta["task_index"] = task_index;
    meta["labels"] = labels;
    meta["spec"] = spec_to_json(spec);
    meta["vocab"] = json(vocab.tokens());
    if (vocab_b) meta["vocab_b"] = json(vocab_b->tokens());
    out.write(stem + ".meta.json", meta.dump(2) + "\n");
  }
};

Tensor make_matrix(const Run& run, const Vocabulary& vocab, const std::string& label) {
  if (run.config.variant == 1) {
    Rng rng(run.seed_for("random_embed." + label));
    return random_vocab_matrix(vocab, run.config.word_dim + run.config.subword_dim, rng);
  }
  return compose_vocab_matrix(vocab, run.res.words, run.res.subwords);
}

// ---- single-task flow (variants 1-5) --------------------------------------

struct SingleOutcome {
  FoldRecord record;
  BuiltModel model;
  Vocabulary vocab;
  ModelSpec spec;
};

SingleOutcome run_single_fold(Run& run, const PreparedTask& task,
                              const std::vector<std::size_t>& pool,
                              const std::vector<std::size_t>& test_idx, bool test_from_file,
                              const std::string& label, std::uint64_t* floor_events) {
  std::vector<std::size_t> train_idx, val_idx;
  carve_validation(task, pool, run.seed_for(label + ".carve"), &train_idx, &val_idx);

  Vocabulary vocab = build_vocab({&task}, {pool});
  ModelSpec spec = run.base_spec;
  spec.tasks = {{task.data.name, task.data.class_count()}};
  const Tensor matrix = make_matrix(run, vocab, label);
  BuiltModel model = build_single_task(spec, matrix, run.seed_for(label + ".init"));

  const bool chars = model.wants_chars;
  auto enc_train = encode_many(task, train_idx, false, vocab, nullptr, spec, chars);
  auto enc_val = encode_many(task, val_idx, false, vocab, nullptr, spec, chars);
  auto enc_test = encode_many(task, test_idx, test_from_file, vocab, nullptr, spec, chars);

  TrainResult trained = train_stl(model, enc_train, enc_val, run.train_config(label));
  FoldRecord record;
  record.confusion = evaluate(model, enc_test, task.data.label_space);
  record.metrics = compute_metrics(record.confusion);
  record.history = trained.history;
  *floor_events += model.graph.floor_events();
  return {std::move(record), std::move(model), std::move(vocab), std::move(spec)};
}

Report cross_validate_single(Run& run, const PreparedTask& task) {
  Report report = run.new_report(task.data.name);
  FoldPlan plan = stratified_kfold(task.data, run.config.folds,
                                   run.seed_for("fold." + task.data.name));
  std::uint64_t floors = 0;
  for (std::size_t f = 0; f < run.config.folds; ++f) {
    SingleOutcome outcome =
        run_single_fold(run, task, plan.train_indices(f), plan.test_indices(f), false,
                        "fold" + std::to_string(f), &floors);
    outcome.record.fold = static_cast<int>(f);
    report.folds.push_back(std::move(outcome.record));
  }
  if (task.has_test) {
    SingleOutcome outcome =
        run_single_fold(run, task, all_indices(task.data.size()),
                        all_indices(task.test_data.size()), true, "full", &floors);
    outcome.record.fold = -1;
    report.official_test = std::move(outcome.record);
  }
  report.numerical_floor_events = floors;
  return report;
}

// ---- shared-network flow (variants 6-8) ------------------------------------

struct SharedSetup {
  SharedNetwork sn;
  Vocabulary vocab;
  ModelSpec spec;
  std::vector<std::vector<EncodedExample>> train;
  std::vector<std::vector<EncodedExample>> val;
};

SharedSetup train_shared(Run& run, const std::vector<const PreparedTask*>& members,
                         const std::vector<std::vector<std::size_t>>& pools,
                         const std::string& label, std::uint64_t* floors) {
  ModelSpec spec = run.base_spec;
  spec.tasks.clear();
  for (const PreparedTask* task : members) {
    spec.tasks.push_back({task->data.name, task->data.class_count()});
  }
  Vocabulary vocab = build_vocab(members, pools);
  const Tensor matrix = make_matrix(run, vocab, label);
  SharedSetup setup{
      build_shared_network(spec, vocab, matrix, run.seed_for(label + ".init")),
      std::move(vocab),
      spec,
      {},
      {}};
  for (std::size_t t = 0; t < members.size(); ++t) {
    std::vector<std::size_t> train_idx, val_idx;
    carve_validation(*members[t], pools[t],
                     run.seed_for(label + ".carve." + std::to_string(t)), &train_idx,
                     &val_idx);
    setup.train.push_back(
        encode_many(*members[t], train_idx, false, setup.vocab, nullptr, spec, false));
    setup.val.push_back(
        encode_many(*members[t], val_idx, false, setup.vocab, nullptr, spec, false));
  }
  train_shared_network(setup.sn, setup.train, setup.val, run.train_config(label + ".train"));
  *floors += setup.sn.net.graph.floor_events();
  return setup;
}

struct HeadOutcome {
  FoldRecord record;
  BuiltModel head;
};

// An empty test split skips evaluation; the caller fills the record in.
HeadOutcome finetune_and_eval_head(Run& run, SharedSetup& setup, std::size_t member_index,
                                   const PreparedTask& task,
                                   const std::vector<std::size_t>& test_idx,
                                   bool test_from_file, const std::string& label,
                                   std::uint64_t* floors) {
  BuiltModel head = derive_task_head(setup.sn, task.data.name, task.data.class_count(),
                                     run.seed_for(label + ".head"));
  TrainResult trained = train_stl(head, setup.train[member_index], setup.val[member_index],
                                  run.train_config(label + ".finetune"));
  FoldRecord record;
  if (!test_idx.empty()) {
    auto enc_test = encode_many(task, test_idx, test_from_file, setup.vocab, nullptr,
                                setup.spec, false);
    record.confusion = evaluate(head, enc_test, task.data.label_space);
    record.metrics = compute_metrics(record.confusion);
  }
  record.history = trained.history;
  *floors += head.graph.floor_events();
  return {std::move(record), std::move(head)};
}

// ---- soft-sharing flow (variants 9-10) --------------------------------------

struct SoftSetup {
  SoftSharedNetwork ssn;
  Vocabulary vocab;
  ModelSpec spec;
  std::vector<std::vector<EncodedExample>> train;
  std::vector<std::vector<EncodedExample>> val;
};

SoftSetup train_soft(Run& run, const std::vector<const PreparedTask*>& members,
                     const std::vector<std::vector<std::size_t>>& pools,
                     const std::string& label, std::uint64_t* floors) {
  ModelSpec spec = run.base_spec;
  spec.tasks.clear();
  for (const PreparedTask* task : members) {
    spec.tasks.push_back({task->data.name, task->data.class_count()});
  }
  Vocabulary vocab = build_vocab(members, pools);
  const Tensor matrix = make_matrix(run, vocab, label);
  SoftSetup setup{build_soft_shared(spec, vocab, matrix, run.seed_for(label + ".init")),
                  std::move(vocab),
                  spec,
                  {},
                  {}};
  for (std::size_t t = 0; t < members.size(); ++t) {
    std::vector<std::size_t> train_idx, val_idx;
    carve_validation(*members[t], pools[t],
                     run.seed_for(label + ".carve." + std::to_string(t)), &train_idx,
                     &val_idx);
    setup.train.push_back(
        encode_many(*members[t], train_idx, false, setup.vocab, nullptr, spec, false));
    setup.val.push_back(
        encode_many(*members[t], val_idx, false, setup.vocab, nullptr, spec, false));
  }
  train_soft_shared(setup.ssn, setup.train, setup.val, run.train_config(label + ".train"));
  for (const BuiltModel& m : setup.ssn.share) *floors += m.graph.floor_events();
  return setup;
}

FoldRecord eval_soft_task(SoftSetup& setup, std::size_t member_index,
                          const PreparedTask& task, const std::vector<std::size_t>& test_idx,
                          bool test_from_file) {
  auto enc_test =
      encode_many(task, test_idx, test_from_file, setup.vocab, nullptr, setup.spec, false);
  FoldRecord record;
  record.confusion =
      evaluate(setup.ssn.share[member_index], enc_test, task.data.label_space);
  record.metrics = compute_metrics(record.confusion);
  return record;
}

// ---- concat flow (variant 8) ------------------------------------------------

struct ConcatOutcome {
  FoldRecord record;
  BuiltModel head;
  Vocabulary vocab_a;
  Vocabulary vocab_b;
  ModelSpec spec_a;
  ModelSpec spec_b;
};

ConcatOutcome run_concat_fold(Run& run, const PreparedTask& target,
                              const std::vector<std::size_t>& target_pool,
                              const std::vector<std::size_t>& test_idx, bool test_from_file,
                              const std::vector<std::size_t>& hates,
                              const std::vector<std::size_t>& sentiments,
                              const std::string& label, std::uint64_t* floors) {
  std::vector<const PreparedTask*> members_a;
  std::vector<std::vector<std::size_t>> pools_a;
  for (std::size_t h : hates) {
    members_a.push_back(&run.tasks[h]);
    pools_a.push_back(&run.tasks[h] == &target ? target_pool
                                               : all_indices(run.tasks[h].data.size()));
  }
  SharedSetup sn_a = train_shared(run, members_a, pools_a, label + ".hate_sn", floors);

  std::vector<const PreparedTask*> members_b{&target};
  std::vector<std::vector<std::size_t>> pools_b{target_pool};
  for (std::size_t s : sentiments) {
    members_b.push_back(&run.tasks[s]);
    pools_b.push_back(all_indices(run.tasks[s].data.size()));
  }
  SharedSetup sn_b = train_shared(run, members_b, pools_b, label + ".sent_sn", floors);

  BuiltModel head = build_concat_model(sn_a.sn, sn_b.sn, target.data.class_count(),
                                       run.seed_for(label + ".head"));
  std::vector<std::size_t> train_idx, val_idx;
  carve_validation(target, target_pool, run.seed_for(label + ".carve"), &train_idx,
                   &val_idx);
  auto enc_train = encode_many(target, train_idx, false, sn_a.vocab, &sn_b.vocab,
                               run.base_spec, false);
  auto enc_val =
      encode_many(target, val_idx, false, sn_a.vocab, &sn_b.vocab, run.base_spec, false);
  TrainResult trained =
      train_stl(head, enc_train, enc_val, run.train_config(label + ".finetune"));
  auto enc_test = encode_many(target, test_idx, test_from_file, sn_a.vocab, &sn_b.vocab,
                              run.base_spec, false);
  FoldRecord record;
  record.confusion = evaluate(head, enc_test, target.data.label_space);
  record.metrics = compute_metrics(record.confusion);
  record.history = trained.history;
  *floors += head.graph.floor_events();
  return {std::move(record), std::move(head), std::move(sn_a.vocab), std::move(sn_b.vocab),
          sn_a.spec, sn_b.spec};
}

// ---- cross-validate ----------------------------------------------------------

ExperimentResult cmd_cross_validate(Run& run) {
  ExperimentResult result;
  const int variant = run.config.variant;

  if (variant <= 5) {
    for (std::size_t t : run.reported_task_indices()) {
      Report report = cross_validate_single(run, run.tasks[t]);
      run.emit(report);
      result.reports.push_back(std::move(report));
    }
  } else if (variant == 6 || variant == 9) {
    // every task folded in parallel; heads or subnets per reported task
    std::vector<FoldPlan> plans;
    for (const PreparedTask& task : run.tasks) {
      plans.push_back(stratified_kfold(task.data, run.config.folds,
                                       run.seed_for("fold." + task.data.name)));
    }
    const auto reported = run.reported_task_indices();
    std::vector<Report> reports;
    for (std::size_t t : reported) reports.push_back(run.new_report(run.tasks[t].data.name));
    std::vector<std::uint64_t> floors(reported.size(), 0);

    for (std::size_t f = 0; f < run.config.folds; ++f) {
      std::vector<const PreparedTask*> members;
      std::vector<std::vector<std::size_t>> pools;
      for (std::size_t t = 0; t < run.tasks.size(); ++t) {
        members.push_back(&run.tasks[t]);
        pools.push_back(plans[t].train_indices(f));
      }
      const std::string label = "mtl.fold" + std::to_string(f);
      std::uint64_t shared_floors = 0;
      if (variant == 6) {
        SharedSetup setup = train_shared(run, members, pools, label, &shared_floors);
        for (std::size_t r = 0; r < reported.size(); ++r) {
          const std::size_t t = reported[r];
          HeadOutcome outcome = finetune_and_eval_head(
              run, setup, t, run.tasks[t], plans[t].test_indices(f), false,
              label + ".task" + std::to_string(t), &floors[r]);
          outcome.record.fold = static_cast<int>(f);
          floors[r] += shared_floors;
          reports[r].folds.push_back(std::move(outcome.record));
        }
      } else {
        SoftSetup setup = train_soft(run, members, pools, label, &shared_floors);
        for (std::size_t r = 0; r < reported.size(); ++r) {
          const std::size_t t = reported[r];
          FoldRecord record =
              eval_soft_task(setup, t, run.tasks[t], plans[t].test_indices(f), false);
          record.fold = static_cast<int>(f);
          floors[r] += shared_floors;
          reports[r].folds.push_back(std::move(record));
        }
      }
    }
    // official test splits are evaluated with models trained on the full
    // training data
    bool any_official = false;
    for (std::size_t t : reported) any_official |= run.tasks[t].has_test;
    if (any_official) {
      std::vector<const PreparedTask*> members;
      std::vector<std::vector<std::size_t>> pools;
      for (std::size_t t = 0; t < run.tasks.size(); ++t) {
        members.push_back(&run.tasks[t]);
        pools.push_back(all_indices(run.tasks[t].data.size()));
      }
      const std::string label = "mtl.full";
      std::uint64_t full_floors = 0;
      if (variant == 6) {
        SharedSetup setup = train_shared(run, members, pools, label, &full_floors);
        for (std::size_t r = 0; r < reported.size(); ++r) {
          const std::size_t t = reported[r];
          if (!run.tasks[t].has_test) continue;
          HeadOutcome outcome = finetune_and_eval_head(
              run, setup, t, run.tasks[t], all_indices(run.tasks[t].test_data.size()), true,
              label + ".task" + std::to_string(t), &floors[r]);
          outcome.record.fold = -1;
          floors[r] += full_floors;
          reports[r].official_test = std::move(outcome.record);
        }
      } else {
        SoftSetup setup = train_soft(run, members, pools, label, &full_floors);
        for (std::size_t r = 0; r < reported.size(); ++r) {
          const std::size_t t = reported[r];
          if (!run.tasks[t].has_test) continue;
          FoldRecord record = eval_soft_task(setup, t, run.tasks[t],
                                             all_indices(run.tasks[t].test_data.size()),
                                             true);
          record.fold = -1;
          floors[r] += full_floors;
          reports[r].official_test = std::move(record);
        }
      }
    }
    for (std::size_t r = 0; r < reported.size(); ++r) {
      reports[r].numerical_floor_events = floors[r];
      run.emit(reports[r]);
      result.reports.push_back(std::move(reports[r]));
    }
  } else {
    // variants 7, 8, 10: one run per hate target with auxiliary data whole
    std::vector<std::size_t> hates, sentiments;
    for (std::size_t t = 0; t < run.tasks.size(); ++t) {
      (run.tasks[t].ref.role == "hate" ? hates : sentiments).push_back(t);
    }
    for (std::size_t target_idx : hates) {
      const PreparedTask& task = run.tasks[target_idx];
      Report report = run.new_report(task.data.name);
      std::uint64_t floors = 0;
      FoldPlan plan = stratified_kfold(task.data, run.config.folds,
                                       run.seed_for("fold." + task.data.name));
      for (std::size_t f = 0; f < run.config.folds; ++f) {
        const std::string label = task.data.name + ".fold" + std::to_string(f);
        FoldRecord record;
        if (variant == 7) {
          std::vector<const PreparedTask*> members{&task};
          std::vector<std::vector<std::size_t>> pools{plan.train_indices(f)};
          for (std::size_t s : sentiments) {
            members.push_back(&run.tasks[s]);
            pools.push_back(all_indices(run.tasks[s].data.size()));
          }
          SharedSetup setup = train_shared(run, members, pools, label, &floors);
          HeadOutcome outcome = finetune_and_eval_head(run, setup, 0, task,
                                                       plan.test_indices(f), false, label,
                                                       &floors);
          record = std::move(outcome.record);
        } else if (variant == 10) {
          std::vector<const PreparedTask*> members{&task};
          std::vector<std::vector<std::size_t>> pools{plan.train_indices(f)};
          for (std::size_t s : sentiments) {
            members.push_back(&run.tasks[s]);
            pools.push_back(all_indices(run.tasks[s].data.size()));
          }
          SoftSetup setup = train_soft(run, members, pools, label, &floors);
          record = eval_soft_task(setup, 0, task, plan.test_indices(f), false);
        } else {
          ConcatOutcome outcome =
              run_concat_fold(run, task, plan.train_indices(f), plan.test_indices(f), false,
                              hates, sentiments, label, &floors);
          record = std::move(outcome.record);
        }
        record.fold = static_cast<int>(f);
        report.folds.push_back(std::move(record));
      }
      if (task.has_test) {
        const std::string label = task.data.name + ".full";
        const std::vector<std::size_t> pool = all_indices(task.data.size());
        const std::vector<std::size_t> test_idx = all_indices(task.test_data.size());
        FoldRecord record;
        if (variant == 7) {
          std::vector<const PreparedTask*> members{&task};
          std::vector<std::vector<std::size_t>> pools{pool};
          for (std::size_t s : sentiments) {
            members.push_back(&run.tasks[s]);
            pools.push_back(all_indices(run.tasks[s].data.size()));
          }
          SharedSetup setup = train_shared(run, members, pools, label, &floors);
          HeadOutcome outcome =
              finetune_and_eval_head(run, setup, 0, task, test_idx, true, label, &floors);
          record = std::move(outcome.record);
        } else if (variant == 10) {
          std::vector<const PreparedTask*> members{&task};
          std::vector<std::vector<std::size_t>> pools{pool};
          for (std::size_t s : sentiments) {
            members.push_back(&run.tasks[s]);
            pools.push_back(all_indices(run.tasks[s].data.size()));
          }
          SoftSetup setup = train_soft(run, members, pools, label, &floors);
          record = eval_soft_task(setup, 0, task, test_idx, true);
        } else {
          ConcatOutcome outcome = run_concat_fold(run, task, pool, test_idx, true, hates,
                                                  sentiments, label, &floors);
          record = std::move(outcome.record);
        }
        record.fold = -1;
        report.official_test = std::move(record);
      }
      report.numerical_floor_events = floors;
      run.emit(report);
      result.reports.push_back(std::move(report));
    }
  }
  result.written_files = run.out.written();
  return result;
}

// ---- train --------------------------------------------------------------------

ExperimentResult cmd_train(Run& run) {
  ExperimentResult result;
  const int variant = run.config.variant;

  if (variant <= 5) {
    for (std::size_t t : run.reported_task_indices()) {
      const PreparedTask& task = run.tasks[t];
      std::uint64_t floors = 0;
      const std::vector<std::size_t> pool = all_indices(task.data.size());
      // evaluate the carved validation slice; the official test when present
      std::vector<std::size_t> train_idx, val_idx;
      carve_validation(task, pool, run.seed_for("full.carve"), &train_idx, &val_idx);
      SingleOutcome outcome = run_single_fold(
          run, task, pool, val_idx.empty() ? train_idx : val_idx, false, "full", &floors);
      Report report = run.new_report(task.data.name);
      if (val_idx.empty()) {
        report.notes.push_back("no validation slice could be carved; the fold row shows "
                               "training-set metrics");
      }
      outcome.record.fold = 0;
      report.folds.push_back(std::move(outcome.record));
      if (task.has_test) {
        auto enc_test = encode_many(task, all_indices(task.test_data.size()), true,
                                    outcome.vocab, nullptr, outcome.spec,
                                    outcome.model.wants_chars);
        FoldRecord test_record;
        test_record.fold = -1;
        test_record.confusion = evaluate(outcome.model, enc_test, task.data.label_space);
        test_record.metrics = compute_metrics(test_record.confusion);
        report.official_test = std::move(test_record);
      }
      report.numerical_floor_events = floors;
      run.save_model(*outcome.model.store, variant == 3   ? "char"
                                           : variant == 4 ? "hybrid"
                                           : variant == 5 ? "attention"
                                                          : "word",
                     outcome.spec, task.data.name, 0, task.data.label_space, outcome.vocab,
                     nullptr, "model_" + task.data.name);
      run.emit(report);
      result.reports.push_back(std::move(report));
    }
  } else if (variant == 6 || variant == 7) {
    std::vector<std::size_t> hates, sentiments;
    for (std::size_t t = 0; t < run.tasks.size(); ++t) {
      (run.tasks[t].ref.role == "hate" ? hates : sentiments).push_back(t);
    }
    auto run_group = [&](const std::vector<std::size_t>& member_ids,
                         const std::vector<std::size_t>& reported_members,
                         const std::string& label) {
      std::vector<const PreparedTask*> members;
      std::vector<std::vector<std::size_t>> pools;
      for (std::size_t t : member_ids) {
        members.push_back(&run.tasks[t]);
        pools.push_back(all_indices(run.tasks[t].data.size()));
      }
      std::uint64_t sn_floors = 0;
      SharedSetup setup = train_shared(run, members, pools, label, &sn_floors);
      run.save_model(*setup.sn.net.store, "shared", setup.spec, label, 0, {}, setup.vocab,
                     nullptr, "shared_" + label);
      for (std::size_t m : reported_members) {
        const PreparedTask& task = *members[m];
        std::uint64_t floors = sn_floors;
        HeadOutcome outcome = finetune_and_eval_head(
            run, setup, m, task, {}, false, label + ".task" + std::to_string(m), &floors);
        // fold row: the validation slice (or train when empty)
        const auto& eval_split = setup.val[m].empty() ? setup.train[m] : setup.val[m];
        Report report = run.new_report(task.data.name);
        FoldRecord record;
        record.fold = 0;
        record.confusion = evaluate(outcome.head, eval_split, task.data.label_space);
        record.metrics = compute_metrics(record.confusion);
        record.history = outcome.record.history;
        report.folds.push_back(std::move(record));
        if (task.has_test) {
          auto enc_test = encode_many(task, all_indices(task.test_data.size()), true,
                                      setup.vocab, nullptr, setup.spec, false);
          FoldRecord test_record;
          test_record.fold = -1;
          test_record.confusion = evaluate(outcome.head, enc_test, task.data.label_space);
          test_record.metrics = compute_metrics(test_record.confusion);
          report.official_test = std::move(test_record);
        }
        report.numerical_floor_events = floors + outcome.head.graph.floor_events();
        ModelSpec head_spec = setup.spec;
        head_spec.tasks = {{task.data.name, task.data.class_count()}};
        run.save_model(*outcome.head.store, "word", head_spec, task.data.name, 0,
                       task.data.label_space, setup.vocab, nullptr,
                       "model_" + task.data.name);
        run.emit(report);
        result.reports.push_back(std::move(report));
      }
    };
    if (variant == 6) {
      std::vector<std::size_t> member_ids = all_indices(run.tasks.size());
      std::vector<std::size_t> reported;
      for (std::size_t t : run.reported_task_indices()) reported.push_back(t);
      run_group(member_ids, reported, "sn");
    } else {
      for (std::size_t target : hates) {
        std::vector<std::size_t> member_ids{target};
        for (std::size_t s : sentiments) member_ids.push_back(s);
        run_group(member_ids, {0}, run.tasks[target].data.name);
      }
    }
  } else if (variant == 8) {
    std::vector<std::size_t> hates, sentiments;
    for (std::size_t t = 0; t < run.tasks.size(); ++t) {
      (run.tasks[t].ref.role == "hate" ? hates : sentiments).push_back(t);
    }
    for (std::size_t target_idx : hates) {
      const PreparedTask& task = run.tasks[target_idx];
      std::uint64_t floors = 0;
      std::vector<std::size_t> train_idx, val_idx;
      const std::vector<std::size_t> pool = all_indices(task.data.size());
      carve_validation(task, pool, run.seed_for("full.carve"), &train_idx, &val_idx);
      ConcatOutcome outcome =
          run_concat_fold(run, task, pool, val_idx.empty() ? train_idx : val_idx, false,
                          hates, sentiments, task.data.name + ".full", &floors);
      Report report = run.new_report(task.data.name);
      outcome.record.fold = 0;
      report.folds.push_back(std::move(outcome.record));
      if (task.has_test) {
        auto enc_test = encode_many(task, all_indices(task.test_data.size()), true,
                                    outcome.vocab_a, &outcome.vocab_b, run.base_spec, false);
        FoldRecord test_record;
        test_record.fold = -1;
        test_record.confusion = evaluate(outcome.head, enc_test, task.data.label_space);
        test_record.metrics = compute_metrics(test_record.confusion);
        report.official_test = std::move(test_record);
      }
      report.numerical_floor_events = floors;
      ModelSpec head_spec = run.base_spec;
      head_spec.tasks = {{task.data.name, task.data.class_count()}};
      run.save_model(*outcome.head.store, "concat", head_spec, task.data.name, 0,
                     task.data.label_space, outcome.vocab_a, &outcome.vocab_b,
                     "model_" + task.data.name);
      run.emit(report);
      result.reports.push_back(std::move(report));
    }
  } else {
    // variants 9 and 10
    std::vector<std::size_t> hates, sentiments;
    for (std::size_t t = 0; t < run.tasks.size(); ++t) {
      (run.tasks[t].ref.role == "hate" ? hates : sentiments).push_back(t);
    }
    auto run_group = [&](const std::vector<std::size_t>& member_ids,
                         const std::vector<std::size_t>& reported_members,
                         const std::string& label) {
      std::vector<const PreparedTask*> members;
      std::vector<std::vector<std::size_t>> pools;
      for (std::size_t t : member_ids) {
        members.push_back(&run.tasks[t]);
        pools.push_back(all_indices(run.tasks[t].data.size()));
      }
      std::uint64_t floors = 0;
      SoftSetup setup = train_soft(run, members, pools, label, &floors);
      for (std::size_t m : reported_members) {
        const PreparedTask& task = *members[m];
        Report report = run.new_report(task.data.name);
        FoldRecord record;
        record.fold = 0;
        const auto& eval_split = setup.val[m].empty() ? setup.train[m] : setup.val[m];
        record.confusion =
            evaluate(setup.ssn.share[m], eval_split, task.data.label_space);
        record.metrics = compute_metrics(record.confusion);
        report.folds.push_back(std::move(record));
        if (task.has_test) {
          FoldRecord test_record =
              eval_soft_task(setup, m, task, all_indices(task.test_data.size()), true);
          test_record.fold = -1;
          report.official_test = std::move(test_record);
        }
        report.numerical_floor_events = floors;
        run.save_model(*setup.ssn.store, "soft", setup.spec, task.data.name, m,
                       task.data.label_space, setup.vocab, nullptr,
                       "model_" + task.data.name);
        run.emit(report);
        result.reports.push_back(std::move(report));
      }
    };
    if (variant == 9) {
      run_group(all_indices(run.tasks.size()), run.reported_task_indices(), "soft");
    } else {
      for (std::size_t target : hates) {
        std::vector<std::size_t> member_ids{target};
        for (std::size_t s : sentiments) member_ids.push_back(s);
        run_group(member_ids, {0}, run.tasks[target].data.name);
      }
    }
  }
  result.written_files = run.out.written();
  return result;
}

// ---- evaluate -------------------------------------------------------------------

ExperimentResult cmd_evaluate(Run& run) {
  if (run.tasks.size() != 1) fail_config("evaluate expects exactly one dataset");
  const std::string prefix = run.config.model_path;
  std::ifstream meta_in(prefix + ".meta.json");
  if (!meta_in) fail_config("cannot open model meta '" + prefix + ".meta.json'");
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    fail_data(std::string("model meta is not valid: ") + e.what());
  }

  const std::string graph_kind = meta.at("graph_kind").get<std::string>();
  const int variant = meta.at("variant").get<int>();
  const std::vector<std::string> labels = meta.at("labels").get<std::vector<std::string>>();
  ModelSpec spec = spec_from_json(meta.at("spec"), variant);
  Vocabulary vocab = vocab_from_json(meta.at("vocab"));

  // the dataset must be interpretable under the stored label space
  PreparedTask task;
  task.ref = run.config.datasets[0];
  task.data = load_dataset(task.ref.path, run.config.delimiter, labels);
  task.data.name = task.ref.name;
  tokenize_into(run.config, run.res, task.data, &task.tokens, &task.rendered);

  Report report = run.new_report(task.data.name);
  report.variant = variant;
  FoldRecord record;
  record.fold = 0;

  if (graph_kind == "soft") {
    const std::size_t task_index = meta.at("task_index").get<std::size_t>();
    SoftSharedNetwork ssn = build_soft_shared(
        spec, vocab, Tensor({vocab.size(), spec.embed_dim()}), 0);
    load_weights(*ssn.store, prefix + ".mtlw");
    auto encoded = encode_many(task, all_indices(task.data.size()), false, vocab, nullptr,
                               spec, false);
    record.confusion = evaluate(ssn.share[task_index], encoded, labels);
  } else if (graph_kind == "concat") {
    Vocabulary vocab_b = vocab_from_json(meta.at("vocab_b"));
    ModelSpec shell = spec;
    shell.variant = 6;
    shell.tasks = {{"shell_a", 2}, {"shell_b", 2}};
    SharedNetwork sn_a =
        build_shared_network(shell, vocab, Tensor({vocab.size(), spec.embed_dim()}), 0);
    SharedNetwork sn_b = build_shared_network(
        shell, vocab_b, Tensor({vocab_b.size(), spec.embed_dim()}), 0);
    BuiltModel model = build_concat_model(sn_a, sn_b, labels.size(), 0);
    load_weights(*model.store, prefix + ".mtlw");
    auto encoded = encode_many(task, all_indices(task.data.size()), false, vocab, &vocab_b,
                               spec, false);
    record.confusion = evaluate(model, encoded, labels);
  } else {
    spec.tasks = {{meta.at("task").get<std::string>(), labels.size()}};
    spec.variant = graph_kind == "char"        ? 3
                   : graph_kind == "hybrid"    ? 4
                   : graph_kind == "attention" ? 5
                   : spec.variant == 1         ? 1
                                               : 2;
    BuiltModel model =
        build_single_task(spec, Tensor({vocab.size(), spec.embed_dim()}), 0);
    load_weights(*model.store, prefix + ".mtlw");
    auto encoded = encode_many(task, all_indices(task.data.size()), false, vocab, nullptr,
                               spec, model.wants_chars);
    record.confusion = evaluate(model, encoded, labels);
  }

  record.metrics = compute_metrics(record.confusion);
  report.folds.push_back(std::move(record));
  run.emit(report);
  ExperimentResult result;
  result.reports.push_back(std::move(report));
  result.written_files = run.out.written();
  return result;
}

// ---- random search ----------------------------------------------------------------

ExperimentResult cmd_search(Run& run) {
  if (run.config.variant > 5) {
    fail_config("random search tunes the single-task variants (1-5)");
  }
  const PreparedTask& task = run.tasks[run.reported_task_indices()[0]];
  FoldPlan plan =
      stratified_kfold(task.data, run.config.folds, run.seed_for("search.fold"));
  const std::vector<std::size_t> pool = plan.train_indices(0);
  std::vector<std::size_t> train_idx, val_idx;
  carve_validation(task, pool, run.seed_for("search.carve"), &train_idx, &val_idx);
  if (val_idx.empty()) fail_data("dataset too small to carve a validation slice for search");

  std::size_t trial_counter = 0;
  auto objective = [&](const SearchDraw& draw) {
    const std::size_t trial = trial_counter++;
    ModelSpec spec = run.base_spec;
    spec.tasks = {{task.data.name, task.data.class_count()}};
    spec.windows = draw.windows;
    spec.word_filters = draw.filters;
    std::size_t max_window = 0;
    for (std::size_t w : draw.windows) max_window = std::max(max_window, w);
    spec.max_tokens = std::max(spec.max_tokens, max_window);

    Vocabulary vocab = build_vocab({&task}, {pool});
    Tensor matrix = make_matrix(run, vocab, "search");
    BuiltModel model =
        build_single_task(spec, matrix, run.seed_for("search.init." + std::to_string(trial)));
    const bool chars = model.wants_chars;
    auto enc_train = encode_many(task, train_idx, false, vocab, nullptr, spec, chars);
    auto enc_val = encode_many(task, val_idx, false, vocab, nullptr, spec, chars);
    TrainConfig tc = run.train_config("search.train." + std::to_string(trial));
    tc.adam.lr = draw.lr;
    train_stl(model, enc_train, enc_val, tc);
    const ConfusionMatrix cm = evaluate(model, enc_val, task.data.label_space);
    return compute_metrics(cm).macro_f1;
  };

  SearchResult search = random_search(SearchSpace{}, run.config.search_budget,
                                      run.seed_for("search.draws"), objective);
  json j;
  j["task"] = task.data.name;
  j["budget"] = run.config.search_budget;
  j["seed"] = run.config.seed;
  json trials = json::array();
  for (const SearchTrial& t : search.trials) {
    trials.push_back({{"lr", t.draw.lr},
                      {"filters", t.draw.filters},
                      {"windows", t.draw.windows},
                      {"macro_f1", t.score}});
  }
  j["trials"] = trials;
  j["best"] = {{"index", search.best_index},
               {"lr", search.best.lr},
               {"filters", search.best.filters},
               {"windows", search.best.windows},
               {"macro_f1", search.best_score}};
  run.out.write("search.json", j.dump(2) + "\n");

  ExperimentResult result;
  result.written_files = run.out.written();
  return result;
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& config, const std::string& command) {
  config.validate(command);
  Run run(config, command);
  try {
    if (command == "cross-validate") return cmd_cross_validate(run);
    if (command == "train") return cmd_train(run);
    if (command == "evaluate") return cmd_evaluate(run);
    if (command == "search") return cmd_search(run);
    fail_config("unknown command '" + command + "'");
  } catch (...) {
    run.out.discard_all();
    throw;
  }
}

}  // namespace mtltxt
