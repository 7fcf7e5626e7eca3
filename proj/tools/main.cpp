#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtltxt/config.hpp"
#include "mtltxt/error.hpp"
#include "mtltxt/experiment.hpp"
#include "mtltxt/preprocess.hpp"
#include "mtltxt/report.hpp"

namespace {

using mtltxt::RunConfig;

// Options arrive as key=value pairs so config files and flags share one
// parser; flags win over the file.
struct Pending {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> assignments;
  std::vector<std::string> sets;

  RunConfig build() const {
    RunConfig config;
    if (!config_path.empty()) config = RunConfig::from_file(config_path);
    for (const auto& [key, value] : assignments) config.apply(key, value);
    for (const std::string& kv : sets) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        mtltxt::fail_config("--set expects key=value, got '" + kv + "'");
      }
      config.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return config;
  }
};

void add_run_options(CLI::App* cmd, Pending& pending) {
  cmd->add_option("--config", pending.config_path, "key=value config file");
  auto bind = [cmd, &pending](const std::string& flag, const std::string& key,
                              const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&pending, key](const std::string& v) { pending.assignments.push_back({key, v}); },
        help);
  };
  bind("--seed", "seed", "master seed; every random draw derives from it");
  bind("--variant", "variant", "model variant 1-10");
  cmd->add_option_function<std::vector<std::string>>(
      "--dataset",
      [&pending](const std::vector<std::string>& values) {
        for (const std::string& v : values) pending.assignments.push_back({"dataset", v});
      },
      "dataset path, optionally ';role=hate|sentiment;test=<path>;name=<id>'");
  bind("--out", "out_dir", "output directory");
  bind("--model", "model", "trained model prefix (for evaluate)");
  bind("--embeddings", "embeddings", "pretrained word-vector file");
  bind("--subword-table", "subword_table", "pretrained character n-gram vectors");
  bind("--lexicon", "lexicon", "unigram lexicon for hashtag segmentation");
  bind("--emoticons", "emoticons", "emoticon category table");
  bind("--folds", "folds", "cross-validation folds");
  bind("--batch-size", "batch_size", "training batch size");
  bind("--max-epochs", "max_epochs", "maximum training epochs");
  bind("--patience", "patience", "early-stopping patience");
  bind("--lr", "lr", "adam learning rate");
  bind("--windows", "windows", "conv window sizes, e.g. 3,4,5");
  bind("--word-filters", "word_filters", "filters per word-conv window");
  bind("--char-filters", "char_filters", "filters per char-conv layer");
  bind("--word-dim", "word_dim", "pretrained word-vector half dimension");
  bind("--subword-dim", "subword_dim", "character n-gram half dimension");
  bind("--max-tokens", "max_tokens", "token sequence length (0 = derive)");
  bind("--max-chars", "max_chars", "character sequence length");
  bind("--budget", "search_budget", "random-search trials");
  bind("--label-order", "label_order", "explicit comma-separated label order");
  bind("--delimiter", "delimiter", "dataset field delimiter");
  bind("--preprocess", "preprocess", "true/false: run the cleaning pipeline");
  bind("--formats", "report_formats", "report formats: plain,csv,json");
  cmd->add_option("--set", pending.sets, "any config key=value override")->take_all();
}

int run_command(const std::string& command, const Pending& pending) {
  const RunConfig config = pending.build();
  mtltxt::ExperimentResult result = mtltxt::run_experiment(config, command);
  for (const mtltxt::Report& report : result.reports) {
    std::cout << mtltxt::render_plain(report) << "\n";
  }
  std::cout << "wrote " << result.written_files.size() << " file(s) under " << config.out_dir
            << "\n";
  return 0;
}

int run_preprocess(const std::string& lexicon_path, const std::string& emoticons_path,
                   const std::string& input, const std::string& output, bool show_flags) {
  mtltxt::SegmenterLexicon lexicon;
  if (!lexicon_path.empty()) {
    lexicon = mtltxt::SegmenterLexicon::load(mtltxt::resolve_resource(lexicon_path));
  }
  mtltxt::EmoticonTable emoticons;
  if (!emoticons_path.empty()) {
    emoticons = mtltxt::EmoticonTable::load(mtltxt::resolve_resource(emoticons_path));
  }

  std::istream* in = &std::cin;
  std::ifstream file_in;
  if (input != "-") {
    file_in.open(input);
    if (!file_in) mtltxt::fail_data("cannot open input '" + input + "'");
    in = &file_in;
  }
  std::ostream* out = &std::cout;
  std::ofstream file_out;
  if (output != "-") {
    file_out.open(output);
    if (!file_out) mtltxt::fail_data("cannot open output '" + output + "'");
    out = &file_out;
  }

  std::string line;
  while (std::getline(*in, line)) {
    const mtltxt::CleanedText cleaned = mtltxt::preprocess(line, lexicon, emoticons);
    if (show_flags) {
      for (std::size_t i = 0; i < cleaned.tokens.size(); ++i) {
        if (i) *out << ' ';
        const char* tag = "";
        switch (cleaned.sources[i]) {
          case mtltxt::TokenSource::FromHashtag: tag = "#"; break;
          case mtltxt::TokenSource::EmoticonCategory: tag = "~"; break;
          case mtltxt::TokenSource::MentionPlaceholder: tag = "@"; break;
          case mtltxt::TokenSource::Plain: break;
        }
        *out << tag << cleaned.tokens[i];
      }
      *out << '\n';
    } else {
      *out << mtltxt::render(cleaned) << '\n';
    }
  }
  return 0;
}

int run_report(const std::string& input, const std::string& format, bool audit) {
  std::ifstream in(input);
  if (!in) mtltxt::fail_data("cannot open report '" + input + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const mtltxt::Report report = mtltxt::report_from_json(buffer.str());
  if (audit) {
    mtltxt::audit_report(report);
    std::cout << "audit ok: every rendered number matches its confusion matrices\n";
  }
  if (format == "csv") {
    std::cout << mtltxt::render_csv(report);
  } else {
    std::cout << mtltxt::render_plain(report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CNN single- and multi-task text classification engine"};
  app.require_subcommand(1);

  Pending pending;

  CLI::App* preprocess = app.add_subcommand("preprocess", "clean and tokenize text lines");
  std::string pp_lexicon, pp_emoticons, pp_input = "-", pp_output = "-";
  bool pp_flags = false;
  preprocess->add_option("--lexicon", pp_lexicon, "unigram lexicon file");
  preprocess->add_option("--emoticons", pp_emoticons, "emoticon table file");
  preprocess->add_option("--input", pp_input, "input file ('-' = stdin)");
  preprocess->add_option("--output", pp_output, "output file ('-' = stdout)");
  preprocess->add_flag("--flags", pp_flags, "prefix tokens with their provenance");

  CLI::App* train = app.add_subcommand("train", "train on the full training data");
  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a trained model");
  CLI::App* cross = app.add_subcommand("cross-validate", "stratified k-fold protocol");
  CLI::App* search = app.add_subcommand("search", "random hyperparameter search");
  for (CLI::App* cmd : {train, evaluate, cross, search}) add_run_options(cmd, pending);

  CLI::App* report = app.add_subcommand("report", "render or audit a structured report");
  std::string report_in, report_format = "plain";
  bool report_audit = false;
  report->add_option("--in", report_in, "structured report file")->required();
  report->add_option("--format", report_format, "plain or csv");
  report->add_flag("--audit", report_audit, "verify metrics against the matrices");

  CLI11_PARSE(app, argc, argv);

  try {
    if (preprocess->parsed()) {
      return run_preprocess(pp_lexicon, pp_emoticons, pp_input, pp_output, pp_flags);
    }
    if (report->parsed()) return run_report(report_in, report_format, report_audit);
    if (train->parsed()) return run_command("train", pending);
    if (evaluate->parsed()) return run_command("evaluate", pending);
    if (cross->parsed()) return run_command("cross-validate", pending);
    if (search->parsed()) return run_command("search", pending);
  } catch (const mtltxt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
