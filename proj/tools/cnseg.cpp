// cnseg command line front end.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "cnseg/annotate.hpp"
#include "cnseg/core.hpp"
#include "cnseg/corpus.hpp"
#include "cnseg/error.hpp"
#include "cnseg/harness.hpp"
#include "cnseg/jsonl.hpp"
#include "cnseg/llm.hpp"
#include "cnseg/logreg.hpp"
#include "cnseg/rules.hpp"
#include "cnseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace cnseg;

namespace {

LabelOntology ontology_from(const std::string& path) {
  return path.empty() ? LabelOntology::default_ontology() : LabelOntology::load(path);
}

void emit(const std::string& out, const std::string& contents) {
  if (out.empty() || out == "-") {
    std::cout << contents;
  } else {
    write_file(out, contents);
  }
}

// name=path pairs from repeated flags.
std::map<std::string, fs::path> named_paths(const std::vector<std::string>& items, const char* flag) {
  std::map<std::string, fs::path> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw Error(Errc::InvalidArgument, std::string(flag) + " expects name=path, got " + item);
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cnseg: clinical note segmentation toolkit"};
  app.require_subcommand(1);

  std::string ontology_path;
  auto add_ontology = [&](CLI::App* cmd) {
    cmd->add_option("--ontology", ontology_path, "Label ontology JSONL (default: built-in)");
  };

  // ingest
  std::string sentences_path, out_path;
  bool strict = false;
  auto* ingest = app.add_subcommand("ingest", "Validate a sentence corpus and optionally write it normalized");
  ingest->add_option("--sentences", sentences_path, "Sentence corpus JSONL")->required();
  add_ontology(ingest);
  ingest->add_flag("--strict", strict, "Reject labels outside the ontology");
  ingest->add_option("--out", out_path, "Write the normalized corpus here");

  // synth-freetext
  auto* synth = app.add_subcommand("synth-freetext", "Join sentences into freetext notes with gold spans");
  synth->add_option("--sentences", sentences_path)->required();
  add_ontology(synth);
  synth->add_option("--out", out_path, "Output JSONL (default stdout)");

  // stats
  std::size_t min_count = 50;
  auto* stats = app.add_subcommand("stats", "Tag distribution statistics");
  stats->add_option("--sentences", sentences_path)->required();
  add_ontology(stats);
  stats->add_option("--min-count", min_count, "Minimum occurrences for the tag histogram");

  // segment
  std::string method = "rules", in_path;
  bool multiline = false;
  auto* segment = app.add_subcommand("segment", "Rule-based segmentation of freetext notes");
  segment->add_option("--method", method)->check(CLI::IsMember({"rules", "regex"}));
  add_ontology(segment);
  segment->add_option("--in", in_path, "Freetext JSONL")->required();
  segment->add_option("--out", out_path, "Spans JSONL (default stdout)");
  segment->add_flag("--join-multiline", multiline, "Join headers wrapped across two lines");

  // train-logreg
  logreg::TrainConfig train_config;
  std::string validation_path;
  auto* train = app.add_subcommand("train-logreg", "Train the bag-of-words classifier");
  train->add_option("--sentences", sentences_path)->required();
  train->add_option("--validation", validation_path, "Validation corpus for early stopping");
  add_ontology(train);
  train->add_option("--out", out_path, "Model file")->required();
  train->add_option("--learning-rate", train_config.learning_rate);
  train->add_option("--epochs", train_config.epochs);
  train->add_option("--l2", train_config.l2_lambda);
  train->add_option("--batch-size", train_config.batch_size);
  train->add_option("--seed", train_config.seed);
  train->add_option("--min-count", train_config.min_count);

  // classify
  std::string model_path;
  auto* classify = app.add_subcommand("classify", "Label sentences with a trained model");
  classify->add_option("--model", model_path)->required();
  classify->add_option("--sentences", sentences_path)->required();
  add_ontology(classify);
  classify->add_option("--out", out_path, "Predictions JSONL (default stdout)");

  // llm-run
  std::string endpoint_name, task = "classify", cache_dir, mock_path, endpoints_path;
  auto* llm_run = app.add_subcommand("llm-run", "Run one LLM endpoint over a corpus");
  llm_run->add_option("--endpoint", endpoint_name, "Endpoint name (\"mock\" with --mock)")->required();
  llm_run->add_option("--endpoints", endpoints_path, "JSON file with an \"endpoints\" list");
  llm_run->add_option("--task", task)->check(CLI::IsMember({"classify", "segment"}));
  llm_run->add_option("--cache", cache_dir, "Response cache directory");
  llm_run->add_option("--mock", mock_path, "Mock transport script");
  llm_run->add_option("--in", in_path, "Sentence corpus (classify) or freetext (segment)")->required();
  add_ontology(llm_run);
  llm_run->add_option("--out", out_path, "Predictions JSONL (default stdout)");

  // eval
  std::string config_path;
  auto* eval = app.add_subcommand("eval", "Run the full evaluation described by a config file");
  eval->add_option("--config", config_path)->required();
  eval->add_option("--out", out_path, "Override the config's output directory");

  // annotate-serve
  std::string corpus_path, store_path, static_dir, host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> prediction_items, subset_items;
  auto* serve = app.add_subcommand("annotate-serve", "Serve the annotation API");
  serve->add_option("--corpus", corpus_path, "Sentence corpus to annotate")->required();
  serve->add_option("--store", store_path, "Annotation log")->required();
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  add_ontology(serve);
  serve->add_option("--predictions", prediction_items, "system=path of {sentence_id,label} JSONL");
  serve->add_option("--subset", subset_items, "name=path of sentence ids, one per line");
  serve->add_option("--static", static_dir, "Directory served at /");

  // make-fixture
  SyntheticOptions synth_options;
  auto* fixture = app.add_subcommand("make-fixture", "Generate a synthetic sentence corpus");
  fixture->add_option("--notes", synth_options.notes);
  fixture->add_option("--sentences", synth_options.total_sentences, "Exact sentence total (0 = free)");
  fixture->add_option("--header-rate", synth_options.header_rate);
  fixture->add_flag("--header-explicit", synth_options.header_explicit);
  fixture->add_option("--seed", synth_options.seed);
  add_ontology(fixture);
  fixture->add_option("--out", out_path, "Output JSONL (default stdout)");

  // table
  auto* table = app.add_subcommand("table", "Render a results TSV with best/second marks and ANOVA");
  table->add_option("--in", in_path, "results.tsv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) {
      const auto ontology = ontology_from(ontology_path);
      const auto corpus = load_sentence_corpus(sentences_path, ontology, strict ? LabelMode::Strict : LabelMode::Lenient);
      std::cerr << corpus.note_count() << " notes, " << corpus.sentences().size() << " sentences\n";
      if (!out_path.empty()) write_file(out_path, sentence_corpus_to_jsonl(corpus));
    } else if (synth->parsed()) {
      const auto corpus = load_sentence_corpus(sentences_path, ontology_from(ontology_path));
      emit(out_path, freetext_to_jsonl(synthesize_freetext(corpus)));
    } else if (stats->parsed()) {
      const auto corpus = load_sentence_corpus(sentences_path, ontology_from(ontology_path));
      const auto s = tag_statistics(corpus, min_count);
      std::printf("notes\t%zu\nsentences\t%zu\nmean_tags_per_note\t%.2f\nmode_tags_per_note\t%zu\n",
                  corpus.note_count(), corpus.sentences().size(), s.mean_tags_per_note(), s.tags_per_note_mode());
      for (const auto& [label, count] : s.frequent_labels()) std::printf("label\t%s\t%zu\n", label.c_str(), count);
    } else if (segment->parsed()) {
      const auto ontology = ontology_from(ontology_path);
      auto options = rules::options_for(*rules::parse_method(method));
      options.join_multiline_headers = multiline;
      const auto matcher = rules::compile_matcher(ontology, options);
      std::vector<SegmentationResult> results;
      for (const auto& note : load_freetext(in_path, ontology).notes)
        results.push_back(rules::segment_rules(matcher, note, method));
      emit(out_path, segmentations_to_jsonl(results));
    } else if (train->parsed()) {
      const auto ontology = ontology_from(ontology_path);
      const auto corpus = load_sentence_corpus(sentences_path, ontology);
      std::vector<LabeledSentence> validation;
      if (!validation_path.empty()) validation = load_sentence_corpus(validation_path, ontology).sentences();
      const auto trained = logreg::train(corpus.sentences(), ontology, train_config, validation);
      trained.model.save(out_path);
      std::cerr << "best epoch " << trained.report.best_epoch << "\n";
    } else if (classify->parsed()) {
      const auto model = logreg::LogRegModel::load(model_path);
      const auto corpus = load_sentence_corpus(sentences_path, ontology_from(ontology_path));
      std::string out;
      for (const auto& s : corpus.sentences())
        out += json{{"sentence_id", s.sentence_id}, {"label", model.predict(s.text).label}}.dump() + "\n";
      emit(out_path, out);
    } else if (llm_run->parsed()) {
      const auto ontology = ontology_from(ontology_path);
      llm::LlmEndpoint endpoint;
      std::unique_ptr<llm::Transport> transport;
      if (!mock_path.empty()) {
        endpoint.name = endpoint_name;
        endpoint.backoff = std::chrono::milliseconds(0);
        transport = std::make_unique<llm::MockTransport>(llm::MockTransport::load_script(mock_path), ontology);
      } else {
        if (endpoints_path.empty()) throw Error(Errc::InvalidArgument, "--endpoints is required without --mock");
        const json cfg = json::parse(read_file(endpoints_path));
        bool found = false;
        for (const auto& e : cfg.at("endpoints")) {
          if (e.at("name") != endpoint_name) continue;
          endpoint = harness::endpoint_from_json(e);
          found = true;
        }
        if (!found) throw Error(Errc::InvalidArgument, "no endpoint named " + endpoint_name);
        endpoint.validate();
        transport = std::make_unique<llm::HttpTransport>();
      }
      std::unique_ptr<llm::ResponseCache> cache;
      if (!cache_dir.empty()) cache = std::make_unique<llm::ResponseCache>(cache_dir);
      llm::LlmRunner runner(endpoint, *transport, cache.get());
      std::string out;
      std::map<llm::ParseStatus, std::size_t> statuses;
      if (task == "classify") {
        const auto corpus = load_sentence_corpus(in_path, ontology);
        for (const auto& id : corpus.note_ids()) {
          const auto sents = corpus.note_sentences(id);
          std::vector<std::string> texts;
          for (const auto& s : sents) texts.push_back(s.text);
          const auto trace = runner.run(llm::build_classification_prompt(ontology, texts));
          const auto parsed = llm::parse_classification(trace.response, texts.size(), ontology);
          ++statuses[parsed.status];
          for (std::size_t i = 0; i < sents.size(); ++i)
            out += json{{"sentence_id", sents[i].sentence_id}, {"label", parsed.labels[i]},
                        {"status", llm::parse_status_name(parsed.status)}}.dump() + "\n";
        }
      } else {
        std::vector<SegmentationResult> results;
        for (const auto& note : load_freetext(in_path, ontology).notes) {
          const auto trace = runner.run(llm::build_segmentation_prompt(ontology, note));
          auto parsed = llm::parse_segmentation(trace.response, note, ontology, endpoint_name);
          ++statuses[parsed.status];
          results.push_back(std::move(parsed.result));
        }
        out = segmentations_to_jsonl(results);
      }
      emit(out_path, out);
      for (const auto& [status, count] : statuses) std::cerr << llm::parse_status_name(status) << " " << count << "\n";
    } else if (eval->parsed()) {
      auto config = harness::ExperimentConfig::load(config_path);
      if (!out_path.empty()) config.out_dir = out_path;
      const auto result = harness::run_experiment(config);
      harness::emit_reports(result, config.out_dir, &config);
      std::cout << harness::format_results_text(result.table);
    } else if (serve->parsed()) {
      const auto ontology = ontology_from(ontology_path);
      auto store = std::make_shared<annotate::AnnotationStore>(store_path);
      annotate::AnnotationService service(store, ontology);
      service.load_corpus(load_sentence_corpus(corpus_path, ontology));
      for (const auto& [name, path] : named_paths(prediction_items, "--predictions"))
        service.set_predictions(name, annotate::load_predictions(path));
      for (const auto& [name, path] : named_paths(subset_items, "--subset"))
        service.set_subset(name, annotate::load_subset(path));
      std::optional<fs::path> mount;
      if (!static_dir.empty()) mount = static_dir;
      annotate::AnnotationServer server(service, mount);
      const int bound = server.start(host, port);
      std::cerr << "listening on " << host << ":" << bound << " (" << store->size() << " records replayed)\n";
      server.wait();
    } else if (fixture->parsed()) {
      emit(out_path, sentence_corpus_to_jsonl(generate_sentence_corpus(synth_options, ontology_from(ontology_path))));
    } else if (table->parsed()) {
      auto results = harness::parse_results_tsv(read_file(in_path));
      results.check_invariants();
      std::cout << harness::format_results_text(results) << "\n"
                << harness::format_anova(harness::anova_attempts(results));
    }
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
