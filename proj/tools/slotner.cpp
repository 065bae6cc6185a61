// slotner: train, evaluate and inspect prompt-slot NER models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slotner/checkpoint.hpp"
#include "slotner/config.hpp"
#include "slotner/corpus.hpp"
#include "slotner/dataset.hpp"
#include "slotner/gradient_suite.hpp"
#include "slotner/pipeline.hpp"
#include "slotner/report.hpp"

namespace fs = std::filesystem;
using namespace slotner;

namespace {

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::string mode;
  std::string ablation;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed_set) cfg.train.seed = c.seed;
  if (!c.mode.empty()) set_config_value(cfg, "mode", c.mode);
  if (!c.ablation.empty()) apply_ablation(cfg, c.ablation);
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

std::vector<std::string> type_names(const Corpus& c) {
  if (!c.types.empty()) return c.types;
  return {"ENTITY"};  // position-only corpora still need one type slot
}

Vocab build_vocab(const Corpus& train, std::size_t prompts) {
  Vocab v(prompts);
  for (const auto& r : train.records)
    for (const auto& w : r.tokens) v.add_word(w);
  return v;
}

std::vector<Instance> eval_instances(const Corpus& c) {
  std::vector<Instance> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.push_back({c.records[i].id.empty() ? std::to_string(i + 1) : c.records[i].id, c.records[i].tokens,
                   c.entities(i)});
  }
  return out;
}

DecodeOptions decode_for(const RunConfig& cfg) {
  DecodeOptions o;
  o.ignore_type = cfg.train.mode == TrainMode::kLocateOnly;
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

int cmd_synth(const Common& c, SynthSpec spec) {
  if (c.seed_set) spec.seed = c.seed;
  const Corpus corpus = synth_generate(spec);
  if (c.out.empty() || c.out == "-") write_corpus(std::cout, corpus);
  else save_corpus(c.out, corpus);
  return 0;
}

int cmd_stats(const Common& c) {
  const CorpusStats s = corpus_stats(load_corpus(c.data));
  std::cout << stats_to_json(s).dump(2) << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& eval_path) {
  if (c.out.empty()) throw Error("train: --out DIR is required");
  RunConfig cfg = resolve_config(c);
  const Corpus train = load_corpus(c.data);
  const auto types = type_names(train);
  cfg.model.types = types.size();
  const Vocab vocab = build_vocab(train, cfg.model.prompts);
  const auto data = make_instances(train, cfg.model.prompts);

  fs::create_directories(c.out);
  const fs::path dir(c.out);
  write_text(dir / "config.txt", config_to_text(cfg));
  Model<float> model(cfg.model, vocab, init_params<float>(cfg.model, vocab.size(), cfg.train.seed));
  Trainer<float> trainer(model, cfg.train, Trainer<float>::steps_for(data.size(), cfg.train));
  std::ofstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw Error("cannot write " + (dir / "metrics.jsonl").string());
  trainer.fit(data, [&](const StepResult& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["L"] = r.loss;
    j["L1"] = r.typing;
    j["L2"] = r.locating;
    j["lr"] = r.learning_rate;
    metrics << j.dump() << '\n';
  });
  save_checkpoint(dir / "model.ckpt", cfg, types, vocab, model.params());
  std::cerr << "trained " << trainer.step_index() << " steps on " << data.size() << " sentences; wrote "
            << (dir / "model.ckpt").string() << '\n';
  if (!eval_path.empty()) {
    const Corpus test = load_corpus(eval_path);
    const auto report = report_to_json(evaluate(model, eval_instances(test), decode_for(cfg)), types);
    write_text(dir / "report.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << '\n';
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& predictions) {
  const Corpus gold = load_corpus(c.data);
  nlohmann::ordered_json report;
  if (!predictions.empty()) {
    const Corpus pred = load_corpus(predictions);
    if (pred.size() != gold.size()) {
      throw Error("eval: " + std::to_string(pred.size()) + " predicted records for " +
                  std::to_string(gold.size()) + " gold records");
    }
    // Type ids follow the gold inventory.
    Corpus aligned = pred;
    aligned.types = gold.types;
    std::vector<std::vector<Entity>> g, p;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      g.push_back(gold.entities(i));
      p.push_back(aligned.entities(i));
    }
    report = report_to_json(evaluate(g, p, type_names(gold).size()), type_names(gold));
  } else if (!model_path.empty()) {
    Checkpoint<float> ck = load_checkpoint<float>(model_path);
    Model<float> model = ck.model();
    report = report_to_json(evaluate(model, eval_instances(gold), decode_for(ck.config)), ck.types);
  } else {
    throw Error("eval: pass --model CKPT or --predictions FILE");
  }
  if (!c.out.empty()) write_text(c.out, report.dump(2) + "\n");
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_predict(const Common& c, const std::string& model_path) {
  if (model_path.empty()) throw Error("predict: --model CKPT is required");
  Checkpoint<float> ck = load_checkpoint<float>(model_path);
  Model<float> model = ck.model();
  std::ifstream in(c.data);
  if (!in) throw Error("cannot open " + c.data);
  const auto sentences = read_sentences(in);
  Corpus out;
  out.types = ck.types;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto entities = decode_entities(model.predict(sentences[i]), decode_for(ck.config));
    out.records.push_back(prediction_record(std::to_string(i + 1), sentences[i], entities, ck.types));
  }
  if (c.out.empty() || c.out == "-") write_corpus(std::cout, out);
  else save_corpus(c.out, out);
  return 0;
}

int cmd_gradcheck(const Common& c, std::size_t instances) {
  const std::uint64_t first = c.seed_set ? c.seed : 1;
  double worst32 = 0.0, worst64 = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const GradSuiteCase r = run_grad_instance(first + i);
    std::printf("instance seed=%llu N=%zu M=%zu coords=%zu  32-bit %.3e (%s)  64-bit %.3e (%s)\n",
                static_cast<unsigned long long>(r.seed), r.words, r.prompts, r.coordinates, r.error32,
                r.worst32.c_str(), r.error64, r.worst64.c_str());
    worst32 = std::max(worst32, r.error32);
    worst64 = std::max(worst64, r.error64);
  }
  std::printf("max relative error: 32-bit %.3e, 64-bit %.3e\n", worst32, worst64);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& eval_path, const std::string& axis,
              const std::vector<std::size_t>& values) {
  if (eval_path.empty()) throw Error("sweep: --eval FILE is required");
  RunConfig cfg = resolve_config(c);
  const Corpus train = load_corpus(c.data);
  const Corpus test = load_corpus(eval_path);
  cfg.model.types = type_names(train).size();
  SweepAxis a;
  if (axis == "M") a = SweepAxis::kPrompts;
  else if (axis == "I") a = SweepAxis::kInteractionLayers;
  else throw Error("sweep: --axis must be M or I");
  nlohmann::ordered_json series = nlohmann::ordered_json::array();
  std::printf("%-4s %8s %8s %8s %8s\n", axis.c_str(), "P", "R", "F1", "loc-F1");
  run_sweep<float>(a, values, cfg.model, cfg.train, train, test, [&](const SweepPoint& p) {
    std::printf("%-4zu %8.4f %8.4f %8.4f %8.4f\n", p.value, p.report.exact.precision, p.report.exact.recall,
                p.report.exact.f1, p.report.locating.f1);
    std::fflush(stdout);
    series.push_back({{axis, p.value}, {"f1", p.report.exact.f1}, {"precision", p.report.exact.precision},
                      {"recall", p.report.exact.recall}, {"locating_f1", p.report.locating.f1}});
  });
  if (!c.out.empty()) write_text(c.out, series.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-slot named entity recognition"};
  app.require_subcommand(1);
  Common c;

  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { c.seed = s; c.seed_set = true; }, "Random seed");
  };
  auto config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "Config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--mode", c.mode, "Training mode")->check(CLI::IsMember({"full", "locate_only"}));
    sub->add_option("--ablation", c.ablation, "Ablation switch")
        ->check(CLI::IsMember({"none", "static", "one_to_one", "no_mask"}));
    sub->add_option("--set", c.overrides, "Override a config key (key=value)");
    seed_opt(sub);
  };

  SynthSpec spec;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic nested-entity corpus");
  synth->add_option("--out", c.out, "Output corpus file (default stdout)");
  synth->add_option("--sentences", spec.sentences, "Number of sentences")->capture_default_str();
  synth->add_option("--types", spec.types, "Entity type count")->capture_default_str();
  synth->add_option("--nesting", spec.nesting_probability, "Nesting probability")->capture_default_str();
  synth->add_option("--density", spec.entity_density, "Target entity word density")->capture_default_str();
  synth->add_option("--max-entities", spec.max_entities, "Max entities per sentence")->capture_default_str();
  synth->add_option("--min-length", spec.min_length, "Minimum sentence length")->capture_default_str();
  synth->add_option("--max-length", spec.max_length, "Maximum sentence length")->capture_default_str();
  synth->add_flag("--position-only", spec.position_only, "Omit entity types");
  seed_opt(synth);

  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--data", c.data, "Corpus file")->required()->check(CLI::ExistingFile);

  std::string eval_path, model_path, predictions, axis;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", c.data, "Training corpus")->required()->check(CLI::ExistingFile);
  train->add_option("--eval", eval_path, "Held-out corpus evaluated after training")->check(CLI::ExistingFile);
  train->add_option("--out", c.out, "Output directory")->required();
  config_opts(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a model or a prediction file against gold");
  eval->add_option("--data", c.data, "Gold corpus")->required()->check(CLI::ExistingFile);
  eval->add_option("--model", model_path, "Checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--predictions", predictions, "Predicted corpus")->check(CLI::ExistingFile);
  eval->add_option("--out", c.out, "Write the report here as well");

  auto* predict = app.add_subcommand("predict", "Tag sentences (one per line, whitespace tokenized)");
  predict->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--data", c.data, "Sentence file")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", c.out, "Output corpus file (default stdout)");

  std::size_t instances = 5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Full-model gradient check against finite differences");
  gradcheck->add_option("--instances", instances, "Number of random toy instances")->capture_default_str();
  seed_opt(gradcheck);

  std::vector<std::size_t> values;
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate across prompt counts or interaction depths");
  sweep->add_option("--data", c.data, "Training corpus")->required()->check(CLI::ExistingFile);
  sweep->add_option("--eval", eval_path, "Held-out corpus")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis, "M or I")->required()->check(CLI::IsMember({"M", "I"}));
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sweep->add_option("--out", c.out, "Write the series as JSON");
  config_opts(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) std::cerr << app.help() << '\n';
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(c, spec);
    if (*stats) return cmd_stats(c);
    if (*train) return cmd_train(c, eval_path);
    if (*eval) return cmd_eval(c, model_path, predictions);
    if (*predict) return cmd_predict(c, model_path);
    if (*gradcheck) return cmd_gradcheck(c, instances);
    if (*sweep) return cmd_sweep(c, eval_path, axis, values);
  } catch (const std::exception& e) {
    std::cerr << "slotner: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
