// cxrclip: synthetic data, training, evaluation and prompt auditing.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cxrclip/ablation.hpp"
#include "cxrclip/checkpoint.hpp"
#include "cxrclip/config.hpp"
#include "cxrclip/errors.hpp"
#include "cxrclip/eval.hpp"
#include "cxrclip/hash.hpp"
#include "cxrclip/synth.hpp"
#include "cxrclip/train.hpp"

namespace fs = std::filesystem;
using namespace cxrclip;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4, kDims = 5, kNoTemplate = 6 };

struct Common {
  std::optional<std::string> config_path;
  std::optional<std::string> grammar_path;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file");
  cmd->add_option("--grammar", c.grammar_path, "prompt grammar file");
  for (const auto& key : config_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key.name, [&c, name = key.name](const std::string& v) { c.overrides[name] = v; }, key.help);
  }
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (c.config_path) cfg = load_config(*c.config_path);
  for (const auto& [k, v] : c.overrides) set_config_value(cfg, k, v);
  return cfg;
}

prompt::PromptGrammar load_grammar(const Common& c) {
  return prompt::PromptGrammar::load(prompt::PromptGrammar::resolve_path(
      c.grammar_path ? std::optional<fs::path>(*c.grammar_path) : std::nullopt));
}

fs::path grammar_file(const Common& c) {
  return prompt::PromptGrammar::resolve_path(c.grammar_path ? std::optional<fs::path>(*c.grammar_path)
                                                            : std::nullopt);
}

std::vector<Study> read_split(const fs::path& dir, const std::string& split, const prompt::PromptGrammar& g) {
  const fs::path file = dir / (split + ".jsonl");
  if (!fs::exists(file)) throw DataError("dataset split not found: " + file.string());
  auto studies = read_studies(file, &g);
  if (studies.empty()) throw DataError("dataset split is empty: " + file.string());
  return studies;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

std::vector<std::string> eval_classes(const RunConfig& cfg, const fs::path& data_dir) {
  if (!cfg.eval_classes.empty()) return split_list(cfg.eval_classes);
  std::ifstream in(data_dir / "classes.txt");
  if (!in) throw ConfigError("eval_classes unset and no classes.txt in " + data_dir.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

int run_synth(const Common& c, const std::string& out_dir) {
  const RunConfig cfg = resolve_config(c);
  const auto grammar = load_grammar(c);
  const synth::Dataset data = synth::generate(cfg.synth, grammar, cfg.train.seed);
  synth::write_dataset(out_dir, data);
  std::printf("wrote %zu train, %zu valid, %zu test studies to %s\n", data.train.size(), data.valid.size(),
              data.test.size(), out_dir.c_str());
  return kOk;
}

int run_train(const Common& c, const std::string& data_dir, const std::string& out_dir) {
  const RunConfig cfg = resolve_config(c);
  train::validate(cfg.train);
  const auto grammar = load_grammar(c);
  const auto train_set = read_split(data_dir, "train", grammar);
  const auto valid_set = read_split(data_dir, "valid", grammar);
  for (const auto* split : {&train_set, &valid_set}) {
    for (const Study& s : *split) {
      for (const auto& im : s.images) {
        if (im.pixels.height != cfg.train.image_dims.input_size || im.pixels.width != cfg.train.image_dims.input_size) {
          throw DimMismatch("study " + s.id + " image is " + std::to_string(im.pixels.height) + "x" +
                            std::to_string(im.pixels.width) + ", image_size is " +
                            std::to_string(cfg.train.image_dims.input_size));
        }
      }
    }
  }

  const train::TrainResult result = train::train(train_set, valid_set, grammar, cfg.train);
  for (const auto& e : result.log.epochs) {
    std::fprintf(stderr, "epoch %d val_loss %.6f%s\n", e.epoch, e.val_loss, e.improved ? " *" : "");
  }

  fs::create_directories(out_dir);
  const std::string hash = config_hash(cfg);
  const fs::path ckpt = fs::path(out_dir) / "checkpoint.txt";
  const fs::path log = fs::path(out_dir) / "train_log.jsonl";
  const fs::path manifest = fs::path(out_dir) / "manifest.json";
  model::save_checkpoint(ckpt, result.model,
                         {{"config_hash", hash},
                          {"seed", std::to_string(cfg.train.seed)},
                          {"best_epoch", std::to_string(result.log.best_epoch)}});
  write_file(log, result.log.to_jsonl());

  const std::string grammar_hash = git_blob_hash_file(grammar_file(c));
  const std::string dataset_hash = directory_hash(data_dir);
  nlohmann::ordered_json m;
  m["config_hash"] = hash;
  m["seed"] = cfg.train.seed;
  m["grammar_hash"] = grammar_hash;
  m["dataset_hash"] = dataset_hash;
  m["manifest_hash"] =
      sha1_hex(hash + "\n" + std::to_string(cfg.train.seed) + "\n" + grammar_hash + "\n" + dataset_hash + "\n");
  m["outputs"] = {{"checkpoint", ckpt.filename().string()},
                  {"train_log", log.filename().string()},
                  {"manifest", manifest.filename().string()}};
  write_file(manifest, m.dump(2) + "\n");
  std::printf("best epoch %d, validation loss %.6f, checkpoint %s\n", result.log.best_epoch,
              result.log.best_val_loss, ckpt.c_str());
  return kOk;
}

void check_dims(const model::ClipModel& m, const std::vector<Study>& studies) {
  const int size = m.image.dims().input_size;
  for (const Study& s : studies) {
    for (const auto& im : s.images) {
      if (im.pixels.height != size || im.pixels.width != size) {
        throw DimMismatch("study " + s.id + " image is " + std::to_string(im.pixels.height) + "x" +
                          std::to_string(im.pixels.width) + ", checkpoint expects " + std::to_string(size) + "x" +
                          std::to_string(size));
      }
    }
  }
}

int run_eval(const Common& c, const std::string& data_dir, const std::string& out_dir, const std::string& task,
             const std::string& split, std::optional<std::string> checkpoint_path) {
  const RunConfig cfg = resolve_config(c);
  const auto grammar = load_grammar(c);
  const std::string hash = config_hash(cfg);
  const std::uint64_t seed = cfg.train.seed;
  std::vector<eval::MetricRecord> records;
  auto record = [&](const std::string& t, const std::string& metric, double value) {
    records.push_back(eval::MetricRecord{t, split, metric, value, seed, hash});
  };

  if (task == "ablation") {
    train::validate(cfg.train);
    const auto train_set = read_split(data_dir, "train", grammar);
    const auto valid_set = read_split(data_dir, "valid", grammar);
    const auto test_set = read_split(data_dir, split, grammar);
    const auto rows = eval::ablation_report(train_set, valid_set, test_set, grammar, cfg.train,
                                            eval::default_variants(), eval_classes(cfg, data_dir),
                                            cfg.prompt_renderings);
    for (const auto& r : rows) {
      record("ablation", r.variant + "/acc", r.acc);
      record("ablation", r.variant + "/r1", r.r1);
      record("ablation", r.variant + "/r5", r.r5);
      record("ablation", r.variant + "/r10", r.r10);
      record("ablation", r.variant + "/rsum", r.rsum);
    }
    fs::create_directories(out_dir);
    const std::string csv = eval::ablation_csv(rows);
    write_file(fs::path(out_dir) / "ablation.csv", csv);
    std::fputs(csv.c_str(), stderr);
  } else {
    const fs::path ckpt = checkpoint_path ? fs::path(*checkpoint_path) : fs::path(out_dir) / "checkpoint.txt";
    const model::Checkpoint loaded = model::load_checkpoint(ckpt);
    const model::ClipModel& m = loaded.model;
    const auto studies = read_split(data_dir, split, grammar);
    check_dims(m, studies);
    const Matrix images = eval::embed_images(m, studies);

    if (task == "retrieval") {
      std::vector<std::string> texts;
      for (const Study& s : studies) texts.push_back(sampler::eval_text(s, grammar));
      std::vector<std::size_t> ks;
      for (std::size_t k : {1, 5, 10}) ks.push_back(std::min(k, studies.size()));
      const auto r = eval::recall_at_k(images, eval::embed_texts(m, texts), ks);
      record(task, "r1", r.recalls[0]);
      record(task, "r5", r.recalls[1]);
      record(task, "r10", r.recalls[2]);
      record(task, "rsum", r.rsum);
    } else if (task == "zeroshot-multiclass") {
      const auto classes = eval_classes(cfg, data_dir);
      const Matrix prompts =
          eval::class_prompt_embeddings(m, grammar, classes, cfg.prompt_renderings, derive_seed(seed, "prompts"));
      const auto r = eval::zero_shot_multiclass(images, prompts, eval::single_labels(studies, classes));
      record(task, "accuracy", r.accuracy);
    } else if (task == "zeroshot-binary") {
      const auto classes = eval_classes(cfg, data_dir);
      double sum = 0.0;
      for (const auto& cls : classes) {
        std::vector<bool> labels;
        for (const Study& s : studies) {
          const bool pos = s.labels && s.labels->count(cls) && s.labels->at(cls) == prompt::LabelValue::positive;
          labels.push_back(pos);
        }
        const auto [pos_text, neg_text] = prompt::eval_prompt_pair(cls, prompt::EvalPromptStyle::simple);
        const auto pos = m.text.encode(pos_text).embedding;
        const auto neg = m.text.encode(neg_text).embedding;
        const double auc = eval::zero_shot_binary(images, pos, neg, labels).auc;
        record(task, "auc/" + cls, auc);
        sum += auc;
      }
      record(task, "auc_mean", sum / static_cast<double>(classes.size()));
    } else {
      throw ConfigError("unknown task '" + task + "'");
    }
  }

  const std::string doc = eval::metrics_jsonl(records);
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / ("metrics_" + task + ".jsonl"), doc);
  std::fputs(doc.c_str(), stdout);
  return kOk;
}

int run_prompts(const Common& c, const std::string& cls, const std::string& value, bool all, std::uint64_t seed,
                std::size_t cap) {
  const auto grammar = load_grammar(c);
  const auto lv = prompt::parse_label_value(value);
  if (!lv) throw ConfigError("unknown label value '" + value + "'");
  if (all) {
    for (const auto& s : grammar.enumerate(cls, *lv, cap)) std::printf("%s\n", s.c_str());
  } else {
    Rng rng(seed);
    std::printf("%s\n", grammar.render_prompt(cls, *lv, rng).c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive image-report pretraining at desk scale"};
  app.require_subcommand(1);

  Common synth_opts;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic study dataset");
  synth->add_option("--out-dir", synth_out, "output directory")->required();
  add_common(synth, synth_opts);

  Common train_opts;
  std::string train_data;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data-dir", train_data, "dataset directory")->required();
  train_cmd->add_option("--out-dir", train_out, "run directory")->required();
  add_common(train_cmd, train_opts);

  Common eval_opts;
  std::string eval_data;
  std::string eval_out;
  std::string task = "retrieval";
  std::string split = "test";
  std::optional<std::string> checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint, or run the ablation table");
  eval_cmd->add_option("--data-dir", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--out-dir", eval_out, "run directory holding checkpoint.txt; metrics go here")->required();
  eval_cmd->add_option("--task", task, "retrieval | zeroshot-binary | zeroshot-multiclass | ablation")
      ->check(CLI::IsMember({"retrieval", "zeroshot-binary", "zeroshot-multiclass", "ablation"}));
  eval_cmd->add_option("--split", split, "dataset split to evaluate");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default <out-dir>/checkpoint.txt)");
  add_common(eval_cmd, eval_opts);

  Common prompt_opts;
  std::string cls;
  std::string value = "positive";
  bool all = false;
  std::uint64_t prompt_seed = 0;
  std::size_t cap = 100000;
  auto* prompts = app.add_subcommand("prompts", "print prompt renderings for a class and label value");
  prompts->add_option("--class", cls, "class name")->required();
  prompts->add_option("--value", value, "positive | negative");
  prompts->add_flag("--all", all, "print every expansion");
  prompts->add_option("--seed", prompt_seed, "sampling seed");
  prompts->add_option("--cap", cap, "expansion limit for --all");
  prompts->add_option("--grammar", prompt_opts.grammar_path, "prompt grammar file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return run_synth(synth_opts, synth_out);
    if (*train_cmd) return run_train(train_opts, train_data, train_out);
    if (*eval_cmd) return run_eval(eval_opts, eval_data, eval_out, task, split, checkpoint);
    if (*prompts) return run_prompts(prompt_opts, cls, value, all, prompt_seed, cap);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const UnsupportedValue& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const DimMismatch& e) {
    std::fprintf(stderr, "dimension mismatch: %s\n", e.what());
    return kDims;
  } catch (const NoTemplate& e) {
    std::fprintf(stderr, "no template: %s\n", e.what());
    return kNoTemplate;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const StudyError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
