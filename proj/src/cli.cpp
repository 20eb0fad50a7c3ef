// SPDX-License-Identifier: Apache-2.0
#include "kanac/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "kanac/chain.hpp"
#include "kanac/checkpoint.hpp"
#include "kanac/corpus.hpp"
#include "kanac/errors.hpp"
#include "kanac/evalkit.hpp"
#include "kanac/importance.hpp"
#include "kanac/kernels.hpp"
#include "kanac/pruner.hpp"
#include "kanac/trainer.hpp"
#include "kanac/upscaler.hpp"

namespace kanac::cli {

namespace {

using nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(fmt::format("cannot open {}", path));
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path, e.what()));
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(fmt::format("cannot open {} for writing", path));
  f << text;
  if (!f) throw IoError(fmt::format("write to {} failed", path));
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

template <class E>
E parse_enum(const std::string& text, const char* what) {
  try {
    return json(text).get<E>();
  } catch (const ValidationError&) {
    throw ValidationError(fmt::format("unknown {} '{}'", what, text));
  }
}

std::size_t default_seq_len(const ModelConfig& c) { return std::min<std::size_t>(128, c.max_seq_len); }

// Options shared by subcommands that distill.
struct DistillFlags {
  std::string config_path;
  std::size_t steps = 1000;
  double lr = 1.2e-4;
  std::size_t warmup = 100;
  std::size_t batch_size = 16;
  std::size_t seq_len = 128;
  double temperature = 1.0;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "DistillConfig JSON (overrides the flags below)");
    app->add_option("--steps", steps, "Distillation steps")->capture_default_str();
    app->add_option("--lr", lr, "Peak learning rate (cosine schedule)")->capture_default_str();
    app->add_option("--warmup", warmup, "Warmup steps")->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--seq-len", seq_len)->capture_default_str();
    app->add_option("--temperature", temperature)->capture_default_str();
  }

  DistillConfig build(std::uint64_t seed) const {
    DistillConfig c;
    if (!config_path.empty()) {
      c = read_json(config_path).get<DistillConfig>();
      return c;
    }
    c.max_steps = steps;
    c.schedule = Schedule::cosine(lr, warmup, steps);
    c.batch_size = batch_size;
    c.seq_len = seq_len;
    c.temperature = temperature;
    c.seed = seed;
    c.validate();
    return c;
  }
};

}  // namespace

std::string format_number(double value) {
  std::string s = fmt::format("{}", value);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"kanac: prune, distill, up-scale and train toy decoder-only transformers"};
  app.name("kanac");
  app.require_subcommand(1);

  int threads = 1;
  if (const char* env = std::getenv("KANAC_THREADS")) threads = std::max(1, std::atoi(env));
  app.add_option("--threads", threads, "Worker threads (default $KANAC_THREADS or 1); 1 is bit-deterministic");

  // init
  std::string config_path, out_path, model_path, corpus_path;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  auto* init = app.add_subcommand("init", "Create a randomly initialized checkpoint from a config JSON");
  init->add_option("--config", config_path)->required();
  init->add_option("--out", out_path)->required();
  init->add_option("--seed", seed)->capture_default_str();
  init->add_option("--init-std", init_std)->capture_default_str();

  // tokenize
  std::string in_path;
  std::size_t vocab = 256;
  auto* tokenize = app.add_subcommand("tokenize", "Byte-tokenize a text file into a token corpus");
  tokenize->add_option("--in", in_path)->required();
  tokenize->add_option("--out", out_path)->required();
  tokenize->add_option("--vocab", vocab, "Declared vocab size (>= 256)")->capture_default_str();

  // pretrain
  std::string plan_path, log_path;
  std::size_t steps = 100, warmup = 10, batch_size = 16;
  std::optional<std::size_t> seq_len;
  double lr = 1e-3, weight_decay = 1e-4, z_coefficient = 5e-6;
  std::string schedule_kind = "cosine";
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train with NTP + z-loss (single corpus or staged plan)");
  pretrain_cmd->add_option("--model", model_path)->required();
  pretrain_cmd->add_option("--out", out_path)->required();
  auto* plan_opt = pretrain_cmd->add_option("--plan", plan_path, "Stage plan JSON");
  pretrain_cmd->add_option("--corpus", corpus_path, "Single-stage corpus")->excludes(plan_opt);
  pretrain_cmd->add_option("--steps", steps)->capture_default_str();
  pretrain_cmd->add_option("--lr", lr)->capture_default_str();
  pretrain_cmd->add_option("--warmup", warmup)->capture_default_str();
  pretrain_cmd->add_option("--schedule", schedule_kind)->check(CLI::IsMember({"cosine", "multistep"}))->capture_default_str();
  pretrain_cmd->add_option("--batch-size", batch_size)->capture_default_str();
  pretrain_cmd->add_option("--seq-len", seq_len);
  pretrain_cmd->add_option("--weight-decay", weight_decay)->capture_default_str();
  pretrain_cmd->add_option("--z-coefficient", z_coefficient)->capture_default_str();
  pretrain_cmd->add_option("--seed", seed)->capture_default_str();
  pretrain_cmd->add_option("--log", log_path, "Training log output (TSV)");

  // score
  std::string seq_agg = "mean", batch_agg = "l2norm", layer_agg = "sum", neuron_mode = "intermediate_states";
  std::size_t max_batches = 8, calib_batch = 8;
  auto* score = app.add_subcommand("score", "Compute an importance report from calibration activations");
  score->add_option("--model", model_path)->required();
  score->add_option("--corpus", corpus_path)->required();
  score->add_option("--out", out_path)->required();
  score->add_option("--seq-len", seq_len);
  score->add_option("--max-batches", max_batches)->capture_default_str();
  score->add_option("--batch-size", calib_batch)->capture_default_str();
  score->add_option("--seq-agg", seq_agg)->check(CLI::IsMember({"mean", "l2norm"}))->capture_default_str();
  score->add_option("--batch-agg", batch_agg)->check(CLI::IsMember({"mean", "l2norm"}))->capture_default_str();
  score->add_option("--layer-agg", layer_agg)->check(CLI::IsMember({"sum", "none"}))->capture_default_str();
  score->add_option("--neuron-mode", neuron_mode)
      ->check(CLI::IsMember({"intermediate_states", "gate_up_average"}))
      ->capture_default_str();

  // plan
  std::string report_path, spec_path, targets_path;
  std::optional<std::size_t> t_hidden, t_inter, t_kv, t_qpg;
  auto add_target_flags = [&](CLI::App* a) {
    a->add_option("--targets", targets_path, "PruneTargets JSON");
    a->add_option("--hidden", t_hidden, "Target hidden_dim");
    a->add_option("--intermediate", t_inter, "Target intermediate_dim");
    a->add_option("--kv-heads", t_kv, "Target n_kv_heads");
    a->add_option("--queries-per-group", t_qpg, "Target query heads per KV group");
  };
  auto plan_cmd = app.add_subcommand("plan", "Turn an importance report and targets into a prune spec");
  plan_cmd->add_option("--model", model_path)->required();
  plan_cmd->add_option("--report", report_path)->required();
  plan_cmd->add_option("--out", out_path)->required();
  add_target_flags(plan_cmd);

  // prune / tie
  auto* prune = app.add_subcommand("prune", "Apply a prune spec");
  prune->add_option("--model", model_path)->required();
  prune->add_option("--spec", spec_path)->required();
  prune->add_option("--out", out_path)->required();
  auto* tie = app.add_subcommand("tie", "Tie input and output embeddings by averaging");
  tie->add_option("--model", model_path)->required();
  tie->add_option("--out", out_path)->required();

  // upscale
  std::optional<std::size_t> n_layers;
  std::vector<std::size_t> layer_map;
  auto* upscale = app.add_subcommand("upscale", "Depth up-scaling by stacking layer copies");
  upscale->add_option("--model", model_path)->required();
  upscale->add_option("--out", out_path)->required();
  auto* layers_opt = upscale->add_option("--layers", n_layers, "Target depth (default overlap layout)");
  upscale->add_option("--map", layer_map, "Explicit source-layer map, comma separated")
      ->delimiter(',')
      ->excludes(layers_opt);
  std::string plan_out;
  upscale->add_option("--plan-out", plan_out, "Also write the DusPlan JSON here");

  // distill
  std::string student_path, teacher_path;
  DistillFlags dflags;
  auto* distill_cmd = app.add_subcommand("distill", "KL-on-logits distillation from a frozen teacher");
  distill_cmd->add_option("--student", student_path)->required();
  distill_cmd->add_option("--teacher", teacher_path)->required();
  distill_cmd->add_option("--corpus", corpus_path)->required();
  distill_cmd->add_option("--out", out_path)->required();
  distill_cmd->add_option("--seed", seed)->capture_default_str();
  distill_cmd->add_option("--log", log_path);
  dflags.add(distill_cmd);

  // eval
  std::size_t trials = 20;
  auto* eval = app.add_subcommand("eval", "Evaluation metrics");
  eval->require_subcommand(1);
  auto* eval_ppl = eval->add_subcommand("ppl", "Perplexity over a corpus");
  eval_ppl->add_option("--model", model_path)->required();
  eval_ppl->add_option("--corpus", corpus_path)->required();
  eval_ppl->add_option("--seq-len", seq_len);
  auto* eval_kl = eval->add_subcommand("kl", "Mean KL(teacher || student) over a corpus");
  eval_kl->add_option("--teacher", teacher_path)->required();
  eval_kl->add_option("--student", student_path)->required();
  eval_kl->add_option("--corpus", corpus_path)->required();
  eval_kl->add_option("--seq-len", seq_len);
  auto* eval_ab = eval->add_subcommand("ablation", "Importance-vs-random pruning ablation");
  eval_ab->add_option("--model", model_path)->required();
  eval_ab->add_option("--corpus", corpus_path)->required();
  eval_ab->add_option("--report", report_path)->required();
  eval_ab->add_option("--trials", trials)->capture_default_str();
  eval_ab->add_option("--seed", seed)->capture_default_str();
  eval_ab->add_option("--seq-len", seq_len);
  add_target_flags(eval_ab);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print config, metadata and tensor manifest");
  inspect->add_option("--model", model_path)->required();

  // chain
  std::string calib_path;
  auto* chain = app.add_subcommand("chain", "Scripted iterative prune -> distill sequence");
  chain->add_option("--model", model_path)->required();
  chain->add_option("--plan", plan_path, "ChainPlan JSON")->required();
  chain->add_option("--calibration", calib_path)->required();
  chain->add_option("--corpus", corpus_path, "Distillation corpus")->required();
  chain->add_option("--out", out_path)->required();
  chain->add_option("--seq-len", seq_len);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  kernels::set_threads(threads);

  auto resolve_targets = [&](const ModelConfig& c) {
    PruneTargets t = PruneTargets::keep_all(c);
    if (!targets_path.empty()) t = read_json(targets_path).get<PruneTargets>();
    if (t_hidden) t.hidden_dim = *t_hidden;
    if (t_inter) t.intermediate_dim = *t_inter;
    if (t_kv) t.n_kv_heads = *t_kv;
    if (t_qpg) t.queries_per_group = *t_qpg;
    return t;
  };

  try {
    if (*init) {
      const auto cfg = read_json(config_path).get<ModelConfig>();
      auto ckpt = init_checkpoint(cfg, seed, init_std);
      out << save_checkpoint(ckpt, out_path) << "\n";
    } else if (*tokenize) {
      std::ifstream f(in_path, std::ios::binary);
      if (!f) throw IoError(fmt::format("cannot open {}", in_path));
      std::ostringstream ss;
      ss << f.rdbuf();
      if (vocab < 256) throw ValidationError("tokenize: byte vocabulary needs vocab >= 256");
      const auto tokens = encode_bytes(ss.str());
      write_corpus(out_path, vocab, tokens);
      out << tokens.size() << "\n";
    } else if (*pretrain_cmd) {
      auto ckpt = load_checkpoint(model_path);
      StagePlan splan;
      PretrainSettings settings;
      settings.batch_size = batch_size;
      settings.adam.weight_decay = weight_decay;
      settings.loss.z_coefficient = z_coefficient;
      if (!plan_path.empty()) {
        const auto j = read_json(plan_path);
        const std::size_t sl = j.value("seq_len", seq_len.value_or(default_seq_len(ckpt.config)));
        settings.batch_size = j.value("batch_size", settings.batch_size);
        if (j.contains("adam")) j.at("adam").get_to(settings.adam);
        if (j.contains("loss")) {
          settings.loss.ntp_weight = j.at("loss").value("ntp_weight", settings.loss.ntp_weight);
          settings.loss.z_coefficient = j.at("loss").value("z_coefficient", settings.loss.z_coefficient);
        }
        const auto repeat = j.value("repeat", std::string("repeat"));
        if (repeat != "repeat" && repeat != "no_repeat") throw ValidationError("plan: repeat must be repeat|no_repeat");
        settings.repeat = repeat == "repeat" ? RepeatPolicy::repeat : RepeatPolicy::no_repeat;
        std::map<std::string, std::shared_ptr<const Corpus>> loaded;
        for (const auto& js : j.at("stages")) {
          Stage stage;
          stage.steps = js.at("steps").get<std::size_t>();
          stage.seed = js.value("seed", seed);
          stage.schedule = js.contains("schedule") ? js.at("schedule").get<Schedule>()
                                                   : Schedule::cosine(lr, std::min(warmup, stage.steps - 1), stage.steps);
          for (const auto& src : js.at("sources")) {
            const auto path = src.at("corpus").get<std::string>();
            if (!loaded.count(path)) loaded[path] = std::make_shared<const Corpus>(load_corpus(path, sl));
            stage.sources.push_back({src.value("name", path), loaded[path], src.value("weight", 1.0)});
          }
          splan.stages.push_back(std::move(stage));
        }
      } else {
        if (corpus_path.empty()) throw CLI::RequiredError("--corpus or --plan");
        auto corpus = std::make_shared<const Corpus>(load_corpus(corpus_path, seq_len.value_or(default_seq_len(ckpt.config))));
        Stage stage;
        stage.steps = steps;
        stage.seed = seed;
        stage.schedule = schedule_kind == "cosine" ? Schedule::cosine(lr, warmup, steps) : Schedule::multistep(lr, warmup, steps);
        stage.sources.push_back({corpus_path, corpus, 1.0});
        splan.stages.push_back(std::move(stage));
      }
      auto result = pretrain(std::move(ckpt), splan, settings);
      if (!log_path.empty()) {
        std::ostringstream ls;
        write_log(ls, result.log);
        write_text(log_path, ls.str());
      }
      if (!result.log.empty()) err << fmt::format("pretrain: final loss {:.6g}\n", result.log.back().loss);
      const auto digest = save_checkpoint(result.checkpoint, out_path);
      if (result.aborted) throw NumericError(fmt::format("pretrain aborted ({}); last good checkpoint saved", result.message));
      out << digest << "\n";
    } else if (*score) {
      const auto ckpt = load_checkpoint(model_path);
      const auto corpus = load_corpus(corpus_path, seq_len.value_or(default_seq_len(ckpt.config)));
      AggregationSpec agg{parse_enum<SeqAgg>(seq_agg, "seq-agg"), parse_enum<BatchAgg>(batch_agg, "batch-agg"),
                          parse_enum<LayerAgg>(layer_agg, "layer-agg")};
      const auto trace = capture(ckpt, corpus, agg, max_batches, calib_batch);
      write_json(out_path, build_report(trace, parse_enum<NeuronMode>(neuron_mode, "neuron-mode")));
      err << fmt::format("score: {} calibration sequences in {} batches\n", trace.sequences, trace.batches);
    } else if (*plan_cmd) {
      const auto ckpt = load_checkpoint(model_path);
      const auto report = read_json(report_path).get<ImportanceReport>();
      const auto spec = plan(ckpt.config, report, resolve_targets(ckpt.config));
      write_json(out_path, spec);
      out << json(spec.target).dump() << "\n";
    } else if (*prune) {
      const auto ckpt = load_checkpoint(model_path);
      const auto spec = read_json(spec_path).get<PruneSpec>();
      out << save_checkpoint(apply_prune(ckpt, spec), out_path) << "\n";
    } else if (*tie) {
      out << save_checkpoint(tie_embeddings(load_checkpoint(model_path)), out_path) << "\n";
    } else if (*upscale) {
      const auto ckpt = load_checkpoint(model_path);
      std::vector<std::size_t> map = layer_map;
      if (map.empty()) map = dus_map(ckpt.config.n_layers, n_layers.value_or(ckpt.config.n_layers));
      const auto dplan = make_dus_plan(ckpt.config, map);
      if (!plan_out.empty()) write_json(plan_out, dplan);
      out << save_checkpoint(apply_dus(ckpt, dplan), out_path) << "\n";
    } else if (*distill_cmd) {
      auto student = load_checkpoint(student_path);
      const auto teacher = load_checkpoint(teacher_path);
      const auto cfg = dflags.build(seed);
      const auto corpus = load_corpus(corpus_path, cfg.seq_len);
      auto result = distill(std::move(student), teacher, corpus, cfg);
      if (!log_path.empty()) {
        std::ostringstream ls;
        write_log(ls, result.log);
        write_text(log_path, ls.str());
      }
      if (!result.log.empty()) err << fmt::format("distill: final kl {:.6g}\n", result.log.back().loss);
      const auto digest = save_checkpoint(result.checkpoint, out_path);
      if (result.aborted) throw NumericError(fmt::format("distill aborted ({}); last good checkpoint saved", result.message));
      out << digest << "\n";
    } else if (*eval) {
      if (*eval_ppl) {
        const auto ckpt = load_checkpoint(model_path);
        const auto corpus = load_corpus(corpus_path, seq_len.value_or(default_seq_len(ckpt.config)));
        out << format_number(perplexity(ckpt, corpus)) << "\n";
      } else if (*eval_kl) {
        const auto teacher = load_checkpoint(teacher_path);
        const auto student = load_checkpoint(student_path);
        const auto corpus = load_corpus(
            corpus_path, seq_len.value_or(std::min(default_seq_len(teacher.config), default_seq_len(student.config))));
        out << format_number(logit_kl(teacher, student, corpus)) << "\n";
      } else {
        const auto ckpt = load_checkpoint(model_path);
        const auto corpus = load_corpus(corpus_path, seq_len.value_or(default_seq_len(ckpt.config)));
        const auto report = read_json(report_path).get<ImportanceReport>();
        out << json(prune_ablation(ckpt, corpus, report, resolve_targets(ckpt.config), trials, seed)).dump(2) << "\n";
      }
    } else if (*inspect) {
      const auto ckpt = load_checkpoint(model_path);
      json manifest = json::array();
      for (const auto& t : tensor_manifest(ckpt.config)) manifest.push_back({{"name", t.name}, {"shape", t.shape}});
      out << json{{"config", ckpt.config},
                  {"metadata", ckpt.metadata},
                  {"parameter_count", stored_parameter_count(ckpt)},
                  {"tensors", manifest}}
                 .dump(2)
          << "\n";
    } else if (*chain) {
      const auto ckpt = load_checkpoint(model_path);
      const auto cplan = read_json(plan_path).get<ChainPlan>();
      const std::size_t sl = seq_len.value_or(default_seq_len(ckpt.config));
      const auto calibration = load_corpus(calib_path, sl);
      const auto corpus = load_corpus(corpus_path, sl);
      const auto result = run_chain(ckpt, calibration, corpus, cplan, &err);
      out << save_checkpoint(result.model, out_path) << "\n";
    }
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace kanac::cli
