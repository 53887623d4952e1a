// oisa: synth | train | infer | eval | report
#include "oisa/error.hpp"
#include "oisa/pipeline.hpp"
#include "oisa/report.hpp"
#include "oisa/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oisa;

namespace {

constexpr const char* kVersion = "0.1.0";

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

// Every run leaves its fully resolved settings beside its outputs.
void write_snapshot(const fs::path& dir, const std::string& command, json body) {
  body["command"] = command;
  body["version"] = kVersion;
  write_text(dir / "resolved_config.json", body.dump(2) + "\n");
}

template <class T>
T section(const json& cfg, const char* key, T value) {
  try {
    if (cfg.contains(key)) from_json(cfg.at(key), value);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config section ") + key + ": " + e.what());
  }
  return value;
}

struct SynthArgs {
  std::string out, config, kind, split = "train", fps_range;
  int samples = -1, expressions = -1;
  double no_target = -1, multi_target = -1;
  std::int64_t seed = -1;
};

int run_synth(const SynthArgs& a) {
  const json file = a.config.empty() ? json::object() : read_json(a.config);
  auto dc = section(file, "dataset", synth::DatasetConfig{});
  if (a.samples >= 0) dc.num_samples = a.samples;
  if (a.expressions >= 0) dc.expressions_per_sample = a.expressions;
  if (a.seed >= 0) dc.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.kind.empty()) dc.kind = synth::parse_kind(a.kind);
  if (a.no_target >= 0) dc.expressions.no_target_frac = a.no_target;
  if (a.multi_target >= 0) dc.expressions.multi_target_frac = a.multi_target;
  if (!a.fps_range.empty()) {
    int lo = 0, hi = 0;
    char colon = 0;
    std::istringstream in(a.fps_range);
    if (!(in >> lo >> colon >> hi) || colon != ':' || lo > hi) throw ConfigError("--fps-range expects LO:HI");
    dc.scene.min_fps = lo;
    dc.scene.max_fps = hi;
  }
  if (a.split != "train" && a.split != "test") throw ConfigError("split must be train or test");
  const auto model_cfg = section(file, "model", ModelConfig{});
  const Vocabulary vocab(model_cfg.lm.vocab);
  const auto samples = synth::generate_dataset(dc, vocab);
  synth::write_dataset(a.out, samples, a.split == "train" ? data::Split::train : data::Split::test);
  write_snapshot(a.out, "synth", {{"seed", dc.seed}, {"split", a.split}, {"dataset", dc}, {"vocab", model_cfg.lm.vocab}});
  std::cerr << "wrote " << samples.size() << " samples to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, out, ckpt, config, init, stage;
  int steps = -1, log_every = 50;
  double lr = -1;
  std::int64_t seed = -1;
  bool alternate = false;
};

int run_train(const TrainArgs& a) {
  const json file = a.config.empty() ? json::object() : read_json(a.config);
  auto tc = section(file, "train", train::TrainConfig{});
  auto mc = section(file, "model", ModelConfig{});
  if (!a.stage.empty()) tc.stage = train::parse_stage(a.stage);
  if (a.steps >= 0) tc.steps = a.steps;
  if (a.lr > 0) tc.lr = a.lr;
  if (a.seed >= 0) tc.seed = static_cast<std::uint64_t>(a.seed);
  if (a.alternate) tc.alternate_regimes = true;
  tc.validate();
  if (a.out.empty() && a.ckpt.empty()) throw ConfigError("train needs --out or --ckpt");
  const fs::path ckpt = a.ckpt.empty() ? fs::path(a.out) / "model.ckpt" : fs::path(a.ckpt);
  const fs::path out = a.out.empty() ? (ckpt.has_parent_path() ? ckpt.parent_path() : fs::path(".")) : fs::path(a.out);

  std::unique_ptr<Model> model;
  if (!a.init.empty()) {
    model = Model::load(a.init);
    mc = model->config();
  } else {
    mc.validate();
    model = Model::create(mc, tc.seed);
  }
  const auto corpus = train::load_corpus(a.data);
  fs::create_directories(out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());

  std::ostringstream csv;
  auto log = [&](int step, const std::string& line) {
    if (a.log_every > 0 && (step % a.log_every == 0 || step + 1 == tc.steps))
      std::cerr << train::to_string(tc.stage) << " step " << step << ' ' << line << '\n';
  };
  if (tc.stage == train::Stage::tune) {
    csv << "step,text,dice,bce,total\n";
    train::run_tune(*model, corpus, tc, [&](int step, const train::LossBreakdown& l) {
      csv << step << ',' << l.text << ',' << l.dice << ',' << l.bce << ',' << l.total << '\n';
      log(step, "total " + std::to_string(l.total));
    });
  } else {
    const auto pairs = train::transcript_corpus(corpus, model->vocab());
    csv << "step,ce\n";
    auto cb = [&](int step, double ce) {
      csv << step << ',' << ce << '\n';
      log(step, "ce " + std::to_string(ce));
    };
    if (tc.stage == train::Stage::pretrain)
      train::pretrain_language_model(*model, pairs, tc, cb);
    else
      train::align_audio_stage(*model, pairs, tc, cb);
  }
  model->save(ckpt);
  write_text(out / "loss.csv", csv.str());
  write_snapshot(out, "train",
                 {{"seed", tc.seed}, {"data", a.data}, {"init", a.init}, {"train", tc}, {"model", model->config()}});
  return 0;
}

struct InferArgs {
  std::string data, ckpt, out, config, regime, layout;
  int frames = -1, dense = -1;
  std::int64_t seed = -1;
};

int run_infer(const InferArgs& a) {
  const json file = a.config.empty() ? json::object() : read_json(a.config);
  auto tc = section(file, "train", train::TrainConfig{});
  if (a.frames > 0) tc.frames_infer = a.frames;
  if (a.dense >= 0) tc.dense_infer = a.dense;
  if (a.seed >= 0) tc.seed = static_cast<std::uint64_t>(a.seed);
  tc.validate();
  auto model = Model::load(a.ckpt);
  if (!a.regime.empty()) model->set_regime(mask::parse_regime(a.regime));
  if (!a.layout.empty()) model->set_layout(assembly::parse_layout(a.layout));
  const auto corpus = train::load_corpus(a.data);
  fs::create_directories(a.out);
  for (std::size_t s = 0; s < corpus.samples.size(); ++s)
    write_sample_predictions(a.out, corpus.samples[s],
                             predict_sample(*model, corpus.samples[s], corpus.media[s], tc));
  write_snapshot(a.out, "infer",
                 {{"seed", tc.seed},
                  {"data", a.data},
                  {"checkpoint", a.ckpt},
                  {"regime", mask::to_string(model->config().regime)},
                  {"layout", assembly::to_string(model->config().layout)},
                  {"frames_infer", tc.frames_infer},
                  {"dense_infer", tc.dense_infer},
                  {"model", model->config()}});
  std::cerr << "predicted " << corpus.samples.size() << " samples into " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string manifest, pred, out;
  double tolerance = -1;
};

int run_eval(const EvalArgs& a) {
  const auto manifest = data::read_manifest(a.manifest);
  const auto violations = data::validate_manifest(manifest);
  if (!violations.empty())
    throw DataError("manifest violation in " + violations.front().sample_id + ": " + violations.front().rule);
  std::optional<double> tol;
  if (a.tolerance > 0) tol = a.tolerance;
  const auto rep = eval::evaluate_dataset(manifest, a.pred, tol);
  std::optional<std::string> regime, layout;
  if (fs::exists(fs::path(a.pred) / "resolved_config.json")) {
    const auto p = read_json(fs::path(a.pred) / "resolved_config.json");
    if (p.contains("regime")) regime = p["regime"].get<std::string>();
    if (p.contains("layout")) layout = p["layout"].get<std::string>();
  }
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << eval::report_table(rep);
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / "table.txt", eval::report_table(rep));
    write_text(fs::path(a.out) / "expressions.csv", eval::report_csv(rep));
    write_text(fs::path(a.out) / "summary.csv", eval::summary_csv(rep));
    write_text(fs::path(a.out) / "summary.json", report::summary_to_json(rep, regime, layout).dump(2) + "\n");
    write_snapshot(a.out, "eval",
                   {{"manifest", a.manifest},
                    {"predictions", a.pred},
                    {"tolerance", tol ? json(*tol) : json("default")}});
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<report::RunEntry> runs;
  std::vector<std::string> missing;
  for (const auto& dir : a.runs) {
    const auto summary = fs::path(dir) / "summary.json";
    if (!fs::exists(summary)) {
      missing.push_back(dir);
      std::cerr << "warning: no summary.json in " << dir << '\n';
      continue;
    }
    runs.push_back(report::run_from_json(fs::path(dir).filename().string(), read_json(summary)));
  }
  const auto r = report::render(runs, missing);
  std::cout << r.markdown;
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / "report.md", r.markdown);
    write_text(fs::path(a.out) / "jf.svg", r.svg);
    write_snapshot(a.out, "report", {{"runs", a.runs}, {"missing", missing}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Omnimodal referring audio-visual segmentation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--out", sa.out, "Dataset root")->required();
  synth_cmd->add_option("--config", sa.config, "JSON config with a \"dataset\" section");
  synth_cmd->add_option("--num-samples,--samples", sa.samples, "Number of videos");
  synth_cmd->add_option("--fps-range", sa.fps_range, "Frame-rate range LO:HI (default 3:15)");
  synth_cmd->add_option("--no-target-frac", sa.no_target, "Share of no-target expressions");
  synth_cmd->add_option("--multi-target-frac", sa.multi_target, "Share of multi-target expressions");
  synth_cmd->add_option("--expressions", sa.expressions, "Expressions per general video");
  synth_cmd->add_option("--seed", sa.seed, "Generator seed");
  synth_cmd->add_option("--kind", sa.kind, "general | crossing | sync");
  synth_cmd->add_option("--split", sa.split, "train | test");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--data", ta.data, "Dataset root")->required();
  train_cmd->add_option("--out", ta.out, "Run directory (model.ckpt, loss.csv)");
  train_cmd->add_option("--ckpt", ta.ckpt, "Checkpoint path (default <out>/model.ckpt)");
  train_cmd->add_option("--config", ta.config, "JSON config with \"model\" and \"train\" sections");
  train_cmd->add_option("--init", ta.init, "Checkpoint to continue from");
  train_cmd->add_option("--stage", ta.stage, "pretrain | align | tune");
  train_cmd->add_option("--steps", ta.steps, "Optimizer steps");
  train_cmd->add_option("--lr", ta.lr, "Peak learning rate");
  train_cmd->add_option("--seed", ta.seed, "Initialization and data-order seed");
  train_cmd->add_flag("--alternate-regimes", ta.alternate, "Draw QP or OTSA per tune step");
  train_cmd->add_option("--log-every", ta.log_every, "Progress line interval (0 = quiet)");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Predict answers and masks");
  infer_cmd->add_option("--data", ia.data, "Dataset root")->required();
  infer_cmd->add_option("--ckpt", ia.ckpt, "Model checkpoint")->required();
  infer_cmd->add_option("--out", ia.out, "Predictions directory")->required();
  infer_cmd->add_option("--config", ia.config, "JSON config with a \"train\" section");
  infer_cmd->add_option("--regime", ia.regime, "QP | OTSA");
  infer_cmd->add_option("--layout", ia.layout, "AVI | AVI_CONCAT | CONCAT | WEIGHTED_SUM | ATTENTION");
  infer_cmd->add_option("--frames", ia.frames, "Sampled frames per video");
  infer_cmd->add_option("--dense", ia.dense, "Dense frames among the sampled ones");
  infer_cmd->add_option("--seed", ia.seed, "Recorded seed");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score a predictions directory");
  eval_cmd->add_option("--manifest", ea.manifest, "Ground-truth manifest")->required();
  eval_cmd->add_option("--pred", ea.pred, "Predictions directory")->required();
  eval_cmd->add_option("--out", ea.out, "Directory for table, CSVs and summary.json");
  eval_cmd->add_option("--tolerance", ea.tolerance, "Boundary tolerance in pixels");

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Compare evaluated runs");
  report_cmd->add_option("--run", ra.runs, "Eval output directory (repeatable)");
  report_cmd->add_option("--out", ra.out, "Directory for report.md and jf.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*synth_cmd) return run_synth(sa);
    if (*train_cmd) return run_train(ta);
    if (*infer_cmd) return run_infer(ia);
    if (*eval_cmd) return run_eval(ea);
    if (*report_cmd) return run_report(ra);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
