// crossalign: feature extraction, synthetic corpora, training, evaluation,
// alignment dumps and gradient checks.

#include <fstream>
#include <iostream>
#include <sstream>

#include <omp.h>

#include "CLI11.hpp"
#include "crossalign/commands.hpp"

namespace ca = crossalign;
namespace cmd = crossalign::commands;

namespace {

struct RunFlags {
  std::string variant = "proposed";
  std::string precision = "f32";
  int threads = 0;
  bool serial = false;
};

void add_run_flags(CLI::App* app, ca::train::RunConfig& run, RunFlags& flags) {
  app->add_option("--variant", flags.variant, "proposed | hard | concat | speech-only | text-only")
      ->capture_default_str();
  app->add_option("--hidden", run.hidden, "LSTM units per direction")->capture_default_str();
  app->add_option("--heads", run.heads, "attention heads")->capture_default_str();
  app->add_option("--embed-dim", run.embed_dim, "embedding dimension")->capture_default_str();
  app->add_option("--lr", run.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--batch", run.batch, "utterances per batch")->capture_default_str();
  app->add_option("--epochs", run.epochs, "maximum epochs")->capture_default_str();
  app->add_option("--seed", run.seed, "seed for init, shuffling and the validation split")->capture_default_str();
  app->add_option("--precision", flags.precision, "f32 | f64")->capture_default_str();
  app->add_flag("--freeze-embeddings,!--no-freeze-embeddings", run.freeze_embeddings,
                "keep word embeddings fixed (default on)");
  app->add_option("--clip", run.clip, "max gradient norm, 0 disables")->capture_default_str();
  app->add_option("--patience", run.patience, "epochs without validation UA gain before stopping, 0 disables")
      ->capture_default_str();
  app->add_option("--val-fraction", run.val_fraction, "share of training utterances held out for validation")
      ->capture_default_str();
  app->add_option("--holdout-session", run.holdout_session, "session used as the test set")->capture_default_str();
  app->add_option("--threads", flags.threads, "OpenMP threads, 0 = runtime default");
  app->add_flag("--serial", flags.serial, "single-threaded reference code paths");
}

void apply_run_flags(ca::train::RunConfig& run, const RunFlags& flags) {
  run.variant = ca::parse_variant(flags.variant);
  if (flags.precision != "f32" && flags.precision != "f64") {
    throw ca::ValidationError("--precision must be f32 or f64, got '" + flags.precision + "'");
  }
  run.double_precision = flags.precision == "f64";
  run.parallel = !flags.serial;
  if (flags.threads > 0) omp_set_num_threads(flags.threads);
  if (flags.serial) omp_set_num_threads(1);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ca::IoError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-aligned speech and text emotion classifier"};
  app.require_subcommand(1);

  cmd::ExtractOptions extract;
  std::string extract_in, extract_out;
  auto* c_extract = app.add_subcommand("extract", "34 short-term features per 20 ms frame, written as CSV");
  c_extract->add_option("input", extract_in, "WAV file or directory")->required();
  c_extract->add_option("--out", extract_out, "CSV file, or directory for directory input")->required();
  c_extract->add_flag("--standardize", extract.standardize, "per-utterance zero mean, unit variance");

  ca::data::SyntheticSpec synth;
  std::string synth_spec_file, synth_out;
  auto* c_synth = app.add_subcommand("synth", "generate the seeded synthetic corpus");
  c_synth->add_option("spec", synth_spec_file, "JSON spec file (fields default when absent)");
  c_synth->add_option("--out", synth_out, "output directory")->required();
  auto* o_n = c_synth->add_option("--n", synth.n_utterances, "number of utterances");
  auto* o_seed = c_synth->add_option("--seed", synth.seed, "generator seed");
  auto* o_cue = c_synth->add_option("--cue-strength", synth.cue_strength, "acoustic cue amplitude");
  auto* o_noise = c_synth->add_option("--noise", synth.noise_level, "Gaussian noise standard deviation");
  auto* o_dim = c_synth->add_option("--embed-dim", synth.embed_dim, "embedding dimension");

  cmd::TrainOptions train;
  RunFlags train_flags;
  std::string train_manifest, train_embeddings, train_out;
  auto* c_train = app.add_subcommand("train", "train a model variant");
  c_train->add_option("--manifest", train_manifest, "JSON-lines manifest")->required();
  c_train->add_option("--embeddings", train_embeddings, "GloVe text file")->required();
  c_train->add_option("--out", train_out, "output directory")->required();
  add_run_flags(c_train, train.run, train_flags);

  cmd::EvalOptions eval;
  std::string eval_ckpt, eval_manifest, eval_embeddings, eval_out;
  bool eval_serial = false;
  auto* c_eval = app.add_subcommand("eval", "WA, UA and confusion matrix for a checkpoint");
  c_eval->add_option("--checkpoint", eval_ckpt)->required();
  c_eval->add_option("--manifest", eval_manifest)->required();
  c_eval->add_option("--embeddings", eval_embeddings)->required();
  c_eval->add_option("--out", eval_out, "JSON report path");
  c_eval->add_flag("--serial", eval_serial, "single-threaded evaluation");

  cmd::AlignOptions align;
  std::string align_ckpt, align_manifest, align_embeddings, align_out;
  auto* c_align = app.add_subcommand("align", "dump head-averaged word-to-frame attention");
  c_align->add_option("--checkpoint", align_ckpt)->required();
  c_align->add_option("--manifest", align_manifest)->required();
  c_align->add_option("--embeddings", align_embeddings)->required();
  c_align->add_option("--out", align_out, "output directory")->required();

  cmd::GradcheckOptions grad;
  std::string grad_variant = "proposed";
  auto* c_grad = app.add_subcommand("gradcheck", "central-difference check of every parameter gradient");
  c_grad->add_option("--variant", grad_variant)->capture_default_str();
  c_grad->add_option("--seed", grad.seed)->capture_default_str();
  c_grad->add_flag("--freeze-embeddings,!--no-freeze-embeddings", grad.freeze_embeddings);
  c_grad->add_option("--tolerance", grad.tolerance)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_extract) {
      extract.input = extract_in;
      extract.out = extract_out;
      cmd::cmd_extract(extract, std::cout);
    } else if (*c_synth) {
      if (!synth_spec_file.empty()) {
        const auto overrides = synth;
        synth = ca::data::synthetic_spec_from_json(read_file(synth_spec_file));
        if (*o_n) synth.n_utterances = overrides.n_utterances;
        if (*o_seed) synth.seed = overrides.seed;
        if (*o_cue) synth.cue_strength = overrides.cue_strength;
        if (*o_noise) synth.noise_level = overrides.noise_level;
        if (*o_dim) synth.embed_dim = overrides.embed_dim;
      }
      cmd::cmd_synth(synth, synth_out, std::cout);
    } else if (*c_train) {
      apply_run_flags(train.run, train_flags);
      train.manifest = train_manifest;
      train.embeddings = train_embeddings;
      train.out = train_out;
      cmd::cmd_train(train, std::cout);
    } else if (*c_eval) {
      eval.checkpoint = eval_ckpt;
      eval.manifest = eval_manifest;
      eval.embeddings = eval_embeddings;
      if (!eval_out.empty()) eval.out = eval_out;
      eval.parallel = !eval_serial;
      cmd::cmd_eval(eval, std::cout);
    } else if (*c_align) {
      align.checkpoint = align_ckpt;
      align.manifest = align_manifest;
      align.embeddings = align_embeddings;
      align.out = align_out;
      cmd::cmd_align(align, std::cout);
    } else if (*c_grad) {
      grad.variant = ca::parse_variant(grad_variant);
      cmd::cmd_gradcheck(grad, std::cout);
    }
  } catch (const ca::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
