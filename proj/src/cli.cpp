#include "palm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "palm/geometry.hpp"
#include "palm/io.hpp"
#include "palm/metrics.hpp"
#include "palm/scoring.hpp"
#include "palm/trainer.hpp"

namespace palm::cli {
namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SyntheticSpec parse_spec(const std::string& text) {
  SyntheticSpec s;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidInput, "spec must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dim") s.dim = v.get<int>();
      else if (key == "classes") s.classes = v.get<int>();
      else if (key == "modes_per_class") s.modes_per_class = v.get<int>();
      else if (key == "kappa_id") s.kappa_id = v.get<double>();
      else if (key == "kappa_ood") s.kappa_ood = v.get<double>();
      else if (key == "ood_directions") s.ood_directions = v.get<int>();
      else if (key == "min_angular_sep") s.min_angular_sep = v.get<double>();
      else if (key == "train_per_class") s.train_per_class = v.get<int>();
      else if (key == "test_per_class") s.test_per_class = v.get<int>();
      else if (key == "ood_test") s.ood_test = v.get<int>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw Error(ErrorKind::InvalidInput, "unknown spec key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("spec value has the wrong type: ") + e.what());
  }
  return s;
}

nlohmann::json spec_to_json(const SyntheticSpec& s) {
  return {{"dim", s.dim},
          {"classes", s.classes},
          {"modes_per_class", s.modes_per_class},
          {"kappa_id", s.kappa_id},
          {"kappa_ood", s.kappa_ood},
          {"ood_directions", s.ood_directions},
          {"min_angular_sep", s.min_angular_sep},
          {"train_per_class", s.train_per_class},
          {"test_per_class", s.test_per_class},
          {"ood_test", s.ood_test},
          {"seed", s.seed}};
}

fs::path with_suffix(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + suffix);
}

EmbeddingBatch load_dataset(const fs::path& p, bool csv_labeled) {
  if (p.extension() == ".csv") return io::read_csv_dataset(p, csv_labeled);
  return io::read_embeddings(p);
}

int cmd_gen(const fs::path& spec_path, const fs::path& out, std::optional<std::uint64_t> seed, std::ostream& os) {
  SyntheticSpec spec = spec_path.empty() ? SyntheticSpec{} : parse_spec(read_text(spec_path));
  if (seed) spec.seed = *seed;
  const SyntheticDataset ds = gen_synthetic(spec);
  const fs::path train = with_suffix(out, "_train.palm");
  const fs::path test = with_suffix(out, "_test.palm");
  const fs::path ood = with_suffix(out, "_ood.palm");
  io::write_embeddings(train, ds.id_train);
  io::write_embeddings(test, ds.id_test);
  io::write_embeddings(ood, ds.ood_test);
  nlohmann::json manifest;
  manifest["spec"] = spec_to_json(spec);
  manifest["files"] = {{"train", train.filename().string()}, {"test", test.filename().string()}, {"ood", ood.filename().string()}};
  manifest["counts"] = {{"train", ds.id_train.size()}, {"test", ds.id_test.size()}, {"ood", ds.ood_test.size()}};
  io::write_text_atomic(with_suffix(out, "_manifest.json"), manifest.dump(2) + "\n");
  os << "wrote " << train.string() << ", " << test.string() << ", " << ood.string() << "\n";
  return kExitOk;
}

int cmd_import(const fs::path& csv, const fs::path& out, bool labeled, std::ostream& os) {
  const EmbeddingBatch b = io::read_csv_dataset(csv, labeled);
  io::write_embeddings(out, b);
  os << "imported " << b.size() << " records of width " << b.dim() << "\n";
  return kExitOk;
}

struct TrainArgs {
  fs::path config, train, out, log, steps_log, eval_id, eval_ood;
  std::string mode;
  bool csv_labeled = true;
  int knn_k = 10;
  int eval_every = 10;
};

int cmd_train(const TrainArgs& a, std::ostream& os, std::ostream& es) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_text(a.config));
  if (a.mode == "supervised") cfg.mode = TrainMode::Supervised;
  else if (a.mode == "unsupervised") cfg.mode = TrainMode::Unsupervised;
  cfg.validate();

  const EmbeddingBatch data = load_dataset(a.train, a.csv_labeled);
  if (cfg.mode == TrainMode::Supervised && !data.labeled()) {
    es << "error: supervised training needs a labeled dataset\n";
    return kExitUsage;
  }

  std::optional<EmbeddingBatch> id_test, ood_test;
  EvalSplit split;
  if (!a.eval_id.empty() && !a.eval_ood.empty()) {
    id_test = load_dataset(a.eval_id, a.csv_labeled);
    ood_test = load_dataset(a.eval_ood, false);
    split = EvalSplit{&*id_test, &*ood_test, a.eval_every, a.knn_k};
  }
  TrainResult r = train(cfg, data, id_test ? &split : nullptr);

  io::ModelFile mf;
  mf.checkpoint = std::move(r.checkpoint);
  const ForwardResult fwd = forward(mf.checkpoint.model, data.values);
  mf.knn_reference = fwd.z;
  try {
    mf.fit = fit_features(mf.checkpoint, data);
  } catch (const Error& e) {
    es << "warning: no Gaussian fit stored (" << e.what() << ")\n";
  }
  io::write_model(a.out, mf);

  std::ostringstream csv;
  csv << "epoch,lr,loss,mle,proto_contrast,eval_auroc_mahalanobis,eval_auroc_knn\n";
  csv.precision(17);
  for (const auto& e : r.log.epochs) {
    csv << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.mle << ',' << e.proto_contrast << ',';
    if (e.eval_auroc_mahalanobis) csv << *e.eval_auroc_mahalanobis;
    csv << ',';
    if (e.eval_auroc_knn) csv << *e.eval_auroc_knn;
    csv << '\n';
  }
  const fs::path log = a.log.empty() ? fs::path(a.out.string() + ".epochs.csv") : a.log;
  io::write_text_atomic(log, csv.str());

  if (!a.steps_log.empty()) {
    std::ostringstream st;
    st.precision(17);
    st << "epoch,step,lr,loss,mle,proto_contrast,assignment_entropy,prototype_drift_deg\n";
    for (const auto& d : r.log.steps) {
      st << d.epoch << ',' << d.step << ',' << d.lr << ',' << d.loss << ',' << d.mle << ',' << d.proto_contrast << ','
         << d.assignment_entropy << ',' << d.prototype_drift_deg << '\n';
    }
    io::write_text_atomic(a.steps_log, st.str());
  }
  if (!r.log.epochs.empty()) {
    os << "trained " << r.log.epochs.size() << " epochs, final loss " << r.log.epochs.back().loss << "\n";
  } else {
    os << "wrote initialization (0 epochs)\n";
  }
  return kExitOk;
}

int cmd_score(const fs::path& model_path, const fs::path& data_path, const std::string& metric, int k,
              const fs::path& out, std::ostream& os, std::ostream& es) {
  const io::ModelFile mf = io::read_model(model_path);
  const EmbeddingBatch data = load_dataset(data_path, false);
  const ForwardResult fwd = forward(mf.checkpoint.model, data.values);
  std::vector<double> scores;
  if (metric == "mahalanobis") {
    if (!mf.fit) {
      es << "error: model has no Gaussian fit\n";
      return kExitUsage;
    }
    scores = mahalanobis_scores(*mf.fit, fwd.h);
  } else if (metric == "knn") {
    if (!mf.knn_reference) {
      es << "error: model has no kNN reference embeddings\n";
      return kExitUsage;
    }
    scores = knn_scores(*mf.knn_reference, fwd.z, k);
  } else {
    scores = posterior_scores(fwd.z, mf.checkpoint.bank, mf.checkpoint.config.tau);
  }
  io::write_scores(out, scores);
  os << "scored " << scores.size() << " samples with " << metric << "\n";
  return kExitOk;
}

int cmd_eval(const fs::path& id, const fs::path& ood, const fs::path& out, int bins, std::ostream& os) {
  const auto a = io::read_scores(id);
  const auto b = io::read_scores(ood);
  const EvalReport r = make_report(a, b, bins);
  io::write_text_atomic(out, r.to_json());
  os.precision(6);
  os << std::fixed << "AUROC: " << r.auroc << "\nFPR95: " << r.fpr95 << "\n";
  return kExitOk;
}

int cmd_hist(const fs::path& id, const fs::path& ood, const fs::path& out, int bins, std::ostream& os) {
  const auto a = io::read_scores(id);
  const auto b = io::read_scores(ood);
  const OverlapHistogram h = overlap_histogram(a, b, bins);
  io::write_text_atomic(out, io::format_histogram(h));
  os << "overlap: " << h.overlap << "\n";
  return kExitOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NumericalError:
    case ErrorKind::DegenerateVector:
    case ErrorKind::DegeneratePrototype:
    case ErrorKind::SingularCovariance:
      return kExitNumerical;
    default:
      return kExitUsage;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PALM: prototype-mixture training and distance-based OOD scoring"};
  app.require_subcommand(1);

  fs::path spec_path, gen_out;
  std::optional<std::uint64_t> seed;
  auto* gen = app.add_subcommand("gen", "generate a synthetic vMF dataset (train/test/ood files + manifest)");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output path; files are written next to it with _train/_test/_ood suffixes")->required();
  gen->add_option("--seed", seed, "overrides the spec seed");

  fs::path csv_in, import_out;
  bool import_labeled = false;
  auto* imp = app.add_subcommand("import", "convert a CSV of embeddings into an embedding file");
  imp->add_option("--csv", csv_in)->required()->check(CLI::ExistingFile);
  imp->add_option("--out", import_out)->required();
  imp->add_flag("--labeled", import_labeled, "last column is an integer label");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train encoder and prototypes");
  tr->add_option("--config", ta.config, "config JSON; missing keys take defaults")->check(CLI::ExistingFile);
  tr->add_option("--train", ta.train, "training data (.palm or .csv)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "model file")->required();
  tr->add_option("--mode", ta.mode)->check(CLI::IsMember({"supervised", "unsupervised"}));
  tr->add_option("--log", ta.log, "per-epoch CSV (default <out>.epochs.csv)");
  tr->add_option("--steps-log", ta.steps_log, "per-step diagnostics CSV");
  tr->add_option("--eval-id", ta.eval_id)->check(CLI::ExistingFile);
  tr->add_option("--eval-ood", ta.eval_ood)->check(CLI::ExistingFile);
  tr->add_option("--eval-every", ta.eval_every);
  tr->add_option("--knn-k", ta.knn_k);

  fs::path model_path, data_path, score_out;
  std::string metric = "mahalanobis";
  int k = 10;
  auto* sc = app.add_subcommand("score", "score samples (larger = more in-distribution)");
  sc->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  sc->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  sc->add_option("--metric", metric)->check(CLI::IsMember({"mahalanobis", "knn", "posterior"}));
  sc->add_option("--k", k, "neighbor rank for knn");
  sc->add_option("--out", score_out)->required();

  fs::path id_scores, ood_scores, report_out, hist_out;
  int bins = 50;
  auto* ev = app.add_subcommand("eval", "AUROC, FPR@95TPR and overlap area from two score files");
  ev->add_option("--id", id_scores)->required()->check(CLI::ExistingFile);
  ev->add_option("--ood", ood_scores)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", report_out)->required();
  ev->add_option("--bins", bins);

  auto* hi = app.add_subcommand("hist", "histogram CSV behind the overlap area");
  hi->add_option("--id", id_scores)->required()->check(CLI::ExistingFile);
  hi->add_option("--ood", ood_scores)->required()->check(CLI::ExistingFile);
  hi->add_option("--out", hist_out)->required();
  hi->add_option("--bins", bins);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec_path, gen_out, seed, out);
    if (imp->parsed()) return cmd_import(csv_in, import_out, import_labeled, out);
    if (tr->parsed()) return cmd_train(ta, out, err);
    if (sc->parsed()) return cmd_score(model_path, data_path, metric, k, score_out, out, err);
    if (ev->parsed()) return cmd_eval(id_scores, ood_scores, report_out, bins, out);
    if (hi->parsed()) return cmd_hist(id_scores, ood_scores, hist_out, bins, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace palm::cli
