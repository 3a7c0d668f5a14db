#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <numeric>
#include <thread>

#include "teleqa/alignment.hpp"
#include "teleqa/dataset.hpp"
#include "teleqa/elementary_metrics.hpp"
#include "teleqa/error.hpp"
#include "teleqa/frame_io.hpp"
#include "teleqa/pipeline.hpp"
#include "teleqa/statistics.hpp"
#include "teleqa/study.hpp"
#include "teleqa/study_http.hpp"
#include "teleqa/subjective.hpp"
#include "teleqa/svr_fusion.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace teleqa;

namespace {

fs::path run_manifest_path(const fs::path& output) {
  if (fs::is_directory(output)) return output / "run-manifest.json";
  auto p = output;
  p += ".run.json";
  return p;
}

void require_file(const fs::path& p, const std::string& what) {
  require(fs::exists(p), Errc::invalid_argument, what + " " + p.string() + " does not exist");
}

dataset::DatasetManifest load_manifest_checked(const fs::path& p) {
  require_file(p, "manifest");
  return dataset::load_manifest(p);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  fs::path manifest;
  fs::path out;
  std::string encoder = dataset::kDefaultEncoderTemplate;
  std::string decode = dataset::kDefaultDecodeTemplate;
  bool no_decode = false;
  std::string version_command = "ffmpeg -version";
  fs::path output_dir = "variants";
  int jobs = 1;
  std::uint64_t seed = 0;
};

int cmd_prepare(const PrepareArgs& a) {
  auto m = load_manifest_checked(a.manifest);
  const auto base = a.manifest.parent_path();
  dataset::EncoderConfig cfg;
  cfg.command_template = a.encoder;
  if (!a.no_decode) cfg.decode_template = a.decode;
  cfg.version_command = a.version_command;
  cfg.output_dir = a.output_dir;
  cfg.jobs = a.jobs;
  const auto report = dataset::encode_missing(m, dataset::kCrfLevels, cfg, base);
  const auto out = a.out.empty() ? a.manifest : a.out;
  pipeline::write_atomic(out, dataset::dump_manifest(m));
  pipeline::write_run_manifest(run_manifest_path(out),
                               {"prepare",
                                a.seed,
                                {{"encoder", a.encoder},
                                 {"decode", a.no_decode ? json(nullptr) : json(a.decode)},
                                 {"output_dir", a.output_dir.string()},
                                 {"crfs", dataset::kCrfLevels}},
                                {a.manifest},
                                {out}});
  std::cout << "encoded " << report.encoded << ", skipped " << report.skipped << ", failed "
            << report.failures.size() << "\n";
  for (const auto& f : report.failures)
    std::cerr << "failed: " << f.content_id << " crf " << f.crf << ": " << f.message << "\n";
  return report.failures.empty() ? 0 : static_cast<int>(ErrorKind::external);
}

// ---------------------------------------------------------------- features

struct FeaturesArgs {
  fs::path manifest;
  fs::path out;
  fs::path config;
  int jobs = 1;
  std::uint64_t seed = 0;
};

int cmd_features(const FeaturesArgs& a) {
  const auto m = load_manifest_checked(a.manifest);
  features::FeatureConfig config;
  if (!a.config.empty()) {
    require_file(a.config, "feature config");
    config = json::parse(pipeline::read_text_file(a.config)).get<features::FeatureConfig>();
  }
  const auto report = pipeline::extract_features(m, a.manifest.parent_path(), a.out, config, a.jobs);
  pipeline::write_run_manifest(a.out / "run-manifest.json",
                               {"features", a.seed, json(config), {a.manifest}, {a.out}});
  std::cout << "computed " << report.computed.size() << ", up to date " << report.skipped.size() << ", failed "
            << report.failures.size() << "\n";
  for (const auto& f : report.failures) std::cerr << "failed: " << f.asset_id << " [" << f.error << "] " << f.message << "\n";
  return report.failures.empty() ? 0 : static_cast<int>(ErrorKind::data);
}

// ---------------------------------------------------------------- split

struct SplitArgs {
  fs::path manifest;
  fs::path out;
  double fraction = 0.8;
  std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& a) {
  require(a.fraction > 0.0 && a.fraction < 1.0, Errc::invalid_argument, "--fraction must lie strictly between 0 and 1");
  const auto m = load_manifest_checked(a.manifest);
  const auto split = dataset::split_by_scene(m, a.fraction, a.seed);
  pipeline::write_atomic(a.out, json(split).dump(2) + "\n");
  pipeline::write_run_manifest(run_manifest_path(a.out),
                               {"split", a.seed, {{"fraction", a.fraction}}, {a.manifest}, {a.out}});
  std::cout << "train " << split.train.size() << " scenes, validation " << split.val.size() << " scenes\n";
  return 0;
}

// ---------------------------------------------------------------- labels

struct LabelsArgs {
  fs::path manifest;
  fs::path ratings;
  fs::path out;
  int min_raters = 15;
  bool dmos = false;
  double max_check_failures = 0.5;
  std::uint64_t seed = 0;
};

int cmd_labels(const LabelsArgs& a) {
  const auto m = load_manifest_checked(a.manifest);
  require_file(a.ratings, "ratings");
  const auto ratings = subjective::parse_rating_csv(pipeline::read_text_file(a.ratings));
  const auto screening = subjective::screen_participants(ratings, a.max_check_failures);
  dataset::JoinOptions opt;
  opt.min_raters = a.min_raters;
  opt.dmos = a.dmos;
  opt.excluded_participants = screening.excluded;
  const auto joined = dataset::join_labels(m, ratings, opt);
  auto j = pipeline::labels_json(joined);
  j["excluded_participants"] = screening.excluded;
  pipeline::write_atomic(a.out, j.dump(2) + "\n");
  pipeline::write_run_manifest(run_manifest_path(a.out),
                               {"labels",
                                a.seed,
                                {{"min_raters", a.min_raters}, {"dmos", a.dmos}, {"max_check_failures", a.max_check_failures}},
                                {a.manifest, a.ratings},
                                {a.out}});
  std::cout << joined.rows.size() << " labeled assets, " << joined.flagged.size() << " flagged, "
            << screening.excluded.size() << " participants excluded\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path manifest;
  fs::path features;
  fs::path labels;
  fs::path split;
  fs::path out;
  fs::path report;
  int folds = 5;
  int jobs = 1;
  std::vector<double> c{1, 4, 16, 64};
  std::vector<double> gamma{0.25, 0.5, 1, 2};
  std::vector<double> epsilon{1, 2.5};
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  const auto m = load_manifest_checked(a.manifest);
  require_file(a.labels, "labels");
  require_file(a.split, "split");
  const auto split = json::parse(pipeline::read_text_file(a.split)).get<dataset::SplitResult>();
  pipeline::TrainOptions opt;
  opt.grid = {a.c, a.gamma, a.epsilon};
  opt.folds = a.folds;
  opt.jobs = a.jobs;
  const auto outcome =
      pipeline::train_and_validate(m, split, pipeline::load_pooled_features(a.features), pipeline::load_labels(a.labels), opt);
  pipeline::write_atomic(a.out, svr::save_model(outcome.model));
  const auto report_path = a.report.empty() ? fs::path(a.out.string() + ".report.json") : a.report;
  pipeline::write_atomic(report_path, pipeline::validation_report(outcome).dump(2) + "\n");
  pipeline::write_run_manifest(run_manifest_path(a.out),
                               {"train",
                                a.seed,
                                {{"folds", a.folds}, {"grid", {{"c", a.c}, {"gamma", a.gamma}, {"epsilon", a.epsilon}}}},
                                {a.manifest, a.features, a.labels, a.split},
                                {a.out, report_path}});
  std::cout << "best C=" << outcome.search.best.c << " gamma=" << outcome.search.best.gamma
            << " epsilon=" << outcome.search.best.epsilon << "; validation RMSE " << fmt(outcome.validation.rmse)
            << " (baseline " << fmt(outcome.baseline_validation.rmse) << ")\n";
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path model;
  fs::path features;
  fs::path out;
  std::uint64_t seed = 0;
};

int cmd_predict(const PredictArgs& a) {
  require_file(a.model, "model");
  const auto model = svr::load_model(pipeline::read_text_file(a.model));
  const auto predictions = pipeline::predict_all(model, pipeline::load_pooled_features(a.features));
  pipeline::write_atomic(a.out, pipeline::predictions_csv(predictions));
  pipeline::write_run_manifest(run_manifest_path(a.out), {"predict", a.seed, json::object(), {a.model, a.features}, {a.out}});
  std::cout << predictions.size() << " predictions\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path predictions;
  fs::path labels;
  fs::path baseline;
  fs::path manifest;
  fs::path out;
  fs::path residuals;
  std::size_t outliers = 5;
  std::uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
  require_file(a.predictions, "predictions");
  require_file(a.labels, "labels");
  std::map<std::string, alignment::AssetMeta> meta;
  if (!a.manifest.empty()) meta = pipeline::asset_meta(load_manifest_checked(a.manifest));
  const auto labels = pipeline::load_labels(a.labels);
  const auto report =
      alignment::evaluate(pipeline::parse_predictions_csv(pipeline::read_text_file(a.predictions)), labels, meta);
  json j{{"model", report}, {"outliers", alignment::outlier_report(report, a.outliers)}};
  std::vector<fs::path> inputs{a.predictions, a.labels};
  if (!a.baseline.empty()) {
    require_file(a.baseline, "baseline predictions");
    const auto base =
        alignment::evaluate(pipeline::parse_predictions_csv(pipeline::read_text_file(a.baseline)), labels, meta);
    j["baseline"] = base;
    j["comparison"] = alignment::compare_models(base, report);
    inputs.push_back(a.baseline);
  }
  pipeline::write_atomic(a.out, j.dump(2) + "\n");
  std::vector<fs::path> outputs{a.out};
  if (!a.residuals.empty()) {
    pipeline::write_atomic(a.residuals, alignment::residual_csv(report));
    outputs.push_back(a.residuals);
  }
  pipeline::write_run_manifest(run_manifest_path(a.out),
                               {"evaluate", a.seed, {{"outliers", a.outliers}}, inputs, outputs});
  std::cout << "n=" << report.n << " MAD " << fmt(report.mad) << " RMSE " << fmt(report.rmse) << " r "
            << fmt(report.pearson_r) << " rho " << fmt(report.spearman_rho) << "\n";
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  fs::path ratings;
  fs::path manifest;
  fs::path out;
  fs::path table;
  double alpha = 0.05;
  double max_check_failures = 0.5;
  std::uint64_t seed = 0;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const auto m = load_manifest_checked(a.manifest);
  require_file(a.ratings, "ratings");
  const auto ratings = subjective::parse_rating_csv(pipeline::read_text_file(a.ratings));
  const auto screening = subjective::screen_participants(ratings, a.max_check_failures);
  const auto labels = subjective::aggregate_all(ratings, subjective::kLabelDimensions, screening.excluded);

  std::map<int, std::vector<double>> by_crf;
  std::map<std::string, std::vector<double>> by_category;
  for (const auto& [asset_id, label] : labels) {
    const auto& asset = m.asset(asset_id);
    if (asset.crf == dataset::kReferenceCrf) continue;
    by_crf[asset.crf].push_back(label.mos_vmaf);
    by_category[m.scene(asset.content_id).category].push_back(label.mos_vmaf);
  }

  json reliability = json::object();
  for (auto d : {subjective::Dimension::detail_loss, subjective::Dimension::drivability,
                 subjective::Dimension::situational_awareness, subjective::Dimension::reflection}) {
    subjective::RatingExport only;
    for (const auto& r : ratings.ratings)
      if (r.dimension == d && !screening.excluded.count(r.participant_id)) only.ratings.push_back(r);
    if (only.ratings.empty()) continue;
    try {
      reliability[std::string(subjective::to_string(d))] = stats::cronbach_alpha(subjective::item_matrix(only));
    } catch (const Error& e) {
      reliability[std::string(subjective::to_string(d))] = {{"error", errc_name(e.code())}, {"message", e.what()}};
    }
  }

  const auto compression = subjective::compression_effect_report(by_crf, a.alpha);
  const auto environment = subjective::environmental_report(by_category);
  json mos = json::object();
  for (const auto& [id, label] : labels) mos[id] = label;
  const json j{{"excluded_participants", screening.excluded},
               {"reliability", reliability},
               {"compression", compression},
               {"environment", environment},
               {"mos", mos}};
  pipeline::write_atomic(a.out, j.dump(2) + "\n");
  std::vector<fs::path> outputs{a.out};
  const auto tables = subjective::to_table(compression) + "\n" + subjective::to_table(environment);
  if (!a.table.empty()) {
    pipeline::write_atomic(a.table, tables);
    outputs.push_back(a.table);
  }
  pipeline::write_run_manifest(run_manifest_path(a.out),
                               {"analyze", a.seed, {{"alpha", a.alpha}, {"max_check_failures", a.max_check_failures}},
                                {a.ratings, a.manifest}, outputs});
  std::cout << tables;
  return 0;
}

// ---------------------------------------------------------------- metrics

struct MetricsArgs {
  fs::path ref;
  fs::path dist;
  fs::path out;
  int width = 0;
  int height = 0;
  int fps = 30;
  std::uint64_t seed = 0;
};

int cmd_metrics(const MetricsArgs& a) {
  require_file(a.ref, "reference");
  require_file(a.dist, "distorted");
  const auto ref = io::read_clip_file(a.ref, a.width, a.height, {a.fps, 1});
  const auto dist = io::read_clip_file(a.dist, a.width, a.height, {a.fps, 1});
  require(ref.width() == dist.width() && ref.height() == dist.height(), Errc::dimension_mismatch,
          "clips differ in resolution");
  require(ref.frame_count() == dist.frame_count(), Errc::frame_count_mismatch, "clips differ in frame count");
  json frames = json::array();
  double sp = 0, ss = 0, sm = 0;
  bool ms_ok = true;
  for (std::size_t i = 0; i < ref.frame_count(); ++i) {
    const auto& r = io::luma(ref.frame(i));
    const auto& d = io::luma(dist.frame(i));
    const double p = metrics::psnr_for_report(metrics::psnr(r, d));
    const double s = metrics::ssim(r, d);
    json f{{"frame", i}, {"psnr", p}, {"ssim", s}};
    try {
      const double ms = metrics::ms_ssim(r, d);
      f["ms_ssim"] = ms;
      sm += ms;
    } catch (const Error&) {
      ms_ok = false;
      f["ms_ssim"] = nullptr;
    }
    sp += p;
    ss += s;
    frames.push_back(f);
  }
  const double n = static_cast<double>(ref.frame_count());
  json j{{"frames", frames}, {"mean", {{"psnr", sp / n}, {"ssim", ss / n}, {"ms_ssim", ms_ok ? json(sm / n) : json(nullptr)}}}};
  if (a.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    pipeline::write_atomic(a.out, j.dump(2) + "\n");
    pipeline::write_run_manifest(run_manifest_path(a.out), {"metrics", a.seed, json::object(), {a.ref, a.dist}, {a.out}});
    std::cout << "PSNR " << fmt(sp / n) << " dB, SSIM " << fmt(ss / n) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  fs::path config;
  fs::path manifest;
  std::string bind;
  int port = -1;
  std::uint64_t seed = 0;
};

int cmd_serve(const ServeArgs& a) {
  std::optional<fs::path> file;
  if (!a.config.empty()) {
    require_file(a.config, "study config");
    file = a.config;
  }
  auto config = study::load_study_config(file);
  if (!a.manifest.empty()) config.manifest_path = a.manifest;
  if (!a.bind.empty()) config.bind_address = a.bind;
  if (a.port >= 0) config.port = a.port;
  require(!config.manifest_path.empty(), Errc::invalid_argument, "no manifest configured for the study");
  study::StudyService service(config, load_manifest_checked(config.manifest_path));
  study::StudyServer server(service);
  const int port = server.bind(config.bind_address, config.port);
  std::cout << "study service listening on " << config.bind_address << ":" << port << " with "
            << service.session_count() << " restored sessions" << std::endl;
  server.listen();
  return 0;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [corrupted_payload]: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrainable full-reference video quality toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pipeline::kToolVersion));
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  PrepareArgs prepare;
  auto* p = app.add_subcommand("prepare", "Encode missing CRF variants of every scene");
  p->add_option("--manifest", prepare.manifest, "Dataset manifest")->required();
  p->add_option("--out", prepare.out, "Updated manifest (default: overwrite the input)");
  p->add_option("--encoder", prepare.encoder, "Encoder command with {input} {output} {crf}");
  p->add_option("--decode", prepare.decode, "Decoder command with {input} {output} producing Y4M");
  p->add_flag("--no-decode", prepare.no_decode, "Skip producing decoded Y4M files");
  p->add_option("--version-command", prepare.version_command, "Command whose first output line names the encoder");
  p->add_option("--output-dir", prepare.output_dir, "Directory for encoded variants, relative to the manifest");
  p->add_option("--jobs", prepare.jobs)->check(CLI::PositiveNumber);
  p->add_option("--seed", prepare.seed);

  FeaturesArgs feat;
  auto* f = app.add_subcommand("features", "Extract per-frame and pooled features for every distorted asset");
  f->add_option("--manifest", feat.manifest)->required();
  f->add_option("--out", feat.out, "Output directory")->required();
  f->add_option("--config", feat.config, "Feature configuration JSON");
  f->add_option("--jobs", feat.jobs)->check(CLI::PositiveNumber)->default_val(hw);
  f->add_option("--seed", feat.seed);

  SplitArgs split;
  auto* s = app.add_subcommand("split", "Scene-disjoint stratified train/validation split");
  s->add_option("--manifest", split.manifest)->required();
  s->add_option("--out", split.out)->required();
  s->add_option("--fraction", split.fraction, "Training fraction in (0,1)")->default_val(0.8);
  s->add_option("--seed", split.seed)->default_val(0);

  LabelsArgs labels;
  auto* l = app.add_subcommand("labels", "Join rating exports to assets as training labels");
  l->add_option("--manifest", labels.manifest)->required();
  l->add_option("--ratings", labels.ratings, "Rating export CSV")->required();
  l->add_option("--out", labels.out)->required();
  l->add_option("--min-raters", labels.min_raters)->default_val(15);
  l->add_flag("--dmos", labels.dmos, "Differential labels against the reference rating");
  l->add_option("--max-check-failures", labels.max_check_failures, "Object-check failure fraction before exclusion")
      ->default_val(0.5);
  l->add_option("--seed", labels.seed);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Grid-search and fit the fusion model");
  t->add_option("--manifest", train.manifest)->required();
  t->add_option("--features", train.features, "Feature directory")->required();
  t->add_option("--labels", train.labels)->required();
  t->add_option("--split", train.split)->required();
  t->add_option("--out", train.out, "Model file")->required();
  t->add_option("--report", train.report, "Validation report (default: <out>.report.json)");
  t->add_option("--folds", train.folds)->default_val(5);
  t->add_option("--jobs", train.jobs)->check(CLI::PositiveNumber)->default_val(hw);
  t->add_option("--c", train.c)->delimiter(',');
  t->add_option("--gamma", train.gamma)->delimiter(',');
  t->add_option("--epsilon", train.epsilon)->delimiter(',');
  t->add_option("--seed", train.seed);

  PredictArgs predict;
  auto* pr = app.add_subcommand("predict", "Score every asset with a trained model");
  pr->add_option("--model", predict.model)->required();
  pr->add_option("--features", predict.features)->required();
  pr->add_option("--out", predict.out)->required();
  pr->add_option("--seed", predict.seed);

  EvaluateArgs evaluate;
  auto* e = app.add_subcommand("evaluate", "Alignment of predictions with labels");
  e->add_option("--predictions", evaluate.predictions)->required();
  e->add_option("--labels", evaluate.labels)->required();
  e->add_option("--baseline", evaluate.baseline, "Baseline predictions to compare against");
  e->add_option("--manifest", evaluate.manifest, "Adds category and CRF to residuals");
  e->add_option("--out", evaluate.out)->required();
  e->add_option("--residuals", evaluate.residuals, "Residual CSV");
  e->add_option("--outliers", evaluate.outliers)->default_val(5);
  e->add_option("--seed", evaluate.seed);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Statistical report over a rating export");
  an->add_option("--ratings", analyze.ratings)->required();
  an->add_option("--manifest", analyze.manifest)->required();
  an->add_option("--out", analyze.out)->required();
  an->add_option("--table", analyze.table, "Plain-text summary");
  an->add_option("--alpha", analyze.alpha)->default_val(0.05);
  an->add_option("--max-check-failures", analyze.max_check_failures)->default_val(0.5);
  an->add_option("--seed", analyze.seed);

  MetricsArgs met;
  auto* me = app.add_subcommand("metrics", "PSNR, SSIM and MS-SSIM between two clips");
  me->add_option("--ref", met.ref)->required();
  me->add_option("--dist", met.dist)->required();
  me->add_option("--out", met.out);
  me->add_option("--width", met.width, "Raw YUV width");
  me->add_option("--height", met.height, "Raw YUV height");
  me->add_option("--fps", met.fps)->default_val(30);
  me->add_option("--seed", met.seed);

  ServeArgs serve;
  auto* sv = app.add_subcommand("serve", "Run the study web service");
  sv->add_option("--config", serve.config, "Study configuration JSON");
  sv->add_option("--manifest", serve.manifest);
  sv->add_option("--bind", serve.bind);
  sv->add_option("--port", serve.port);
  sv->add_option("--seed", serve.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  if (*p) return guarded([&] { return cmd_prepare(prepare); });
  if (*f) return guarded([&] { return cmd_features(feat); });
  if (*s) return guarded([&] { return cmd_split(split); });
  if (*l) return guarded([&] { return cmd_labels(labels); });
  if (*t) return guarded([&] { return cmd_train(train); });
  if (*pr) return guarded([&] { return cmd_predict(predict); });
  if (*e) return guarded([&] { return cmd_evaluate(evaluate); });
  if (*an) return guarded([&] { return cmd_analyze(analyze); });
  if (*me) return guarded([&] { return cmd_metrics(met); });
  if (*sv) return guarded([&] { return cmd_serve(serve); });
  return static_cast<int>(ErrorKind::config);
}
