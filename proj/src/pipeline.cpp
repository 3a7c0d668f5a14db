#include "teleqa/pipeline.hpp"

#include <sodium.h>
#include <unistd.h>

#include <atomic>
#include <charconv>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "teleqa/error.hpp"
#include "teleqa/frame_io.hpp"

namespace teleqa::pipeline {

using nlohmann::json;

namespace {

std::string hex(const unsigned char* data, std::size_t n) {
  std::string out(2 * n + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), data, n);
  out.pop_back();
  return out;
}

void init_sodium() {
  static const int rc = sodium_init();
  require(rc >= 0, Errc::io, "libsodium failed to initialise");
}

}  // namespace

std::string hash_bytes(std::string_view bytes) {
  init_sodium();
  unsigned char out[crypto_generichash_BYTES];
  crypto_generichash(out, sizeof out, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), nullptr, 0);
  return hex(out, sizeof out);
}

std::string hash_file(const std::filesystem::path& path) {
  init_sodium();
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot read " + path.string());
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, crypto_generichash_BYTES);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = in.gcount();
    if (got > 0)
      crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(buf.data()),
                                static_cast<unsigned long long>(got));
  }
  unsigned char out[crypto_generichash_BYTES];
  crypto_generichash_final(&st, out, sizeof out);
  return hex(out, sizeof out);
}

void write_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" +
         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 1000000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), Errc::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail(Errc::io, "cannot move output into place at " + path.string() + ": " + ec.message());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json run_manifest_json(const RunManifest& m) {
  json inputs = json::array();
  for (const auto& p : m.inputs) {
    json entry{{"path", p.string()}};
    if (std::filesystem::is_regular_file(p)) entry["blake2b"] = hash_file(p);
    inputs.push_back(entry);
  }
  json outputs = json::array();
  for (const auto& p : m.outputs) outputs.push_back(p.string());
  json j{{"command", m.command},
         {"tool_version", kToolVersion},
         {"model_schema_version", svr::kModelSchemaVersion},
         {"manifest_schema_version", dataset::kManifestSchemaVersion},
         {"config", m.config},
         {"config_hash", hash_bytes(m.config.dump())},
         {"inputs", inputs},
         {"outputs", outputs}};
  j["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  return j;
}

void write_run_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_atomic(path, run_manifest_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------- features

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::filesystem::path reference_clip_path(const dataset::DatasetManifest& m, const std::string& content_id,
                                          const std::filesystem::path& base) {
  if (const auto* ref = m.find_asset(content_id, dataset::kReferenceCrf))
    return resolve(base, ref->decoded_path.value_or(ref->path));
  return resolve(base, m.scene(content_id).reference_path);
}

std::filesystem::path distorted_clip_path(const dataset::AssetEntry& a, const std::filesystem::path& base) {
  return resolve(base, a.decoded_path.value_or(a.path));
}

namespace {

io::VideoClip load_clip(const dataset::DatasetManifest& m, const std::filesystem::path& p) {
  if (m.geometry)
    return io::read_clip_file(p, m.geometry->width, m.geometry->height, {m.geometry->fps_num, m.geometry->fps_den});
  return io::read_clip_file(p);
}

std::optional<std::string> sidecar_hash(const std::filesystem::path& sidecar) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(sidecar, ec)) return std::nullopt;
  try {
    const auto j = json::parse(read_text_file(sidecar));
    if (j.contains("content_hash")) return j.at("content_hash").get<std::string>();
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

}  // namespace

FeatureRunReport extract_features(const dataset::DatasetManifest& m, const std::filesystem::path& base,
                                  const std::filesystem::path& out_dir, const features::FeatureConfig& config,
                                  int jobs) {
  m.validate();
  std::filesystem::create_directories(out_dir);
  const auto assets = m.distorted_assets();
  const std::string config_text = json(config).dump();

  FeatureRunReport report;
  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> computed(assets.size()), skipped(assets.size());
  std::vector<std::optional<FeatureFailure>> failures(assets.size());

  auto work = [&] {
    for (std::size_t i = next++; i < assets.size(); i = next++) {
      const auto& a = *assets[i];
      try {
        const auto ref_path = reference_clip_path(m, a.content_id, base);
        const auto dist_path = distorted_clip_path(a, base);
        const auto hash = hash_bytes(hash_file(ref_path) + hash_file(dist_path) + config_text);
        const auto csv_path = out_dir / (a.asset_id + ".csv");
        const auto json_path = out_dir / (a.asset_id + ".json");
        if (sidecar_hash(json_path) == hash && std::filesystem::is_regular_file(csv_path)) {
          skipped[i] = a.asset_id;
          continue;
        }
        const auto ref = load_clip(m, ref_path);
        const auto dist = load_clip(m, dist_path);
        const auto f = features::extract_clip_features(ref, dist, config);
        auto side = features::sidecar(f, config, a.content_id, a.asset_id);
        side["content_hash"] = hash;
        side["crf"] = a.crf;
        write_atomic(csv_path, features::to_csv(f));
        write_atomic(json_path, side.dump(2) + "\n");
        computed[i] = a.asset_id;
      } catch (const Error& e) {
        failures[i] = FeatureFailure{a.asset_id, std::string(errc_name(e.code())), e.what()};
      } catch (const std::exception& e) {
        failures[i] = FeatureFailure{a.asset_id, "io", e.what()};
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(assets.size())));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(work);
    work();
  }
  for (std::size_t i = 0; i < assets.size(); ++i) {
    if (!computed[i].empty()) report.computed.push_back(computed[i]);
    if (!skipped[i].empty()) report.skipped.push_back(skipped[i]);
    if (failures[i]) report.failures.push_back(*failures[i]);
  }
  return report;
}

std::map<std::string, features::FeatureVector> load_pooled_features(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), Errc::io, "feature directory " + dir.string() + " does not exist");
  std::map<std::string, features::FeatureVector> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    json j;
    try {
      j = json::parse(read_text_file(entry.path()));
    } catch (const json::exception&) {
      fail(Errc::corrupted_payload, entry.path().string() + " is not JSON");
    }
    if (!j.contains("pooled") || !j.contains("distorted_id")) continue;
    std::array<double, features::kFeatureCount> a{};
    for (std::size_t i = 0; i < features::kFeatureCount; ++i) a[i] = j.at("pooled").at(features::kFeatureNames[i]);
    out[j.at("distorted_id").get<std::string>()] = features::FeatureVector::from_array(a);
  }
  return out;
}

// ---------------------------------------------------------------- labels and predictions

std::map<std::string, double> load_labels(const std::filesystem::path& path) {
  try {
    const auto j = json::parse(read_text_file(path));
    return j.at("labels").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    fail(Errc::corrupted_payload, path.string() + ": " + e.what());
  }
}

json labels_json(const dataset::JoinResult& joined) {
  json labels = json::object(), rows = json::array(), flagged = json::array();
  for (const auto& r : joined.rows) {
    labels[r.asset_id] = r.score;
    rows.push_back({{"asset_id", r.asset_id}, {"content_id", r.content_id}, {"crf", r.crf}, {"score", r.score},
                    {"mos", r.label}});
  }
  for (const auto& f : joined.flagged)
    flagged.push_back({{"asset_id", f.asset_id}, {"n_raters", f.n_raters}, {"reason", f.reason}});
  return json{{"labels", labels}, {"rows", rows}, {"flagged", flagged}};
}

std::string predictions_csv(const std::map<std::string, double>& predictions) {
  std::string out = "asset_id,prediction\n";
  char buf[64];
  for (const auto& [id, p] : predictions) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out += id + "," + buf + "\n";
  }
  return out;
}

std::map<std::string, double> parse_predictions_csv(std::string_view text) {
  std::map<std::string, double> out;
  std::istringstream in{std::string(text)};
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line.rfind("asset_id,prediction", 0) == 0,
          Errc::corrupted_payload, "predictions CSV needs the header asset_id,prediction");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, Errc::corrupted_payload, "line " + std::to_string(lineno) + " lacks a comma");
    double v = 0.0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    require(ec == std::errc{} && ptr == last, Errc::corrupted_payload,
            "line " + std::to_string(lineno) + " has a malformed prediction");
    require(out.emplace(line.substr(0, comma), v).second, Errc::duplicate_entry,
            "duplicate asset " + line.substr(0, comma));
  }
  return out;
}

std::map<std::string, double> predict_all(const svr::SvrModel& model,
                                          const std::map<std::string, features::FeatureVector>& pooled) {
  std::map<std::string, double> out;
  for (const auto& [id, fv] : pooled) out[id] = svr::predict(model, fv, model.feature_config);
  return out;
}

std::map<std::string, alignment::AssetMeta> asset_meta(const dataset::DatasetManifest& m) {
  std::map<std::string, alignment::AssetMeta> out;
  for (const auto& a : m.assets) out[a.asset_id] = {m.scene(a.content_id).category, a.crf};
  return out;
}

// ---------------------------------------------------------------- training

TrainOutcome train_and_validate(const dataset::DatasetManifest& m, const dataset::SplitResult& split,
                                const std::map<std::string, features::FeatureVector>& pooled,
                                const std::map<std::string, double>& labels, const TrainOptions& options) {
  svr::TrainingSet train_set = svr::TrainingSet::for_features();
  std::map<std::string, double> val_labels;
  std::map<std::string, features::FeatureVector> val_features;
  for (const auto* a : m.distorted_assets()) {
    const auto label = labels.find(a->asset_id);
    if (label == labels.end()) continue;
    const auto fv = pooled.find(a->asset_id);
    require(fv != pooled.end(), Errc::key_mismatch, "no features for labeled asset " + a->asset_id);
    if (split.train.count(a->content_id)) {
      train_set.add(a->asset_id, a->content_id, fv->second, label->second);
    } else if (split.val.count(a->content_id)) {
      val_labels[a->asset_id] = label->second;
      val_features[a->asset_id] = fv->second;
    }
  }
  require(!train_set.rows.empty(), Errc::empty_input, "no labeled assets in the training scenes");
  require(val_labels.size() >= 3, Errc::validation_empty, "fewer than three labeled validation assets");

  std::set<std::string> groups;
  for (const auto& r : train_set.rows) groups.insert(r.group);
  const int k = std::min<int>(options.folds, static_cast<int>(groups.size()));
  require(k >= 2, Errc::too_few_scenes, "cross-validation needs at least two training scenes");

  TrainOutcome out;
  out.train_rows = train_set.rows.size();
  const auto folds = svr::scene_folds(train_set, k);
  out.search = svr::grid_search(train_set, folds, options.grid, options.base, options.feature_config, options.jobs);
  out.model = svr::train(train_set, out.search.best, options.feature_config);

  const auto meta = asset_meta(m);
  out.validation = alignment::evaluate(predict_all(out.model, val_features), val_labels, meta);
  const auto& baseline = svr::baseline_model();
  out.baseline_validation = alignment::evaluate(predict_all(baseline, val_features), val_labels, meta);
  out.comparison = alignment::compare_models(out.baseline_validation, out.validation);
  return out;
}

json validation_report(const TrainOutcome& o) {
  json grid = json::array();
  for (const auto& p : o.search.table)
    grid.push_back({{"c", p.hyperparams.c},
                    {"gamma", p.hyperparams.gamma},
                    {"epsilon", p.hyperparams.epsilon},
                    {"mean_rmse", std::isfinite(p.mean_rmse) ? json(p.mean_rmse) : json(nullptr)}});
  return json{{"train_rows", o.train_rows},
              {"best", {{"c", o.search.best.c}, {"gamma", o.search.best.gamma}, {"epsilon", o.search.best.epsilon}}},
              {"best_cv_rmse", o.search.best_rmse},
              {"grid", grid},
              {"validation", o.validation},
              {"baseline_validation", o.baseline_validation},
              {"comparison", o.comparison}};
}

}  // namespace teleqa::pipeline
