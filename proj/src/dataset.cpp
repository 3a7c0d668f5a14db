#include "teleqa/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "teleqa/error.hpp"
#include "teleqa/process.hpp"

namespace fs = std::filesystem;

namespace teleqa::dataset {
namespace {

bool is_category(const std::string& c) { return std::find(kCategories.begin(), kCategories.end(), c) != kCategories.end(); }

bool is_allowed_crf(int crf) {
  return crf == kReferenceCrf || std::find(kCrfLevels.begin(), kCrfLevels.end(), crf) != kCrfLevels.end();
}

std::string substitute(std::string token, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string placeholder = "{" + key + "}";
    for (std::size_t pos = token.find(placeholder); pos != std::string::npos; pos = token.find(placeholder, pos + value.size()))
      token.replace(pos, placeholder.size(), value);
  }
  return token;
}

void require_placeholders(const std::string& tmpl, std::initializer_list<const char*> names, const char* what) {
  for (const char* n : names)
    require(tmpl.find(std::string("{") + n + "}") != std::string::npos, Errc::template_error,
            std::string(what) + " lacks the {" + n + "} placeholder");
}

void run_template(const std::string& tmpl, const std::map<std::string, std::string>& values, const std::string& what) {
  std::vector<std::string> argv;
  for (const auto& token : process::split_command(tmpl)) argv.push_back(substitute(token, values));
  const process::Result r = process::run(argv);
  require(r.exit_code == 0, Errc::encoder_failed, what + " exited with status " + std::to_string(r.exit_code));
}

fs::path temp_sibling(const fs::path& target) {
  fs::path tmp = target;
  tmp.replace_filename(target.stem().string() + ".partial" + target.extension().string());
  return tmp;
}

// Runs the template into a temporary sibling and renames it into place.
void produce(const std::string& tmpl, const fs::path& input, const fs::path& output, const std::string& crf,
             const std::string& what) {
  const fs::path tmp = temp_sibling(output);
  std::error_code ec;
  fs::remove(tmp, ec);
  try {
    run_template(tmpl, {{"input", input.string()}, {"output", tmp.string()}, {"crf", crf}}, what);
  } catch (...) {
    fs::remove(tmp, ec);
    throw;
  }
  require(fs::exists(tmp) && fs::file_size(tmp) > 0, Errc::missing_output, what + " produced no output at " + tmp.string());
  fs::rename(tmp, output);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::uint64_t category_seed(std::uint64_t seed, std::size_t category_index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (category_index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::string asset_id_for(const std::string& content_id, int crf) {
  return crf == kReferenceCrf ? content_id + "_ref" : content_id + "_crf" + std::to_string(crf);
}

void DatasetManifest::validate() const {
  require(schema_version == kManifestSchemaVersion, Errc::schema_version,
          "unsupported manifest schema version " + std::to_string(schema_version));
  std::set<std::string> ids;
  for (const SceneEntry& s : scenes) {
    subjective::validate_identifier(s.content_id, "content_id");
    require(ids.insert(s.content_id).second, Errc::duplicate_entry, "duplicate scene " + s.content_id);
    require(is_category(s.category), Errc::unknown_category,
            "scene " + s.content_id + " has unknown category '" + s.category + "'");
    require(std::isfinite(s.duration) && s.duration > 0.0, Errc::out_of_range, "scene " + s.content_id + " has a non-positive duration");
  }
  std::set<std::string> asset_ids;
  std::set<std::pair<std::string, int>> pairs;
  for (const AssetEntry& a : assets) {
    subjective::validate_identifier(a.asset_id, "asset_id");
    require(asset_ids.insert(a.asset_id).second, Errc::duplicate_entry, "duplicate asset " + a.asset_id);
    require(ids.contains(a.content_id), Errc::dangling_reference,
            "asset " + a.asset_id + " references unknown scene " + a.content_id);
    require(is_allowed_crf(a.crf), Errc::closed_set, "asset " + a.asset_id + " has CRF " + std::to_string(a.crf) +
                                                         " outside {0,30,36,42,48}");
    require(pairs.emplace(a.content_id, a.crf).second, Errc::duplicate_entry,
            "scene " + a.content_id + " has two assets at CRF " + std::to_string(a.crf));
  }
  for (const auto& [id, score] : labels) {
    require(asset_ids.contains(id), Errc::dangling_reference, "label for unknown asset " + id);
    require(std::isfinite(score) && score >= 0.0 && score <= 100.0, Errc::out_of_range, "label for " + id + " outside [0,100]");
  }
  if (geometry) {
    require(geometry->width > 0 && geometry->height > 0 && geometry->fps_num > 0 && geometry->fps_den > 0,
            Errc::invalid_argument, "manifest geometry must be positive");
  }
}

const SceneEntry& DatasetManifest::scene(const std::string& content_id) const {
  for (const auto& s : scenes)
    if (s.content_id == content_id) return s;
  fail(Errc::dangling_reference, "unknown scene " + content_id);
}

const AssetEntry* DatasetManifest::find_asset(const std::string& content_id, int crf) const {
  for (const auto& a : assets)
    if (a.content_id == content_id && a.crf == crf) return &a;
  return nullptr;
}

const AssetEntry& DatasetManifest::asset(const std::string& asset_id) const {
  for (const auto& a : assets)
    if (a.asset_id == asset_id) return a;
  fail(Errc::unknown_asset, "unknown asset " + asset_id);
}

std::vector<const AssetEntry*> DatasetManifest::distorted_assets() const {
  std::vector<const AssetEntry*> out;
  for (const auto& a : assets)
    if (a.crf != kReferenceCrf) out.push_back(&a);
  return out;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"schema_version", m.schema_version}, {"encoder_version", m.encoder_version}};
  if (m.geometry)
    j["geometry"] = {{"width", m.geometry->width},
                     {"height", m.geometry->height},
                     {"fps_num", m.geometry->fps_num},
                     {"fps_den", m.geometry->fps_den}};
  auto& scenes = j["scenes"] = nlohmann::json::array();
  for (const auto& s : m.scenes) {
    nlohmann::json e{{"content_id", s.content_id},
                     {"category", s.category},
                     {"reference_path", s.reference_path},
                     {"duration", s.duration}};
    if (s.width) e["width"] = *s.width;
    if (s.height) e["height"] = *s.height;
    if (s.frame_rate) e["frame_rate"] = *s.frame_rate;
    scenes.push_back(e);
  }
  auto& assets = j["assets"] = nlohmann::json::array();
  for (const auto& a : m.assets) {
    nlohmann::json e{{"asset_id", a.asset_id}, {"content_id", a.content_id}, {"crf", a.crf}, {"path", a.path}};
    if (a.decoded_path) e["decoded_path"] = *a.decoded_path;
    assets.push_back(e);
  }
  if (!m.labels.empty()) j["labels"] = m.labels;
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m = DatasetManifest{};
  m.schema_version = j.at("schema_version").get<int>();
  m.encoder_version = j.value("encoder_version", std::string());
  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    m.geometry = Geometry{g.at("width").get<int>(), g.at("height").get<int>(), g.value("fps_num", 30), g.value("fps_den", 1)};
  }
  for (const auto& e : j.at("scenes")) {
    SceneEntry s;
    s.content_id = e.at("content_id").get<std::string>();
    s.category = e.at("category").get<std::string>();
    s.reference_path = e.value("reference_path", std::string());
    s.duration = e.value("duration", 8.0);
    if (e.contains("width")) s.width = e["width"].get<int>();
    if (e.contains("height")) s.height = e["height"].get<int>();
    if (e.contains("frame_rate")) s.frame_rate = e["frame_rate"].get<double>();
    m.scenes.push_back(std::move(s));
  }
  for (const auto& e : j.value("assets", nlohmann::json::array())) {
    AssetEntry a;
    a.asset_id = e.at("asset_id").get<std::string>();
    a.content_id = e.at("content_id").get<std::string>();
    a.crf = e.at("crf").get<int>();
    a.path = e.value("path", std::string());
    if (e.contains("decoded_path")) a.decoded_path = e["decoded_path"].get<std::string>();
    m.assets.push_back(std::move(a));
  }
  if (j.contains("labels")) m.labels = j["labels"].get<std::map<std::string, double>>();
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  try {
    from_json(nlohmann::json::parse(text), m);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::malformed_header, std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::string dump_manifest(const DatasetManifest& m) {
  m.validate();
  return nlohmann::json(m).dump(2) + "\n";
}

std::vector<std::string> curation_warnings(const DatasetManifest& m) {
  std::vector<std::string> w;
  for (const auto& s : m.scenes) {
    if (s.width && s.height && (*s.width < 1920 || *s.height < 1200))
      w.push_back(s.content_id + ": resolution " + std::to_string(*s.width) + "x" + std::to_string(*s.height) +
                  " below 1920x1200");
    if (s.frame_rate && *s.frame_rate < 10.0) w.push_back(s.content_id + ": frame rate below 10 Hz");
    if (std::abs(s.duration - 8.0) > 0.5) w.push_back(s.content_id + ": duration differs from 8 s");
  }
  return w;
}

void validate_encoder_config(const EncoderConfig& config) {
  require_placeholders(config.command_template, {"input", "output", "crf"}, "encoder template");
  require(!process::split_command(config.command_template).empty(), Errc::template_error, "encoder template is empty");
  if (config.decode_template) require_placeholders(*config.decode_template, {"input", "output"}, "decode template");
  require(config.jobs >= 1, Errc::invalid_argument, "jobs must be at least 1");
}

std::string probe_encoder_version(const EncoderConfig& config) {
  if (config.version_command.empty()) return "unknown";
  const process::Result r = process::run(process::split_command(config.version_command), true);
  require(r.exit_code == 0, Errc::encoder_failed, "encoder version command failed");
  std::string first = r.out.substr(0, r.out.find('\n'));
  while (!first.empty() && (first.back() == '\r' || first.back() == ' ')) first.pop_back();
  return first;
}

namespace {

AssetEntry encode_one(const SceneEntry& scene, int crf, const EncoderConfig& config, const fs::path& base_dir) {
  const fs::path input = resolve(base_dir, scene.reference_path);
  require(fs::exists(input), Errc::io, "reference file for scene " + scene.content_id + " not found: " + input.string());
  AssetEntry a;
  a.content_id = scene.content_id;
  a.crf = crf;
  a.asset_id = asset_id_for(scene.content_id, crf);
  const fs::path out_dir = resolve(base_dir, config.output_dir.string());
  fs::create_directories(out_dir);
  const fs::path output = out_dir / (a.asset_id + config.output_extension);
  produce(config.command_template, input, output, std::to_string(crf), "encoder for " + a.asset_id);
  a.path = (config.output_dir / (a.asset_id + config.output_extension)).string();
  if (config.decode_template) {
    const fs::path decoded = out_dir / (a.asset_id + ".y4m");
    produce(*config.decode_template, output, decoded, std::to_string(crf), "decoder for " + a.asset_id);
    a.decoded_path = (config.output_dir / (a.asset_id + ".y4m")).string();
  }
  return a;
}

}  // namespace

std::vector<AssetEntry> encode_variants(const SceneEntry& scene, const std::vector<int>& crfs, const EncoderConfig& config) {
  validate_encoder_config(config);
  for (int crf : crfs)
    require(std::find(kCrfLevels.begin(), kCrfLevels.end(), crf) != kCrfLevels.end(), Errc::closed_set,
            "CRF " + std::to_string(crf) + " outside {30,36,42,48}");
  std::vector<AssetEntry> out;
  for (int crf : crfs) out.push_back(encode_one(scene, crf, config, {}));
  return out;
}

PrepareReport encode_missing(DatasetManifest& m, const std::vector<int>& crfs, const EncoderConfig& config,
                             const fs::path& base_dir) {
  validate_encoder_config(config);
  m.validate();
  struct Job {
    const SceneEntry* scene;
    int crf;
  };
  std::vector<Job> jobs;
  PrepareReport report;
  for (const auto& s : m.scenes)
    for (int crf : crfs) {
      const AssetEntry* existing = m.find_asset(s.content_id, crf);
      if (existing && fs::exists(resolve(base_dir, existing->path))) {
        ++report.skipped;
        continue;
      }
      jobs.push_back({&s, crf});
    }
  if (jobs.empty()) return report;
  if (m.encoder_version.empty()) m.encoder_version = probe_encoder_version(config);

  std::vector<std::optional<AssetEntry>> results(jobs.size());
  std::vector<std::optional<EncodeFailure>> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = encode_one(*jobs[i].scene, jobs[i].crf, config, base_dir);
      } catch (const std::exception& e) {
        failures[i] = EncodeFailure{jobs[i].scene->content_id, jobs[i].crf, e.what()};
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::min<int>(config.jobs, static_cast<int>(jobs.size()));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (failures[i]) {
      report.failures.push_back(*failures[i]);
      continue;
    }
    const AssetEntry& a = *results[i];
    auto it = std::find_if(m.assets.begin(), m.assets.end(),
                           [&](const AssetEntry& e) { return e.content_id == a.content_id && e.crf == a.crf; });
    if (it != m.assets.end()) *it = a;
    else m.assets.push_back(a);
    ++report.encoded;
  }
  return report;
}

void to_json(nlohmann::json& j, const SplitResult& s) {
  j = nlohmann::json{{"seed", s.seed}, {"fraction", s.fraction}, {"train", s.train}, {"val", s.val}};
}

void from_json(const nlohmann::json& j, SplitResult& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  s.fraction = j.at("fraction").get<double>();
  s.train = j.at("train").get<std::set<std::string>>();
  s.val = j.at("val").get<std::set<std::string>>();
}

std::size_t train_count(std::size_t n, double fraction) {
  require(n >= 2, Errc::too_few_scenes, "a category needs at least 2 scenes to split");
  require(fraction > 0.0 && fraction < 1.0, Errc::validation_empty,
          "train fraction must lie strictly between 0 and 1 so both sides are nonempty");
  const auto want = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * fraction - 1e-9));
  return std::clamp<std::size_t>(want, 1, n - 1);
}

SplitResult split_by_scene(const DatasetManifest& m, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, Errc::validation_empty,
          "train fraction must lie strictly between 0 and 1 so both sides are nonempty");
  SplitResult r;
  r.seed = seed;
  r.fraction = train_fraction;
  for (std::size_t c = 0; c < kCategories.size(); ++c) {
    std::vector<std::string> ids;
    for (const auto& s : m.scenes)
      if (s.category == kCategories[c]) ids.push_back(s.content_id);
    if (ids.empty()) continue;
    require(ids.size() >= 2, Errc::too_few_scenes, "category " + kCategories[c] + " has fewer than 2 scenes");
    std::sort(ids.begin(), ids.end());
    seeded_shuffle(ids, category_seed(seed, c));
    const std::size_t k = train_count(ids.size(), train_fraction);
    r.train.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    r.val.insert(ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
  }
  require(!r.val.empty(), Errc::validation_empty, "validation set is empty");
  return r;
}

JoinResult join_labels(const DatasetManifest& m, const subjective::RatingExport& ratings, const JoinOptions& options) {
  require(!ratings.ratings.empty(), Errc::empty_input, "rating export has no ratings");
  require(options.min_raters >= 1, Errc::invalid_argument, "minimum rater count must be positive");
  std::set<std::string> known;
  for (const auto& a : m.assets) known.insert(a.asset_id);
  for (const auto& r : ratings.ratings)
    require(known.contains(r.asset_id), Errc::dangling_reference, "rating references unknown asset " + r.asset_id);

  std::map<std::string, std::vector<subjective::RatingRecord>> by_asset;
  for (const auto& r : ratings.ratings)
    if (!options.excluded_participants.contains(r.participant_id)) by_asset[r.asset_id].push_back(r);

  JoinResult out;
  auto label_of = [&](const std::string& id) -> std::optional<subjective::MosLabel> {
    const auto it = by_asset.find(id);
    if (it == by_asset.end()) return std::nullopt;
    try {
      return subjective::aggregate_mos(it->second, options.dimensions);
    } catch (const Error& e) {
      if (e.code() == Errc::missing_items) return std::nullopt;
      throw;
    }
  };

  std::vector<const AssetEntry*> distorted = m.distorted_assets();
  std::sort(distorted.begin(), distorted.end(), [](auto* a, auto* b) { return a->asset_id < b->asset_id; });
  for (const AssetEntry* a : distorted) {
    const auto label = label_of(a->asset_id);
    if (!label) {
      if (by_asset.contains(a->asset_id)) out.flagged.push_back({a->asset_id, 0, "missing pooled dimensions"});
      continue;
    }
    if (label->n_raters < options.min_raters) {
      out.flagged.push_back({a->asset_id, label->n_raters,
                             "only " + std::to_string(label->n_raters) + " raters, need " +
                                 std::to_string(options.min_raters)});
      continue;
    }
    double score = label->mos_vmaf;
    if (options.dmos) {
      const AssetEntry* ref = m.find_asset(a->content_id, kReferenceCrf);
      const auto ref_label = ref ? label_of(ref->asset_id) : std::nullopt;
      if (!ref_label) {
        out.flagged.push_back({a->asset_id, label->n_raters, "no reference ratings for differential score"});
        continue;
      }
      score = std::clamp(100.0 - (ref_label->mos_vmaf - label->mos_vmaf), 0.0, 100.0);
    }
    out.rows.push_back({a->asset_id, a->content_id, a->crf, *label, score});
  }
  return out;
}

svr::TrainingSet build_training_set(const JoinResult& joined,
                                    const std::map<std::string, features::FeatureVector>& pooled_features) {
  svr::TrainingSet set = svr::TrainingSet::for_features();
  for (const auto& row : joined.rows) {
    const auto it = pooled_features.find(row.asset_id);
    require(it != pooled_features.end(), Errc::key_mismatch, "no features for labeled asset " + row.asset_id);
    set.add(row.asset_id, row.content_id, it->second, row.score);
  }
  return set;
}

}  // namespace teleqa::dataset
