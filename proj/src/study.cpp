#include "teleqa/study.hpp"

#include <sodium.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <sstream>

#include "teleqa/error.hpp"
#include "teleqa/random.hpp"

namespace teleqa::study {

using nlohmann::json;
using subjective::Dimension;

namespace {

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) fail(Errc::io, "libsodium failed to initialise");
}

std::string to_hex(const unsigned char* data, std::size_t n) {
  std::string out(2 * n + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), data, n);
  out.pop_back();
  return out;
}

std::string random_hex(std::size_t bytes) {
  ensure_sodium();
  std::vector<unsigned char> buf(bytes);
  randombytes_buf(buf.data(), buf.size());
  return to_hex(buf.data(), buf.size());
}

// BLAKE2b keyed by a digest of the server secret.
std::array<unsigned char, 32> keyed_hash(const std::string& secret, std::string_view domain, const std::string& msg) {
  ensure_sodium();
  std::array<unsigned char, 32> key{};
  crypto_generichash(key.data(), key.size(), reinterpret_cast<const unsigned char*>(secret.data()), secret.size(),
                     nullptr, 0);
  std::string input(domain);
  input.push_back('\0');
  input += msg;
  std::array<unsigned char, 32> out{};
  crypto_generichash(out.data(), out.size(), reinterpret_cast<const unsigned char*>(input.data()), input.size(),
                     key.data(), key.size());
  return out;
}

std::string normalise_answer(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

template <class T>
T required(const json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key)) fail(Errc::invalid_argument, std::string(what) + " is missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(Errc::invalid_argument, std::string(what) + " field '" + key + "' has the wrong type");
  }
}

json answers_to_json(const std::vector<Answer>& answers) {
  json arr = json::array();
  for (const auto& a : answers)
    arr.push_back({{"dimension", subjective::to_string(a.dimension)}, {"item_id", a.item_id}, {"value", a.value}});
  return arr;
}

std::vector<Answer> answers_from_json(const json& arr) {
  if (!arr.is_array()) fail(Errc::invalid_argument, "answers must be an array");
  std::vector<Answer> out;
  for (const auto& a : arr) {
    Answer x;
    x.dimension = subjective::parse_dimension(required<std::string>(a, "dimension", "answer"));
    x.item_id = required<std::string>(a, "item_id", "answer");
    if (!a.contains("value") || !a.at("value").is_number_integer())
      fail(Errc::invalid_argument, "answer value must be an integer");
    x.value = a.at("value").get<int>();
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config

void StudyConfig::validate() const {
  require(port >= 0 && port <= 65535, Errc::invalid_argument, "port out of range");
  require(!operator_token.empty(), Errc::invalid_argument, "operator token is not configured");
  require(!server_secret.empty(), Errc::invalid_argument, "server secret is not configured");
  require(std::isfinite(min_screen_diagonal) && min_screen_diagonal > 0, Errc::invalid_argument,
          "min_screen_diagonal must be positive");
  require(min_ppmm > 0 && max_ppmm > min_ppmm, Errc::invalid_argument, "ppmm bounds must satisfy 0 < min < max");
  require(video_target_width_mm > 0, Errc::invalid_argument, "video_target_width_mm must be positive");
  require(!landolt_sizes_mm.empty() && landolt_sizes_mm.size() == landolt_contrasts.size(), Errc::invalid_argument,
          "landolt sizes and contrasts must be non-empty and equally long");
  for (std::size_t i = 0; i < landolt_sizes_mm.size(); ++i) {
    require(landolt_sizes_mm[i] > 0, Errc::invalid_argument, "landolt sizes must be positive");
    require(landolt_contrasts[i] > 0 && landolt_contrasts[i] <= 1, Errc::invalid_argument,
            "landolt contrasts must lie in (0,1]");
  }
  require(!ishihara_plates.empty(), Errc::invalid_argument, "at least one Ishihara plate is required");
  for (double f : {landolt_pass_fraction, ishihara_pass_fraction})
    require(f >= 0 && f <= 1, Errc::invalid_argument, "pass fractions must lie in [0,1]");
  std::set<Dimension> dims;
  for (const auto& q : questionnaire) {
    require(!q.items.empty(), Errc::invalid_argument, "questionnaire dimension without items");
    require(dims.insert(q.dimension).second, Errc::invalid_argument, "questionnaire dimension listed twice");
    std::set<std::string> ids(q.items.begin(), q.items.end());
    require(ids.size() == q.items.size(), Errc::invalid_argument, "duplicate questionnaire item id");
    for (const auto& id : q.items) subjective::validate_identifier(id, "questionnaire item");
  }
  for (auto d : {Dimension::detail_loss, Dimension::drivability, Dimension::situational_awareness,
                 Dimension::reflection})
    require(dims.count(d) == 1, Errc::invalid_argument,
            "questionnaire lacks dimension " + std::string(subjective::to_string(d)));
  require(!object_check_options.empty(), Errc::invalid_argument, "object-check options are empty");
  std::set<std::string> options(object_check_options.begin(), object_check_options.end());
  for (const auto& [scene, key] : object_check_key)
    for (const auto& o : key)
      require(options.count(o) == 1, Errc::invalid_argument,
              "object-check key for " + scene + " names unknown option " + o);
}

void to_json(json& j, const StudyConfig& c) {
  json plates = json::array();
  for (const auto& p : c.ishihara_plates) plates.push_back({{"id", p.id}, {"image", p.image}, {"answer", p.answer}});
  json q = json::array();
  for (const auto& d : c.questionnaire) q.push_back({{"dimension", subjective::to_string(d.dimension)}, {"items", d.items}});
  j = json{{"bind_address", c.bind_address},
           {"port", c.port},
           {"manifest_path", c.manifest_path.string()},
           {"media_root", c.media_root.string()},
           {"static_root", c.static_root.string()},
           {"log_path", c.log_path.string()},
           {"min_screen_diagonal", c.min_screen_diagonal},
           {"min_ppmm", c.min_ppmm},
           {"max_ppmm", c.max_ppmm},
           {"video_target_width_mm", c.video_target_width_mm},
           {"landolt_sizes_mm", c.landolt_sizes_mm},
           {"landolt_contrasts", c.landolt_contrasts},
           {"landolt_pass_fraction", c.landolt_pass_fraction},
           {"ishihara_plates", plates},
           {"ishihara_pass_fraction", c.ishihara_pass_fraction},
           {"questionnaire", q},
           {"object_check_options", c.object_check_options},
           {"object_check_key", c.object_check_key}};
}

void from_json(const json& j, StudyConfig& c) {
  auto path = [&](const char* key, std::filesystem::path& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
  };
  c.bind_address = j.value("bind_address", c.bind_address);
  c.port = j.value("port", c.port);
  path("manifest_path", c.manifest_path);
  path("media_root", c.media_root);
  path("static_root", c.static_root);
  path("log_path", c.log_path);
  c.operator_token = j.value("operator_token", c.operator_token);
  c.server_secret = j.value("server_secret", c.server_secret);
  c.min_screen_diagonal = j.value("min_screen_diagonal", c.min_screen_diagonal);
  c.min_ppmm = j.value("min_ppmm", c.min_ppmm);
  c.max_ppmm = j.value("max_ppmm", c.max_ppmm);
  c.video_target_width_mm = j.value("video_target_width_mm", c.video_target_width_mm);
  c.landolt_sizes_mm = j.value("landolt_sizes_mm", c.landolt_sizes_mm);
  c.landolt_contrasts = j.value("landolt_contrasts", c.landolt_contrasts);
  c.landolt_pass_fraction = j.value("landolt_pass_fraction", c.landolt_pass_fraction);
  c.ishihara_pass_fraction = j.value("ishihara_pass_fraction", c.ishihara_pass_fraction);
  if (j.contains("ishihara_plates")) {
    c.ishihara_plates.clear();
    for (const auto& p : j.at("ishihara_plates"))
      c.ishihara_plates.push_back({p.at("id").get<std::string>(), p.value("image", std::string{}),
                                   p.at("answer").get<std::string>()});
  }
  if (j.contains("questionnaire")) {
    c.questionnaire.clear();
    for (const auto& q : j.at("questionnaire"))
      c.questionnaire.push_back({subjective::parse_dimension(q.at("dimension").get<std::string>()),
                                 q.at("items").get<std::vector<std::string>>()});
  }
  c.object_check_options = j.value("object_check_options", c.object_check_options);
  c.object_check_key = j.value("object_check_key", c.object_check_key);
}

void apply_env_overrides(StudyConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  auto number = [](const std::string& name, const std::string& v) {
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      fail(Errc::invalid_argument, name + " is not a number: " + v);
    }
  };
  if (auto v = env("TELEQA_BIND_ADDRESS")) c.bind_address = *v;
  if (auto v = env("TELEQA_PORT")) c.port = static_cast<int>(number("TELEQA_PORT", *v));
  if (auto v = env("TELEQA_MANIFEST")) c.manifest_path = *v;
  if (auto v = env("TELEQA_MEDIA_ROOT")) c.media_root = *v;
  if (auto v = env("TELEQA_STATIC_ROOT")) c.static_root = *v;
  if (auto v = env("TELEQA_LOG_PATH")) c.log_path = *v;
  if (auto v = env("TELEQA_OPERATOR_TOKEN")) c.operator_token = *v;
  if (auto v = env("TELEQA_SERVER_SECRET")) c.server_secret = *v;
  if (auto v = env("TELEQA_MIN_SCREEN_DIAGONAL")) c.min_screen_diagonal = number("TELEQA_MIN_SCREEN_DIAGONAL", *v);
  if (auto v = env("TELEQA_LANDOLT_PASS_FRACTION"))
    c.landolt_pass_fraction = number("TELEQA_LANDOLT_PASS_FRACTION", *v);
  if (auto v = env("TELEQA_ISHIHARA_PASS_FRACTION"))
    c.ishihara_pass_fraction = number("TELEQA_ISHIHARA_PASS_FRACTION", *v);
  if (auto v = env("TELEQA_VIDEO_TARGET_WIDTH_MM"))
    c.video_target_width_mm = number("TELEQA_VIDEO_TARGET_WIDTH_MM", *v);
}

StudyConfig load_study_config(const std::optional<std::filesystem::path>& file) {
  StudyConfig c;
  if (file) {
    std::ifstream in(*file);
    require(static_cast<bool>(in), Errc::io, "cannot open study config " + file->string());
    try {
      from_json(json::parse(in), c);
    } catch (const json::exception& e) {
      fail(Errc::invalid_argument, "study config " + file->string() + ": " + e.what());
    }
  }
  apply_env_overrides(c);
  return c;
}

// ---------------------------------------------------------------- value types

void to_json(json& j, const Demographics& d) {
  j = json{{"age", d.age},
           {"gender", d.gender},
           {"license", d.license},
           {"years_driving", d.years_driving},
           {"teleop_experience", d.teleop_experience}};
}

Demographics demographics_from_json(const json& j) {
  Demographics d;
  d.age = required<int>(j, "age", "demographics");
  d.gender = required<std::string>(j, "gender", "demographics");
  d.license = required<bool>(j, "license", "demographics");
  d.years_driving = required<int>(j, "years_driving", "demographics");
  d.teleop_experience = required<bool>(j, "teleop_experience", "demographics");
  require(d.age > 0 && d.age < 130, Errc::invalid_argument, "age out of range");
  require(!d.gender.empty(), Errc::invalid_argument, "gender is empty");
  require(d.years_driving >= 0 && d.years_driving <= d.age, Errc::invalid_argument, "years_driving out of range");
  return d;
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::created: return "created";
    case Phase::screened: return "screened";
    case Phase::rating: return "rating";
    case Phase::reflecting: return "reflecting";
    case Phase::done: return "done";
    case Phase::rejected: return "rejected";
  }
  return "unknown";
}

std::string_view to_string(Which w) { return w == Which::compressed ? "compressed" : "original"; }

Which parse_which(std::string_view s) {
  if (s == "compressed") return Which::compressed;
  if (s == "original") return Which::original;
  fail(Errc::invalid_argument, "playback kind must be compressed or original");
}

void to_json(json& j, const ScenarioAssignment& a) {
  j = json{{"index", a.index}, {"content_id", a.content_id}, {"asset_id", a.asset_id}, {"crf", a.crf}};
}

void to_json(json& j, const SessionView& v) {
  json assignments = json::array();
  for (const auto& a : v.assignments) assignments.push_back({{"index", a.index}, {"content_id", a.content_id}});
  j = json{{"session_id", v.session_id},
           {"phase", to_string(v.phase)},
           {"index", v.index},
           {"total", kScenariosPerSession},
           {"assignments", assignments}};
  if (v.rejection_reason) j["reason"] = *v.rejection_reason;
  if (v.ppmm) j["ppmm"] = *v.ppmm;
  if (v.video_width_px) j["video_width_px"] = *v.video_width_px;
}

SubmissionEnvelope envelope_from_json(const std::string& session_id, const json& j) {
  SubmissionEnvelope e;
  e.session_id = session_id;
  e.index = required<int>(j, "index", "submission");
  auto phase = required<std::string>(j, "phase", "submission");
  if (phase == "initial")
    e.phase = SubmissionPhase::initial;
  else if (phase == "reflection")
    e.phase = SubmissionPhase::reflection;
  else
    fail(Errc::invalid_argument, "submission phase must be initial or reflection");
  e.answers = answers_from_json(j.contains("answers") ? j.at("answers") : json::array());
  if (j.contains("object_check") && !j.at("object_check").is_null()) {
    try {
      auto v = j.at("object_check").get<std::vector<std::string>>();
      e.object_check = std::set<std::string>(v.begin(), v.end());
    } catch (const json::exception&) {
      fail(Errc::invalid_argument, "object_check must be an array of strings");
    }
  }
  return e;
}

double ppmm_from_card(double rectangle_px, double card_width_mm) {
  require(rectangle_px > 0 && card_width_mm > 0 && std::isfinite(rectangle_px), Errc::invalid_argument,
          "calibration sizes must be positive");
  return rectangle_px / card_width_mm;
}

// ---------------------------------------------------------------- assignment

std::vector<ScenarioAssignment> assign_scenarios(const dataset::DatasetManifest& manifest, std::uint64_t seed) {
  std::vector<std::string> eligible;
  for (const auto& s : manifest.scenes) {
    bool all = std::all_of(dataset::kCrfLevels.begin(), dataset::kCrfLevels.end(),
                           [&](int crf) { return manifest.find_asset(s.content_id, crf) != nullptr; });
    if (all) eligible.push_back(s.content_id);
  }
  std::sort(eligible.begin(), eligible.end());
  require(eligible.size() >= static_cast<std::size_t>(kScenariosPerSession), Errc::too_few_scenes,
          "need " + std::to_string(kScenariosPerSession) + " scenes with every CRF variant, manifest has " +
              std::to_string(eligible.size()));

  std::mt19937_64 rng(seed);
  portable_shuffle(eligible, rng);
  eligible.resize(kScenariosPerSession);

  std::vector<int> positions(kScenariosPerSession);
  for (int i = 0; i < kScenariosPerSession; ++i) positions[i] = i;
  portable_shuffle(positions, rng);
  std::vector<int> crfs(kScenariosPerSession, 0);
  const auto levels = dataset::kCrfLevels.size();
  for (std::size_t k = 0; k < positions.size(); ++k)
    crfs[positions[k]] = k < levels ? dataset::kCrfLevels[k]
                                    : dataset::kCrfLevels[static_cast<std::size_t>(uniform_below(rng, levels))];

  std::vector<ScenarioAssignment> out;
  for (int i = 0; i < kScenariosPerSession; ++i) {
    const auto* asset = manifest.find_asset(eligible[i], crfs[i]);
    out.push_back({i, eligible[i], asset->asset_id, crfs[i]});
  }
  return out;
}

// ---------------------------------------------------------------- Landolt

std::string landolt_svg(const LandoltTrial& trial, double ppmm) {
  require(ppmm > 0 && trial.size_mm > 0, Errc::invalid_argument, "Landolt geometry must be positive");
  auto it = std::find(kLandoltOrientations.begin(), kLandoltOrientations.end(), trial.orientation);
  require(it != kLandoltOrientations.end(), Errc::invalid_argument, "unknown Landolt orientation");
  const double angle = -45.0 * static_cast<double>(it - kLandoltOrientations.begin()) + 0.0;

  const double d = trial.size_mm * ppmm;
  const double stroke = d / 5.0;
  const double side = d * 1.5;
  const double c = side / 2.0;
  const int ink = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(trial.contrast, 0.0, 1.0))));

  const std::string gray = "rgb(" + std::to_string(ink) + "," + std::to_string(ink) + "," + std::to_string(ink) + ")";
  const std::string sz = format_number(side), cs = format_number(c);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << sz << "\" height=\"" << sz << "\" viewBox=\"0 0 "
      << sz << ' ' << sz << "\">"
      << "<rect width=\"100%\" height=\"100%\" fill=\"rgb(255,255,255)\"/>"
      << "<circle cx=\"" << cs << "\" cy=\"" << cs << "\" r=\"" << format_number((d - stroke) / 2.0)
      << "\" fill=\"none\" stroke=\"" << gray << "\" stroke-width=\"" << format_number(stroke) << "\"/>"
      << "<rect x=\"" << cs << "\" y=\"" << format_number(c - stroke / 2.0) << "\" width=\""
      << format_number(d / 2.0 + 1.0) << "\" height=\"" << format_number(stroke)
      << "\" fill=\"rgb(255,255,255)\" transform=\"rotate(" << format_number(angle) << ' ' << cs << ' ' << cs
      << ")\"/></svg>";
  return svg.str();
}

// ---------------------------------------------------------------- service

struct StudyService::Session {
  struct Slot {
    std::array<std::optional<std::string>, 2> token;
    std::array<bool, 2> consumed{false, false};
    std::optional<std::vector<Answer>> initial;
    std::optional<std::vector<Answer>> reflection;
    std::optional<std::set<std::string>> object_check;
    bool object_check_correct = false;
  };

  mutable std::mutex mutex;
  std::string id;
  std::uint64_t seed = 0;
  Demographics demographics;
  double screen_diagonal = 0.0;
  Phase phase = Phase::created;
  int index = 0;
  std::optional<std::string> reason;
  std::optional<double> ppmm;
  std::vector<LandoltTrial> trials;
  std::vector<ScenarioAssignment> assignments;
  std::vector<Slot> slots;
};

namespace {

std::vector<LandoltTrial> make_trials(const StudyConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<LandoltTrial> trials;
  for (std::size_t i = 0; i < c.landolt_sizes_mm.size(); ++i)
    trials.push_back({kLandoltOrientations[static_cast<std::size_t>(uniform_below(rng, kLandoltOrientations.size()))],
                      c.landolt_sizes_mm[i], c.landolt_contrasts[i]});
  return trials;
}

int which_slot(Which w) { return w == Which::compressed ? 0 : 1; }

}  // namespace

StudyService::StudyService(StudyConfig config, dataset::DatasetManifest manifest)
    : config_(std::move(config)), manifest_(std::move(manifest)) {
  ensure_sodium();
  config_.validate();
  manifest_.validate();
  if (!config_.log_path.empty()) {
    if (std::filesystem::exists(config_.log_path)) replay(config_.log_path);
    log_ = std::make_unique<std::ofstream>(config_.log_path, std::ios::app | std::ios::binary);
    require(static_cast<bool>(*log_), Errc::io, "cannot open study log " + config_.log_path.string());
  }
}

StudyService::~StudyService() = default;

std::uint64_t StudyService::derive_seed(const std::string& session_id) const {
  auto h = keyed_hash(config_.server_secret, "session-seed", session_id);
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed = (seed << 8) | h[static_cast<std::size_t>(i)];
  return seed;
}

std::string StudyService::participant_id(const std::string& session_id) const {
  auto h = keyed_hash(config_.server_secret, "participant", session_id);
  return "P" + to_hex(h.data(), 6);
}

bool StudyService::operator_authorized(std::string_view bearer) const {
  const auto& t = config_.operator_token;
  if (bearer.size() != t.size()) return false;
  return sodium_memcmp(bearer.data(), t.data(), t.size()) == 0;
}

std::size_t StudyService::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

StudyService::Session& StudyService::find(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  require(it != sessions_.end(), Errc::not_found, "unknown session");
  return *it->second;
}

void StudyService::append(const json& record) {
  if (!log_) return;
  std::lock_guard lock(log_mutex_);
  *log_ << record.dump() << '\n';
  log_->flush();
  require(static_cast<bool>(*log_), Errc::io, "study log write failed");
}

void StudyService::replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot read study log " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception&) {
      // A torn final line from an interrupted write carries no committed state.
      if (in.peek() == std::char_traits<char>::eof()) break;
      fail(Errc::corrupted_payload, "study log line " + std::to_string(lineno) + " is not JSON");
    }
    apply(record);
  }
}

void StudyService::apply(const json& r, Session* target) {
  const auto type = r.at("type").get<std::string>();
  const auto sid = r.at("session_id").get<std::string>();
  if (type == "session_created") {
    auto s = std::make_unique<Session>();
    s->id = sid;
    s->seed = r.at("seed").get<std::uint64_t>();
    s->demographics = demographics_from_json(r.at("demographics"));
    s->screen_diagonal = r.at("screen_diagonal").get<double>();
    s->trials = make_trials(config_, s->seed);
    if (r.contains("reason")) {
      s->phase = Phase::rejected;
      s->reason = r.at("reason").get<std::string>();
    }
    std::unique_lock lock(sessions_mutex_);
    sessions_[sid] = std::move(s);
    return;
  }

  Session* sp = target;
  if (sp == nullptr) {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(sid);
    require(it != sessions_.end(), Errc::corrupted_payload, "study log refers to unknown session " + sid);
    sp = it->second.get();
  }
  Session& s = *sp;
  if (type == "calibration") {
    s.ppmm = r.at("ppmm").get<double>();
  } else if (type == "screening") {
    s.ppmm = r.at("ppmm").get<double>();
    if (r.at("passed").get<bool>()) {
      s.phase = Phase::screened;
      s.index = 0;
      for (const auto& a : r.at("assignments"))
        s.assignments.push_back({a.at("index").get<int>(), a.at("content_id").get<std::string>(),
                                 a.at("asset_id").get<std::string>(), a.at("crf").get<int>()});
      s.slots.assign(s.assignments.size(), {});
    } else {
      s.phase = Phase::rejected;
      s.reason = r.at("reason").get<std::string>();
    }
  } else if (type == "playback_issued") {
    const int index = r.at("index").get<int>();
    const Which which = parse_which(r.at("which").get<std::string>());
    const auto token = r.at("token").get<std::string>();
    s.slots.at(static_cast<std::size_t>(index)).token[static_cast<std::size_t>(which_slot(which))] = token;
    if (which == Which::compressed && s.phase == Phase::screened) s.phase = Phase::rating;
    std::lock_guard lock(tokens_mutex_);
    tokens_[token] = {sid, index, which};
  } else if (type == "playback_consumed") {
    const int index = r.at("index").get<int>();
    const Which which = parse_which(r.at("which").get<std::string>());
    s.slots.at(static_cast<std::size_t>(index)).consumed[static_cast<std::size_t>(which_slot(which))] = true;
  } else if (type == "submission") {
    const int index = r.at("index").get<int>();
    auto& slot = s.slots.at(static_cast<std::size_t>(index));
    if (r.at("phase").get<std::string>() == "initial") {
      slot.initial = answers_from_json(r.at("answers"));
      s.phase = Phase::reflecting;
    } else {
      slot.reflection = answers_from_json(r.at("answers"));
      auto oc = r.at("object_check").get<std::vector<std::string>>();
      slot.object_check = std::set<std::string>(oc.begin(), oc.end());
      slot.object_check_correct = r.at("object_check_correct").get<bool>();
      if (index + 1 >= static_cast<int>(s.assignments.size())) {
        s.phase = Phase::done;
      } else {
        s.phase = Phase::rating;
        s.index = index + 1;
      }
    }
  } else {
    fail(Errc::corrupted_payload, "unknown study log record type " + type);
  }
}

CreateResult StudyService::create_session(const Demographics& d, double screen_diagonal) {
  require(std::isfinite(screen_diagonal) && screen_diagonal > 0, Errc::invalid_argument,
          "screen_diagonal must be a positive number of inches");
  demographics_from_json(json(d));
  CreateResult result;
  result.session_id = random_hex(16);
  result.seed = derive_seed(result.session_id);
  json record{{"type", "session_created"},
              {"session_id", result.session_id},
              {"seed", result.seed},
              {"demographics", d},
              {"screen_diagonal", screen_diagonal},
              {"at", unix_now()}};
  if (screen_diagonal < config_.min_screen_diagonal) {
    result.phase = Phase::rejected;
    result.rejection_reason = "screen_too_small";
    record["reason"] = *result.rejection_reason;
  }
  append(record);
  apply(record);
  return result;
}

void StudyService::set_calibration(const std::string& session_id, double ppmm) {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  require(s.phase != Phase::rejected, Errc::rejected, "session was rejected");
  require(s.phase == Phase::created, Errc::wrong_phase, "calibration is only accepted before screening");
  require(std::isfinite(ppmm) && ppmm >= config_.min_ppmm && ppmm <= config_.max_ppmm, Errc::out_of_range,
          "implausible calibration of " + format_number(ppmm) + " px/mm");
  json record{{"type", "calibration"}, {"session_id", session_id}, {"ppmm", ppmm}, {"at", unix_now()}};
  append(record);
  s.ppmm = ppmm;
}

std::vector<LandoltTrial> StudyService::landolt_trials(const std::string& session_id) const {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  return s.trials;
}

std::string StudyService::landolt_stimulus(const std::string& session_id, std::size_t trial) const {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  require(s.phase != Phase::rejected, Errc::rejected, "session was rejected");
  require(s.phase == Phase::created, Errc::wrong_phase, "screening is over");
  require(s.ppmm.has_value(), Errc::wrong_phase, "calibrate the screen before the vision test");
  require(trial < s.trials.size(), Errc::not_found, "no such Landolt trial");
  return landolt_svg(s.trials[trial], *s.ppmm);
}

ScreeningOutcome StudyService::submit_screening(const std::string& session_id, double ppmm,
                                                const std::vector<std::string>& landolt_answers,
                                                const std::vector<std::string>& ishihara_answers) {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  require(s.phase != Phase::rejected, Errc::rejected, "session was rejected");
  require(s.phase == Phase::created, Errc::wrong_phase, "screening was already submitted");
  require(std::isfinite(ppmm) && ppmm >= config_.min_ppmm && ppmm <= config_.max_ppmm, Errc::out_of_range,
          "implausible calibration of " + format_number(ppmm) + " px/mm");
  require(landolt_answers.size() == s.trials.size(), Errc::invalid_argument,
          "expected " + std::to_string(s.trials.size()) + " Landolt answers");
  require(ishihara_answers.size() == config_.ishihara_plates.size(), Errc::invalid_argument,
          "expected " + std::to_string(config_.ishihara_plates.size()) + " Ishihara answers");

  ScreeningOutcome out;
  for (std::size_t i = 0; i < s.trials.size(); ++i)
    out.landolt_correct += normalise_answer(landolt_answers[i]) == s.trials[i].orientation;
  for (std::size_t i = 0; i < ishihara_answers.size(); ++i)
    out.ishihara_correct +=
        normalise_answer(ishihara_answers[i]) == normalise_answer(config_.ishihara_plates[i].answer);
  const bool landolt_ok =
      out.landolt_correct >= config_.landolt_pass_fraction * static_cast<double>(s.trials.size()) - 1e-9;
  const bool ishihara_ok =
      out.ishihara_correct >= config_.ishihara_pass_fraction * static_cast<double>(ishihara_answers.size()) - 1e-9;
  out.passed = landolt_ok && ishihara_ok;

  json record{{"type", "screening"},
              {"session_id", session_id},
              {"ppmm", ppmm},
              {"landolt_correct", out.landolt_correct},
              {"ishihara_correct", out.ishihara_correct},
              {"passed", out.passed},
              {"at", unix_now()}};
  if (out.passed) {
    record["assignments"] = assign_scenarios(manifest_, s.seed);
  } else {
    out.reason = "vision";
    record["reason"] = *out.reason;
  }
  append(record);
  apply(record, &s);
  return out;
}

SessionView StudyService::view(const std::string& session_id) const {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  SessionView v;
  v.session_id = s.id;
  v.phase = s.phase;
  v.index = s.index;
  v.rejection_reason = s.reason;
  v.ppmm = s.ppmm;
  if (s.ppmm) v.video_width_px = config_.video_target_width_mm * *s.ppmm;
  v.assignments = s.assignments;
  return v;
}

std::filesystem::path StudyService::media_file(const ScenarioAssignment& a, Which which) const {
  std::string rel;
  if (which == Which::compressed) {
    rel = manifest_.asset(a.asset_id).path;
  } else if (const auto* ref = manifest_.find_asset(a.content_id, dataset::kReferenceCrf)) {
    rel = ref->path;
  } else {
    rel = manifest_.scene(a.content_id).reference_path;
  }
  std::filesystem::path p(rel);
  return p.is_absolute() ? p : config_.media_root / p;
}

PlaybackGrant StudyService::issue_playback(const std::string& session_id, int index, Which which) {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  require(s.phase != Phase::rejected, Errc::rejected, "session was rejected");
  require(s.phase != Phase::created, Errc::wrong_phase, "screening is not complete");
  require(index >= 0 && index < static_cast<int>(s.assignments.size()), Errc::not_found, "no such scenario index");
  auto& slot = s.slots[static_cast<std::size_t>(index)];
  require(!slot.token[static_cast<std::size_t>(which_slot(which))].has_value(), Errc::token_reused,
          "this video was already issued");
  require(s.phase != Phase::done && index == s.index, Errc::out_of_order,
          "scenario " + std::to_string(index) + " is not the current scenario");
  if (which == Which::compressed)
    require(s.phase == Phase::screened || s.phase == Phase::rating, Errc::out_of_order,
            "the compressed video is only available before the initial answers");
  else
    require(s.phase == Phase::reflecting, Errc::out_of_order,
            "the original video is only available after the initial answers");

  PlaybackGrant grant;
  grant.token = random_hex(24);
  grant.file = media_file(s.assignments[static_cast<std::size_t>(index)], which);
  json record{{"type", "playback_issued"}, {"session_id", session_id}, {"index", index},
              {"which", to_string(which)}, {"token", grant.token},   {"at", unix_now()}};
  append(record);
  apply(record, &s);
  return grant;
}

MediaFetch StudyService::fetch_media(const std::string& token, std::uint64_t range_start) {
  TokenRef ref;
  {
    std::lock_guard lock(tokens_mutex_);
    auto it = tokens_.find(token);
    require(it != tokens_.end(), Errc::not_found, "unknown media token");
    ref = it->second;
  }
  Session& s = find(ref.session_id);
  std::lock_guard lock(s.mutex);
  auto& slot = s.slots[static_cast<std::size_t>(ref.index)];
  const auto k = static_cast<std::size_t>(which_slot(ref.which));
  MediaFetch out;
  out.file = media_file(s.assignments[static_cast<std::size_t>(ref.index)], ref.which);
  if (range_start == 0) {
    require(!slot.consumed[k], Errc::token_reused, "this video was already played");
    json record{{"type", "playback_consumed"}, {"session_id", ref.session_id}, {"index", ref.index},
                {"which", to_string(ref.which)}, {"at", unix_now()}};
    append(record);
    slot.consumed[k] = true;
    out.consumed_now = true;
  } else {
    require(slot.consumed[k], Errc::out_of_order, "playback must start at the first byte");
  }
  return out;
}

SessionView StudyService::record_submission(const SubmissionEnvelope& e) {
  {
    Session& s = find(e.session_id);
    std::lock_guard lock(s.mutex);
    require(s.phase != Phase::rejected, Errc::rejected, "session was rejected");
    require(s.phase != Phase::created, Errc::wrong_phase, "screening is not complete");
    require(e.index >= 0 && e.index < static_cast<int>(s.assignments.size()), Errc::not_found,
            "no such scenario index");
    auto& slot = s.slots[static_cast<std::size_t>(e.index)];
    const bool initial = e.phase == SubmissionPhase::initial;
    require(!(initial ? slot.initial.has_value() : slot.reflection.has_value()), Errc::duplicate_submission,
            "answers for this scenario were already recorded");
    require(s.phase != Phase::done && e.index == s.index, Errc::out_of_order,
            "scenario " + std::to_string(e.index) + " is not the current scenario");
    if (initial) {
      require(s.phase == Phase::rating || s.phase == Phase::screened, Errc::wrong_phase,
              "initial answers are not expected now");
      require(slot.consumed[0], Errc::out_of_order, "the compressed video has not been played");
      require(!e.object_check.has_value(), Errc::invalid_argument, "object_check belongs to the reflection phase");
    } else {
      require(s.phase == Phase::reflecting, Errc::wrong_phase, "reflection answers are not expected now");
      require(slot.consumed[1], Errc::out_of_order, "the original video has not been played");
      require(e.object_check.has_value(), Errc::missing_items, "object_check is required in the reflection phase");
      for (const auto& o : *e.object_check)
        require(std::find(config_.object_check_options.begin(), config_.object_check_options.end(), o) !=
                    config_.object_check_options.end(),
                Errc::invalid_argument, "unknown object-check option " + o);
    }

    std::map<std::pair<Dimension, std::string>, int> expected;
    for (const auto& q : config_.questionnaire) {
      const bool wanted = initial ? q.dimension != Dimension::reflection : q.dimension == Dimension::reflection;
      if (wanted)
        for (const auto& item : q.items) expected[{q.dimension, item}] = 0;
    }
    for (const auto& a : e.answers) {
      auto it = expected.find({a.dimension, a.item_id});
      require(it != expected.end(), Errc::invalid_argument, "unexpected item " + a.item_id);
      require(++it->second == 1, Errc::invalid_argument, "item " + a.item_id + " answered twice");
      require(a.value >= 1 && a.value <= 5, Errc::out_of_range, "item " + a.item_id + " must be rated 1 to 5");
    }
    for (const auto& [key, count] : expected)
      require(count == 1, Errc::missing_items, "item " + key.second + " is unanswered");

    json record{{"type", "submission"},
                {"session_id", e.session_id},
                {"index", e.index},
                {"phase", initial ? "initial" : "reflection"},
                {"answers", answers_to_json(e.answers)},
                {"at", unix_now()}};
    if (!initial) {
      const auto& content = s.assignments[static_cast<std::size_t>(e.index)].content_id;
      auto key = config_.object_check_key.find(content);
      record["object_check"] = *e.object_check;
      record["object_check_correct"] = key == config_.object_check_key.end() || key->second == *e.object_check;
    }
    append(record);
    apply(record, &s);
  }
  return view(e.session_id);
}

ExportResult StudyService::export_ratings(bool completed_only) const {
  std::shared_lock map_lock(sessions_mutex_);
  std::vector<std::unique_lock<std::mutex>> locks;
  for (const auto& [id, s] : sessions_) locks.emplace_back(s->mutex);

  subjective::RatingExport ex;
  ExportResult out;
  for (const auto& [id, s] : sessions_) {
    if (completed_only && s->phase != Phase::done) continue;
    if (s->assignments.empty()) continue;
    const auto pid = participant_id(id);
    bool any = false;
    for (std::size_t i = 0; i < s->slots.size(); ++i) {
      const auto& slot = s->slots[i];
      const auto& asset = s->assignments[i].asset_id;
      for (const auto* answers : {&slot.initial, &slot.reflection}) {
        if (!answers->has_value()) continue;
        any = true;
        for (const auto& a : **answers) ex.ratings.push_back({pid, asset, a.dimension, a.item_id, a.value});
      }
      if (slot.object_check) ex.object_checks.push_back({pid, asset, slot.object_check_correct});
    }
    out.sessions += any;
  }
  if (out.sessions == 0)
    out.warnings.push_back(completed_only ? "no completed sessions; export is empty" : "no ratings recorded yet");
  out.csv = subjective::write_rating_csv(ex);
  return out;
}

json StudyService::questionnaire_schema() const {
  json initial = json::array(), reflection = json::array();
  for (const auto& q : config_.questionnaire) {
    json d{{"dimension", subjective::to_string(q.dimension)}, {"items", q.items}};
    (q.dimension == Dimension::reflection ? reflection : initial).push_back(d);
  }
  return json{{"scale", {{"min", 1}, {"max", 5}}},
              {"initial", initial},
              {"reflection", reflection},
              {"object_check", {{"options", config_.object_check_options}, {"multiple", true}}}};
}

json StudyService::ui_config() const {
  json plates = json::array();
  for (const auto& p : config_.ishihara_plates) plates.push_back({{"id", p.id}, {"image", p.image}});
  return json{{"min_screen_diagonal", config_.min_screen_diagonal},
              {"min_ppmm", config_.min_ppmm},
              {"max_ppmm", config_.max_ppmm},
              {"reference_card_width_mm", kReferenceCardWidthMm},
              {"video_target_width_mm", config_.video_target_width_mm},
              {"landolt_trials", config_.landolt_sizes_mm.size()},
              {"landolt_orientations", kLandoltOrientations},
              {"ishihara_plates", plates},
              {"scenarios_per_session", kScenariosPerSession}};
}

}  // namespace teleqa::study
