#pragma once

#include <cstdint>
#include <fstream>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/dataset.hpp"
#include "teleqa/subjective.hpp"

namespace teleqa::study {

inline constexpr int kScenariosPerSession = 10;

// Gap directions of the Landolt ring.
inline const std::vector<std::string> kLandoltOrientations{"right", "up_right", "up",   "up_left",
                                                           "left",  "down_left", "down", "down_right"};

struct IshiharaPlate {
  std::string id;
  std::string image;   // path under the static root
  std::string answer;  // expected response, compared case-insensitively after trimming
};

struct QuestionnaireDimension {
  subjective::Dimension dimension;
  std::vector<std::string> items;
};

struct StudyConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path manifest_path;
  std::filesystem::path media_root;
  std::filesystem::path static_root;
  std::filesystem::path log_path = "study-log.jsonl";
  std::string operator_token;
  std::string server_secret;

  double min_screen_diagonal = 25.0;
  double min_ppmm = 1.0;
  double max_ppmm = 20.0;
  double video_target_width_mm = 300.0;

  // One Landolt trial per entry: ring outer diameter in millimetres and Weber contrast.
  std::vector<double> landolt_sizes_mm{10.0, 8.0, 6.0, 5.0, 4.0, 3.0, 2.5, 2.0};
  std::vector<double> landolt_contrasts{1.0, 1.0, 0.9, 0.9, 0.8, 0.8, 0.7, 0.7};
  double landolt_pass_fraction = 0.75;

  std::vector<IshiharaPlate> ishihara_plates{{"p1", "ishihara/p1.png", "12"}, {"p2", "ishihara/p2.png", "8"},
                                             {"p3", "ishihara/p3.png", "29"}, {"p4", "ishihara/p4.png", "5"},
                                             {"p5", "ishihara/p5.png", "3"},  {"p6", "ishihara/p6.png", "74"}};
  double ishihara_pass_fraction = 0.8;

  std::vector<QuestionnaireDimension> questionnaire{
      {subjective::Dimension::detail_loss, {"dl1", "dl2", "dl3"}},
      {subjective::Dimension::drivability, {"dr1", "dr2", "dr3"}},
      {subjective::Dimension::situational_awareness, {"sa1", "sa2", "sa3"}},
      {subjective::Dimension::reflection, {"rf1", "rf2", "rf3"}}};
  std::vector<std::string> object_check_options{"pedestrian", "cyclist", "truck", "traffic_light", "animal",
                                                "construction_site"};
  // Correct selection per content_id; scenes without a key are recorded unscored (counted as correct).
  std::map<std::string, std::set<std::string>> object_check_key;

  void validate() const;
};

// JSON file (any subset of keys) followed by TELEQA_* environment overrides.
StudyConfig load_study_config(const std::optional<std::filesystem::path>& file);
void apply_env_overrides(StudyConfig& c);
void to_json(nlohmann::json& j, const StudyConfig& c);
void from_json(const nlohmann::json& j, StudyConfig& c);

struct Demographics {
  int age = 0;
  std::string gender;
  bool license = false;
  int years_driving = 0;
  bool teleop_experience = false;
};

void to_json(nlohmann::json& j, const Demographics& d);
// Every field is required.
Demographics demographics_from_json(const nlohmann::json& j);

enum class Phase { created, screened, rating, reflecting, done, rejected };
std::string_view to_string(Phase p);

enum class Which { compressed, original };
std::string_view to_string(Which w);
Which parse_which(std::string_view s);

struct ScenarioAssignment {
  int index = 0;
  std::string content_id;
  std::string asset_id;
  int crf = 0;
};

void to_json(nlohmann::json& j, const ScenarioAssignment& a);

// Ten distinct scenes; every CRF level appears at least once. Deterministic in `seed`.
std::vector<ScenarioAssignment> assign_scenarios(const dataset::DatasetManifest& manifest, std::uint64_t seed);

struct LandoltTrial {
  std::string orientation;
  double size_mm = 0.0;
  double contrast = 1.0;
};

inline constexpr double kReferenceCardWidthMm = 85.6;

// Pixels per millimetre from an on-screen rectangle matched to a physical card.
double ppmm_from_card(double rectangle_px, double card_width_mm = kReferenceCardWidthMm);

// Vector stimulus for one trial; the ring diameter in pixels is size_mm * ppmm.
std::string landolt_svg(const LandoltTrial& trial, double ppmm);

struct Answer {
  subjective::Dimension dimension;
  std::string item_id;
  int value = 0;
};

enum class SubmissionPhase { initial, reflection };

struct SubmissionEnvelope {
  std::string session_id;
  int index = 0;
  SubmissionPhase phase = SubmissionPhase::initial;
  std::vector<Answer> answers;
  std::optional<std::set<std::string>> object_check;  // reflection only
};

SubmissionEnvelope envelope_from_json(const std::string& session_id, const nlohmann::json& j);

struct SessionView {
  std::string session_id;
  Phase phase = Phase::created;
  int index = 0;  // current scenario while rating/reflecting
  std::optional<std::string> rejection_reason;
  std::optional<double> ppmm;
  std::optional<double> video_width_px;  // video_target_width_mm * ppmm
  std::vector<ScenarioAssignment> assignments;
};

void to_json(nlohmann::json& j, const SessionView& v);

struct CreateResult {
  std::string session_id;
  std::uint64_t seed = 0;
  Phase phase = Phase::created;
  std::optional<std::string> rejection_reason;
};

struct ScreeningOutcome {
  bool passed = false;
  int landolt_correct = 0;
  int ishihara_correct = 0;
  std::optional<std::string> reason;
};

struct PlaybackGrant {
  std::string token;
  std::filesystem::path file;
};

struct MediaFetch {
  std::filesystem::path file;
  bool consumed_now = false;
};

struct ExportResult {
  std::string csv;
  std::size_t sessions = 0;
  std::vector<std::string> warnings;
};

// Server state machine. Every mutation is appended to the JSON-lines log before
// it becomes visible; constructing the service replays an existing log.
class StudyService {
 public:
  StudyService(StudyConfig config, dataset::DatasetManifest manifest);
  ~StudyService();

  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  const StudyConfig& config() const { return config_; }
  const dataset::DatasetManifest& manifest() const { return manifest_; }

  CreateResult create_session(const Demographics& d, double screen_diagonal);
  void set_calibration(const std::string& session_id, double ppmm);
  std::vector<LandoltTrial> landolt_trials(const std::string& session_id) const;
  std::string landolt_stimulus(const std::string& session_id, std::size_t trial) const;
  ScreeningOutcome submit_screening(const std::string& session_id, double ppmm,
                                    const std::vector<std::string>& landolt_answers,
                                    const std::vector<std::string>& ishihara_answers);
  SessionView view(const std::string& session_id) const;
  PlaybackGrant issue_playback(const std::string& session_id, int index, Which which);
  // `range_start` is the first requested byte (0 without a Range header). The
  // token is consumed by the first fetch starting at byte 0; later ranges of a
  // consumed token are served, a second fetch from byte 0 is denied.
  MediaFetch fetch_media(const std::string& token, std::uint64_t range_start);
  SessionView record_submission(const SubmissionEnvelope& envelope);
  ExportResult export_ratings(bool completed_only = true) const;

  // Pseudonymous participant id used in exports.
  std::string participant_id(const std::string& session_id) const;
  nlohmann::json questionnaire_schema() const;
  // Public settings for the browser client; never contains screening answers.
  nlohmann::json ui_config() const;
  bool operator_authorized(std::string_view bearer) const;
  std::size_t session_count() const;

 private:
  struct Session;
  struct TokenRef {
    std::string session_id;
    int index;
    Which which;
  };

  Session& find(const std::string& session_id) const;
  void append(const nlohmann::json& record);
  void replay(const std::filesystem::path& log);
  void apply(const nlohmann::json& record, Session* target = nullptr);
  std::uint64_t derive_seed(const std::string& session_id) const;
  std::filesystem::path media_file(const ScenarioAssignment& a, Which which) const;

  StudyConfig config_;
  dataset::DatasetManifest manifest_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::mutex tokens_mutex_;
  std::map<std::string, TokenRef> tokens_;
  std::mutex log_mutex_;
  std::unique_ptr<std::ofstream> log_;
};

}  // namespace teleqa::study
