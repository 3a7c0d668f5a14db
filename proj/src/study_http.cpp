#include "teleqa/study_http.hpp"

#include <httplib.h>

#include <fstream>

namespace teleqa::study {

using nlohmann::json;

int http_status(Errc code) {
  switch (code) {
    case Errc::not_found:
    case Errc::unknown_asset:
      return 404;
    case Errc::unauthorized:
      return 401;
    case Errc::rejected:
      return 403;
    case Errc::wrong_phase:
    case Errc::out_of_order:
    case Errc::token_reused:
    case Errc::duplicate_submission:
      return 409;
    case Errc::io:
    case Errc::too_few_scenes:
    case Errc::corrupted_payload:
      return 500;
    default:
      return 422;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_header("Cache-Control", "no-store");
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, json{{"error", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception&) {
    fail(Errc::invalid_argument, "request body is not valid JSON");
  }
}

double number_field(const json& j, const char* key) {
  require(j.is_object() && j.contains(key) && j.at(key).is_number(), Errc::invalid_argument,
          std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

std::vector<std::string> string_list(const json& j, const char* key) {
  require(j.is_object() && j.contains(key) && j.at(key).is_array(), Errc::invalid_argument,
          std::string("'") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    require(v.is_string(), Errc::invalid_argument, std::string("'") + key + "' must contain strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string mime_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".mp4" || ext == ".m4v") return "video/mp4";
  if (ext == ".webm") return "video/webm";
  if (ext == ".mkv") return "video/x-matroska";
  return "application/octet-stream";
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct StudyServer::Impl {
  StudyService& service;
  httplib::Server server;

  explicit Impl(StudyService& s) : service(s) { routes(); }

  void routes() {
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      require(body.is_object() && body.contains("demographics"), Errc::invalid_argument, "demographics are required");
      const auto demographics = demographics_from_json(body.at("demographics"));
      const auto created = service.create_session(demographics, number_field(body, "screen_diagonal"));
      json out{{"session_id", created.session_id}, {"phase", to_string(created.phase)}};
      if (created.rejection_reason) {
        out["error"] = "rejected";
        out["reason"] = *created.rejection_reason;
        send_json(res, 403, out);
      } else {
        send_json(res, 201, out);
      }
    }));

    auto view = guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, json(service.view(req.matches[1])));
    });
    server.Get(R"(/sessions/([0-9a-f]+))", view);
    server.Get(R"(/sessions/([0-9a-f]+)/assignments)", view);

    server.Post(R"(/sessions/([0-9a-f]+)/calibration)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  double ppmm;
                  if (body.is_object() && body.contains("rectangle_px"))
                    ppmm = ppmm_from_card(number_field(body, "rectangle_px"),
                                          body.value("card_width_mm", kReferenceCardWidthMm));
                  else
                    ppmm = number_field(body, "ppmm");
                  service.set_calibration(req.matches[1], ppmm);
                  send_json(res, 200, json(service.view(req.matches[1])));
                }));

    server.Get(R"(/sessions/([0-9a-f]+)/landolt/(\d+)\.svg)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto k = std::stoul(req.matches[2]);
                 res.set_header("Cache-Control", "no-store");
                 res.set_content(service.landolt_stimulus(req.matches[1], k), "image/svg+xml");
               }));

    server.Post(R"(/sessions/([0-9a-f]+)/screening)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  const auto outcome = service.submit_screening(req.matches[1], number_field(body, "ppmm"),
                                                                string_list(body, "landolt"),
                                                                string_list(body, "ishihara"));
                  json out{{"passed", outcome.passed},
                           {"landolt_correct", outcome.landolt_correct},
                           {"ishihara_correct", outcome.ishihara_correct},
                           {"phase", outcome.passed ? "screened" : "rejected"}};
                  if (outcome.reason) out["reason"] = *outcome.reason;
                  send_json(res, 200, out);
                }));

    server.Post(R"(/sessions/([0-9a-f]+)/playback/(\d+)/(\w+))",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto grant =
                      service.issue_playback(req.matches[1], std::stoi(req.matches[2]), parse_which(req.matches[3].str()));
                  send_json(res, 201, json{{"token", grant.token}, {"url", "/media/" + grant.token}});
                }));

    server.Post(R"(/sessions/([0-9a-f]+)/submissions)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto envelope = envelope_from_json(req.matches[1], parse_body(req));
                  send_json(res, 200, json(service.record_submission(envelope)));
                }));

    server.Get(R"(/media/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t start = 0;
      if (!req.ranges.empty()) {
        const auto first = req.ranges.front().first;
        start = first < 0 ? 1 : static_cast<std::uint64_t>(first);
      }
      const auto fetch = service.fetch_media(req.matches[1], start);
      std::error_code ec;
      const auto size = std::filesystem::file_size(fetch.file, ec);
      require(!ec, Errc::io, "video file is unavailable");
      auto file = std::make_shared<std::ifstream>(fetch.file, std::ios::binary);
      require(static_cast<bool>(*file), Errc::io, "video file is unavailable");
      res.set_header("Cache-Control", "no-store");
      res.set_content_provider(static_cast<std::size_t>(size), mime_for(fetch.file),
                               [file](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
                                 std::vector<char> buf(std::min<std::size_t>(length, 1 << 16));
                                 file->clear();
                                 file->seekg(static_cast<std::streamoff>(offset));
                                 file->read(buf.data(), static_cast<std::streamsize>(buf.size()));
                                 const auto got = static_cast<std::size_t>(file->gcount());
                                 if (got == 0) return false;
                                 return sink.write(buf.data(), got);
                               });
    }));

    server.Get("/questionnaire", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, service.questionnaire_schema());
    }));
    server.Get("/config/ui", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, service.ui_config());
    }));

    server.Get("/export/ratings.csv", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto auth = req.get_header_value("Authorization");
      constexpr std::string_view prefix = "Bearer ";
      const bool ok = auth.size() > prefix.size() && std::string_view(auth).substr(0, prefix.size()) == prefix &&
                      service.operator_authorized(std::string_view(auth).substr(prefix.size()));
      require(ok, Errc::unauthorized, "operator token required");
      const bool all = req.has_param("all") && req.get_param_value("all") == "1";
      const auto ex = service.export_ratings(!all);
      res.set_header("Cache-Control", "no-store");
      res.set_header("X-Export-Sessions", std::to_string(ex.sessions));
      if (!ex.warnings.empty()) res.set_header("X-Export-Warning", ex.warnings.front());
      res.set_content(ex.csv, "text/csv");
    }));

    const auto& root = service.config().static_root;
    if (!root.empty()) server.set_mount_point("/", root.string());
  }
};

StudyServer::StudyServer(StudyService& service) : impl_(std::make_unique<Impl>(service)) {}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    require(bound > 0, Errc::io, "cannot bind " + host);
    return bound;
  }
  require(impl_->server.bind_to_port(host, port), Errc::io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void StudyServer::listen() { impl_->server.listen_after_bind(); }

void StudyServer::stop() {
  if (impl_) impl_->server.stop();
}

void StudyServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace teleqa::study
