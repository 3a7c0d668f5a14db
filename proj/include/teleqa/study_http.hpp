#pragma once

#include <memory>
#include <string>

#include "teleqa/error.hpp"
#include "teleqa/study.hpp"

namespace teleqa::study {

// HTTP status for a service error: 404 not_found, 401 unauthorized, 403 rejected,
// 409 for state-machine conflicts, 422 for invalid payloads.
int http_status(Errc code);

// JSON API over a StudyService. Routes:
//   POST /sessions                              {demographics, screen_diagonal}
//   GET  /sessions/{id}                         session view (also /assignments)
//   POST /sessions/{id}/calibration             {ppmm} or {rectangle_px[, card_width_mm]}
//   GET  /sessions/{id}/landolt/{k}.svg
//   POST /sessions/{id}/screening               {ppmm, landolt: [...], ishihara: [...]}
//   POST /sessions/{id}/playback/{index}/{which}
//   POST /sessions/{id}/submissions             submission envelope
//   GET  /media/{token}                         single-use video fetch, byte ranges allowed
//   GET  /questionnaire, GET /config/ui
//   GET  /export/ratings.csv[?all=1]            Authorization: Bearer <operator token>
// Files under static_root are served for every other GET.
class StudyServer {
 public:
  explicit StudyServer(StudyService& service);
  ~StudyServer();

  // Returns the bound port; port 0 picks a free one.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace teleqa::study
