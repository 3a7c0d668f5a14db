#include "teleqa/subjective.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <tuple>

#include "teleqa/error.hpp"

namespace teleqa::subjective {
namespace {

constexpr std::string_view kDimensionNames[] = {"detail_loss", "drivability", "situational_awareness", "reflection"};

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

int parse_int(std::string_view s, std::size_t line_no) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && ptr == s.data() + s.size(), Errc::malformed_header,
          "line " + std::to_string(line_no) + ": value is not an integer");
  return v;
}

GroupSummary summarize(std::string key, const std::vector<double>& v) {
  GroupSummary g;
  g.key = std::move(key);
  g.n = v.size();
  g.mean = stats::mean(v);
  g.sd = v.size() >= 2 ? std::sqrt(stats::variance(v)) : 0.0;
  if (v.size() >= 3 && v.size() <= 5000 && g.sd > 0.0) {
    g.normality = stats::shapiro_wilk(v);
  }
  return g;
}

bool all_identical(const std::vector<std::vector<double>>& groups) {
  const double first = groups.front().front();
  for (const auto& g : groups)
    for (double x : g)
      if (x != first) return false;
  return true;
}

std::string fmt(double v, int prec = 4) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string describe(const stats::TestResult& t) {
  std::string s = t.statistic + "=" + fmt(t.value);
  if (t.df) s += " df=" + fmt(*t.df, 2);
  if (t.df2) s += "," + fmt(*t.df2, 2);
  if (t.p_value) s += " p=" + fmt(*t.p_value, 6);
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const GroupSummary& g) {
  j = nlohmann::json{{"key", g.key}, {"n", g.n}, {"mean", g.mean}, {"sd", g.sd}, {"normal", g.normal}};
  j["normality"] = g.normality ? nlohmann::json(*g.normality) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const PairComparison& p) {
  j = nlohmann::json{{"first", p.first}, {"second", p.second}, {"test", p.test}, {"cliffs_delta", p.cliffs_delta}};
  j["p_holm"] = p.p_holm ? nlohmann::json(*p.p_holm) : nlohmann::json(nullptr);
}

std::string_view to_string(Dimension d) { return kDimensionNames[static_cast<int>(d)]; }

Dimension parse_dimension(std::string_view s) {
  for (int i = 0; i < 4; ++i)
    if (kDimensionNames[i] == s) return static_cast<Dimension>(i);
  fail(Errc::unknown_category, "unknown rating dimension '" + std::string(s) + "'");
}

void validate_identifier(std::string_view id, std::string_view what) {
  require(!id.empty(), Errc::invalid_argument, std::string(what) + " is empty");
  require(id.find_first_of(",\"\r\n") == std::string_view::npos, Errc::invalid_argument,
          std::string(what) + " contains a comma, quote or newline");
}

void RatingRecord::validate() const {
  validate_identifier(participant_id, "participant_id");
  validate_identifier(asset_id, "asset_id");
  validate_identifier(item_id, "item_id");
  require(value >= 1 && value <= 5, Errc::out_of_range,
          "rating value " + std::to_string(value) + " outside 1..5 for asset " + asset_id);
}

std::string write_rating_csv(const RatingExport& e) {
  using Row = std::tuple<std::string, std::string, std::string, std::string, int>;
  std::vector<Row> rows;
  for (const auto& r : e.ratings) {
    r.validate();
    rows.emplace_back(r.participant_id, r.asset_id, std::string(to_string(r.dimension)), r.item_id, r.value);
  }
  for (const auto& c : e.object_checks) {
    validate_identifier(c.participant_id, "participant_id");
    validate_identifier(c.asset_id, "asset_id");
    rows.emplace_back(c.participant_id, c.asset_id, std::string(kObjectCheckDimension), "correct", c.correct ? 1 : 0);
  }
  std::sort(rows.begin(), rows.end());
  std::string out(kRatingCsvHeader);
  out += '\n';
  for (const auto& [participant, asset, dim, item, value] : rows)
    out += asset + ',' + participant + ',' + dim + ',' + item + ',' + std::to_string(value) + '\n';
  return out;
}

RatingExport parse_rating_csv(std::string_view text) {
  RatingExport e;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      require(line == kRatingCsvHeader, Errc::malformed_header,
              "rating export must start with header '" + std::string(kRatingCsvHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    require(f.size() == 5, Errc::malformed_header, "line " + std::to_string(line_no) + ": expected 5 fields");
    const int value = parse_int(f[4], line_no);
    if (f[2] == kObjectCheckDimension) {
      require(value == 0 || value == 1, Errc::out_of_range,
              "line " + std::to_string(line_no) + ": object check value must be 0 or 1");
      ObjectCheck c{std::string(f[1]), std::string(f[0]), value == 1};
      validate_identifier(c.participant_id, "participant_id");
      validate_identifier(c.asset_id, "asset_id");
      e.object_checks.push_back(std::move(c));
    } else {
      RatingRecord r{std::string(f[1]), std::string(f[0]), parse_dimension(f[2]), std::string(f[3]), value};
      r.validate();
      e.ratings.push_back(std::move(r));
    }
  }
  require(header_seen, Errc::empty_input, "rating export is empty");
  return e;
}

void to_json(nlohmann::json& j, const MosLabel& m) {
  j = nlohmann::json{{"asset_id", m.asset_id}, {"mos_raw", m.mos_raw},   {"mos_vmaf", m.mos_vmaf},
                     {"n_raters", m.n_raters}, {"std", m.std},           {"ci95_half_width", m.ci95_half_width}};
}

MosLabel aggregate_mos(std::span<const RatingRecord> records, std::span<const Dimension> pooled) {
  require(!records.empty(), Errc::empty_input, "no ratings to aggregate");
  require(!pooled.empty(), Errc::invalid_argument, "no dimensions selected for pooling");
  const std::string& asset = records.front().asset_id;
  std::map<std::string, std::pair<double, int>> per_participant;
  std::set<Dimension> seen;
  for (const RatingRecord& r : records) {
    r.validate();
    require(r.asset_id == asset, Errc::invalid_argument, "records span more than one asset");
    if (std::find(pooled.begin(), pooled.end(), r.dimension) == pooled.end()) continue;
    seen.insert(r.dimension);
    auto& [sum, count] = per_participant[r.participant_id];
    sum += r.value;
    ++count;
  }
  for (Dimension d : pooled)
    require(seen.contains(d), Errc::missing_items,
            "asset " + asset + " has no ratings in dimension " + std::string(to_string(d)));
  std::vector<double> means;
  for (const auto& [participant, sc] : per_participant) means.push_back(sc.first / sc.second);
  MosLabel m;
  m.asset_id = asset;
  m.n_raters = static_cast<int>(means.size());
  m.mos_raw = stats::mean(means);
  m.mos_vmaf = to_vmaf_scale(m.mos_raw);
  if (means.size() >= 2) {
    m.std = 25.0 * std::sqrt(stats::variance(means));
    m.ci95_half_width = 1.959963984540054 * m.std / std::sqrt(static_cast<double>(means.size()));
  }
  return m;
}

std::map<std::string, MosLabel> aggregate_all(const RatingExport& e, std::span<const Dimension> pooled,
                                              const std::set<std::string>& excluded) {
  std::map<std::string, std::vector<RatingRecord>> by_asset;
  for (const auto& r : e.ratings)
    if (!excluded.contains(r.participant_id)) by_asset[r.asset_id].push_back(r);
  std::map<std::string, MosLabel> out;
  for (const auto& [asset, records] : by_asset) out.emplace(asset, aggregate_mos(records, pooled));
  return out;
}

ScreeningResult screen_participants(const RatingExport& e, double max_failure_fraction) {
  require(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0, Errc::invalid_argument,
          "failure threshold must lie in [0,1]");
  std::map<std::string, std::pair<int, int>> tally;  // failures, total
  for (const auto& c : e.object_checks) {
    auto& [failures, total] = tally[c.participant_id];
    failures += c.correct ? 0 : 1;
    ++total;
  }
  ScreeningResult r;
  for (const auto& [participant, ft] : tally) {
    const double rate = static_cast<double>(ft.first) / ft.second;
    r.failure_rate[participant] = rate;
    if (rate > max_failure_fraction) r.excluded.insert(participant);
  }
  return r;
}

std::vector<std::vector<double>> item_matrix(const RatingExport& e) {
  std::map<std::pair<std::string, std::string>, std::size_t> rows;
  std::map<std::pair<int, std::string>, std::size_t> cols;
  for (const auto& r : e.ratings) {
    rows.emplace(std::make_pair(r.participant_id, r.asset_id), 0);
    cols.emplace(std::make_pair(static_cast<int>(r.dimension), r.item_id), 0);
  }
  std::size_t i = 0;
  for (auto& [k, v] : rows) v = i++;
  i = 0;
  for (auto& [k, v] : cols) v = i++;
  std::vector<std::vector<double>> m(rows.size(),
                                     std::vector<double>(cols.size(), std::numeric_limits<double>::quiet_NaN()));
  for (const auto& r : e.ratings)
    m[rows.at({r.participant_id, r.asset_id})][cols.at({static_cast<int>(r.dimension), r.item_id})] = r.value;
  return m;
}

CompressionReport compression_effect_report(const std::map<int, std::vector<double>>& by_crf, double alpha,
                                            std::string unit_of_analysis) {
  require(by_crf.size() >= 2, Errc::invalid_argument, "compression report needs at least 2 CRF groups");
  require(alpha > 0.0 && alpha < 1.0, Errc::invalid_argument, "alpha must lie in (0,1)");
  CompressionReport r;
  r.unit_of_analysis = std::move(unit_of_analysis);
  r.alpha = alpha;
  stats::Groups groups;
  std::vector<std::string> keys;
  for (const auto& [crf, values] : by_crf) {
    require(!values.empty(), Errc::empty_input, "CRF " + std::to_string(crf) + " has no labels");
    keys.push_back(std::to_string(crf));
    groups.push_back(values);
    GroupSummary g = summarize(keys.back(), values);
    g.normal = g.normality && *g.normality->p_value > alpha;
    if (!g.normality) r.notes.push_back("normality not assessable for CRF " + keys.back());
    r.groups.push_back(std::move(g));
  }

  const bool parametric = std::all_of(r.groups.begin(), r.groups.end(), [](const GroupSummary& g) { return g.normal; });
  const bool constant = all_identical(groups);
  if (parametric) {
    r.route = "anova_tukey";
    r.omnibus = stats::anova_oneway(groups);
    for (const auto& pr : stats::tukey_hsd(groups))
      r.tukey.push_back({keys[pr.first], keys[pr.second], pr.result, std::nullopt,
                         stats::cliffs_delta(groups[pr.first], groups[pr.second]).value});
  } else {
    r.route = "kruskal_mann_whitney";
    std::size_t total = 0;
    for (const auto& g : groups) total += g.size();
    if (constant || total < 5) {
      r.omnibus = {"kruskal_wallis", "H", 0.0, static_cast<double>(groups.size() - 1), std::nullopt, 1.0};
      r.notes.push_back(constant ? "all labels identical; no group differences"
                                 : "too few observations for Kruskal-Wallis");
    } else {
      r.omnibus = stats::kruskal_wallis(groups);
    }
  }

  std::vector<double> raw;
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      const auto t = stats::mann_whitney(groups[i], groups[j]);
      raw.push_back(*t.p_value);
      r.mann_whitney.push_back({keys[i], keys[j], t, std::nullopt, stats::cliffs_delta(groups[i], groups[j]).value});
    }
  const auto adjusted = stats::holm_adjust(raw);
  for (std::size_t i = 0; i < adjusted.size(); ++i) r.mann_whitney[i].p_holm = adjusted[i];
  for (const auto& pc : r.mann_whitney) {
    const auto a = std::find(keys.begin(), keys.end(), pc.first);
    if (a + 1 != keys.end() && *(a + 1) == pc.second) r.adjacent.push_back(pc);
  }
  return r;
}

void to_json(nlohmann::json& j, const CompressionReport& r) {
  j = nlohmann::json{{"report", "compression_effect"},
                     {"unit_of_analysis", r.unit_of_analysis},
                     {"alpha", r.alpha},
                     {"groups", r.groups},
                     {"route", r.route},
                     {"omnibus", r.omnibus},
                     {"tukey", r.tukey},
                     {"mann_whitney_holm", r.mann_whitney},
                     {"adjacent", r.adjacent},
                     {"notes", r.notes}};
}

EnvironmentReport environmental_report(const std::map<std::string, std::vector<double>>& by_category,
                                       std::string unit_of_analysis) {
  require(by_category.size() >= 2, Errc::invalid_argument, "environmental report needs at least 2 categories");
  EnvironmentReport r;
  r.unit_of_analysis = std::move(unit_of_analysis);
  stats::Groups groups;
  std::vector<std::string> keys;
  for (const auto& [cat, values] : by_category) {
    require(!values.empty(), Errc::empty_input, "category " + cat + " has no labels");
    keys.push_back(cat);
    groups.push_back(values);
    GroupSummary g = summarize(cat, values);
    g.normal = g.normality && *g.normality->p_value > 0.05;
    r.groups.push_back(std::move(g));
  }
  r.omnibus = stats::kruskal_wallis(groups);
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = i + 1; j < groups.size(); ++j)
      r.welch.push_back({keys[i], keys[j], stats::welch_t(groups[i], groups[j]), std::nullopt,
                         stats::cliffs_delta(groups[i], groups[j]).value});
  return r;
}

void to_json(nlohmann::json& j, const EnvironmentReport& r) {
  j = nlohmann::json{{"report", "environmental_effect"},
                     {"unit_of_analysis", r.unit_of_analysis},
                     {"groups", r.groups},
                     {"omnibus", r.omnibus},
                     {"welch", r.welch}};
}

std::string to_table(const CompressionReport& r) {
  std::ostringstream os;
  os << "compression effect (unit: " << r.unit_of_analysis << ", route: " << r.route << ")\n";
  for (const auto& g : r.groups)
    os << "  CRF " << g.key << "  n=" << g.n << "  mean=" << fmt(g.mean, 2) << "  sd=" << fmt(g.sd, 2)
       << "  normality: " << (g.normality ? describe(*g.normality) : std::string("n/a")) << '\n';
  os << "  omnibus " << r.omnibus.test << ": " << describe(r.omnibus) << '\n';
  for (const auto& t : r.tukey) os << "  tukey " << t.first << " vs " << t.second << ": " << describe(t.test) << '\n';
  for (const auto& m : r.mann_whitney)
    os << "  mwu " << m.first << " vs " << m.second << ": " << describe(m.test) << " p_holm=" << fmt(*m.p_holm, 6)
       << " delta=" << fmt(m.cliffs_delta, 3) << '\n';
  for (const auto& n : r.notes) os << "  note: " << n << '\n';
  return os.str();
}

std::string to_table(const EnvironmentReport& r) {
  std::ostringstream os;
  os << "environmental effect (unit: " << r.unit_of_analysis << ")\n";
  for (const auto& g : r.groups)
    os << "  " << g.key << "  n=" << g.n << "  mean=" << fmt(g.mean, 2) << "  sd=" << fmt(g.sd, 2) << '\n';
  os << "  omnibus " << r.omnibus.test << ": " << describe(r.omnibus) << '\n';
  for (const auto& w : r.welch) os << "  welch " << w.first << " vs " << w.second << ": " << describe(w.test) << '\n';
  return os.str();
}

}  // namespace teleqa::subjective
